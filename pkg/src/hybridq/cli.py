"""Command-line entry point: ``hybridq {synth,train,generate,eval-fid,augment}``.

Exit codes: 0 success, 2 usage/config/data errors, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import data, gan, metrics, plotting
from .config import RunConfig, apply_overrides, load_config, write_echo
from .errors import ConfigurationError, DataError, NumericError

log = logging.getLogger("hybridq")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

STATS_COLUMNS = ("epoch", "loss_d", "loss_g", "loss_recon", "r", "fid", "wall_time")


class LockError(ConfigurationError):
    pass


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def write_csv(path, header, rows, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


@contextmanager
def run_lock(out_dir: Path):
    """Exclusive use of an output directory for one process."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"output directory {out_dir} is in use (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------

# flag dest -> (section, key)
FLAG_MAP = {
    "sub_generators": ("model", "sub_generators"),
    "qubits": ("model", "qubits"),
    "layers": ("model", "layers"),
    "warmup_epochs": ("training", "warmup_epochs"),
    "gan_epochs": ("training", "gan_epochs"),
    "batch_size": ("training", "batch_size"),
    "lr_quantum": ("training", "lr_quantum"),
    "lr_pre_post": ("training", "lr_pre_post"),
    "lr_discriminator": ("training", "lr_discriminator"),
    "seed": ("training", "seed"),
    "fid_every": ("training", "fid_every"),
    "counts": ("data", "counts"),
    "data_seed": ("data", "seed"),
    "data_dir": ("data", "data_dir"),
    "class_label": ("data", "class_label"),
    "test_counts": ("data", "test_counts"),
    "test_seed": ("data", "test_seed"),
    "depolarizing": ("noise", "depolarizing_prob"),
    "readout": ("noise", "readout_flip_prob"),
    "trajectories": ("noise", "trajectories"),
    "shots": ("noise", "shots"),
    "fid_samples": ("eval", "fid_samples"),
    "extractor_seed": ("eval", "extractor_seed"),
    "alphas": ("eval", "alphas"),
    "harness_epochs": ("eval", "harness_epochs"),
    "sample_every": ("eval", "sample_every"),
}


def build_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides: dict[str, dict] = {}
    for dest, (section, key) in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    image_size = getattr(args, "image_size", None)
    if image_size is not None:
        overrides.setdefault("model", {})["image_size"] = image_size
        overrides.setdefault("data", {})["image_size"] = image_size
    cfg = apply_overrides(cfg, overrides)
    # the training block mirrors eval-level FID settings
    cfg.training = dataclasses.replace(
        cfg.training, fid_samples=cfg.eval.fid_samples, extractor_seed=cfg.eval.extractor_seed
    )
    return cfg


def _real_images(cfg: RunConfig) -> list[data.LabeledImage]:
    if cfg.data.data_dir:
        return data.load_image_dir(cfg.data.data_dir, cfg.data.image_size)
    spec = data.DatasetSpec(cfg.data.counts, cfg.data.image_size, cfg.data.seed)
    return data.synth_lesion_dataset(spec)


def _class_arrays(images: list[data.LabeledImage], label: int) -> np.ndarray:
    x, y = data.to_arrays(images)
    sel = x[y == label]
    if len(sel) == 0:
        raise DataError(f"no images for class {label}")
    return sel


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = data.DatasetSpec(tuple(args.counts), args.image_size, args.seed)
    out = Path(args.out)
    for i, im in enumerate(data.synth_lesion_dataset(spec)):
        d = out / f"class_{im.label}"
        d.mkdir(parents=True, exist_ok=True)
        data.save_ppm(im.pixels, d / f"img_{i:05d}.ppm")
    print(f"wrote {sum(spec.counts)} images to {out}")
    return EXIT_OK


def _train_one(cfg: RunConfig, images: np.ndarray, out: Path) -> None:
    write_echo(cfg, out / "config.echo")
    model = gan.init_model(cfg.model, seed=cfg.training.seed)
    stats = []
    sample_rng_seed = [cfg.training.seed, 11]

    def on_epoch(st: gan.EpochStats) -> None:
        stats.append(st)
        log.info(
            "epoch %d loss_d=%.4f loss_g=%.4f recon=%.4f r=%.3f fid=%s",
            st.epoch, st.loss_d, st.loss_g, st.loss_recon, st.r, fmt(st.fid),
        )
        every = cfg.eval.sample_every
        if every and st.epoch % every == 0:
            _write_samples(model, cfg, out / "samples" / f"epoch_{st.epoch}", sample_rng_seed + [st.epoch])

    gan.train(model, images, cfg.training, on_epoch=on_epoch)
    write_csv(out / "stats.csv", STATS_COLUMNS, ([getattr(s, c) for c in STATS_COLUMNS] for s in stats))
    fid_rows = [(s.epoch, s.fid) for s in stats if s.fid is not None]
    if fid_rows:
        write_csv(out / "fid.csv", ("epoch", "fid"), fid_rows)
    gan.save_checkpoint(model, out / "checkpoint.v1")
    if stats:
        plotting.plot_training(stats, out / "training.png", cfg.training.warmup_epochs)


def _write_samples(model, cfg: RunConfig, directory: Path, seed) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    imgs = gan.generate(model, cfg.eval.sample_count, np.random.default_rng(seed))
    data.save_ppm(data.image_grid(imgs), directory / "grid.ppm")


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    images = _real_images(cfg)
    labels = sorted({im.label for im in images}) if cfg.data.class_label == "all" else [int(cfg.data.class_label)]
    with run_lock(out):
        if len(labels) == 1:
            _train_one(cfg, _class_arrays(images, labels[0]), out)
        else:
            write_echo(cfg, out / "config.echo")
            for label in labels:
                sub = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, class_label=str(label)))
                d = out / f"class_{label}"
                d.mkdir(exist_ok=True)
                _train_one(sub, _class_arrays(images, label), d)
    print(f"run written to {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = build_config(args)
    model = gan.load_checkpoint(args.checkpoint)
    noise = cfg.noise
    if args.n < 0:
        raise ConfigurationError("n must be >= 0")
    imgs = gan.generate(model, args.n, np.random.default_rng(args.seed), noise)
    out = Path(args.out)
    with run_lock(out):
        for i, img in enumerate(imgs):
            data.save_ppm(img, out / f"gen_{i}.ppm")
    print(f"wrote {args.n} images to {out}")
    return EXIT_OK


def cmd_eval_fid(args) -> int:
    cfg = build_config(args)
    n = args.n
    if args.real_dir:
        real_imgs = data.load_image_dir(args.real_dir)
    else:
        real_imgs = _real_images(cfg)
    if cfg.data.class_label != "all":
        label = int(cfg.data.class_label)
        real_imgs = [im for im in real_imgs if im.label == label]
    real = data.to_arrays(real_imgs)[0][:n] if real_imgs else np.empty((0,))
    if args.fake_dir:
        fake = data.to_arrays(data.load_image_dir(args.fake_dir))[0][:n]
        source = args.fake_dir
    else:
        if not args.checkpoint:
            raise ConfigurationError("eval-fid needs a checkpoint or --fake-dir")
        model = gan.load_checkpoint(args.checkpoint)
        fake = gan.generate(model, n, np.random.default_rng(args.seed), cfg.noise)
        source = args.checkpoint
    if len(real) < 2 or len(fake) < 2:
        raise metrics.InsufficientDataError(f"FID needs >= 2 real and generated images (got {len(real)}, {len(fake)})")
    value = metrics.fid(real, fake, cfg.eval.extractor_seed)
    print(fmt(value))
    csv_path = args.csv or (Path(args.checkpoint).parent / "fid_eval.csv" if args.checkpoint else "fid_eval.csv")
    write_csv(csv_path, ("checkpoint", "n", "extractor_seed", "fid"), [(source, n, cfg.eval.extractor_seed, value)], append=True)
    return EXIT_OK


def _discover_checkpoints(specs: list[str]) -> dict[int, Path]:
    found: dict[int, Path] = {}
    for s in specs:
        if "=" in s:
            label, path = s.split("=", 1)
            try:
                found[int(label)] = Path(path)
            except ValueError:
                raise ConfigurationError(f"--checkpoint {s!r}: expected LABEL=PATH") from None
            continue
        root = Path(s)
        subs = sorted(root.glob("class_*/checkpoint.v1"))
        if not subs:
            raise ConfigurationError(f"--checkpoint {s!r}: use LABEL=PATH or a run directory with class_*/checkpoint.v1")
        for p in subs:
            found[int(p.parent.name.split("_", 1)[1])] = p
    return found


def augmentation_sweep(
    real_train: list[data.LabeledImage],
    test_set: list[data.LabeledImage],
    models: dict[int, gan.GanModel],
    alphas,
    harness: metrics.HarnessConfig,
    gen_seed: int = 0,
) -> list[metrics.ClassificationReport]:
    """One harness run per alpha on a shared pool of generated images."""
    counts: dict[int, int] = {}
    for im in real_train:
        counts[im.label] = counts.get(im.label, 0) + 1
    missing = set(counts) - set(models)
    if missing and any(a > 0 for a in alphas):
        raise DataError(f"no generator checkpoint for class(es) {sorted(missing)}")
    generated = []
    for label in sorted(counts):
        need = max(data.generated_count(counts[label], a) for a in alphas)
        if need == 0:
            continue
        imgs = gan.generate(models[label], need, np.random.default_rng([gen_seed, label]))
        generated.extend(data.LabeledImage(np.clip(im, -1.0, 1.0), label, "generated") for im in imgs)
    n_classes = max(max(counts), max(im.label for im in test_set)) + 1
    return [
        metrics.augmentation_harness(real_train, generated, a, test_set, harness, n_classes=n_classes)
        for a in alphas
    ]


def cmd_augment(args) -> int:
    cfg = build_config(args)
    models = {label: gan.load_checkpoint(p) for label, p in _discover_checkpoints(args.checkpoint).items()}
    real_train = _real_images(cfg)
    test_spec = data.DatasetSpec(cfg.data.test_counts, cfg.data.image_size, cfg.data.test_seed)
    test_set = data.synth_lesion_dataset(test_spec)
    harness = metrics.HarnessConfig(
        epochs=cfg.eval.harness_epochs, batch_size=cfg.eval.harness_batch, seed=cfg.training.seed
    )
    alphas = list(cfg.eval.alphas)
    out = Path(args.out)
    with run_lock(out):
        write_echo(cfg, out / "config.echo")
        reports = augmentation_sweep(real_train, test_set, models, alphas, harness, cfg.training.seed)
        n_classes = len(reports[0].recall)
        header = ["alpha", "accuracy", "macro_precision", "macro_recall"]
        header += [f"precision_{k}" for k in range(n_classes)] + [f"recall_{k}" for k in range(n_classes)]
        rows = [
            [a, r.accuracy, r.macro_precision, r.macro_recall, *r.precision, *r.recall]
            for a, r in zip(alphas, reports)
        ]
        write_csv(out / "augment.csv", header, rows)
        plotting.plot_augmentation(alphas, reports, out / "augment.png")
    for a, r in zip(alphas, reports):
        print(f"alpha={fmt(a)} accuracy={fmt(r.accuracy)} macro_recall={fmt(r.macro_recall)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _int_list(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _float_list(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _add_data_flags(p) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data-dir", help="directory of .ppm images (class subdirectories)")
    g.add_argument("--counts", type=_int_list, help="synthetic per-class counts, e.g. 64,64,64")
    g.add_argument("--data-seed", type=int)
    g.add_argument("--image-size", type=int, choices=data.SUPPORTED_SIZES)
    g.add_argument("--class-label", help="class index to train on, or 'all'")


def _add_noise_flags(p) -> None:
    g = p.add_argument_group("NISQ noise emulation")
    g.add_argument("--depolarizing", type=float, help="per-gate depolarizing probability")
    g.add_argument("--readout", type=float, help="per-qubit readout flip probability")
    g.add_argument("--trajectories", type=int)
    g.add_argument("--shots", type=int, help="0 = exact expectations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic lesion dataset as PPM files")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", type=_int_list, default=(64, 64, 64))
    p.add_argument("--image-size", type=int, default=16, choices=data.SUPPORTED_SIZES)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one unconditional GAN per class")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    g = p.add_argument_group("model")
    g.add_argument("--sub-generators", type=int)
    g.add_argument("--qubits", type=int)
    g.add_argument("--layers", type=int)
    g = p.add_argument_group("training")
    g.add_argument("--warmup-epochs", type=int)
    g.add_argument("--gan-epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr-quantum", type=float)
    g.add_argument("--lr-pre-post", type=float)
    g.add_argument("--lr-discriminator", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--fid-every", type=int, help="compute FID every k epochs (0 = off)")
    g.add_argument("--fid-samples", type=int)
    g.add_argument("--extractor-seed", type=int)
    g.add_argument("--sample-every", type=int, help="write a sample grid every k epochs (0 = off)")
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="only the [noise] section is used")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-fid", help="FID of generated images against real ones")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extractor-seed", type=int)
    p.add_argument("--real-dir", help="real images (default: synthetic data from the data flags)")
    p.add_argument("--fake-dir", help="score this image directory instead of sampling a checkpoint")
    p.add_argument("--csv", help="CSV log to append to")
    _add_data_flags(p)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_eval_fid)

    p = sub.add_parser("augment", help="classifier augmentation sweep over mixing ratios")
    p.add_argument("--checkpoint", action="append", required=True, help="LABEL=PATH, or a run directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", type=_float_list)
    p.add_argument("--harness-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-counts", type=_int_list)
    p.add_argument("--test-seed", type=int)
    _add_data_flags(p)
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigurationError, DataError) as exc:
        print(f"hybridq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"hybridq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
