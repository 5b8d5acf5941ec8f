"""Hybrid latent-space GAN: classical encoder/decoder around quantum sub-generators.

Training has two phases.  A warmup phase fits the encoder and decoder as an
autoencoder.  The adversarial phase then plays the GAN game in latent space:
the discriminator separates encoder latents of real images from quantum
generator outputs, while the autoencoder keeps training on reconstruction.
At inference time, latents from the quantum generator are decoded into images.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import nn, vqc
from .errors import ConfigurationError, DataError, NumericError, ShapeError
from .metrics import extract_features, frechet_distance, gaussian_stats
from .qsim import NOISELESS, NoiseConfig
from .vqc import GeneratorParams

FORMAT_VERSION = 1


class TrainingDivergence(NumericError):
    pass


class CheckpointError(DataError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    sub_generators: int = 10
    qubits: int = 10
    layers: int = 6
    image_size: int = 16
    enc_channels: int = 16
    enc_hidden: int = 256
    dec_channels: int = 16
    disc_channels: int = 8

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < (0 if f.name == "layers" else 1):
                raise ConfigurationError(f"model.{f.name} must be positive")
        if self.image_size % 2:
            raise ConfigurationError("model.image_size must be even")

    @property
    def latent_dim(self) -> int:
        return self.sub_generators * self.qubits


@dataclass
class TrainConfig:
    warmup_epochs: int = 20
    gan_epochs: int = 100
    batch_size: int = 16
    lr_quantum: float = 0.3
    lr_pre_post: float = 2e-4
    lr_discriminator: float = 2e-3
    seed: int = 0
    fid_every: int = 0  # 0 disables per-epoch FID
    fid_samples: int = 256
    extractor_seed: int = 0

    def __post_init__(self):
        if self.warmup_epochs < 0 or self.gan_epochs < 0:
            raise ConfigurationError("training epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("training.batch_size must be >= 1")
        for name in ("lr_quantum", "lr_pre_post", "lr_discriminator"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"training.{name} must be > 0")
        if self.fid_every < 0 or self.fid_samples < 2:
            raise ConfigurationError("fid_every must be >= 0 and fid_samples >= 2")


@dataclass
class AdaptiveNoise:
    """Scale of the generator's input noise, steered by the G/D loss ratio."""

    r: float = 1.0
    eta: float = 0.1
    r_min: float = 0.25
    r_max: float = 2.0

    def __post_init__(self):
        if not 0 < self.r_min <= self.r_max:
            raise ConfigurationError("need 0 < r_min <= r_max")
        self.r = min(max(self.r, self.r_min), self.r_max)


@dataclass
class EpochStats:
    epoch: int
    loss_d: float
    loss_g: float
    loss_recon: float
    r: float
    fid: float | None
    wall_time: float


@dataclass
class GanModel:
    config: ModelConfig
    encoder: dict[str, np.ndarray]
    decoder: dict[str, np.ndarray]
    discriminator: dict[str, np.ndarray]
    generator: GeneratorParams
    noise: AdaptiveNoise = field(default_factory=AdaptiveNoise)
    optimizers: dict[str, nn.Adam] = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (3, self.config.image_size, self.config.image_size)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def latent_grid(latent_dim: int) -> tuple[int, int]:
    """Most square factorisation ``rows * cols == latent_dim`` with rows <= cols."""
    rows = max(d for d in range(1, math.isqrt(latent_dim) + 1) if latent_dim % d == 0)
    return rows, latent_dim // rows


def _disc_padding(latent_dim: int) -> int:
    rows, _ = latent_grid(latent_dim)
    return max(0, (3 - rows + 1) // 2)


def param_shapes(config: ModelConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    s, c, hdim, L = config.image_size, config.enc_channels, config.enc_hidden, config.latent_dim
    enc_flat = c * (s // 2) ** 2
    rows, cols = latent_grid(L)
    pad = _disc_padding(L)
    d_flat = config.disc_channels * (rows + 2 * pad - 2) * (cols + 2 * pad - 2)
    return {
        "encoder": {
            "conv_w": (c, 3, 4, 4),
            "conv_b": (c,),
            "fc1_w": (hdim, enc_flat),
            "fc1_b": (hdim,),
            "fc2_w": (L, hdim),
            "fc2_b": (L,),
        },
        "decoder": {
            "fc_w": (config.dec_channels * s * s, L),
            "fc_b": (config.dec_channels * s * s,),
            "conv_w": (3, config.dec_channels, 3, 3),
            "conv_b": (3,),
        },
        "discriminator": {
            "conv_w": (config.disc_channels, 1, 3, 3),
            "conv_b": (config.disc_channels,),
            "fc_w": (1, d_flat),
            "fc_b": (1,),
        },
        "generator": {"angles": (config.sub_generators, config.layers, config.qubits)},
    }


def _fan_in(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[1:])) if len(shape) > 1 else 1


def init_model(config: ModelConfig = ModelConfig(), seed: int = 0, noise: AdaptiveNoise | None = None) -> GanModel:
    """Fan-in uniform classical weights (zero biases), Uniform(0, pi) angles."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    groups = {}
    for group in ("encoder", "decoder", "discriminator"):
        params = {}
        for name, shape in shapes[group].items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = nn.fan_in_uniform(rng, shape, _fan_in(shape))
        groups[group] = params
    generator = GeneratorParams.random(config.sub_generators, config.layers, config.qubits, rng)
    return GanModel(config, generator=generator, noise=noise or AdaptiveNoise(), **groups)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


def _batch_images(model: GanModel, images) -> tuple[np.ndarray, bool]:
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != model.image_shape:
        raise ShapeError(f"expected images of shape {model.image_shape}, got {x.shape[1:]}")
    return x, single


def _batch_latents(model: GanModel, latent) -> tuple[np.ndarray, bool]:
    z = np.asarray(latent, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ShapeError(f"expected latent length {model.latent_dim}, got shape {z.shape}")
    return z, single


def _encoder(p, x):
    a1 = nn.conv2d(x, p["conv_w"], p["conv_b"], stride=2, padding=1)
    h1 = nn.leaky_relu(a1).reshape(x.shape[0], -1)
    a2 = nn.dense(h1, p["fc1_w"], p["fc1_b"])
    h2 = nn.leaky_relu(a2)
    out = nn.tanh(nn.dense(h2, p["fc2_w"], p["fc2_b"]))
    return out, (x, a1, h1, a2, h2, out)


def _encoder_backward(p, cache, dout):
    x, a1, h1, a2, h2, out = cache
    da3 = nn.tanh_backward(dout, out)
    dh2, g_fc2w, g_fc2b = nn.dense_backward(da3, h2, p["fc2_w"])
    dh1, g_fc1w, g_fc1b = nn.dense_backward(nn.leaky_relu_backward(dh2, a2), h1, p["fc1_w"])
    da1 = nn.leaky_relu_backward(dh1.reshape(a1.shape), a1)
    _, g_cw, g_cb = nn.conv2d_backward(da1, x, p["conv_w"], stride=2, padding=1)
    return {"conv_w": g_cw, "conv_b": g_cb, "fc1_w": g_fc1w, "fc1_b": g_fc1b, "fc2_w": g_fc2w, "fc2_b": g_fc2b}


def _decoder(p, z, image_size):
    a1 = nn.dense(z, p["fc_w"], p["fc_b"])
    h1 = nn.relu(a1).reshape(z.shape[0], -1, image_size, image_size)
    out = nn.tanh(nn.conv2d(h1, p["conv_w"], p["conv_b"], padding=1))
    return out, (z, a1, h1, out)


def _decoder_backward(p, cache, dout):
    """Returns ``(dlatent, param_grads)``."""
    z, a1, h1, out = cache
    da2 = nn.tanh_backward(dout, out)
    dh1, g_cw, g_cb = nn.conv2d_backward(da2, h1, p["conv_w"], padding=1)
    da1 = nn.relu_backward(dh1.reshape(a1.shape), a1)
    dz, g_fw, g_fb = nn.dense_backward(da1, z, p["fc_w"])
    return dz, {"fc_w": g_fw, "fc_b": g_fb, "conv_w": g_cw, "conv_b": g_cb}


def _discriminator(p, z):
    rows, cols = latent_grid(z.shape[1])
    pad = _disc_padding(z.shape[1])
    grid = z.reshape(z.shape[0], 1, rows, cols)
    a1 = nn.conv2d(grid, p["conv_w"], p["conv_b"], padding=pad)
    h1 = nn.leaky_relu(a1).reshape(z.shape[0], -1)
    logit = nn.dense(h1, p["fc_w"], p["fc_b"])[:, 0]
    return logit, (grid, a1, h1, pad)


def _discriminator_backward(p, cache, dlogit):
    """Returns ``(dlatent, param_grads)``."""
    grid, a1, h1, pad = cache
    dh1, g_fw, g_fb = nn.dense_backward(dlogit[:, None], h1, p["fc_w"])
    da1 = nn.leaky_relu_backward(dh1.reshape(a1.shape), a1)
    dgrid, g_cw, g_cb = nn.conv2d_backward(da1, grid, p["conv_w"], padding=pad)
    return dgrid.reshape(grid.shape[0], -1), {"conv_w": g_cw, "conv_b": g_cb, "fc_w": g_fw, "fc_b": g_fb}


def encoder_forward(model: GanModel, image) -> np.ndarray:
    """Image ``[3,H,W]`` (or a batch) -> latent in (-1, 1)^latent_dim."""
    x, single = _batch_images(model, image)
    out, _ = _encoder(model.encoder, x)
    return out[0] if single else out


def decoder_forward(model: GanModel, latent) -> np.ndarray:
    z, single = _batch_latents(model, latent)
    out, _ = _decoder(model.decoder, z, model.config.image_size)
    return out[0] if single else out


def discriminator_forward(model: GanModel, latent):
    """Raw logit(s); positive means "real"."""
    z, single = _batch_latents(model, latent)
    logit, _ = _discriminator(model.discriminator, z)
    return float(logit[0]) if single else logit


def discriminator_input_grad(model: GanModel, latent) -> np.ndarray:
    """d logit / d latent for a single latent vector."""
    z, _ = _batch_latents(model, latent)
    logit, cache = _discriminator(model.discriminator, z)
    dz, _ = _discriminator_backward(model.discriminator, cache, np.ones_like(logit))
    return dz[0]


# ---------------------------------------------------------------------------
# adaptive noise
# ---------------------------------------------------------------------------


def sample_noise(noise: AdaptiveNoise, rng: np.random.Generator, latent_dim: int = 100, n: int | None = None):
    """Uniform(0, r*pi/2) noise; one vector, or ``n`` stacked rows."""
    high = noise.r * np.pi / 2
    size = latent_dim if n is None else (n, latent_dim)
    return rng.uniform(0.0, high, size=size)


def update_noise(noise: AdaptiveNoise, loss_g: float, loss_d: float) -> AdaptiveNoise:
    if not loss_d > 0 or not math.isfinite(loss_d) or not math.isfinite(loss_g):
        raise NumericError(f"noise update needs finite losses with loss_d > 0 (got {loss_g}, {loss_d})")
    r = noise.r * (1.0 + noise.eta * (loss_g / loss_d - 1.0))
    return AdaptiveNoise(min(max(r, noise.r_min), noise.r_max), noise.eta, noise.r_min, noise.r_max)


# ---------------------------------------------------------------------------
# losses and gradients used by the training loop
# ---------------------------------------------------------------------------


def generator_loss(model: GanModel, z: np.ndarray) -> float:
    """Non-saturating generator loss, mean over the rows of ``z``."""
    fake = vqc.generator_forward_batch(model.generator, z)
    logit, _ = _discriminator(model.discriminator, fake)
    return float(np.mean(nn.bce_with_logits(logit, 1.0)))


def generator_gradient(model: GanModel, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Generator loss and its gradient w.r.t. the quantum angles."""
    fake = vqc.generator_forward_batch(model.generator, z)
    logit, cache = _discriminator(model.discriminator, fake)
    loss = float(np.mean(nn.bce_with_logits(logit, 1.0)))
    dlogit = nn.bce_with_logits_backward(logit, 1.0) / len(logit)
    dfake, _ = _discriminator_backward(model.discriminator, cache, dlogit)
    return loss, vqc.generator_backward_batch(model.generator, z, dfake)


def _discriminator_step(model: GanModel, real: np.ndarray, fake: np.ndarray, opt: nn.Adam) -> float:
    both = np.concatenate([real, fake])
    target = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    logit, cache = _discriminator(model.discriminator, both)
    loss = float(np.mean(nn.bce_with_logits(logit, target)))
    dlogit = nn.bce_with_logits_backward(logit, target) / len(both)
    _, grads = _discriminator_backward(model.discriminator, cache, dlogit)
    opt.step(model.discriminator, grads)
    return loss


def _reconstruction_step(model: GanModel, x: np.ndarray, opt_enc: nn.Adam, opt_dec: nn.Adam) -> float:
    lat, ecache = _encoder(model.encoder, x)
    recon, dcache = _decoder(model.decoder, lat, model.config.image_size)
    loss = nn.mse(recon, x)
    dlat, dgrads = _decoder_backward(model.decoder, dcache, nn.mse_backward(recon, x))
    egrads = _encoder_backward(model.encoder, ecache, dlat)
    opt_dec.step(model.decoder, dgrads)
    opt_enc.step(model.encoder, egrads)
    return loss


def _check_finite(value: float, what: str, epoch: int, batch: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergence(f"non-finite {what} at epoch {epoch}, batch {batch}")


def _optimizer(model: GanModel, group: str, lr: float) -> nn.Adam:
    opt = model.optimizers.get(group)
    if opt is None or opt.lr != lr:
        opt = model.optimizers[group] = nn.Adam(lr, opt.states if opt else {})
    return opt


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------


def generate(
    model: GanModel,
    n: int,
    rng: np.random.Generator,
    noise: NoiseConfig = NOISELESS,
    batch_size: int = 256,
) -> np.ndarray:
    """Sample ``n`` images ``[n, 3, H, W]``: noise -> quantum generator -> decoder."""
    out = np.empty((n,) + model.image_shape)
    for start in range(0, n, batch_size):
        m = min(batch_size, n - start)
        z = sample_noise(model.noise, rng, model.latent_dim, m)
        lat = vqc.generator_forward_batch(model.generator, z, noise, rng)
        out[start : start + m] = _decoder(model.decoder, lat, model.config.image_size)[0]
    return out


def iter_train(
    model: GanModel,
    images: np.ndarray,
    config: TrainConfig,
    fid_reference: np.ndarray | None = None,
) -> Iterator[EpochStats]:
    """Train ``model`` in place, yielding one EpochStats per epoch.

    ``fid_reference`` defaults to the training images when per-epoch FID is on.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or len(images) == 0:
        raise DataError("training needs a non-empty [N, 3, H, W] image array")
    if images.shape[1:] != model.image_shape:
        raise ShapeError(f"images {images.shape[1:]} do not match model {model.image_shape}")

    train_seq, eval_seq = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(train_seq)
    ref_stats = None
    if config.fid_every:
        ref = images if fid_reference is None else fid_reference
        ref_stats = gaussian_stats(extract_features(ref, config.extractor_seed))

    opt_enc = _optimizer(model, "encoder", config.lr_pre_post)
    opt_dec = _optimizer(model, "decoder", config.lr_pre_post)
    opt_disc = _optimizer(model, "discriminator", config.lr_discriminator)
    opt_q = _optimizer(model, "generator", config.lr_quantum)

    total = config.warmup_epochs + config.gan_epochs
    bs = config.batch_size
    for epoch in range(1, total + 1):
        start = time.perf_counter()
        adversarial = epoch > config.warmup_epochs
        order = rng.permutation(len(images))
        ld, lg, lr_ = [], [], []
        for b, s in enumerate(range(0, len(order), bs)):
            x = images[order[s : s + bs]]
            if adversarial:
                real, _ = _encoder(model.encoder, x)
                z = sample_noise(model.noise, rng, model.latent_dim, len(x))
                fake = vqc.generator_forward_batch(model.generator, z)
                ld.append(_discriminator_step(model, real, fake, opt_disc))
                _check_finite(ld[-1], "discriminator loss", epoch, b)
                loss_g, grad = generator_gradient(model, z)
                _check_finite(loss_g, "generator loss", epoch, b)
                lg.append(loss_g)
                params = {"angles": model.generator.angles}
                opt_q.step(params, {"angles": grad})
                model.generator = GeneratorParams(params["angles"])
            loss_r = _reconstruction_step(model, x, opt_enc, opt_dec)
            _check_finite(loss_r, "reconstruction loss", epoch, b)
            lr_.append(loss_r)

        loss_d = float(np.mean(ld)) if ld else 0.0
        loss_g = float(np.mean(lg)) if lg else 0.0
        if adversarial:
            model.noise = update_noise(model.noise, loss_g, loss_d)
        fid = None
        if ref_stats is not None and epoch % config.fid_every == 0:
            eval_rng = np.random.default_rng([config.seed, epoch, 7])
            fake_img = generate(model, config.fid_samples, eval_rng)
            fid = frechet_distance(ref_stats, gaussian_stats(extract_features(fake_img, config.extractor_seed)))
        yield EpochStats(
            epoch=epoch,
            loss_d=loss_d,
            loss_g=loss_g,
            loss_recon=float(np.mean(lr_)),
            r=model.noise.r,
            fid=fid,
            wall_time=time.perf_counter() - start,
        )


def train(
    model: GanModel,
    images: np.ndarray,
    config: TrainConfig,
    fid_reference: np.ndarray | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[GanModel, list[EpochStats]]:
    stats = []
    for st in iter_train(model, images, config, fid_reference):
        stats.append(st)
        if on_epoch is not None:
            on_epoch(st)
    return model, stats


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _named_params(model: GanModel):
    for group in ("encoder", "decoder", "discriminator"):
        for name, arr in getattr(model, group).items():
            yield f"{group}.{name}", arr
    yield "generator.angles", model.generator.angles


def dumps_checkpoint(model: GanModel) -> str:
    noise = asdict(model.noise)
    lines = [
        "{",
        f'"format_version": {FORMAT_VERSION},',
        f'"config": {json.dumps(asdict(model.config), sort_keys=True)},',
        '"noise_state": {' + ", ".join(f'"{k}": {_fmt(v)}' for k, v in noise.items()) + "},",
        '"params": [',
    ]
    entries = []
    for name, arr in _named_params(model):
        values = ",".join(_fmt(v) for v in np.asarray(arr).ravel())
        entries.append(f'{{"name": "{name}", "shape": {json.dumps(list(arr.shape))}, "values": [{values}]}}')
    lines.append(",\n".join(entries))
    lines.append("]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: GanModel, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_checkpoint(model), encoding="ascii")
    tmp.replace(path)


def loads_checkpoint(text: str) -> GanModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint document: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint root must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"field format_version: expected {FORMAT_VERSION}, got {version!r}")
    try:
        config = ModelConfig(**doc["config"])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointError(f"field config: {exc}") from None
    try:
        noise = AdaptiveNoise(**{k: float(v) for k, v in doc["noise_state"].items()})
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CheckpointError(f"field noise_state: {exc}") from None

    entries = doc.get("params")
    if not isinstance(entries, list):
        raise CheckpointError("field params: missing or not a list")
    by_name = {}
    for e in entries:
        if not isinstance(e, dict) or "name" not in e:
            raise CheckpointError("field params: entry without a name")
        by_name[e["name"]] = e

    groups: dict[str, dict[str, np.ndarray]] = {}
    for group, shapes in param_shapes(config).items():
        groups[group] = {}
        for name, shape in shapes.items():
            key = f"{group}.{name}"
            e = by_name.pop(key, None)
            if e is None:
                raise CheckpointError(f"field {key}: missing")
            if tuple(e.get("shape", ())) != shape:
                raise CheckpointError(f"field {key}: shape {e.get('shape')} != expected {list(shape)}")
            try:
                values = np.array(e["values"], dtype=np.float64)
            except (KeyError, TypeError, ValueError):
                raise CheckpointError(f"field {key}: values are not a numeric list") from None
            if values.shape != (int(np.prod(shape)),):
                raise CheckpointError(f"field {key}: {values.size} values for shape {list(shape)}")
            if not np.all(np.isfinite(values)):
                raise CheckpointError(f"field {key}: non-finite values")
            groups[group][name] = values.reshape(shape)
    if by_name:
        raise CheckpointError(f"field params: unexpected entries {sorted(by_name)}")
    return GanModel(
        config,
        encoder=groups["encoder"],
        decoder=groups["decoder"],
        discriminator=groups["discriminator"],
        generator=GeneratorParams(groups["generator"]["angles"]),
        noise=noise,
    )


def load_checkpoint(path) -> GanModel:
    try:
        text = Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads_checkpoint(text)
