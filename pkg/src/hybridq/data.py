"""Image I/O, the synthetic lesion dataset, and stratified real/generated mixing.

Images are float64 arrays ``[3, H, W]`` with values in [-1, 1].  On disk they
are binary PPM (P6, maxval 255); byte ``v`` maps to ``2 * v / 255 - 1``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

SUPPORTED_SIZES = (16, 32, 64)
SOURCES = ("real", "generated")


class PpmError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledImage:
    pixels: np.ndarray
    label: int
    source: str = "real"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[0] != 3 or px.shape[1] != px.shape[2]:
            raise DataError(f"pixels must be [3, S, S], got {px.shape}")
        if px.shape[1] not in SUPPORTED_SIZES:
            raise DataError(f"image size {px.shape[1]} not in {SUPPORTED_SIZES}")
        if px.min() < -1.0 or px.max() > 1.0:
            raise DataError("pixel values must lie in [-1, 1]")
        if self.source not in SOURCES:
            raise DataError(f"source must be one of {SOURCES}, got {self.source!r}")
        self.pixels = px


@dataclass(frozen=True)
class DatasetSpec:
    counts: tuple[int, ...] = (64, 64, 64)
    image_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if any(c < 0 for c in self.counts) or sum(self.counts) == 0:
            raise DataError(f"per-class counts must be >= 0 with at least one nonzero: {self.counts}")
        if self.image_size not in SUPPORTED_SIZES:
            raise DataError(f"image size {self.image_size} not in {SUPPORTED_SIZES}")

    @property
    def n_classes(self) -> int:
        return len(self.counts)


# ---------------------------------------------------------------------------
# PPM
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(\S+)")


def _header_token(buf: bytes, pos: int, what: str) -> tuple[bytes, int]:
    m = _TOKEN.match(buf, pos)
    if m is None:
        raise PpmError(f"truncated header, missing {what}", len(buf))
    return m.group(1), m.end()


def decode_ppm(buf: bytes) -> np.ndarray:
    magic, pos = _header_token(buf, 0, "magic")
    if magic != b"P6":
        raise PpmError(f"bad magic {magic!r}, expected b'P6'", 0)
    values = []
    for what in ("width", "height", "maxval"):
        start = pos
        tok, pos = _header_token(buf, pos, what)
        if not tok.isdigit():
            raise PpmError(f"invalid {what} {tok!r}", start)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise PpmError(f"maxval {maxval} unsupported, expected 255", pos)
    if width < 1 or height < 1:
        raise PpmError("image dimensions must be positive", pos)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PpmError("missing whitespace after maxval", pos)
    pos += 1
    n = width * height * 3
    payload = buf[pos : pos + n]
    if len(payload) < n:
        raise PpmError(f"truncated payload: expected {n} bytes, found {len(payload)}", pos + len(payload))
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return 2.0 * (raw.transpose(2, 0, 1).astype(np.float64) / 255.0) - 1.0


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected [3, H, W] image, got {image.shape}")
    v = np.clip((image + 1.0) / 2.0 * 255.0, 0.0, 255.0)
    # round half away from zero; v is non-negative
    raw = np.floor(v + 0.5).astype(np.uint8)
    _, h, w = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raw.transpose(1, 2, 0).tobytes()


def load_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def save_ppm(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_ppm(image))


def image_grid(images: np.ndarray, columns: int = 8, pad_value: float = -1.0) -> np.ndarray:
    """Tile ``[N, 3, H, W]`` images into a single ``[3, rows*(H+1)-1, ...]`` image."""
    n, c, h, w = images.shape
    cols = min(columns, n)
    rows = -(-n // cols)
    grid = np.full((c, rows * (h + 1) - 1, cols * (w + 1) - 1), pad_value)
    for i, img in enumerate(images):
        r, q = divmod(i, cols)
        grid[:, r * (h + 1) : r * (h + 1) + h, q * (w + 1) : q * (w + 1) + w] = img
    return grid


def load_image_dir(path, image_size: int | None = None) -> list[LabeledImage]:
    """Load ``*.ppm`` files from ``path``.

    Subdirectories are treated as classes in sorted name order; loose files
    in ``path`` itself get label 0 when there are no subdirectories.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    groups = [(i, d) for i, d in enumerate(class_dirs)] if class_dirs else [(0, root)]
    out = []
    for label, d in groups:
        for f in sorted(d.glob("*.ppm")):
            px = load_ppm(f)
            if image_size is not None and px.shape[1:] != (image_size, image_size):
                raise DataError(f"{f}: size {px.shape[1:]} differs from requested {image_size}")
            out.append(LabeledImage(px, label))
    if not out:
        raise DataError(f"no .ppm images found under {root}")
    return out


def to_arrays(images: Sequence[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    if not images:
        raise DataError("empty image list")
    return np.stack([im.pixels for im in images]), np.array([im.label for im in images], dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic lesions
# ---------------------------------------------------------------------------

SKIN_BASE = np.array([0.86, 0.66, 0.54])


@dataclass(frozen=True)
class LesionClass:
    color: tuple[float, float, float]  # mean RGB in [0, 1]
    radius: tuple[float, float]  # mean, std, as a fraction of the half-width
    irregularity: float  # amplitude of angular radius harmonics


# melanoma-like, nevus-like, carcinoma-like
LESION_CLASSES = (
    LesionClass((0.28, 0.17, 0.13), (0.50, 0.10), 0.22),
    LesionClass((0.50, 0.33, 0.24), (0.40, 0.08), 0.06),
    LesionClass((0.68, 0.42, 0.40), (0.52, 0.10), 0.14),
)


def _lesion_class(label: int) -> LesionClass:
    if label < len(LESION_CLASSES):
        return LESION_CLASSES[label]
    r = np.random.default_rng(1000 + label)
    return LesionClass(tuple(r.uniform(0.2, 0.7, 3)), (r.uniform(0.3, 0.6), 0.08), r.uniform(0.0, 0.25))


def synth_lesion(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    cls = _lesion_class(label)
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    skin = np.clip(SKIN_BASE + rng.normal(0.0, 0.05, 3), 0.0, 1.0)
    color = np.clip(np.asarray(cls.color) + rng.normal(0.0, 0.06, 3), 0.0, 1.0)
    radius = np.clip(rng.normal(*cls.radius), 0.15, 0.85)
    aspect = rng.uniform(0.75, 1.0)
    rot = rng.uniform(0.0, np.pi)
    cy, cx = rng.normal(0.0, 0.12, 2)

    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(rot) + dy * np.sin(rot)
    v = (-dx * np.sin(rot) + dy * np.cos(rot)) / aspect
    rho = np.hypot(u, v)
    phi = np.arctan2(v, u)
    harmonics = rng.integers(3, 7, 2)
    phases = rng.uniform(0.0, 2 * np.pi, 2)
    edge = radius * (
        1.0
        + cls.irregularity * np.sin(harmonics[0] * phi + phases[0])
        + 0.5 * cls.irregularity * np.sin(harmonics[1] * phi + phases[1])
    )
    softness = 0.08
    mask = 1.0 / (1.0 + np.exp((rho - edge) / (softness * radius)))

    img = skin[:, None, None] * (1.0 - mask) + color[:, None, None] * mask
    img = img + rng.normal(0.0, 0.03, img.shape)
    return np.clip(2.0 * img - 1.0, -1.0, 1.0)


def synth_lesion_dataset(spec: DatasetSpec) -> list[LabeledImage]:
    """Deterministic synthetic dataset, ordered by class."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for label, count in enumerate(spec.counts):
        for _ in range(count):
            out.append(LabeledImage(synth_lesion(label, spec.image_size, rng), label))
    return out


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------


def generated_count(n_real: int, alpha: float) -> int:
    """Generated samples needed so they form a fraction ``alpha`` of the mix."""
    if not 0.0 <= alpha < 1.0:
        raise DataError(f"alpha must lie in [0, 1), got {alpha}")
    return int(np.floor(n_real * alpha / (1.0 - alpha) + 0.5))


def stratified_mix(
    real: Sequence[LabeledImage],
    generated: Sequence[LabeledImage],
    alpha: float,
    seed: int,
) -> list[LabeledImage]:
    """Add generated images class by class so they make up ``alpha`` of the
    result while keeping the real class proportions."""
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[LabeledImage]] = {}
    for im in generated:
        by_class.setdefault(im.label, []).append(im)
    real_counts: dict[int, int] = {}
    for im in real:
        real_counts[im.label] = real_counts.get(im.label, 0) + 1

    out = [LabeledImage(im.pixels, im.label, "real") for im in real]
    for label in sorted(real_counts):
        need = generated_count(real_counts[label], alpha)
        if need == 0:
            continue
        supply = by_class.get(label, [])
        if len(supply) < need:
            raise DataError(f"class {label}: need {need} generated images, only {len(supply)} available")
        pick = rng.choice(len(supply), size=need, replace=False)
        out.extend(LabeledImage(supply[i].pixels, label, "generated") for i in sorted(pick))
    order = rng.permutation(len(out))
    return [out[i] for i in order]
