"""Image-quality and classification metrics.

FID here is computed on features from a small frozen random conv net rather
than Inception v3, so values are only comparable within one extractor seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .data import LabeledImage, stratified_mix, to_arrays
from .errors import DataError, NumericError, ShapeError

FEATURE_DIM = 64


class InsufficientDataError(DataError):
    pass


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int


@dataclass
class ClassificationReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    macro_precision: float
    macro_recall: float
    confusion: np.ndarray  # rows: true class, columns: predicted class


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def extractor_params(extractor_seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(extractor_seed)
    return {
        "conv1_w": nn.fan_in_uniform(rng, (8, 3, 3, 3), 27) * np.sqrt(3.0),
        "conv1_b": np.zeros(8),
        "conv2_w": nn.fan_in_uniform(rng, (16, 8, 3, 3), 72) * np.sqrt(3.0),
        "conv2_b": np.zeros(16),
        "fc_w": nn.fan_in_uniform(rng, (FEATURE_DIM, 16), 16) * np.sqrt(3.0),
        "fc_b": nn.fan_in_uniform(rng, (FEATURE_DIM,), 16),
    }


def extract_features(images: np.ndarray, extractor_seed: int = 0, batch_size: int = 256) -> np.ndarray:
    """Embed ``[N, 3, H, W]`` images as ``[N, 64]`` features.

    The network (conv3x3 -> LeakyReLU -> avgpool2 -> conv3x3 -> LeakyReLU ->
    global average pool -> dense) is frozen and fully determined by
    ``extractor_seed``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] < 1 or images.shape[1] != 3:
        raise ShapeError(f"expected a non-empty [N, 3, H, W] batch, got {images.shape}")
    p = extractor_params(extractor_seed)
    out = []
    for start in range(0, images.shape[0], batch_size):
        x = images[start : start + batch_size]
        h = nn.leaky_relu(nn.conv2d(x, p["conv1_w"], p["conv1_b"], padding=1))
        h = nn.avg_pool2d(h, 2)
        h = nn.leaky_relu(nn.conv2d(h, p["conv2_w"], p["conv2_b"], padding=1))
        h = h.mean(axis=(2, 3))
        out.append(nn.dense(h, p["fc_w"], p["fc_b"]))
    return np.concatenate(out)


def gaussian_stats(features: np.ndarray) -> FeatureStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be [n, d], got {features.shape}")
    n = features.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples for a covariance, got {n}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return FeatureStats(mean, cov, n)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def sym_eig(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ascending eigenvalues and a matrix whose columns are the
    matching orthonormal eigenvectors.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("sym_eig requires a symmetric matrix")
    n = a.shape[0]
    v = np.eye(n)
    # off-diagonal threshold is relative to the matrix scale
    threshold = tol * scale
    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a)))
        if off.max(initial=0.0) < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < threshold * 1e-3:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = np.abs(a - np.diag(np.diag(a)))
        if off.max(initial=0.0) >= threshold:
            raise NumericError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root, clamping negative eigenvalues to zero."""
    w, v = sym_eig(matrix)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    if a.mean.shape != b.mean.shape or a.covariance.shape != b.covariance.shape:
        raise ShapeError(f"feature dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    s = sqrt_psd(a.covariance)
    m = s @ b.covariance @ s
    m = (m + m.T) / 2.0
    w, _ = sym_eig(m)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    d = float(diff @ diff) + float(np.trace(a.covariance) + np.trace(b.covariance)) - 2.0 * tr_sqrt
    return max(d, 0.0)


def fid(real_images: np.ndarray, fake_images: np.ndarray, extractor_seed: int = 0) -> float:
    ra = gaussian_stats(extract_features(real_images, extractor_seed))
    fb = gaussian_stats(extract_features(fake_images, extractor_seed))
    return frechet_distance(ra, fb)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def classification_report(predictions, labels, n_classes: int) -> ClassificationReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ShapeError(f"predictions {predictions.shape} and labels {labels.shape} differ")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(n_classes), where=actual > 0)
    total = confusion.sum()
    return ClassificationReport(
        accuracy=float(np.trace(confusion) / total) if total else 0.0,
        precision=precision,
        recall=recall,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        confusion=confusion,
    )


@dataclass
class HarnessConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    # When true, every mix gets the optimizer steps of ``epochs`` passes over
    # the real images alone, so larger alphas do not buy extra training.
    equal_steps: bool = True


@dataclass
class SmallCNN:
    """conv3x3 -> ReLU -> avgpool -> conv3x3 -> ReLU -> avgpool -> dense."""

    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, image_size: int, n_classes: int, rng: np.random.Generator) -> "SmallCNN":
        flat = 16 * (image_size // 4) ** 2
        return cls(
            {
                "c1_w": nn.fan_in_uniform(rng, (8, 3, 3, 3), 27),
                "c1_b": np.zeros(8),
                "c2_w": nn.fan_in_uniform(rng, (16, 8, 3, 3), 72),
                "c2_b": np.zeros(16),
                "fc_w": nn.fan_in_uniform(rng, (n_classes, flat), flat),
                "fc_b": np.zeros(n_classes),
            }
        )

    def forward(self, x: np.ndarray):
        p = self.params
        a1 = nn.conv2d(x, p["c1_w"], p["c1_b"], padding=1)
        h1 = nn.avg_pool2d(nn.relu(a1))
        a2 = nn.conv2d(h1, p["c2_w"], p["c2_b"], padding=1)
        h2 = nn.avg_pool2d(nn.relu(a2))
        flat = h2.reshape(h2.shape[0], -1)
        logits = nn.dense(flat, p["fc_w"], p["fc_b"])
        return logits, (x, a1, h1, a2, h2, flat)

    def backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        p = self.params
        x, a1, h1, a2, h2, flat = cache
        dflat, g_fcw, g_fcb = nn.dense_backward(dlogits, flat, p["fc_w"])
        dh2 = dflat.reshape(h2.shape)
        da2 = nn.relu_backward(nn.avg_pool2d_backward(dh2), a2)
        dh1, g_c2w, g_c2b = nn.conv2d_backward(da2, h1, p["c2_w"], padding=1)
        da1 = nn.relu_backward(nn.avg_pool2d_backward(dh1), a1)
        _, g_c1w, g_c1b = nn.conv2d_backward(da1, x, p["c1_w"], padding=1)
        return {"c1_w": g_c1w, "c1_b": g_c1b, "c2_w": g_c2w, "c2_b": g_c2b, "fc_w": g_fcw, "fc_b": g_fcb}

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size])[0].argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)


def train_classifier(
    images: np.ndarray, labels: np.ndarray, n_classes: int, config: HarnessConfig, steps: int | None = None
) -> SmallCNN:
    """Adam on minibatches.  ``steps`` caps the update count; by default the
    loop runs ``config.epochs`` full passes."""
    rng = np.random.default_rng(config.seed)
    model = SmallCNN.init(images.shape[-1], n_classes, rng)
    opt = nn.Adam(config.lr)
    if steps is None:
        steps = config.epochs * -(-len(images) // config.batch_size)
    done = 0
    while done < steps:
        order = rng.permutation(len(images))
        for start in range(0, len(order), config.batch_size):
            if done == steps:
                break
            idx = order[start : start + config.batch_size]
            logits, cache = model.forward(images[idx])
            _, dlogits = nn.softmax_cross_entropy(logits, labels[idx])
            opt.step(model.params, model.backward(dlogits, cache))
            done += 1
    return model


def augmentation_harness(
    real_train: Sequence[LabeledImage],
    generated: Sequence[LabeledImage],
    alpha: float,
    test_set: Sequence[LabeledImage],
    config: HarnessConfig = HarnessConfig(),
    n_classes: int | None = None,
) -> ClassificationReport:
    """Train the small classifier on a real/generated mix and score it on
    the (real-only) test set."""
    if any(im.source != "real" for im in test_set):
        raise DataError("test set must contain real images only")
    mixed = stratified_mix(real_train, generated, alpha, config.seed)
    test_ids = {id(im.pixels) for im in test_set}
    assert not any(id(im.pixels) in test_ids for im in mixed), "test images leaked into training set"
    x_train, y_train = to_arrays(mixed)
    x_test, y_test = to_arrays(test_set)
    if n_classes is None:
        n_classes = int(max(y_train.max(), y_test.max())) + 1
    steps = config.epochs * -(-len(real_train) // config.batch_size) if config.equal_steps else None
    model = train_classifier(x_train, y_train, n_classes, config, steps)
    return classification_report(model.predict(x_test), y_test, n_classes)
