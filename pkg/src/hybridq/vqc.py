"""Variational quantum sub-generators and their parameter-shift gradients.

Each sub-generator runs the circuit

    RY(z_i) on every qubit i                       (fixed encoding)
    repeat n_layers times:
        RY(theta[l, i]) on every qubit i
        CNOT(i, i + 1) for i = 0 .. n_qubits - 2
    read <Z_i> on every qubit

so it maps ``n_qubits`` input angles to ``n_qubits`` outputs in [-1, 1].
The full generator splits a latent vector into consecutive chunks, one per
sub-generator, and concatenates the outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qsim
from .errors import ConfigurationError, ShapeError
from .qsim import NOISELESS, NoiseConfig

SHIFT = np.pi / 2


@dataclass
class SubGenParams:
    angles: np.ndarray  # [n_layers, n_qubits]

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.ndim != 2:
            raise ShapeError(f"angles must be 2-D [n_layers, n_qubits], got {self.angles.shape}")
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("angles must be finite")

    @property
    def n_layers(self) -> int:
        return self.angles.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.angles.shape[1]


@dataclass
class GeneratorParams:
    """Stacked angles of all sub-generators, shape [count, n_layers, n_qubits]."""

    angles: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.ndim != 3:
            raise ShapeError(f"generator angles must be 3-D, got {self.angles.shape}")

    @classmethod
    def from_subgens(cls, subgens: list[SubGenParams]) -> "GeneratorParams":
        shapes = {s.angles.shape for s in subgens}
        if len(shapes) != 1:
            raise ShapeError(f"sub-generators disagree on shape: {sorted(shapes)}")
        return cls(np.stack([s.angles for s in subgens]))

    @classmethod
    def random(cls, count: int, n_layers: int, n_qubits: int, rng: np.random.Generator):
        return cls(rng.uniform(0.0, np.pi, size=(count, n_layers, n_qubits)))

    @property
    def sub_generators(self) -> list[SubGenParams]:
        return [SubGenParams(a) for a in self.angles]

    @property
    def count(self) -> int:
        return self.angles.shape[0]

    @property
    def n_layers(self) -> int:
        return self.angles.shape[1]

    @property
    def n_qubits(self) -> int:
        return self.angles.shape[2]

    @property
    def latent_dim(self) -> int:
        return self.count * self.n_qubits

    @property
    def n_params(self) -> int:
        return self.angles.size


def run_circuits(
    z: np.ndarray,
    angles: np.ndarray,
    noise: NoiseConfig = NOISELESS,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Simulate ``M`` ansatz instances and return their final states.

    ``z`` has shape (M, n_qubits) and ``angles`` (M, n_layers, n_qubits).
    """
    m, n = z.shape
    if angles.shape[0] != m or angles.shape[2] != n:
        raise ShapeError(f"angles {angles.shape} do not match inputs {z.shape}")
    p = noise.depolarizing_prob
    if p > 0 and rng is None:
        raise ValueError("a random generator is required for depolarizing noise")
    states = qsim.zero_states(n, m)
    for i in range(n):
        states = qsim.ry_batch(states, n, i, z[:, i])
        states = qsim.depolarize_batch(states, n, (i,), p, rng)
    for layer in range(angles.shape[1]):
        for i in range(n):
            states = qsim.ry_batch(states, n, i, angles[:, layer, i])
            states = qsim.depolarize_batch(states, n, (i,), p, rng)
        for i in range(n - 1):
            states = qsim.cnot_batch(states, n, i, i + 1)
            states = qsim.depolarize_batch(states, n, (i, i + 1), p, rng)
    return states


def subgen_forward_batch(
    angles: np.ndarray,
    z: np.ndarray,
    noise: NoiseConfig = NOISELESS,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Evaluate one sub-generator on a batch of inputs ``z`` (B, n_qubits).

    Under noise, every input is simulated ``noise.trajectories`` times and
    the readouts are averaged; shots are drawn from the trajectory-averaged
    outcome distribution.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    b, n = z.shape
    if angles.shape[1] != n:
        raise ShapeError(f"input chunk has {n} entries, circuit has {angles.shape[1]} qubits")
    if noise.is_noiseless:
        states = run_circuits(z, np.broadcast_to(angles, (b,) + angles.shape))
        return qsim.z_expectations_batch(states, n)
    if rng is None:
        raise ValueError("a random generator is required for noisy evaluation")
    t = noise.trajectories
    zz = np.repeat(z, t, axis=0)
    states = run_circuits(zz, np.broadcast_to(angles, (b * t,) + angles.shape), noise, rng)
    ideal = qsim.z_expectations_batch(states, n).reshape(b, t, n).mean(axis=1)
    if noise.shots > 0:
        return qsim.sample_z_batch(ideal, noise.shots, noise.readout_flip_prob, rng)
    return qsim.apply_readout(ideal, noise.readout_flip_prob)


def subgen_forward(
    params: SubGenParams,
    z_chunk,
    noise: NoiseConfig = NOISELESS,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    z_chunk = np.asarray(z_chunk, dtype=np.float64)
    if z_chunk.shape != (params.n_qubits,):
        raise ShapeError(f"expected chunk of length {params.n_qubits}, got {z_chunk.shape}")
    return subgen_forward_batch(params.angles, z_chunk[None, :], noise, rng)[0]


def _shifted_angles(angles: np.ndarray) -> np.ndarray:
    # [2P, L, n]: rows 2p and 2p+1 shift parameter p by +pi/2 and -pi/2
    n_params = angles.size
    shifted = np.broadcast_to(angles.ravel(), (2 * n_params, n_params)).copy()
    idx = np.arange(n_params)
    shifted[2 * idx, idx] += SHIFT
    shifted[2 * idx + 1, idx] -= SHIFT
    return shifted.reshape((2 * n_params,) + angles.shape)


def subgen_jacobian_batch(angles: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Parameter-shift Jacobians for a batch of inputs.

    Returns shape (B, n_qubits outputs, n_layers * n_qubits params).
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    b, n = z.shape
    shifted = _shifted_angles(angles)
    n_circ = shifted.shape[0]
    zz = np.repeat(z, n_circ, axis=0)
    aa = np.broadcast_to(shifted, (b,) + shifted.shape).reshape((b * n_circ,) + angles.shape)
    out = qsim.z_expectations_batch(run_circuits(zz, aa), n).reshape(b, n_circ // 2, 2, n)
    jac = (out[:, :, 0, :] - out[:, :, 1, :]) / 2.0  # (B, P, n)
    return jac.transpose(0, 2, 1)


def subgen_jacobian(params: SubGenParams, z_chunk) -> np.ndarray:
    z_chunk = np.asarray(z_chunk, dtype=np.float64)
    if z_chunk.shape != (params.n_qubits,):
        raise ShapeError(f"expected chunk of length {params.n_qubits}, got {z_chunk.shape}")
    return subgen_jacobian_batch(params.angles, z_chunk[None, :])[0]


def _chunks(params: GeneratorParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] % params.n_qubits:
        raise ConfigurationError(
            f"latent dim {z.shape[-1]} is not divisible by {params.n_qubits} qubits"
        )
    if z.shape[-1] != params.latent_dim:
        raise ShapeError(f"expected latent of length {params.latent_dim}, got {z.shape[-1]}")
    return z.reshape(z.shape[:-1] + (params.count, params.n_qubits))


def generator_forward_batch(
    params: GeneratorParams,
    z: np.ndarray,
    noise: NoiseConfig = NOISELESS,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """(B, latent_dim) -> (B, latent_dim)."""
    chunks = _chunks(params, np.atleast_2d(z))
    out = np.empty_like(chunks)
    for k in range(params.count):
        out[:, k, :] = subgen_forward_batch(params.angles[k], chunks[:, k, :], noise, rng)
    return out.reshape(chunks.shape[0], -1)


def generator_forward(
    params: GeneratorParams,
    z,
    noise: NoiseConfig = NOISELESS,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError("generator_forward takes a single latent vector")
    return generator_forward_batch(params, z[None, :], noise, rng)[0]


def generator_backward_batch(params: GeneratorParams, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum_b <upstream[b], G(z[b])> w.r.t. every angle.

    Returned with the same shape as ``params.angles``.
    """
    chunks = _chunks(params, np.atleast_2d(z))
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if up.shape != (chunks.shape[0], params.latent_dim):
        raise ShapeError(f"upstream shape {up.shape} does not match batch")
    up = up.reshape(chunks.shape)
    grad = np.empty_like(params.angles)
    for k in range(params.count):
        jac = subgen_jacobian_batch(params.angles[k], chunks[:, k, :])  # (B, n, P)
        grad[k] = np.einsum("bo,bop->p", up[:, k, :], jac).reshape(grad[k].shape)
    return grad


def generator_backward(params: GeneratorParams, z, upstream) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if z.ndim != 1 or upstream.ndim != 1:
        raise ShapeError("generator_backward takes single vectors; see generator_backward_batch")
    return generator_backward_batch(params, z[None, :], upstream[None, :])
