"""Dense statevector simulator for RY/CNOT circuits.

Qubit 0 is the most significant bit of the basis index, so on two qubits
the amplitude order is |00>, |01>, |10>, |11> with the left bit on qubit 0.

Two layers live here.  The single-state API (``new_zero_state``,
``apply_ry``, ...) has value semantics and mirrors textbook notation.  The
batched helpers (``zero_states``, ``ry_batch``, ...) act on a stack of
``M`` states at once, each with its own rotation angle, and are what the
variational generator uses for training.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

MAX_QUBITS = 16

PAULI_NONE, PAULI_X, PAULI_Y, PAULI_Z = 0, 1, 2, 3


class SamplingError(ValueError):
    """Raised when a finite-shot estimate is requested with no shots."""


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ConfigurationError(
                f"expected {2**self.n_qubits} amplitudes, got {self.amplitudes.shape}"
            )

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


@dataclass(frozen=True)
class NoiseConfig:
    """Parameters of the emulated NISQ channel.

    ``shots == 0`` selects exact expectations; readout error then acts as
    the deterministic scaling ``(1 - 2 q)`` of every ``<Z>``.
    """

    depolarizing_prob: float = 0.0
    readout_flip_prob: float = 0.0
    trajectories: int = 1
    shots: int = 0

    def __post_init__(self):
        for name in ("depolarizing_prob", "readout_flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if self.trajectories < 1:
            raise ConfigurationError("trajectories must be >= 1")
        if self.shots < 0:
            raise ConfigurationError("shots must be >= 0")

    @property
    def is_noiseless(self) -> bool:
        return (
            self.depolarizing_prob == 0.0
            and self.readout_flip_prob == 0.0
            and self.shots == 0
        )


NOISELESS = NoiseConfig()


def _check_n_qubits(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits}")


def _check_qubit(n_qubits: int, qubit: int) -> None:
    if not 0 <= qubit < n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {n_qubits}-qubit register")


# ---------------------------------------------------------------------------
# batched engine: states has shape (M, 2**n)
# ---------------------------------------------------------------------------


def zero_states(n_qubits: int, count: int) -> np.ndarray:
    _check_n_qubits(n_qubits)
    states = np.zeros((count, 2**n_qubits), dtype=np.complex128)
    states[:, 0] = 1.0
    return states


def _split(states: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    # (M, high, bit, low) view; bit axis is the target qubit
    return states.reshape(states.shape[0], 2**qubit, 2, 2 ** (n_qubits - qubit - 1))


def ry_batch(states: np.ndarray, n_qubits: int, qubit: int, angles) -> np.ndarray:
    """Apply RY(angles[m]) on ``qubit`` of every state ``m``. Returns a new array."""
    _check_qubit(n_qubits, qubit)
    half = np.asarray(angles, dtype=np.float64).reshape(-1, 1, 1) / 2.0
    c, s = np.cos(half), np.sin(half)
    v = _split(states, n_qubits, qubit)
    a, b = v[:, :, 0, :], v[:, :, 1, :]
    out = np.empty_like(v)
    out[:, :, 0, :] = c * a - s * b
    out[:, :, 1, :] = s * a + c * b
    return out.reshape(states.shape)


@lru_cache(maxsize=None)
def _cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    cbit = 1 << (n_qubits - 1 - control)
    tbit = 1 << (n_qubits - 1 - target)
    perm = np.where(idx & cbit, idx ^ tbit, idx)
    perm.setflags(write=False)
    return perm


def cnot_batch(states: np.ndarray, n_qubits: int, control: int, target: int) -> np.ndarray:
    _check_qubit(n_qubits, control)
    _check_qubit(n_qubits, target)
    if control == target:
        raise IndexError("control and target must differ")
    return states[:, _cnot_permutation(n_qubits, control, target)]


def pauli_batch(states: np.ndarray, n_qubits: int, qubit: int, which) -> np.ndarray:
    """Apply a per-state Pauli on ``qubit``; ``which[m]`` is one of PAULI_*.

    Y is applied as ``i * X Z``.
    """
    _check_qubit(n_qubits, qubit)
    which = np.asarray(which)
    out = states.copy()
    v = _split(out, n_qubits, qubit)
    flip_phase = (which == PAULI_Z) | (which == PAULI_Y)
    if flip_phase.any():
        v[flip_phase, :, 1, :] *= -1.0
    flip_bit = (which == PAULI_X) | (which == PAULI_Y)
    if flip_bit.any():
        v[flip_bit] = v[flip_bit][:, :, ::-1, :]
    is_y = which == PAULI_Y
    if is_y.any():
        out[is_y] *= 1j
    return out


@lru_cache(maxsize=None)
def _z_signs(n_qubits: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)[:, None]
    shifts = n_qubits - 1 - np.arange(n_qubits)[None, :]
    signs = 1.0 - 2.0 * ((idx >> shifts) & 1)
    signs.setflags(write=False)
    return signs


def z_expectations_batch(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """All single-qubit <Z> values, shape (M, n_qubits)."""
    probs = states.real**2 + states.imag**2
    return probs @ _z_signs(n_qubits)


def depolarize_batch(
    states: np.ndarray, n_qubits: int, qubits, prob: float, rng: np.random.Generator
) -> np.ndarray:
    """One trajectory step: each listed qubit independently receives a random
    X, Y or Z with probability ``prob``."""
    if prob <= 0.0:
        return states
    m = states.shape[0]
    for q in qubits:
        hit = rng.random(m) < prob
        which = np.where(hit, rng.integers(1, 4, size=m), PAULI_NONE)
        if hit.any():
            states = pauli_batch(states, n_qubits, q, which)
    return states


def apply_readout(expectations: np.ndarray, flip_prob: float) -> np.ndarray:
    return (1.0 - 2.0 * flip_prob) * expectations


def sample_z_batch(
    expectations: np.ndarray, shots: int, flip_prob: float, rng: np.random.Generator
) -> np.ndarray:
    """Finite-shot <Z> estimates from exact ideal expectations.

    Each shot reads the ideal bit and then flips it with ``flip_prob``.
    """
    if shots < 1:
        raise SamplingError("shots must be >= 1 for sampled expectations")
    p0 = np.clip((1.0 + expectations) / 2.0, 0.0, 1.0)
    n0 = rng.binomial(shots, p0)
    if flip_prob > 0.0:
        n1 = shots - n0
        n0 = n0 - rng.binomial(n0, flip_prob) + rng.binomial(n1, flip_prob)
    return (2.0 * n0 - shots) / shots


# ---------------------------------------------------------------------------
# single-state API
# ---------------------------------------------------------------------------


def new_zero_state(n_qubits: int) -> StateVector:
    return StateVector(n_qubits, zero_states(n_qubits, 1)[0])


def _lift(state: StateVector) -> np.ndarray:
    return state.amplitudes[None, :]


def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    out = ry_batch(_lift(state), state.n_qubits, qubit, [angle])
    return StateVector(state.n_qubits, out[0])


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    out = cnot_batch(_lift(state), state.n_qubits, control, target)
    return StateVector(state.n_qubits, out[0])


def apply_pauli(state: StateVector, qubit: int, which: int) -> StateVector:
    out = pauli_batch(_lift(state), state.n_qubits, qubit, [which])
    return StateVector(state.n_qubits, out[0])


def expectation_z(state: StateVector, qubit: int) -> float:
    _check_qubit(state.n_qubits, qubit)
    return float(z_expectations_batch(_lift(state), state.n_qubits)[0, qubit])


def sample_expectation_z(
    state: StateVector, qubit: int, shots: int, rng: np.random.Generator, flip_prob: float = 0.0
) -> float:
    if shots < 1:
        raise SamplingError("shots must be >= 1; use expectation_z for exact values")
    exact = np.array([expectation_z(state, qubit)])
    return float(sample_z_batch(exact, shots, flip_prob, rng)[0])


def apply_noisy_gate(
    state: StateVector, gate: tuple, noise: NoiseConfig, rng: np.random.Generator
) -> StateVector:
    """Apply ``("ry", qubit, angle)`` or ``("cnot", control, target)`` then
    depolarize every involved qubit."""
    kind = gate[0].lower()
    if kind == "ry":
        _, qubit, angle = gate
        out = apply_ry(state, qubit, angle)
        involved = (qubit,)
    elif kind == "cnot":
        _, control, target = gate
        out = apply_cnot(state, control, target)
        involved = (control, target)
    else:
        raise ValueError(f"unsupported gate {gate[0]!r}")
    amps = depolarize_batch(_lift(out), state.n_qubits, involved, noise.depolarizing_prob, rng)
    return StateVector(state.n_qubits, amps[0])
