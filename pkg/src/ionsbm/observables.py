"""Spin observables, tomography, trace distance and revival detection.

Convention: <sigma_z> = +1 for |0>, so P0 = (1 + <sigma_z>) / 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}


@dataclass(frozen=True)
class SpinState:
    rho: np.ndarray
    projected: bool = False

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise ValueError(f"expected a 2x2 matrix, got shape {rho.shape}")
        if abs(np.trace(rho) - 1.0) > 1e-10:
            raise ValueError(f"trace {np.trace(rho).real:.12g} is not 1")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.norm(bloch_vector(rho)) > 1.0 + 1e-9:
            raise ValueError("Bloch vector longer than 1")
        object.__setattr__(self, "rho", rho)

    @property
    def bloch(self) -> np.ndarray:
        return bloch_vector(self.rho)


def bloch_vector(rho) -> np.ndarray:
    rho = np.asarray(rho)
    return np.array([np.trace(rho @ PAULIS[a]).real for a in "xyz"])


def _as_matrix(state):
    return state.rho if isinstance(state, SpinState) else np.asarray(state, dtype=complex)


def p0(state) -> float:
    """Population of |0>, clipped to [0, 1]."""
    return float(np.clip(_as_matrix(state)[0, 0].real, 0.0, 1.0))


def tomography_reconstruct(sx: float, sy: float, sz: float) -> SpinState:
    """rho = (I + sx X + sy Y + sz Z) / 2.

    Shot noise can push the Bloch vector outside the unit ball; it is then
    scaled back radially and the result is flagged ``projected``.
    """
    r = np.array([sx, sy, sz], dtype=float)
    if np.any(np.abs(r) > 1.0 + 1e-9):
        raise ValueError(f"expectation values must lie in [-1, 1], got {r.tolist()}")
    length = np.linalg.norm(r)
    projected = length > 1.0
    if projected:
        r = r / length
    rho = 0.5 * (np.eye(2) + r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z)
    return SpinState(rho, bool(projected))


def simulate_measurement(state, axis: str, shots: int, rng: np.random.Generator) -> float:
    """Estimate <sigma_axis> from ``shots`` projective measurements."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    expectation = np.trace(_as_matrix(state) @ PAULIS[axis]).real
    p_up = min(max(0.5 * (1.0 + expectation), 0.0), 1.0)
    ups = rng.binomial(shots, p_up)
    return 2.0 * ups / shots - 1.0


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``.

    Computed from the eigenvalues of the difference and, independently, as
    half the Bloch-vector distance; the two must agree.
    """
    ra, rb = _as_matrix(a), _as_matrix(b)
    diff = ra - rb
    by_eigs = 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
    by_bloch = 0.5 * float(np.linalg.norm(bloch_vector(ra) - bloch_vector(rb)))
    if abs(by_eigs - by_bloch) > 1e-10:
        raise ValueError(f"trace distance routes disagree: {by_eigs!r} vs {by_bloch!r}")
    return by_eigs


@dataclass(frozen=True)
class RevivalReport:
    collapse_time: float | None = None
    basin: tuple[float, float] | None = None
    revival_time: float | None = None
    revival_height: float | None = None

    @property
    def collapsed(self) -> bool:
        return self.collapse_time is not None

    @property
    def revived(self) -> bool:
        return self.revival_time is not None


def revival_detect(times, signal, collapse_threshold: float = 0.15, basin_threshold: float = 0.15) -> RevivalReport:
    """Locate collapse, the low basin after it and the strongest later revival."""
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if len(times) != len(signal):
        raise ValueError("times and signal differ in length")
    if len(signal) < 20:
        raise ValueError("need at least 20 samples")
    for name, th in (("collapse_threshold", collapse_threshold), ("basin_threshold", basin_threshold)):
        if not 0.0 < th < 1.0:
            raise ValueError(f"{name} must lie in (0, 1)")
    below = np.nonzero(signal < collapse_threshold)[0]
    if below.size == 0:
        return RevivalReport()
    ic = int(below[0])
    above = np.nonzero(signal[ic:] >= basin_threshold)[0]
    basin_end = times[ic + above[0]] if above.size else times[-1]
    basin = (float(times[ic]), float(basin_end))
    tail = signal[ic:]
    interior = np.zeros(len(tail), dtype=bool)
    if len(tail) >= 3:
        interior[1:-1] = (tail[1:-1] >= tail[:-2]) & (tail[1:-1] >= tail[2:])
    interior[-1] = len(tail) > 1 and tail[-1] > tail[-2]
    if not np.any(interior & (tail > basin_threshold)):
        return RevivalReport(float(times[ic]), basin)
    peak = float(np.max(tail))
    ir = ic + int(np.nonzero(tail >= peak - 1e-12)[0][0])
    return RevivalReport(float(times[ic]), basin, float(times[ir]), float(signal[ir]))


def first_crossing_below(times, signal, level: float) -> float | None:
    """First time the signal drops below ``level``."""
    idx = np.nonzero(np.asarray(signal) < level)[0]
    return float(np.asarray(times)[idx[0]]) if idx.size else None


def purity(state) -> float:
    rho = _as_matrix(state)
    return float(np.trace(rho @ rho).real)


__all__ = [
    "SpinState",
    "RevivalReport",
    "bloch_vector",
    "p0",
    "tomography_reconstruct",
    "simulate_measurement",
    "trace_distance",
    "revival_detect",
    "first_crossing_below",
    "purity",
]
