"""Linear ion-chain equilibrium and transverse normal modes.

Positions are solved in the usual dimensionless units where the axial
potential energy is ``sum(u**2)/2 + sum_{i<j} 1/|u_i - u_j|`` and the
physical position is ``z = length_scale * u`` with
``length_scale**3 = q**2 / (4 pi eps0 m omega_z**2)``.

Angular frequencies are in rad/ms throughout, lengths in micrometres.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import constants


class ChainError(RuntimeError):
    """Equilibrium solver failure or an unstable (zigzag) chain."""


@dataclass(frozen=True)
class TrapConfig:
    ion_count: int
    transverse_freq: float
    axial_freq: float | None = None
    target_mean_spacing: float | None = None
    ion_mass: float = 171.0
    charge: float = 1.0

    def __post_init__(self):
        if self.ion_count < 1:
            raise ValueError(f"ion_count must be >= 1, got {self.ion_count}")
        if not self.transverse_freq > 0:
            raise ValueError("transverse_freq must be positive")
        if self.axial_freq is None and self.target_mean_spacing is None:
            raise ValueError("need either axial_freq or target_mean_spacing")
        if self.axial_freq is not None and not self.axial_freq > 0:
            raise ValueError("axial_freq must be positive")
        if self.target_mean_spacing is not None and not self.target_mean_spacing > 0:
            raise ValueError("target_mean_spacing must be positive")


@dataclass(frozen=True)
class IonChain:
    dimensionless_positions: np.ndarray
    length_scale: float
    trap: TrapConfig
    axial_freq: float

    @property
    def positions(self) -> np.ndarray:
        """Physical positions in micrometres."""
        return self.length_scale * self.dimensionless_positions

    @property
    def mean_spacing(self) -> float:
        u = self.dimensionless_positions
        if len(u) < 2:
            return 0.0
        return self.length_scale * (u[-1] - u[0]) / (len(u) - 1)


@dataclass(frozen=True)
class ModeSpectrum:
    """Transverse modes sorted by descending frequency (index 0 is the COM mode).

    ``mode_matrix[i, k]`` is the amplitude of ion ``i`` in mode ``k``.
    ``lamb_dicke`` holds eta_k / eta_COM = sqrt(omega_COM / omega_k); only the
    product with the carrier Rabi frequency is ever needed.
    """

    absolute_freqs: np.ndarray
    relative_freqs: np.ndarray
    mode_matrix: np.ndarray
    lamb_dicke: np.ndarray = field(repr=False)

    @property
    def mode_count(self) -> int:
        return len(self.absolute_freqs)


def _gradient(u):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, 1.0)
    f = np.sign(d) / d**2
    np.fill_diagonal(f, 0.0)
    return u - f.sum(axis=1)


def _hessian(u):
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, 1.0)
    c = 2.0 / d**3
    np.fill_diagonal(c, 0.0)
    h = -c
    np.fill_diagonal(h, 1.0 + c.sum(axis=1))
    return h


def _energy(u):
    d = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), 1)
    return 0.5 * np.dot(u, u) + np.sum(1.0 / d[iu])


def solve_equilibrium(n: int, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Dimensionless equilibrium positions of ``n`` ions, sorted ascending.

    Damped Newton from a uniformly spaced seed; the result is mirror
    symmetrized and must have gradient max-norm below ``tol``.
    """
    if n < 1:
        raise ValueError(f"need at least one ion, got {n}")
    if n == 1:
        return np.zeros(1)
    # the chain half-length grows roughly like n**0.56 in these units
    half = 0.63 * (n - 1) ** 0.56 + 0.3 * (n > 2)
    u = np.linspace(-half, half, n)
    residual = np.inf
    for _ in range(max_iter):
        g = _gradient(u)
        residual = np.max(np.abs(g))
        if residual < 0.1 * tol:
            break
        step = np.linalg.solve(_hessian(u), g)
        e0 = _energy(u)
        t = 1.0
        while t > 1e-12:
            trial = u - t * step
            if np.all(np.diff(trial) > 0) and _energy(trial) <= e0 + 1e-14 * abs(e0):
                break
            t *= 0.5
        u = trial
    u = np.sort(u)
    u = 0.5 * (u - u[::-1])
    residual = np.max(np.abs(_gradient(u)))
    if residual >= tol:
        raise ChainError(f"equilibrium solver did not converge for N={n}: residual {residual:.3e}")
    return u


def length_scale(axial_freq: float, ion_mass: float = 171.0, charge: float = 1.0) -> float:
    """Coulomb length scale in micrometres for an axial frequency in rad/ms."""
    q = charge * constants.e
    m = ion_mass * constants.atomic_mass
    wz = axial_freq * 1e3
    ell = (q**2 / (4 * math.pi * constants.epsilon_0 * m * wz**2)) ** (1.0 / 3.0)
    return ell * 1e6


def transverse_hessian(u: np.ndarray, freq_ratio: float) -> np.ndarray:
    """Dimensionless transverse stiffness matrix for ``freq_ratio = omega_x / omega_z``."""
    n = len(u)
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, 1.0)
    c = 1.0 / d**3
    np.fill_diagonal(c, 0.0)
    a = c.copy()
    np.fill_diagonal(a, freq_ratio**2 - c.sum(axis=1))
    assert a.shape == (n, n)
    return a


def _lowest_eigenvalue(u, freq_ratio):
    return np.linalg.eigvalsh(transverse_hessian(u, freq_ratio))[0]


def fit_axial_frequency(
    n: int,
    transverse_freq: float,
    target_mean_spacing: float,
    ion_mass: float = 171.0,
    charge: float = 1.0,
    rtol: float = 1e-12,
) -> float:
    """Axial frequency (rad/ms) giving the requested mean nearest-neighbour spacing (um).

    Bisection in log(omega_z); spacing decreases monotonically as omega_z grows.
    """
    if not target_mean_spacing > 0:
        raise ValueError("target_mean_spacing must be positive")
    if n < 2:
        raise ValueError("mean spacing is undefined for a single ion")
    u = solve_equilibrium(n)
    extent = (u[-1] - u[0]) / (n - 1)

    def spacing(wz):
        return length_scale(wz, ion_mass, charge) * extent

    lo, hi = 1e-6 * transverse_freq, transverse_freq
    if spacing(hi) > target_mean_spacing:
        raise ChainError("target spacing needs an axial frequency above the transverse one")
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        if spacing(mid) > target_mean_spacing:
            lo = mid
        else:
            hi = mid
    wz = math.sqrt(lo * hi)
    mu = _lowest_eigenvalue(u, transverse_freq / wz)
    if mu <= 0:
        raise ChainError(f"linear chain unstable at omega_z={wz:.6g}: lowest transverse eigenvalue {mu:.6g}")
    return wz


def build_chain(trap: TrapConfig) -> IonChain:
    u = solve_equilibrium(trap.ion_count)
    wz = trap.axial_freq
    if wz is None:
        wz = fit_axial_frequency(
            trap.ion_count, trap.transverse_freq, trap.target_mean_spacing, trap.ion_mass, trap.charge
        )
    return IonChain(u, length_scale(wz, trap.ion_mass, trap.charge), trap, wz)


def transverse_modes(chain: IonChain) -> ModeSpectrum:
    wx = chain.trap.transverse_freq
    wz = chain.axial_freq
    u = chain.dimensionless_positions
    n = len(u)
    a = transverse_hessian(u, wx / wz)
    mu, vecs = np.linalg.eigh(a)
    if mu[0] <= 0:
        raise ChainError(f"linear chain unstable: lowest transverse eigenvalue {mu[0]:.6g}")
    order = np.argsort(mu)[::-1]
    mu = mu[order]
    vecs = vecs[:, order]
    for k in range(n):
        # modes of a mirror-symmetric chain have definite parity; enforce it so
        # antisymmetric modes vanish exactly on the centre ion of odd chains
        v = vecs[:, k]
        parity = 1.0 if np.dot(v, v[::-1]) >= 0 else -1.0
        v = 0.5 * (v + parity * v[::-1])
        v = v / np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        vecs[:, k] = v
    # the COM eigenvector is exactly uniform; replace solver output outright
    vecs[:, 0] = 1.0 / math.sqrt(n)
    absolute = wz * np.sqrt(mu)
    absolute[0] = wx
    relative = absolute - absolute[0]
    ratio = np.sqrt(absolute[0] / absolute)
    return ModeSpectrum(absolute, relative, vecs, ratio)


def lamb_dicke_scale(spectrum: ModeSpectrum, com_sideband_rate: float) -> np.ndarray:
    """Per-mode red-sideband rates g_k = eta_k * Omega (rad/ms).

    Fixes g_COM to the calibration value and scales as 1/sqrt(omega_k).
    """
    if not com_sideband_rate > 0:
        raise ValueError("com_sideband_rate must be positive")
    return com_sideband_rate * np.sqrt(spectrum.absolute_freqs[0] / spectrum.absolute_freqs)


def chain_modes(trap: TrapConfig) -> tuple[IonChain, ModeSpectrum]:
    chain = build_chain(trap)
    return chain, transverse_modes(chain)
