"""Coupling profiles and Lorentzian-broadened spectral densities.

Each mode contributes

    |lambda_k|**3 / sqrt(2) / ((omega - omega_k)**2 + lambda_k**2 / 2)

which integrates to pi * lambda_k**2.  The curves are diagnostics for
reservoir engineering; the dynamics never reads them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from .chain import ModeSpectrum, lamb_dicke_scale

VALIDITY_WARN_RATIO = 0.5


@dataclass(frozen=True)
class DriveTone:
    com_sideband_rate: float
    spin_detuning: float
    tone_offset: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.com_sideband_rate > 0:
            raise ValueError("com_sideband_rate must be positive")


@dataclass(frozen=True)
class CouplingProfile:
    target_ion: int
    lambdas: np.ndarray


@dataclass(frozen=True)
class SpectralCurve:
    omega_grid: np.ndarray
    values: np.ndarray
    # Lorentzian terms behind the curve: (|lambda|, centre) pairs
    widths: np.ndarray = field(repr=False)
    centres: np.ndarray = field(repr=False)
    validity_ratio: float = 0.0

    @property
    def validity_warning(self) -> bool:
        return self.validity_ratio > VALIDITY_WARN_RATIO


def coupling_profile(spectrum: ModeSpectrum, tone: DriveTone, target_ion: int) -> CouplingProfile:
    """lambda_k = 2 g_k b[target_ion, k]."""
    n = spectrum.mode_count
    if not 0 <= target_ion < n:
        raise IndexError(f"target_ion {target_ion} outside [0, {n})")
    g = lamb_dicke_scale(spectrum, tone.com_sideband_rate)
    return CouplingProfile(int(target_ion), 2.0 * g * spectrum.mode_matrix[target_ion])


def _lorentzians(grid, widths, centres):
    grid = np.asarray(grid, dtype=float)
    out = np.zeros_like(grid)
    for a, w0 in zip(widths, centres):
        if a == 0.0:
            continue
        out += (a**3 / math.sqrt(2.0)) / ((grid - w0) ** 2 + 0.5 * a * a)
    return out


def default_grid(relative_freqs, sideband_rates, points: int = 2001) -> np.ndarray:
    top = 10.0 * float(np.max(sideband_rates))
    return np.linspace(float(np.min(relative_freqs)) - top, top, points)


def spectral_density(profile: CouplingProfile, relative_freqs, grid) -> SpectralCurve:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty frequency grid")
    widths = np.abs(np.asarray(profile.lambdas, dtype=float))
    centres = np.asarray(relative_freqs, dtype=float)
    return SpectralCurve(grid, _lorentzians(grid, widths, centres), widths, centres)


def shift_spectrum(curve: SpectralCurve, detuning: float, new_detuning: float) -> SpectralCurve:
    """The curve J(omega - detuning + new_detuning), re-evaluated from its modes."""
    centres = curve.centres + (detuning - new_detuning)
    values = _lorentzians(curve.omega_grid, curve.widths, centres)
    return SpectralCurve(curve.omega_grid, values, curve.widths, centres, curve.validity_ratio)


def validity_ratio(profiles, offsets) -> float:
    """max |lambda_k| / |delta_j - delta_j'| over tones with distinct offsets."""
    ratio = 0.0
    for j, (p, dj) in enumerate(zip(profiles, offsets)):
        lam = float(np.max(np.abs(p.lambdas))) if len(p.lambdas) else 0.0
        for jj, djj in enumerate(offsets):
            sep = abs(dj - djj)
            if jj != j and sep > 0:
                ratio = max(ratio, lam / sep)
    return ratio


def combined_spectrum(profiles_with_offsets, relative_freqs, grid) -> SpectralCurve:
    """Incoherent sum over tones: sum_j J_j(omega + delta_j)."""
    pairs = list(profiles_with_offsets)
    centres = np.asarray(relative_freqs, dtype=float)
    widths = np.concatenate([np.abs(np.asarray(p.lambdas, dtype=float)) for p, _ in pairs])
    shifted = np.concatenate([centres - d for _, d in pairs])
    grid = np.asarray(grid, dtype=float)
    r = validity_ratio([p for p, _ in pairs], [d for _, d in pairs])
    if r > VALIDITY_WARN_RATIO:
        warnings.warn(f"tone separation small against couplings (ratio {r:.3g}); incoherent sum unreliable")
    return SpectralCurve(grid, _lorentzians(grid, widths, shifted), widths, shifted, r)
