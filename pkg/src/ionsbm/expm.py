"""Exponential action exp(-i H tau) v for Hermitian H given only as a matvec."""

from __future__ import annotations

import numpy as np
from scipy.special import jv


class PropagationError(RuntimeError):
    pass


def _small_expm_first_column(alpha, beta, tau):
    # exp(-i T tau) e_1 for the symmetric tridiagonal T
    if len(alpha) == 1:
        return np.array([np.exp(-1j * alpha[0] * tau)])
    t = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
    w, s = np.linalg.eigh(t)
    return s @ (np.exp(-1j * w * tau) * s[0])


def lanczos_expm(matvec, v: np.ndarray, tau: float, tol: float = 1e-10, m_max: int = 40,
                 work: np.ndarray | None = None) -> np.ndarray:
    """exp(-i H tau) v by Lanczos with adaptive substeps.

    Each substep builds a Krylov basis (full reorthogonalisation) and shrinks
    the substep until the residual estimate
    ``beta_m * |[exp(-i T s)]_{m,1}|`` falls below ``tol * s / tau``.
    ``work`` may supply a reusable ``(m_max + 1, len(v))`` complex buffer.
    """
    v = np.asarray(v, dtype=complex)
    norm0 = np.linalg.norm(v)
    if norm0 == 0.0 or tau == 0.0:
        return v.copy()
    out = v.copy()
    remaining = float(tau)
    sign = 1.0 if tau > 0 else -1.0
    remaining = abs(remaining)
    step = remaining
    while remaining > 0.0:
        beta0 = np.linalg.norm(out)
        if work is None or work.shape != (m_max + 1, len(v)):
            work = np.empty((m_max + 1, len(v)), dtype=complex)
        basis = work
        basis[0] = out / beta0
        alpha = np.zeros(m_max)
        beta = np.zeros(m_max)
        m = 0
        invariant = False
        for j in range(m_max):
            w = matvec(basis[j])
            alpha[j] = np.vdot(basis[j], w).real
            w = w - alpha[j] * basis[j]
            if j > 0:
                w = w - beta[j - 1] * basis[j - 1]
            w = w - basis[: j + 1].T @ (w.conj() @ basis[: j + 1].T).conj()
            beta[j] = np.linalg.norm(w)
            m = j + 1
            if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
                invariant = True
                break
            basis[j + 1] = w / beta[j]
            if m >= 6 and m % 2 == 0:
                s = min(step, remaining)
                c = _small_expm_first_column(alpha[:m], beta[: m - 1], sign * s)
                if beta[j] * abs(c[-1]) < tol * s / abs(tau):
                    break
        s = min(step, remaining)
        while True:
            c = _small_expm_first_column(alpha[:m], beta[: m - 1], sign * s)
            if invariant or beta[m - 1] * abs(c[-1]) < tol * s / abs(tau):
                break
            s *= 0.5
            if s < 1e-14 * abs(tau):
                raise PropagationError("Lanczos substep underflow")
        out = beta0 * (basis[:m].T @ c)
        remaining -= s
        step = s if s < step else step
        if remaining < 1e-15 * abs(tau):
            break
    return out


def chebyshev_bounds_scaling(e_min: float, e_max: float) -> tuple[float, float]:
    """(centre, half width) of the spectral interval."""
    return 0.5 * (e_max + e_min), max(0.5 * (e_max - e_min), 1e-300)


def chebyshev_expm(matvec, block: np.ndarray, tau: float, e_min: float, e_max: float, tol: float = 1e-14,
                   prescaled: bool = False):
    """exp(-i H tau) applied to a vector or column block.

    ``[e_min, e_max]`` must enclose the spectrum of H.  With ``prescaled``
    the supplied ``matvec`` already applies ``2 (H - centre) / half``.
    """
    centre, half = chebyshev_bounds_scaling(e_min, e_max)
    x = half * abs(tau)
    n_terms = int(x + 10.0 * x ** (1.0 / 3.0) + 20)
    coeff = jv(np.arange(n_terms), x)
    while n_terms > 2 and abs(coeff[n_terms - 1]) < tol and abs(coeff[n_terms - 2]) < tol:
        n_terms -= 1
    phase = -1j if tau > 0 else 1j

    if prescaled:
        step = matvec
    else:
        def step(u):
            out = matvec(u)
            out -= centre * u
            out *= 2.0 / half
            return out

    t_prev = np.array(block, dtype=complex)
    t_cur = step(t_prev)
    t_cur *= 0.5
    acc = coeff[0] * t_prev
    acc += (2.0 * phase * coeff[1]) * t_cur
    factor = phase
    for n in range(2, n_terms):
        t_next = step(t_cur)
        t_next -= t_prev
        factor *= phase
        acc += (2.0 * factor * coeff[n]) * t_next
        t_prev, t_cur = t_cur, t_next
    acc *= np.exp(-1j * centre * tau)
    return acc
