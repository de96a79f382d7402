"""Red-sideband spin-boson Hamiltonian restricted to one excitation sector.

    H(t) = diag + sum_j [exp(i(delta_j t + phi_j)) B_j + h.c.]

``diag`` holds +-Delta/2 (excited / ground) plus sum_k omega_k n_k, and B_j
is the sigma_+ a_k part of tone j with entries (lambda_k^(j) / 2) sqrt(n_k).
The first tone fixes the rotating frame, so a single tone is static.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import comb

import numpy as np
import scipy.sparse as sp

from .basis import EXCITED, GROUND, Subspace


@dataclass(frozen=True)
class Tone:
    """One drive component as seen by the kept modes."""

    lambdas: np.ndarray
    offset: float = 0.0
    phase: float = 0.0


def _colex_ranks(occ: np.ndarray, total: int) -> np.ndarray:
    """Vectorised colex rank of each row of ``occ`` (all rows sum to ``total``)."""
    k = occ.shape[1]
    size = total + k + 1
    table = np.array([[comb(x, j) for j in range(k + 1)] for x in range(size)], dtype=np.int64)
    r = np.zeros(len(occ), dtype=np.int64)
    rest = np.full(len(occ), total, dtype=np.int64)
    for j in range(k - 1, 0, -1):
        a = occ[:, j]
        r += table[rest + j, j] - table[rest - a + j, j]
        rest = rest - a
    return r


def coupling_matrix(subspace: Subspace, lambdas) -> sp.csr_matrix:
    """sigma_+ a_k block: rows in the excited block, columns in the ground block."""
    lam = np.asarray(lambdas, dtype=float)
    if len(lam) != subspace.K:
        raise ValueError(f"expected {subspace.K} couplings, got {len(lam)}")
    d = subspace.dimension
    rows, cols, vals = [], [], []
    if subspace.M >= 1:
        g = subspace.ground_size
        occ = subspace.occupations[:g]
        for k in range(subspace.K):
            if lam[k] == 0.0:
                continue
            src = np.nonzero(occ[:, k] > 0)[0]
            lowered = occ[src].copy()
            lowered[:, k] -= 1
            dst = g + _colex_ranks(lowered, subspace.M - 1)
            rows.append(dst)
            cols.append(src)
            vals.append(0.5 * lam[k] * np.sqrt(occ[src, k]))
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(d, d))


def _diagonal(subspace, mode_freqs, detuning):
    spin_sign = np.where(subspace.spins == EXCITED, 0.5, -0.5)
    return detuning * spin_sign + subspace.occupations @ np.asarray(mode_freqs, dtype=float)


@dataclass(frozen=True)
class HamiltonianOperator:
    subspace: Subspace
    diagonal: np.ndarray
    couplings: tuple
    tone_offsets: tuple
    tone_phases: tuple
    detuning: float
    mode_freqs: np.ndarray

    @property
    def dimension(self) -> int:
        return self.subspace.dimension

    @property
    def is_static(self) -> bool:
        return all(d == 0.0 for d in self.tone_offsets)

    def phases(self, t: float) -> np.ndarray:
        return np.exp(1j * (np.asarray(self.tone_offsets) * t + np.asarray(self.tone_phases)))

    def matrix(self, t: float = 0.0) -> sp.csr_matrix:
        """Sparse H(t)."""
        return self.combination_matrix(1.0, self.phases(t))

    def dense(self, t: float = 0.0) -> np.ndarray:
        return self.matrix(t).toarray()

    def apply(self, t: float, state: np.ndarray) -> np.ndarray:
        """H(t) @ state for a vector or a (D, n) block of vectors."""
        if state.shape[0] != self.dimension:
            raise ValueError(f"state has length {state.shape[0]}, operator dimension {self.dimension}")
        diag = self.diagonal if state.ndim == 1 else self.diagonal[:, None]
        out = diag * state
        for c, b in zip(self.phases(t), self.couplings):
            if b.nnz:
                out = out + c * (b @ state) + np.conj(c) * (b.T @ state)
        return out

    def apply_combination(self, diag_weight: float, coeffs, state: np.ndarray) -> np.ndarray:
        """(diag_weight * diag + sum_j [coeffs_j B_j + h.c.]) @ state."""
        diag = self.diagonal if state.ndim == 1 else self.diagonal[:, None]
        out = (diag_weight * diag) * state
        for c, b, bt in zip(coeffs, self.couplings, self._adjoints()):
            if b.nnz:
                out += c * (b @ state)
                out += np.conj(c) * (bt @ state)
        return out

    def combination_matrix(self, diag_weight: float, coeffs, shift: float = 0.0, scale: float = 1.0) -> sp.csr_matrix:
        """CSR form of ``scale * (diag_weight * diag + sum_j [coeffs_j B_j + h.c.] - shift)``.

        Every combination shares one sparsity pattern, so only the data
        array is recomputed.
        """
        indptr, indices, diag_part, parts, on_diag = self._pattern()
        data = (scale * diag_weight) * diag_part.astype(complex)
        if shift:
            data[on_diag] -= scale * shift
        for c, (b_part, bt_part) in zip(coeffs, parts):
            data += (scale * c) * b_part
            data += (scale * np.conj(c)) * bt_part
        return sp.csr_matrix((data, indices, indptr), shape=(self.dimension, self.dimension))

    def _pattern(self):
        cached = self.__dict__.get("_csr_pattern")
        if cached is not None:
            return cached
        d = self.dimension
        pieces = [(np.arange(d), np.arange(d), self.diagonal)]
        for b in self.couplings:
            coo = b.tocoo()
            pieces.append((coo.row, coo.col, coo.data))
            pieces.append((coo.col, coo.row, coo.data))
        keys = [r.astype(np.int64) * d + c for r, c, _ in pieces]
        uniq, inverse = np.unique(np.concatenate(keys), return_inverse=True)
        rows = uniq // d
        indices = (uniq % d).astype(np.int32 if d < 2**31 else np.int64)
        indptr = np.zeros(d + 1, dtype=indices.dtype)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr).astype(indices.dtype)
        vectors = []
        start = 0
        for r, _, vals in pieces:
            v = np.zeros(len(uniq))
            np.add.at(v, inverse[start:start + len(r)], vals)
            vectors.append(v)
            start += len(r)
        parts = [(vectors[1 + 2 * j], vectors[2 + 2 * j]) for j in range(len(self.couplings))]
        on_diag = np.nonzero(rows == uniq % d)[0]
        cached = (indptr, indices, vectors[0], parts, on_diag)
        object.__setattr__(self, "_csr_pattern", cached)
        return cached

    def combination_bounds(self, diag_weight: float, coeffs) -> tuple[float, float]:
        radius = np.zeros(self.dimension)
        for c, r in zip(coeffs, self._tone_radii()):
            radius += abs(c) * r
        d = diag_weight * self.diagonal
        return float(np.min(d - radius)), float(np.max(d + radius))

    def _tone_radii(self):
        # cached on first use; the operator itself stays immutable
        cached = self.__dict__.get("_radii")
        if cached is None:
            cached = []
            for b in self.couplings:
                a = abs(b)
                cached.append(np.asarray(a.sum(axis=0)).ravel() + np.asarray(a.sum(axis=1)).ravel())
            object.__setattr__(self, "_radii", cached)
        return cached

    def _adjoints(self):
        cached = self.__dict__.get("_adj")
        if cached is None:
            cached = tuple(b.T.tocsr() for b in self.couplings)
            object.__setattr__(self, "_adj", cached)
        return cached

    def coupling_bound(self) -> float:
        """Upper bound on the spectral norm of the off-diagonal part."""
        total = 0.0
        for b in self.couplings:
            if b.nnz:
                a = abs(b)
                total += np.sqrt(np.max(a.sum(axis=0)) * np.max(a.sum(axis=1)))
        return 2.0 * float(total)

    def spectral_bounds(self) -> tuple[float, float]:
        """Gershgorin interval valid for H(t) at every t."""
        return self.combination_bounds(1.0, [1.0] * len(self.couplings))

    def coupled_gap_bound(self) -> float:
        """Largest |E_row - E_col| over coupled pairs."""
        gap = 0.0
        for b in self.couplings:
            if b.nnz:
                coo = b.tocoo()
                gap = max(gap, float(np.max(np.abs(self.diagonal[coo.row] - self.diagonal[coo.col]))))
        return gap


def build(subspace: Subspace, mode_freqs, detuning: float, tones) -> HamiltonianOperator:
    """Assemble the operator for ``tones`` (sequence of :class:`Tone`) on ``subspace``."""
    tones = list(tones)
    if not tones:
        raise ValueError("at least one tone is required")
    if tones[0].offset != 0.0:
        raise ValueError("the first tone defines the frame and must have zero offset")
    mode_freqs = np.asarray(mode_freqs, dtype=float)
    if len(mode_freqs) != subspace.K:
        raise ValueError(f"expected {subspace.K} mode frequencies, got {len(mode_freqs)}")
    couplings = tuple(coupling_matrix(subspace, t.lambdas) for t in tones)
    return HamiltonianOperator(
        subspace=subspace,
        diagonal=_diagonal(subspace, mode_freqs, detuning),
        couplings=couplings,
        tone_offsets=tuple(float(t.offset) for t in tones),
        tone_phases=tuple(float(t.phase) for t in tones),
        detuning=float(detuning),
        mode_freqs=mode_freqs,
    )


def frame_shift(op: HamiltonianOperator, new_detuning: float) -> HamiltonianOperator:
    spin_sign = np.where(op.subspace.spins == EXCITED, 0.5, -0.5)
    diag = op.diagonal + (new_detuning - op.detuning) * spin_sign
    return replace(op, diagonal=diag, detuning=float(new_detuning))


__all__ = ["Tone", "HamiltonianOperator", "build", "frame_shift", "coupling_matrix", "GROUND", "EXCITED"]
