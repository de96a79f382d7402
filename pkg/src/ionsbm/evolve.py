"""Time evolution in excitation sectors and thermal-ensemble averaging.

Spin labels: index 0 is |0> (ground, no excitation), index 1 is |1>
(excited, carries one excitation).  Reduced density matrices are 2x2 in
the (|0>, |1>) basis.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .basis import EXCITED, GROUND, ModeSubset, Subspace, mode_weights, select_modes
from .chain import ModeSpectrum
from .expm import PropagationError, chebyshev_bounds_scaling, chebyshev_expm, lanczos_expm
from .hamiltonian import HamiltonianOperator, Tone, build
from .reservoir import DriveTone, coupling_profile

INITIAL_STATES = ("0", "1", "+", "-")
NORM_TOL = 1e-9
DEFAULT_D_DENSE = 512
DEFAULT_MAX_DIMENSION = 200_000

# fourth-order commutator-free exponential integrator on Gauss nodes
_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
_A1 = 0.25 + math.sqrt(3) / 6
_A2 = 0.25 - math.sqrt(3) / 6


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThermalSpec:
    nbar: tuple
    trials: int = 100
    seed: int = 0
    excitation_cap: int = 8

    def __post_init__(self):
        if any(n < 0 for n in self.nbar):
            raise ValueError("mean phonon numbers must be non-negative")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.excitation_cap < 1:
            raise ValueError("excitation_cap must be >= 1")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(trial)]))


def sample_geometric(nbar, rng: np.random.Generator) -> np.ndarray:
    """One draw per mode from P(n) = nbar**n / (1 + nbar)**(n + 1)."""
    nbar = np.asarray(nbar, dtype=float)
    return rng.geometric(1.0 / (1.0 + nbar)) - 1


class ThermalSampler:
    """Draws kept-mode occupations with rejection above ``excitation_cap - 1``.

    Discarded modes are drawn too (so a trial's stream does not depend on K)
    but never enter the dynamics.
    """

    def __init__(self, spec: ThermalSpec, kept: ModeSubset, max_attempts: int = 1000):
        self.spec = spec
        self.kept = np.asarray(kept.kept)
        self.max_attempts = max_attempts
        self.attempts = 0
        self.rejections = 0

    def draw(self, rng: np.random.Generator) -> tuple[tuple[int, ...], np.ndarray]:
        limit = self.spec.excitation_cap - 1
        for _ in range(self.max_attempts):
            full = sample_geometric(self.spec.nbar, rng)
            self.attempts += 1
            fock = full[self.kept]
            if fock.sum() <= limit:
                return tuple(int(x) for x in fock), full
            self.rejections += 1
            if self.attempts >= 20 and self.rejections > 0.5 * self.attempts:
                break
        raise SamplingError(
            f"thermal rejection rate {self.rejections}/{self.attempts} exceeds 50%; raise excitation_cap"
        )


def sample_thermal(spec: ThermalSpec, kept: ModeSubset, rng) -> tuple[int, ...]:
    return ThermalSampler(spec, kept).draw(rng)[0]


# --- sector propagators -------------------------------------------------------


class _DenseStatic:
    def __init__(self, op: HamiltonianOperator):
        self.energies, self.vectors = np.linalg.eigh(op.dense(0.0))

    def start(self, block, t0):
        self.t0 = t0
        self.coef = self.vectors.conj().T @ block

    def state(self, t):
        return self.vectors @ (np.exp(-1j * self.energies * (t - self.t0))[:, None] * self.coef)


class _ChebyshevStatic:
    """Chebyshev polynomial expansion of exp(-i H dt) on a column block."""

    def __init__(self, op: HamiltonianOperator, tol: float):
        self.lo, self.hi = op.spectral_bounds()
        centre, half = chebyshev_bounds_scaling(self.lo, self.hi)
        self.matvec = op.combination_matrix(1.0, op.phases(0.0), shift=centre, scale=2.0 / half).__matmul__
        # expansion truncation well below the requested accuracy
        self.tol = min(tol, 1e-12) * 1e-2

    def start(self, block, t0):
        self.t = t0
        self.block = np.array(block, dtype=complex)

    def state(self, t):
        if t != self.t:
            self.block = chebyshev_expm(self.matvec, self.block, t - self.t, self.lo, self.hi, self.tol, prescaled=True)
            self.t = t
        return self.block


class _KrylovStatic:
    def __init__(self, op: HamiltonianOperator, tol: float):
        h = op.matrix(0.0)
        self.matvec = h.__matmul__
        self.tol = tol
        self.work = np.empty((41, op.dimension), dtype=complex)

    def start(self, block, t0):
        self.t = t0
        self.block = np.array(block, dtype=complex)

    def state(self, t):
        if t != self.t:
            dt = t - self.t
            for c in range(self.block.shape[1]):
                self.block[:, c] = lanczos_expm(self.matvec, self.block[:, c], dt, self.tol, work=self.work)
            self.t = t
        return self.block


def step_size(op: HamiltonianOperator, safety: float = 0.1) -> float:
    """Largest step with h * (max|delta| + coupled gap + coupling norm) <= safety."""
    scale = max(abs(d) for d in op.tone_offsets) + op.coupled_gap_bound() + op.coupling_bound()
    return safety / scale if scale > 0 else math.inf


class _Stepped:
    """Fixed-step exponential integrator for a periodically modulated H(t).

    ``scheme="cf4"`` (default) applies two exponentials per step built from
    H at the Gauss nodes; ``scheme="midpoint"`` uses exp(-i h H(t + h/2)).
    """

    def __init__(self, op: HamiltonianOperator, scheme: str = "cf4", safety: float = 0.1):
        if scheme not in ("cf4", "midpoint"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.op = op
        self.scheme = scheme
        self.h_max = step_size(op, safety)

    def start(self, block, t0):
        self.t = t0
        self.block = np.array(block, dtype=complex)

    def _exp(self, diag_weight, coeffs, block, h):
        lo, hi = self.op.combination_bounds(diag_weight, coeffs)
        centre, half = chebyshev_bounds_scaling(lo, hi)
        a = self.op.combination_matrix(diag_weight, coeffs, shift=centre, scale=2.0 / half)
        return chebyshev_expm(a.__matmul__, block, h, lo, hi, prescaled=True)

    def _step(self, block, t, h):
        op = self.op
        if self.scheme == "midpoint":
            return self._exp(1.0, op.phases(t + 0.5 * h), block, h)
        p1 = op.phases(t + _GAUSS[0] * h)
        p2 = op.phases(t + _GAUSS[1] * h)
        block = self._exp(0.5, _A1 * p1 + _A2 * p2, block, h)
        return self._exp(0.5, _A2 * p1 + _A1 * p2, block, h)

    def state(self, t):
        if t != self.t:
            n = max(1, math.ceil(abs(t - self.t) / self.h_max - 1e-9))
            h = (t - self.t) / n
            for i in range(n):
                self.block = self._step(self.block, self.t + i * h, h)
            self.t = t
        return self.block


def drive_period(offsets, rtol: float = 1e-12) -> float | None:
    """Common period of the tone phases, or None when the offsets are incommensurate."""
    nonzero = [abs(d) for d in offsets if d != 0.0]
    if not nonzero:
        return None
    base = min(nonzero)
    for d in nonzero:
        q = d / base
        if abs(q - round(q)) > rtol * q:
            return None
    return 2.0 * math.pi / base


class _Floquet:
    """Periodic-drive propagator for small sectors.

    Full propagators U(t0 + tau <- t0) are built for the phases tau that are
    requested, by stepping the identity with the same integrator as
    :class:`_Stepped`; later periods reuse U(t0 + T <- t0) by powers.
    """

    def __init__(self, op: HamiltonianOperator, period: float, scheme: str = "cf4", safety: float = 0.1):
        self.stepper = _Stepped(op, scheme, safety)
        self.period = period
        self.dimension = op.dimension

    def start(self, block, t0):
        self.t0 = t0
        self.block = np.array(block, dtype=complex)
        self.props = {0.0: np.eye(self.dimension, dtype=complex)}
        self.powers = [self.block]
        self.one_period = None

    def _propagator(self, tau):
        if tau in self.props:
            return self.props[tau]
        below = max(k for k in self.props if k < tau)
        self.stepper.start(self.props[below], self.t0 + below)
        u = self.stepper.state(self.t0 + tau)
        self.props[tau] = u
        return u

    def state(self, t):
        elapsed = t - self.t0
        n = math.floor(elapsed / self.period + 1e-9)
        tau = elapsed - n * self.period
        if abs(tau) < 1e-12 * self.period:
            tau = 0.0
        tau = round(tau, 15)
        if n >= len(self.powers):
            if self.one_period is None:
                self.one_period = self._propagator(round(self.period, 15))
            while len(self.powers) <= n:
                self.powers.append(self.one_period @ self.powers[-1])
        return self._propagator(tau) @ self.powers[n]


def sector_propagator(op: HamiltonianOperator, d_dense: int = DEFAULT_D_DENSE, tol: float = 1e-10,
                      scheme: str = "cf4", safety: float = 0.1, krylov: str = "chebyshev"):
    """Pick the propagator for one sector.

    Static sectors: dense eigendecomposition up to ``d_dense``, otherwise a
    polynomial (Krylov-space) exponential action, ``krylov`` in
    {"chebyshev", "lanczos"}.  Driven sectors: fixed-step ``scheme``.
    """
    if krylov not in ("chebyshev", "lanczos"):
        raise ValueError(f"unknown Krylov method {krylov!r}")
    if not op.is_static:
        period = drive_period(op.tone_offsets)
        if period is not None and op.dimension <= d_dense:
            return _Floquet(op, period, scheme, safety)
        return _Stepped(op, scheme, safety)
    if op.dimension <= d_dense:
        return _DenseStatic(op)
    if krylov == "lanczos":
        return _KrylovStatic(op, tol)
    return _ChebyshevStatic(op, tol)


def propagate(op: HamiltonianOperator, state, t_from: float, t_to: float, d_dense: int = DEFAULT_D_DENSE,
              tol: float = 1e-10, scheme: str = "cf4", safety: float = 0.1, krylov: str = "chebyshev") -> np.ndarray:
    """Advance one state vector (or a column block) from ``t_from`` to ``t_to``."""
    state = np.asarray(state, dtype=complex)
    if state.shape[0] != op.dimension:
        raise ValueError(f"state has length {state.shape[0]}, operator dimension {op.dimension}")
    block = state[:, None] if state.ndim == 1 else state
    prop = sector_propagator(op, d_dense, tol, scheme, safety, krylov)
    prop.start(block, t_from)
    out = prop.state(t_to)
    drift = np.max(np.abs(1.0 - np.linalg.norm(out, axis=0) / np.linalg.norm(block, axis=0)))
    if drift > NORM_TOL:
        raise PropagationError(f"norm drift {drift:.3e} exceeds {NORM_TOL:g}")
    return out[:, 0] if state.ndim == 1 else out


# --- reduced model --------------------------------------------------------------


class ReducedModel:
    """Kept modes, per-tone couplings and a cache of sector Hamiltonians."""

    def __init__(self, mode_freqs, detuning: float, tones, kept: ModeSubset | None = None,
                 d_dense: int = DEFAULT_D_DENSE, max_dimension: int = DEFAULT_MAX_DIMENSION,
                 scheme: str = "cf4", safety: float = 0.1, tol: float = 1e-10, krylov: str = "chebyshev"):
        self.mode_freqs = np.asarray(mode_freqs, dtype=float)
        self.detuning = float(detuning)
        self.tones = tuple(tones)
        k = len(self.mode_freqs)
        self.kept = kept if kept is not None else ModeSubset(tuple(range(k)), tuple([1.0] * k))
        self.d_dense = d_dense
        self.max_dimension = max_dimension
        self.scheme = scheme
        self.safety = safety
        self.tol = tol
        self.krylov = krylov
        self._ops = {}

    @property
    def K(self) -> int:
        return len(self.mode_freqs)

    def subspace(self, m: int) -> Subspace:
        return self.operator(m).subspace

    def operator(self, m: int) -> HamiltonianOperator:
        if m not in self._ops:
            sub = Subspace(self.K, m, self.max_dimension)
            self._ops[m] = build(sub, self.mode_freqs, self.detuning, self.tones)
        return self._ops[m]

    def propagator(self, m: int):
        return sector_propagator(self.operator(m), self.d_dense, self.tol, self.scheme, self.safety, self.krylov)


def reduce_model(spectrum: ModeSpectrum, drive: list[DriveTone], target_ion: int, k: int, **kwargs) -> ReducedModel:
    """Select the K dominant modes for ``drive`` on ``target_ion``.

    Per-mode weights use each tone's effective detuning Delta + delta_j and
    take the maximum over tones.
    """
    if not drive:
        raise ValueError("at least one tone is required")
    detuning = drive[0].spin_detuning
    if any(t.spin_detuning != detuning for t in drive):
        raise ValueError("all tones must share the spin detuning")
    if drive[0].tone_offset != 0.0:
        raise ValueError("the first tone must have zero offset")
    freqs = spectrum.relative_freqs
    profiles = [coupling_profile(spectrum, t, target_ion) for t in drive]
    weights = np.max([mode_weights(p.lambdas, freqs, detuning + t.tone_offset) for p, t in zip(profiles, drive)], axis=0)
    gaps = np.min([np.abs(detuning + t.tone_offset - freqs) for t in drive], axis=0)
    kept = select_modes(weights, k, gaps)
    idx = list(kept.kept)
    tones = [Tone(p.lambdas[idx], t.tone_offset, t.phase) for p, t in zip(profiles, drive)]
    return ReducedModel(freqs[idx], detuning, tones, kept, **kwargs)


# --- reduced density matrices -------------------------------------------------------


def _spin_populations(block, ground_size):
    pg = np.sum(np.abs(block[:ground_size]) ** 2, axis=0)
    pe = np.sum(np.abs(block[ground_size:]) ** 2, axis=0)
    return pg, pe


def assemble_rho(state_g, sub_g: Subspace, state_e, sub_e: Subspace, which: str) -> np.ndarray:
    """Spin density matrix for one initial spin state.

    ``state_g`` evolved from (ground, n) in sector m, ``state_e`` from
    (excited, n) in sector m + 1; either may be ``None`` when unused.
    """
    rho = np.zeros((2, 2), dtype=complex)
    if which == "0":
        pg, pe = _spin_populations(state_g, sub_g.ground_size)
        rho[0, 0], rho[1, 1] = pg, pe
        return rho
    if which == "1":
        pg, pe = _spin_populations(state_e, sub_e.ground_size)
        rho[0, 0], rho[1, 1] = pg, pe
        return rho
    sign = 1.0 if which == "+" else -1.0
    pg1, pe1 = _spin_populations(state_g, sub_g.ground_size)
    pg2, pe2 = _spin_populations(state_e, sub_e.ground_size)
    rho[0, 0] = 0.5 * (pg1 + pg2)
    rho[1, 1] = 0.5 * (pe1 + pe2)
    # ground block of sector m and excited block of sector m+1 share occupations index by index
    g = sub_g.ground_size
    coh = 0.5 * sign * np.vdot(state_e[sub_e.ground_size:sub_e.ground_size + g], state_g[:g])
    rho[0, 1] = coh
    rho[1, 0] = np.conj(coh)
    return rho


def _rho_series(block_g, block_e, sub_g, sub_e):
    """Vectorised over columns: returns (4, 2, 2) rhos per column pair."""
    pg1, pe1 = _spin_populations(block_g, sub_g.ground_size)
    pg2, pe2 = _spin_populations(block_e, sub_e.ground_size)
    g = sub_g.ground_size
    off = sub_e.ground_size
    coh = 0.5 * np.sum(np.conj(block_e[off:off + g]) * block_g[:g], axis=0)
    n = block_g.shape[1]
    out = np.zeros((n, 4, 2, 2), dtype=complex)
    out[:, 0, 0, 0], out[:, 0, 1, 1] = pg1, pe1
    out[:, 1, 0, 0], out[:, 1, 1, 1] = pg2, pe2
    for s, sign in ((2, 1.0), (3, -1.0)):
        out[:, s, 0, 0] = 0.5 * (pg1 + pg2)
        out[:, s, 1, 1] = 0.5 * (pe1 + pe2)
        out[:, s, 0, 1] = sign * coh
        out[:, s, 1, 0] = sign * np.conj(coh)
    return out


@dataclass
class TrajectoryResult:
    times: np.ndarray
    spin_rho: np.ndarray
    meta: dict = field(default_factory=dict)


def _initial_vector(sub: Subspace, spin: int, fock) -> np.ndarray:
    v = np.zeros(sub.dimension, dtype=complex)
    v[sub.rank(spin, fock)] = 1.0
    return v


def run_initial_state(initial_spin: str, fock, model: ReducedModel, times) -> TrajectoryResult:
    """Spin trajectory from ``initial_spin`` in {"0", "1", "+", "-"} with phonons in ``fock``."""
    if initial_spin not in INITIAL_STATES:
        raise ValueError(f"initial spin must be one of {INITIAL_STATES}, got {initial_spin!r}")
    times = np.asarray(times, dtype=float)
    m = int(sum(fock))
    branches = {}
    if initial_spin in ("0", "+", "-"):
        branches["g"] = (m, GROUND)
    if initial_spin in ("1", "+", "-"):
        branches["e"] = (m + 1, EXCITED)
    props, subs, dims = {}, {}, {}
    for key, (sector, spin) in branches.items():
        sub = model.subspace(sector)
        prop = model.propagator(sector)
        prop.start(_initial_vector(sub, spin, fock)[:, None], times[0])
        props[key], subs[key], dims[key] = prop, sub, sub.dimension
    rhos = np.zeros((len(times), 2, 2), dtype=complex)
    drift = 0.0
    for i, t in enumerate(times):
        states = {key: prop.state(t)[:, 0] for key, prop in props.items()}
        for v in states.values():
            drift = max(drift, abs(1.0 - np.linalg.norm(v)))
        rhos[i] = assemble_rho(states.get("g"), subs.get("g"), states.get("e"), subs.get("e"), initial_spin)
    if drift > NORM_TOL:
        raise PropagationError(f"norm drift {drift:.3e} exceeds {NORM_TOL:g}")
    return TrajectoryResult(times, rhos, {"fock": tuple(fock), "dimensions": dims, "norm_drift": drift})


# --- ensembles -------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Trial-averaged spin states.

    ``rho[s]`` is the mean density matrix (T, 2, 2) for initial state s;
    ``trial_rho`` keeps every trial (S, 4, T, 2, 2) in INITIAL_STATES order.
    """

    times: np.ndarray
    rho: dict
    trial_rho: np.ndarray
    focks: list
    trials: int
    meta: dict = field(default_factory=dict)

    def population0(self, state: str) -> np.ndarray:
        return np.clip(self.rho[state][:, 0, 0].real, 0.0, 1.0)

    def absdiff(self) -> np.ndarray:
        return np.abs(self.rho["0"][:, 0, 0].real - self.rho["1"][:, 0, 0].real)

    def absdiff_se(self) -> np.ndarray:
        per_trial = self.trial_rho[:, 0, :, 0, 0].real - self.trial_rho[:, 1, :, 0, 0].real
        return _standard_error(per_trial)

    def trace_distance_pm(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(_bloch(self.rho["+"]) - _bloch(self.rho["-"]), axis=-1)

    def trace_distance_pm_se(self) -> np.ndarray:
        # delta method along the direction of the mean Bloch difference
        diff = _bloch(self.trial_rho[:, 2]) - _bloch(self.trial_rho[:, 3])
        mean = diff.mean(axis=0)
        norm = np.linalg.norm(mean, axis=-1, keepdims=True)
        unit = np.where(norm > 0, mean / np.where(norm > 0, norm, 1.0), 0.0)
        proj = 0.5 * np.sum(diff * unit[None], axis=-1)
        return _standard_error(proj)


def _standard_error(samples):
    s = samples.shape[0]
    if s < 2:
        return np.zeros(samples.shape[1:])
    return samples.std(axis=0, ddof=1) / math.sqrt(s)


def _bloch(rho):
    return np.stack([2 * rho[..., 0, 1].real, -2 * rho[..., 0, 1].imag, (rho[..., 0, 0] - rho[..., 1, 1]).real], axis=-1)


def run_ensemble(spec: ThermalSpec, model: ReducedModel, times, threads: int = 1) -> EnsembleResult:
    """Average all four initial spin states over ``spec.trials`` thermal draws.

    Every trial uses one phonon draw for all four initial states.  Trials
    sharing an excitation sector are propagated together as one column block.
    """
    times = np.asarray(times, dtype=float)
    if len(spec.nbar) < max(model.kept.kept) + 1:
        raise ValueError("nbar must cover every mode of the chain")
    sampler = ThermalSampler(spec, model.kept)
    focks = [sampler.draw(trial_rng(spec.seed, s))[0] for s in range(spec.trials)]
    m_of = [sum(f) for f in focks]

    # columns per sector: ("g", trial) starts in sector m, ("e", trial) in m + 1
    columns: dict[int, list] = {}
    for s, (fock, m) in enumerate(zip(focks, m_of)):
        columns.setdefault(m, []).append(("g", s))
        columns.setdefault(m + 1, []).append(("e", s))
    sectors = sorted(columns)
    props, subs, where = {}, {}, {}
    for sector in sectors:
        sub = model.subspace(sector)
        block = np.zeros((sub.dimension, len(columns[sector])), dtype=complex)
        for c, (kind, s) in enumerate(columns[sector]):
            block[sub.rank(GROUND if kind == "g" else EXCITED, focks[s]), c] = 1.0
            where[(kind, s)] = (sector, c)
        prop = model.propagator(sector)
        prop.start(block, times[0])
        props[sector], subs[sector] = prop, sub

    n_trials = spec.trials
    trial_rho = np.zeros((n_trials, 4, len(times), 2, 2), dtype=complex)
    drift = 0.0
    g_sector = np.array([where[("g", s)][0] for s in range(n_trials)])
    g_col = np.array([where[("g", s)][1] for s in range(n_trials)])
    e_col = np.array([where[("e", s)][1] for s in range(n_trials)])

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for i, t in enumerate(times):
            if pool is None:
                states = {sec: props[sec].state(t) for sec in sectors}
            else:
                states = dict(zip(sectors, pool.map(lambda sec: props[sec].state(t), sectors)))
            for sec in sectors:
                drift = max(drift, float(np.max(np.abs(1.0 - np.linalg.norm(states[sec], axis=0)))))
            for m in sorted(set(m_of)):
                sel = np.nonzero(g_sector == m)[0]
                rhos = _rho_series(states[m][:, g_col[sel]], states[m + 1][:, e_col[sel]], subs[m], subs[m + 1])
                trial_rho[sel, :, i] = rhos
    finally:
        if pool is not None:
            pool.shutdown()
    if drift > NORM_TOL:
        raise PropagationError(f"norm drift {drift:.3e} exceeds {NORM_TOL:g}")

    mean = trial_rho.mean(axis=0)
    rho = {name: mean[j] for j, name in enumerate(INITIAL_STATES)}
    meta = {
        "sampler_attempts": sampler.attempts,
        "sampler_rejections": sampler.rejections,
        "sector_dimensions": {int(m): subs[m].dimension for m in sectors},
        "norm_drift": drift,
        "kept_modes": list(model.kept.kept),
    }
    return EnsembleResult(times, rho, trial_rho, focks, n_trials, meta)
