"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line; conftest prints them at the end of the
session.  Preset ensembles are cached so every preset is simulated once.
"""

import functools
import itertools
import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from ionsbm.basis import Subspace, subspace_dimension
from ionsbm.chain import TrapConfig, chain_modes, solve_equilibrium
from ionsbm.evolve import (
    ReducedModel,
    _ChebyshevStatic,
    _DenseStatic,
    _KrylovStatic,
    _Stepped,
    propagate,
    run_initial_state,
)
from ionsbm.hamiltonian import Tone, build
from ionsbm.reservoir import CouplingProfile, DriveTone, coupling_profile, spectral_density
from ionsbm.runner import simulate, write_run
from ionsbm.scenario import from_dict, load_preset, preset_dict, preset_names, with_overrides

from conftest import record

TWO_PI = 2 * math.pi
PRESETS = ("fig2a", "fig2c", "fig3a", "fig3b", "fig4b")
_timings = {}


@functools.lru_cache(maxsize=None)
def preset_run(name):
    t0 = time.perf_counter()
    res = simulate(load_preset(name))
    _timings[name] = time.perf_counter() - t0
    return res


@functools.lru_cache(maxsize=None)
def k_run(k):
    if k == 8:
        return preset_run("fig2a")
    return simulate(from_dict(with_overrides(preset_dict("fig2a"), **{"truncation.K": k})))


def crossing_se(res, key, se_key, t_cross):
    """Uncertainty of a threshold-crossing time: signal SE over the local slope."""
    t = res.series["t_ms"]
    y = res.series[key]
    i = int(np.argmin(np.abs(t - t_cross)))
    lo, hi = max(i - 1, 0), min(i + 1, len(t) - 1)
    slope = abs((y[hi] - y[lo]) / (t[hi] - t[lo]))
    return res.series[se_key][i] / slope if slope > 0 else math.inf


# --- 1 ---------------------------------------------------------------------------


def test_criterion_01_dimension_formula():
    t0 = time.perf_counter()
    ok = True
    for k in range(1, 6):
        for m in range(0, 7):
            count = sum(
                1
                for spin in (0, 1)
                for occ in itertools.product(range(m + 1), repeat=k)
                if spin + sum(occ) == m
            )
            ok &= count == subspace_dimension(k, m) == Subspace(k, m).dimension
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    record(1, ok, f"dimension formula vs enumeration K<=5, M<=6 ({elapsed:.2f} s)")
    assert ok


# --- 2 ---------------------------------------------------------------------------


def test_criterion_02_vacuum_rabi():
    t0 = time.perf_counter()
    lam = TWO_PI * 6.67 * 2
    model = ReducedModel([0.0], 0.0, [Tone(np.array([lam]))])
    times = np.linspace(0, 3 * TWO_PI / lam, 601)
    p0 = run_initial_state("1", (0,), model, times).spin_rho[:, 0, 0].real
    err = float(np.max(np.abs(p0 - np.sin(lam * times / 2) ** 2)))
    elapsed = time.perf_counter() - t0
    ok = err < 1e-6 and elapsed < 1.0
    record(2, ok, f"vacuum Rabi max error {err:.2e} over 3 periods ({elapsed:.2f} s)")
    assert ok


# --- 3 ---------------------------------------------------------------------------


def test_criterion_03_unitarity_all_presets():
    drifts = {name: preset_run(name).summary["ensemble"]["norm_drift"] for name in PRESETS}
    worst = max(drifts.values())
    ok = worst < 1e-9
    record(3, ok, "max |1-||psi||| per preset " + ", ".join(f"{k}={v:.1e}" for k, v in drifts.items()))
    assert ok


# --- 4 ---------------------------------------------------------------------------


def _random_op(seed, tones):
    rng = np.random.default_rng(1000 + seed)
    while True:
        k = int(rng.integers(2, 6))
        m = int(rng.integers(1, 7))
        if 2 <= subspace_dimension(k, m) <= 500:
            break
    sub = Subspace(k, m)
    freqs = -np.sort(rng.uniform(0, TWO_PI * 60, k))
    freqs[0] = 0.0
    lams = [rng.normal(scale=TWO_PI * 8, size=k) for _ in range(tones)]
    ts = [Tone(lams[0])] + [Tone(l, offset=TWO_PI * rng.uniform(10, 40), phase=rng.uniform(0, TWO_PI)) for l in lams[1:]]
    op = build(sub, freqs, TWO_PI * rng.uniform(-60, 0), ts)
    v = rng.normal(size=sub.dimension) + 1j * rng.normal(size=sub.dimension)
    return op, v / np.linalg.norm(v)


def test_criterion_04_dense_oracle():
    t0 = time.perf_counter()
    times = np.linspace(0.0, 0.1, 11)[1:]
    worst_single = worst_two = 0.0
    for seed in range(10):
        op, v = _random_op(seed, 1)
        props = [_DenseStatic(op), _KrylovStatic(op, 1e-10), _ChebyshevStatic(op, 1e-10)]
        for p in props:
            p.start(v[:, None], 0.0)
        for t in times:
            ref = props[0].state(t)
            for p in props[1:]:
                worst_single = max(worst_single, float(np.max(np.abs(ref - p.state(t)))))
    for seed in range(10, 20):
        op, v = _random_op(seed, 2)
        coarse, fine = _Stepped(op, safety=0.1), _Stepped(op, safety=0.01)
        coarse.start(v[:, None], 0.0)
        fine.start(v[:, None], 0.0)
        for t in times:
            worst_two = max(worst_two, float(np.max(np.abs(coarse.state(t) - fine.state(t)))))
    elapsed = time.perf_counter() - t0
    ok = worst_single < 1e-8 and worst_two < 1e-8 and elapsed < 60
    record(4, ok, f"Krylov vs dense {worst_single:.1e}, two-tone vs 10x finer {worst_two:.1e} ({elapsed:.1f} s)")
    assert ok


# --- 5 ---------------------------------------------------------------------------


def test_criterion_05_tone_merge():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    k = 4
    freqs = np.array([0.0, -TWO_PI * 4, -TWO_PI * 11, -TWO_PI * 23])
    lam = rng.normal(scale=TWO_PI * 5, size=k)
    times = np.linspace(0, 0.5, 26)
    worst = 0.0
    for m in (1, 2, 3):
        sub = Subspace(k, m)
        two = build(sub, freqs, -TWO_PI * 20, [Tone(lam), Tone(lam, 0.0, 0.0)])
        one = build(sub, freqs, -TWO_PI * 20, [Tone(2 * lam)])
        v = np.zeros(sub.dimension, dtype=complex)
        v[sub.dimension - 1] = 1.0
        for t in times[1:]:
            a = propagate(two, v, 0.0, t, d_dense=0)
            b = propagate(one, v, 0.0, t, d_dense=0)
            worst = max(worst, float(np.max(np.abs(a - b))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 1.0
    record(5, ok, f"two equal tones vs doubled lambda max error {worst:.1e} ({elapsed:.2f} s)")
    assert ok


# --- 6 ---------------------------------------------------------------------------


def test_criterion_06_fig2a_collapse_and_revival():
    res = preset_run("fig2a")
    rev = res.summary["absdiff"]
    t = res.series["t_ms"]
    below = t[res.series["absdiff"] < 0.15]
    first_below = float(below[0]) if below.size else math.inf
    t_r = rev["t_r_ms"]
    runtime = _timings.get("fig2a", 0.0)
    ok = first_below < 0.10 and t_r is not None and 0.14 <= t_r <= 0.22 and runtime <= 300
    record(6, ok, f"fig2a absdiff < 0.15 at {first_below:.3f} ms, t_r = {t_r} ms, "
                  f"height {rev['revival_height']:.3f}, runtime {runtime:.0f} s")
    assert ok


# --- 7 ---------------------------------------------------------------------------


def test_criterion_07_comparative_orderings():
    base = preset_run("fig2a")
    b = base.summary["absdiff"]
    lines = []
    ok = True

    def height_order(name, larger):
        run = preset_run(name)
        other = run.summary["absdiff"]
        if other["revival_height"] is None or b["revival_height"] is None:
            sig = run.series["absdiff"]
            low = int(np.argmin(sig))
            return False, (
                f"{name}: no revival reported (absdiff minimum {sig[low]:.3f} never below "
                f"the collapse threshold; later peak {sig[low:].max():.3f})"
            )
        diff = other["revival_height"] - b["revival_height"]
        if not larger:
            diff = -diff
        se = math.hypot(other["revival_height_se"], b["revival_height_se"])
        return diff > 2 * se, f"{name} height {other['revival_height']:.3f} vs {b['revival_height']:.3f} (margin {diff:.3f}, 2SE {2 * se:.3f})"

    def time_order(name, key, se_key, field, larger):
        other = preset_run(name)
        ta, tb = other.summary[key][field], base.summary[key][field]
        if ta is None or tb is None:
            return False, f"{name}: {field} undefined"
        diff = ta - tb if larger else tb - ta
        se = math.hypot(crossing_se(other, key, se_key, ta), crossing_se(base, key, se_key, tb))
        return diff > 2 * se, f"{name} {field} {ta:.3f} vs {tb:.3f} ms (margin {diff:.3f}, 2SE {2 * se:.3f})"

    checks = [
        ("a", height_order("fig2c", True)),
        ("b", time_order("fig3a", "absdiff", "se_absdiff", "time_to_half_ms", True)),
        ("c", height_order("fig3b", True)),
        ("d1", height_order("fig4b", False)),
        ("d2", time_order("fig4b", "absdiff", "se_absdiff", "collapse_time_ms", False)),
    ]
    for tag, (passed, text) in checks:
        ok &= passed
        lines.append(f"({tag}) {'ok' if passed else 'FAIL'} {text}")
    record(7, ok, "; ".join(lines))
    assert ok


# --- 8 ---------------------------------------------------------------------------


def test_criterion_08_superposition_basis():
    res = preset_run("fig2a")
    t = res.series["t_ms"]
    i = int(np.argmin(np.abs(t - 0.03)))
    d, a = res.series["D_plusminus"][i], res.series["absdiff"][i]
    t_r = res.summary["D_plusminus"]["t_r_ms"]
    ok = d > a and t_r is not None and 0.14 <= t_r <= 0.22
    record(8, ok, f"fig2a at 0.03 ms D = {d:.3f} > absdiff = {a:.3f}; D revival at {t_r} ms")
    assert ok


# --- 9 ---------------------------------------------------------------------------


def test_criterion_09_k_convergence():
    ks = list(range(4, 13))
    curves = {k: k_run(k).series["absdiff"] for k in ks}
    changes = {k: float(np.max(np.abs(curves[k] - curves[k - 1]))) for k in ks[1:]}
    converged = [k for k, c in changes.items() if c < 0.02 and k <= 10]
    ok = bool(converged)
    record(9, ok, "max |d absdiff| vs previous K: " + ", ".join(f"K={k}:{c:.3f}" for k, c in changes.items())
           + (f"; first below 0.02 at K={converged[0]}" if ok else ""))
    assert ok


# --- 10 --------------------------------------------------------------------------


def test_criterion_10_chain_suite():
    errs = []
    u2, u3 = solve_equilibrium(2), solve_equilibrium(3)
    errs.append(np.max(np.abs(u2 - np.array([-1, 1]) * 0.25 ** (1 / 3))))
    errs.append(np.max(np.abs(u3 - np.array([-1, 0, 1]) * 1.25 ** (1 / 3))))
    eq_ok = max(errs) < 1e-9

    orth = 0.0
    for n in (2, 3, 10, 20, 21):
        _, spec = chain_modes(TrapConfig(n, TWO_PI * 2397, target_mean_spacing=4.6))
        b = spec.mode_matrix
        orth = max(orth, float(np.max(np.abs(b.T @ b - np.eye(n)))))
    orth_ok = orth < 1e-10

    lam = TWO_PI * 6.67
    prof = CouplingProfile(0, np.array([lam]))
    integral, _ = quad(lambda x: spectral_density(prof, [0.0], np.array([x])).values[0], -np.inf, np.inf)
    int_err = abs(integral / (math.pi * lam**2) - 1)
    int_ok = int_err < 0.01

    zero_ok = True
    for n in (3, 9, 21):
        _, spec = chain_modes(TrapConfig(n, TWO_PI * 2397, target_mean_spacing=4.6))
        lams = coupling_profile(spec, DriveTone(lam, 0.0), (n - 1) // 2).lambdas
        b = spec.mode_matrix
        anti = [k for k in range(n) if np.allclose(b[:, k], -b[::-1, k], atol=1e-8)]
        zero_ok &= len(anti) == n // 2 and all(lams[k] == 0.0 for k in anti)

    ok = eq_ok and orth_ok and int_ok and zero_ok
    record(10, ok, f"equilibria {max(errs):.1e}, orthonormality {orth:.1e}, "
                   f"integral/(pi lambda^2) - 1 = {int_err:.1e}, centre-ion zeros {'exact' if zero_ok else 'FAIL'}")
    assert ok


# --- 11 --------------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path):
    first = preset_run("fig2a")
    second = simulate(load_preset("fig2a"))
    a = write_run(first, tmp_path / "a")
    b = write_run(second, tmp_path / "b")
    same = [pa.name for pa, pb in zip(a, b) if pa.read_bytes() == pb.read_bytes()]
    ok = len(same) == len(a) == len(b) and len(a) > 0
    record(11, ok, f"byte-identical files across two fig2a runs: {', '.join(same)}")
    assert ok


def test_presets_listed():
    assert set(PRESETS) == set(preset_names())
