"""Scenario orchestration and artifact emission (CSV, summary JSON, plot manifest)."""

from __future__ import annotations

from dataclasses import dataclass
import csv
import io
import json
import math
import os
import platform
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .basis import mode_weights
from .chain import IonChain, ModeSpectrum, chain_modes, lamb_dicke_scale
from .evolve import EnsembleResult, ReducedModel, reduce_model, run_ensemble
from .observables import first_crossing_below, revival_detect, simulate_measurement, tomography_reconstruct
from .reservoir import SpectralCurve, combined_spectrum, coupling_profile, default_grid, spectral_density
from .scenario import Scenario, from_dict, scenario_hash, to_khz, with_overrides

SUMMARY_SCHEMA_VERSION = 1
TIMESERIES_COLUMNS = ("t_ms", "P0_from0", "P0_from1", "absdiff", "D_plusminus", "se_absdiff", "se_D")
SWEEP_PARAMS = {
    "K": "K",
    "Delta": "Delta",
    "detuning": "Delta",
    "delta": "delta",
    "offset": "delta",
    "S": "S",
    "trials": "S",
    "target_ion": "target_ion",
}


@dataclass
class RunResult:
    scenario: Scenario
    chain: IonChain
    spectrum: ModeSpectrum
    model: ReducedModel
    ensemble: EnsembleResult
    series: dict
    summary: dict


def env_threads(default: int = 1) -> int:
    value = os.environ.get("IONSBM_THREADS")
    if value is None or value == "":
        return default
    n = int(value)
    if n < 1:
        raise ValueError("IONSBM_THREADS must be a positive integer")
    return n


def build_model(scenario: Scenario) -> tuple[IonChain, ModeSpectrum, ReducedModel]:
    chain, spectrum = chain_modes(scenario.trap)
    model = reduce_model(
        spectrum,
        scenario.tones,
        scenario.target_ion,
        scenario.K,
        d_dense=scenario.D_dense,
        max_dimension=scenario.max_dimension,
        scheme=scenario.scheme,
        safety=scenario.step_safety,
    )
    return chain, spectrum, model


def reservoir_curve(scenario: Scenario, spectrum: ModeSpectrum, points: int = 2001) -> SpectralCurve:
    profiles = [coupling_profile(spectrum, t, scenario.target_ion) for t in scenario.tones]
    rates = lamb_dicke_scale(spectrum, max(t.com_sideband_rate for t in scenario.tones))
    grid = default_grid(spectrum.relative_freqs, rates, points)
    if len(profiles) == 1:
        return spectral_density(profiles[0], spectrum.relative_freqs, grid)
    offsets = [t.tone_offset for t in scenario.tones]
    lo = grid[0] - max(0.0, max(offsets))
    hi = grid[-1] - min(0.0, min(offsets))
    grid = np.linspace(lo, hi, points)
    return combined_spectrum(zip(profiles, offsets), spectrum.relative_freqs, grid)


def _shot_series(ens: EnsembleResult, shots: int, seed: int) -> dict:
    """Re-estimate every point from ``shots`` simulated projective measurements."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    n = len(ens.times)
    p = {s: np.empty(n) for s in ("0", "1")}
    se_p = {s: np.empty(n) for s in ("0", "1")}
    d = np.empty(n)
    se_d = np.empty(n)
    for i in range(n):
        for s in ("0", "1"):
            z = simulate_measurement(ens.rho[s][i], "z", shots, rng)
            p[s][i] = 0.5 * (1.0 + z)
            se_p[s][i] = math.sqrt(max(p[s][i] * (1.0 - p[s][i]), 0.0) / shots)
        blochs = []
        var = 0.0
        for s in ("+", "-"):
            r = [simulate_measurement(ens.rho[s][i], a, shots, rng) for a in "xyz"]
            blochs.append(tomography_reconstruct(*r).bloch)
            var += sum((1.0 - x * x) / shots for x in r)
        diff = blochs[0] - blochs[1]
        d[i] = 0.5 * float(np.linalg.norm(diff))
        se_d[i] = 0.5 * math.sqrt(var / 3.0)
    return {
        "P0_from0": p["0"],
        "P0_from1": p["1"],
        "absdiff": np.abs(p["0"] - p["1"]),
        "D_plusminus": d,
        "se_absdiff": np.hypot(se_p["0"], se_p["1"]),
        "se_D": se_d,
    }


def _series(scenario: Scenario, ens: EnsembleResult) -> dict:
    if scenario.shots:
        out = _shot_series(ens, scenario.shots, scenario.seed)
    else:
        out = {
            "P0_from0": ens.population0("0"),
            "P0_from1": ens.population0("1"),
            "absdiff": ens.absdiff(),
            "D_plusminus": ens.trace_distance_pm(),
            "se_absdiff": ens.absdiff_se(),
            "se_D": ens.trace_distance_pm_se(),
        }
    out["t_ms"] = np.asarray(ens.times, dtype=float)
    return out


def _revival_block(times, signal, se, scenario: Scenario) -> dict:
    rep = revival_detect(times, signal, scenario.collapse_threshold, scenario.basin_threshold)
    height_se = None
    if rep.revived:
        height_se = float(se[int(np.argmin(np.abs(times - rep.revival_time)))])
    return {
        "collapse_time_ms": rep.collapse_time,
        "basin_ms": list(rep.basin) if rep.basin else None,
        "t_r_ms": rep.revival_time,
        "revival_height": rep.revival_height,
        "revival_height_se": height_se,
        "time_to_half_ms": first_crossing_below(times, signal, 0.5),
    }


def _truncation_record(scenario: Scenario, spectrum: ModeSpectrum, model: ReducedModel, ens: EnsembleResult) -> dict:
    profiles = [coupling_profile(spectrum, t, scenario.target_ion) for t in scenario.tones]
    weights = np.max(
        [mode_weights(p.lambdas, spectrum.relative_freqs, scenario.detuning + t.tone_offset)
         for p, t in zip(profiles, scenario.tones)],
        axis=0,
    )
    kept = list(model.kept.kept)
    total = float(np.sum(weights[np.isfinite(weights)]))
    kept_w = float(np.sum(weights[kept][np.isfinite(weights[kept])]))
    return {
        "K": scenario.K,
        "M_max": scenario.M_max,
        "kept_modes": kept,
        "kept_weights": [float(w) for w in weights[kept]],
        "dropped_weight_fraction": (total - kept_w) / total if total > 0 else 0.0,
        "sector_dimensions": {str(k): v for k, v in sorted(ens.meta["sector_dimensions"].items())},
        "D_dense": scenario.D_dense,
        "scheme": scenario.scheme,
        "step_safety": scenario.step_safety,
    }


def versions() -> dict:
    return {
        "ionsbm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def simulate(scenario: Scenario, threads: int = 1) -> RunResult:
    """Run the ensemble for ``scenario`` and assemble series and summary (no file output)."""
    chain, spectrum, model = build_model(scenario)
    ens = run_ensemble(scenario.thermal, model, scenario.times, threads=threads)
    series = _series(scenario, ens)
    curve = reservoir_curve(scenario, spectrum)
    times = series["t_ms"]
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "name": scenario.name,
        "scenario_hash": scenario.scenario_hash,
        "seed": scenario.seed,
        "versions": versions(),
        "trap": {
            "ion_count": scenario.trap.ion_count,
            "transverse_freq_MHz": float(to_khz(scenario.trap.transverse_freq)) / 1e3,
            "axial_freq_kHz": float(to_khz(chain.axial_freq)),
            "mean_spacing_um": float(chain.mean_spacing),
        },
        "target_ion": scenario.target_ion,
        "spin_detuning_kHz": float(to_khz(scenario.detuning)),
        "tone_offsets_kHz": [float(to_khz(t.tone_offset)) for t in scenario.tones],
        "validity_ratio": curve.validity_ratio,
        "validity_warning": curve.validity_warning,
        "absdiff": _revival_block(times, series["absdiff"], series["se_absdiff"], scenario),
        "D_plusminus": _revival_block(times, series["D_plusminus"], series["se_D"], scenario),
        "truncation": _truncation_record(scenario, spectrum, model, ens),
        "ensemble": {
            "trials": ens.trials,
            "sampler_attempts": ens.meta["sampler_attempts"],
            "sampler_rejections": ens.meta["sampler_rejections"],
            "norm_drift": ens.meta["norm_drift"],
            "shots": scenario.shots,
        },
    }
    return RunResult(scenario, chain, spectrum, model, ens, series, summary)


# --- file output ---------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} in CSV output")
    return repr(x)


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _stamp(scenario: Scenario):
    return ("scenario_hash", "seed"), (scenario.scenario_hash, scenario.seed)


def timeseries_csv(result: RunResult) -> str:
    s = result.series
    keys, stamp = _stamp(result.scenario)
    rows = (tuple(s[c][i] for c in TIMESERIES_COLUMNS) + stamp for i in range(len(s["t_ms"])))
    return csv_text(TIMESERIES_COLUMNS + keys, rows)


def spectrum_csv(scenario: Scenario, curve: SpectralCurve) -> str:
    keys, stamp = _stamp(scenario)
    omega = to_khz(curve.omega_grid)
    return csv_text(("omega_kHz_over_2pi", "J") + keys,
                    ((w, j) + stamp for w, j in zip(omega, curve.values)))


def modes_csv(scenario: Scenario, spectrum: ModeSpectrum, kept=()) -> str:
    keys, stamp = _stamp(scenario)
    tones = scenario.tones
    profiles = [coupling_profile(spectrum, t, scenario.target_ion) for t in tones]
    rates = lamb_dicke_scale(spectrum, tones[0].com_sideband_rate)
    rank = {m: r for r, m in enumerate(kept)}
    header = ("mode", "freq_kHz", "rel_freq_kHz", "b_target", "g_kHz") + tuple(
        f"lambda_kHz_tone{j}" for j in range(len(tones))) + ("kept_rank",) + keys
    rows = []
    for k in range(spectrum.mode_count):
        row = (k, to_khz(spectrum.absolute_freqs[k]), to_khz(spectrum.relative_freqs[k]),
               spectrum.mode_matrix[scenario.target_ion, k], to_khz(rates[k]))
        row += tuple(to_khz(p.lambdas[k]) for p in profiles)
        row += (rank.get(k, ""),) + stamp
        rows.append(row)
    return csv_text(header, rows)


def _plot_manifest(scenario: Scenario, files: list[str]) -> dict:
    plots = []
    if "timeseries.csv" in files:
        plots.append({
            "title": f"{scenario.name}: information in the spin",
            "file": "timeseries.csv",
            "x": "t_ms",
            "series": [
                {"y": "absdiff", "yerr": "se_absdiff", "label": "|P0(0) - P0(1)|"},
                {"y": "D_plusminus", "yerr": "se_D", "label": "D(rho+, rho-)"},
            ],
        })
    plots.append({
        "title": f"{scenario.name}: reservoir spectral density",
        "file": "spectrum.csv",
        "x": "omega_kHz_over_2pi",
        "series": [{"y": "J", "label": "J(omega)"}],
        "markers": {"spin_detuning_kHz": float(to_khz(scenario.detuning))},
    })
    return {"schema_version": SUMMARY_SCHEMA_VERSION, "scenario_hash": scenario.scenario_hash,
            "seed": scenario.seed, "plots": plots}


def write_run(result: RunResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    sc = result.scenario
    curve = reservoir_curve(sc, result.spectrum)
    files = {}
    if "csv" in sc.formats:
        files["timeseries.csv"] = timeseries_csv(result)
        files["spectrum.csv"] = spectrum_csv(sc, curve)
        files["modes.csv"] = modes_csv(sc, result.spectrum, result.model.kept.kept)
    if "json" in sc.formats:
        files["summary.json"] = json_text(result.summary)
        files["plots.json"] = json_text(_plot_manifest(sc, list(files)))
    written = []
    for name, text in files.items():
        atomic_write(out / name, text)
        written.append(out / name)
    return written


def default_out(scenario: Scenario, out_dir=None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if scenario.output_dir:
        return Path(scenario.output_dir)
    return Path("runs") / scenario.name


def run(scenario: Scenario, out_dir=None, threads: int = 1) -> RunResult:
    result = simulate(scenario, threads=threads)
    write_run(result, default_out(scenario, out_dir))
    return result


def spectrum_only(scenario: Scenario, out_dir=None) -> SpectralCurve:
    """Reservoir curve and per-mode coupling table, no dynamics."""
    chain, spectrum = chain_modes(scenario.trap)
    curve = reservoir_curve(scenario, spectrum)
    out = default_out(scenario, out_dir)
    atomic_write(out / "spectrum.csv", spectrum_csv(scenario, curve))
    atomic_write(out / "modes.csv", modes_csv(scenario, spectrum))
    return curve


# --- sweeps --------------------------------------------------------------------------


def parse_values(text: str) -> list:
    """``"4:12"`` (inclusive integer range, optional ``:step``) or a comma list."""
    text = text.strip()
    if ":" in text and "," not in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"bad range {text!r}")
        step = parts[2] if len(parts) == 3 else 1
        if step == 0:
            raise ValueError("range step must be nonzero")
        return list(range(parts[0], parts[1] + (1 if step > 0 else -1), step))
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(int(item))
        except ValueError:
            try:
                out.append(float(item))
            except ValueError:
                out.append(item)
    if not out:
        raise ValueError("no sweep values given")
    return out


def override(raw: dict, param: str, value) -> dict:
    key = SWEEP_PARAMS.get(param)
    if key is None:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {sorted(set(SWEEP_PARAMS))}")
    if key == "K":
        return with_overrides(raw, **{"truncation.K": int(value)})
    if key == "S":
        return with_overrides(raw, **{"thermal.trials": int(value)})
    if key == "target_ion":
        return with_overrides(raw, target_ion=value)
    if key == "Delta":
        return with_overrides(raw, **{f"tones.{j}.spin_detuning_kHz": value for j in range(len(raw["tones"]))})
    if len(raw["tones"]) < 2:
        raise ValueError("sweeping the tone offset needs a scenario with at least two tones")
    return with_overrides(raw, **{"tones.1.tone_offset_kHz": value})


def sweep(scenario: Scenario, param: str, values, out_dir=None, threads: int = 1) -> list[dict]:
    """One run per value plus convergence.csv with successive max changes."""
    out = default_out(scenario, out_dir)
    rows = []
    previous = None
    for value in values:
        sub = from_dict(override(scenario.raw, param, value))
        result = run(sub, out / f"{param}={value}", threads=threads)
        series = result.series
        row = {
            "value": value,
            "t_r_ms": result.summary["absdiff"]["t_r_ms"],
            "revival_height": result.summary["absdiff"]["revival_height"],
            "collapse_time_ms": result.summary["absdiff"]["collapse_time_ms"],
            "time_to_half_ms": result.summary["absdiff"]["time_to_half_ms"],
            "max_change_absdiff": None,
            "max_change_D": None,
        }
        if previous is not None and len(previous["t_ms"]) == len(series["t_ms"]):
            row["max_change_absdiff"] = float(np.max(np.abs(series["absdiff"] - previous["absdiff"])))
            row["max_change_D"] = float(np.max(np.abs(series["D_plusminus"] - previous["D_plusminus"])))
        rows.append(row)
        previous = series
    keys, stamp = _stamp(scenario)
    header = ("value", "t_r_ms", "revival_height", "collapse_time_ms", "time_to_half_ms",
              "max_change_absdiff", "max_change_D")
    atomic_write(out / "convergence.csv",
                 csv_text(("param",) + header + keys, ((param,) + tuple(r[h] for h in header) + stamp for r in rows)))
    return rows


__all__ = [
    "RunResult",
    "simulate",
    "run",
    "write_run",
    "spectrum_only",
    "sweep",
    "parse_values",
    "override",
    "reservoir_curve",
    "env_threads",
    "scenario_hash",
]
