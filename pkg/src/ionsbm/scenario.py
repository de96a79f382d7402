"""Scenario files: JSON validation, unit conversion and shipped presets.

Frequencies in scenario files are ordinary frequencies (kHz, MHz); they
become angular frequencies in rad/ms on load (1 kHz = 1/ms, so
``rad_per_ms = 2 pi * kHz``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import copy
import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .chain import TrapConfig
from .evolve import ThermalSpec
from .reservoir import DriveTone

SCHEMA_VERSION = 1
TWO_PI = 2.0 * math.pi
DEFAULT_SEED = 20230901


class ScenarioError(ValueError):
    """Schema or consistency violation; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.detail = message


def khz(value: float) -> float:
    return TWO_PI * value


def mhz(value: float) -> float:
    return TWO_PI * 1e3 * value


def to_khz(omega: float):
    return np.asarray(omega) / TWO_PI


def schema() -> dict:
    text = resources.files("ionsbm").joinpath("scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class Scenario:
    name: str
    trap: TrapConfig
    target_ion: int
    target_label: str
    tones: list
    thermal: ThermalSpec
    K: int
    M_max: int
    times: np.ndarray
    seed: int
    D_dense: int = 512
    max_dimension: int = 200_000
    scheme: str = "cf4"
    step_safety: float = 0.1
    collapse_threshold: float = 0.15
    basin_threshold: float = 0.15
    shots: int | None = None
    output_dir: str | None = None
    formats: tuple = ("csv", "json")
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def detuning(self) -> float:
        return self.tones[0].spin_detuning

    @property
    def scenario_hash(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _path_of(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    return "/" + "/".join(parts)


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        first = errors[0]
        raise ScenarioError(first.message, _path_of(first))


def _nbar_list(spec, n: int) -> tuple:
    if isinstance(spec, (int, float)):
        return tuple([float(spec)] * n)
    if isinstance(spec, list):
        if len(spec) != n:
            raise ScenarioError(f"expected {n} mean phonon numbers, got {len(spec)}", "/thermal/nbar")
        return tuple(float(x) for x in spec)
    values = [float(spec["rest"])] * n
    if "com" in spec:
        values[0] = float(spec["com"])
    if "tilt" in spec and n > 1:
        values[1] = float(spec["tilt"])
    return tuple(values)


def _resolve_target(target, n: int) -> tuple[int, str]:
    if target == "edge":
        return 0, "edge"
    if target == "center":
        return (n - 1) // 2, "center"
    if not 0 <= target < n:
        raise ScenarioError(f"target ion {target} outside [0, {n})", "/target_ion")
    return int(target), str(target)


def time_grid(start: float, stop: float, step: float) -> np.ndarray:
    count = int(round((stop - start) / step)) + 1
    if count < 2:
        raise ScenarioError("time grid needs at least two points", "/times")
    return np.round(start + step * np.arange(count), 12)


def from_dict(raw: dict) -> Scenario:
    """Validate ``raw`` and build a :class:`Scenario`."""
    raw = copy.deepcopy(raw)
    validate(raw)
    trap_raw = raw["trap"]
    n = trap_raw["ion_count"]
    trap = TrapConfig(
        ion_count=n,
        transverse_freq=mhz(trap_raw["transverse_freq_MHz"]),
        axial_freq=khz(trap_raw["axial_freq_kHz"]) if "axial_freq_kHz" in trap_raw else None,
        target_mean_spacing=trap_raw.get("target_mean_spacing_um"),
        ion_mass=trap_raw.get("ion_mass_amu", 171.0),
        charge=trap_raw.get("charge", 1.0),
    )
    target, label = _resolve_target(raw["target_ion"], n)
    tones = [
        DriveTone(
            com_sideband_rate=khz(t["com_sideband_rate_kHz"]),
            spin_detuning=khz(t["spin_detuning_kHz"]),
            tone_offset=khz(t.get("tone_offset_kHz", 0.0)),
            phase=float(t.get("phase", 0.0)),
        )
        for t in raw["tones"]
    ]
    if tones[0].tone_offset != 0.0:
        raise ScenarioError("the first tone must have zero offset", "/tones/0/tone_offset_kHz")
    for j, t in enumerate(tones):
        if t.spin_detuning != tones[0].spin_detuning:
            raise ScenarioError("all tones must share one spin detuning", f"/tones/{j}/spin_detuning_kHz")
    trunc = raw["truncation"]
    if trunc["K"] > n:
        raise ScenarioError(f"K={trunc['K']} exceeds the {n} available modes", "/truncation/K")
    seed = int(raw.get("seed", DEFAULT_SEED))
    thermal = ThermalSpec(
        nbar=_nbar_list(raw["thermal"]["nbar"], n),
        trials=raw["thermal"]["trials"],
        seed=seed,
        excitation_cap=trunc.get("M_max", 8),
    )
    t = raw["times"]
    revival = raw.get("revival", {})
    outputs = raw.get("outputs", {})
    return Scenario(
        name=raw["name"],
        trap=trap,
        target_ion=target,
        target_label=label,
        tones=tones,
        thermal=thermal,
        K=trunc["K"],
        M_max=trunc.get("M_max", 8),
        times=time_grid(t.get("start_ms", 0.0), t["stop_ms"], t["step_ms"]),
        seed=seed,
        D_dense=trunc.get("D_dense", 512),
        max_dimension=trunc.get("max_dimension", 200_000),
        scheme=trunc.get("scheme", "cf4"),
        step_safety=trunc.get("step_safety", 0.1),
        collapse_threshold=revival.get("collapse_threshold", 0.15),
        basin_threshold=revival.get("basin_threshold", 0.15),
        shots=raw["shot_noise"]["shots"] if "shot_noise" in raw else None,
        output_dir=outputs.get("directory"),
        formats=tuple(outputs.get("formats", ["csv", "json"])),
        raw=raw,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario file, or a shipped preset when ``path`` names one."""
    p = Path(path)
    if not p.exists() and str(path) in preset_names():
        return load_preset(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object", "/")
    return from_dict(raw)


def preset_names() -> list[str]:
    folder = resources.files("ionsbm").joinpath("presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def preset_dict(name: str) -> dict:
    folder = resources.files("ionsbm").joinpath("presets")
    target = folder.joinpath(f"{name}.json")
    if not target.is_file():
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(target.read_text(encoding="utf-8"))


def load_preset(name: str) -> Scenario:
    return from_dict(preset_dict(name))


def with_overrides(raw: dict, **changes) -> dict:
    """Copy of ``raw`` with dotted-path fields replaced, e.g. ``{"truncation.K": 6}``."""
    out = copy.deepcopy(raw)
    for dotted, value in changes.items():
        node = out
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node[int(key)] if isinstance(node, list) else node.setdefault(key, {})
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return out
