import json
import math

import numpy as np
import pytest

from ionsbm import cli
from ionsbm.runner import parse_values
from ionsbm.scenario import ScenarioError, from_dict, load_preset, load_scenario, preset_names

TINY = {
    "schema_version": 1,
    "name": "tiny",
    "seed": 11,
    "trap": {"ion_count": 3, "transverse_freq_MHz": 2.397, "target_mean_spacing_um": 4.6},
    "target_ion": "center",
    "tones": [{"com_sideband_rate_kHz": 6.67, "spin_detuning_kHz": -5.0}],
    "thermal": {"nbar": 0.2, "trials": 4},
    "truncation": {"K": 2, "M_max": 4},
    "times": {"stop_ms": 0.1, "step_ms": 0.004},
}


def write(tmp_path, raw, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_presets_shipped():
    assert preset_names() == ["fig2a", "fig2c", "fig3a", "fig3b", "fig4b"]


def test_fig2a_preset_fields():
    sc = load_preset("fig2a")
    assert sc.trap.ion_count == 20
    assert sc.target_ion == 0
    assert sc.detuning == pytest.approx(-2 * math.pi * 20)
    assert sc.tones[0].com_sideband_rate == pytest.approx(2 * math.pi * 6.67)
    assert sc.thermal.nbar[:3] == (0.9, 0.5, 0.3)
    assert set(sc.thermal.nbar[2:]) == {0.3}
    assert sc.thermal.trials == 100
    assert len(sc.times) == 251 and sc.times[-1] == 0.5


def test_other_presets():
    c = load_preset("fig2c")
    assert c.trap.ion_count == 10 and set(c.thermal.nbar) == {0.2}
    assert load_preset("fig3a").detuning == pytest.approx(-2 * math.pi * 50)
    b = load_preset("fig3b")
    assert b.target_ion == 9 and b.detuning == pytest.approx(-2 * math.pi * 15)
    f = load_preset("fig4b")
    assert [t.tone_offset for t in f.tones] == [0.0, pytest.approx(2 * math.pi * 20)]
    assert f.tones[0].com_sideband_rate == f.tones[1].com_sideband_rate


def test_unit_conversion_and_center(tmp_path):
    raw = dict(TINY, trap=dict(TINY["trap"], ion_count=4))
    sc = load_scenario(write(tmp_path, raw))
    assert sc.target_ion == 1
    assert sc.tones[0].spin_detuning == pytest.approx(-10 * math.pi)
    assert sc.trap.transverse_freq == pytest.approx(2 * math.pi * 2397)


@pytest.mark.parametrize(
    "patch, path",
    [
        ({"colour": "red"}, "/"),
        ({"trap": {"ion_count": 3, "transverse_freq_MHz": 2.4}}, "/trap"),
        ({"tones": [{"com_sideband_rate_kHz": -1, "spin_detuning_kHz": 0}]}, "/tones/0/com_sideband_rate_kHz"),
        ({"tones": []}, "/tones"),
        ({"truncation": {"K": 2, "typo": 1}}, "/truncation"),
        ({"target_ion": 7}, "/target_ion"),
        ({"truncation": {"K": 5}}, "/truncation/K"),
    ],
)
def test_schema_errors_name_the_field(patch, path):
    with pytest.raises(ScenarioError) as err:
        from_dict(dict(TINY, **patch))
    assert err.value.path == path


def test_parse_values():
    assert parse_values("4:12") == list(range(4, 13))
    assert parse_values("4:12:4") == [4, 8, 12]
    assert parse_values("-20,-50") == [-20, -50]
    assert parse_values("edge,center") == ["edge", "center"]


def test_presets_command(capsys):
    assert cli.main(["presets"]) == 0
    assert "fig4b" in capsys.readouterr().out


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(write(tmp_path, TINY)), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["modes.csv", "plots.json", "spectrum.csv", "summary.json", "timeseries.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["seed"] == 11
    lines = (out / "timeseries.csv").read_bytes().decode().split("\r\n")
    assert lines[0].startswith("t_ms,P0_from0,P0_from1,absdiff,D_plusminus,se_absdiff,se_D")
    data = np.array([[float(x) for x in line.split(",")[:7]] for line in lines[1:] if line])
    assert np.all(np.isfinite(data))
    assert np.all((data[:, 1:3] >= -1e-9) & (data[:, 1:3] <= 1 + 1e-9))
    for name in names:
        text = (out / name).read_text()
        assert summary["scenario_hash"] in text


def test_seed_override_and_determinism(tmp_path):
    p = write(tmp_path, TINY)
    for d in ("a", "b"):
        assert cli.main(["run", str(p), "--out", str(tmp_path / d), "--seed", "5"]) == 0
    for name in ("timeseries.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["seed"] == 5


def test_threads_env_gives_same_answer(tmp_path, monkeypatch):
    p = write(tmp_path, TINY)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("IONSBM_THREADS", "3")
    assert cli.main(["run", str(p), "--out", str(tmp_path / "three")]) == 0
    a = (tmp_path / "one" / "timeseries.csv").read_bytes()
    assert a == (tmp_path / "three" / "timeseries.csv").read_bytes()


def test_shot_noise_mode(tmp_path):
    raw = dict(TINY, shot_noise={"shots": 300})
    sc = from_dict(raw)
    from ionsbm.runner import simulate

    res = simulate(sc)
    p = res.series["P0_from0"]
    assert np.all(np.abs(p * 300 - np.round(p * 300)) < 1e-9)
    assert np.all(res.series["se_absdiff"] <= math.sqrt(0.5) / math.sqrt(300) + 1e-12)


def test_sweep_writes_convergence(tmp_path):
    p = write(tmp_path, TINY)
    out = tmp_path / "sw"
    assert cli.main(["sweep", str(p), "--param", "K", "--values", "1:2", "--out", str(out)]) == 0
    rows = (out / "convergence.csv").read_bytes().decode().strip().split("\r\n")
    assert rows[0].startswith("param,value,")
    assert len(rows) == 3
    assert (out / "K=1" / "summary.json").exists()


def test_spectrum_command(tmp_path, capsys):
    out = tmp_path / "spec"
    assert cli.main(["spectrum", "fig4b", "--out", str(out)]) == 0
    head = (out / "spectrum.csv").read_bytes().decode().split("\r\n")[0]
    assert head.startswith("omega_kHz_over_2pi,J")
    assert json.loads(capsys.readouterr().out)["validity_ratio"] < 0.5


def test_errors_are_json(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.json")]) != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ScenarioError"
    bad = write(tmp_path, dict(TINY, extra=1))
    assert cli.main(["run", str(bad)]) != 0
    err = json.loads(capsys.readouterr().err)
    assert err["path"] == "/"
    assert cli.main(["sweep", str(write(tmp_path, TINY, "t.json")), "--param", "delta", "--values", "1,2",
                     "--out", str(tmp_path / "x")]) != 0
