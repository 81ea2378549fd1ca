import csv
import json
import os

import numpy as np
import pytest

from vspin import io as vio
from vspin.cli import main, run_subcommand
from vspin.config import RunConfig, config_from_dict, parse_config
from vspin.errors import ConfigError, TraceFormatError
from vspin.presets import EXCITED_A, EXCITED_G, GROUND_A, GROUND_G, ZPL_WAVELENGTH_NM, make_preset


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# configuration


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path / "c.json", '{"preset": "4H-alpha"}'))
    assert cfg.preset == "4H-alpha"
    assert (cfg.scan.field_min, cfg.scan.field_max, cfg.scan.field_steps) == (0.0, 61.0, 200)
    assert (cfg.scan.detuning_min, cfg.scan.detuning_max, cfg.scan.detuning_steps) == (0.0, 1499.0, 300)
    assert cfg.seed == 0 and cfg.out == "out"


def test_6h_preset_values(tmp_path):
    cfg = parse_config(write(tmp_path / "c.json", '{"preset": "6H-alpha"}'))
    model = cfg.defect_model()
    assert model.ground.g_tensor[2, 2] == 1.749
    assert model.excited.A_tensor[2, 2] == 200.0


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="gN_typo"):
        parse_config(write(tmp_path / "c.json", '{"preset": "4H-alpha", "gN_typo": 1.47}'))
    with pytest.raises(ConfigError, match="scan.kernel"):
        config_from_dict({"scan": {"kernel": 10}})


def test_wrong_type_names_key():
    with pytest.raises(ConfigError, match="scan.field_steps"):
        config_from_dict({"scan": {"field_steps": "many"}})


def test_bad_preset_and_grid():
    with pytest.raises(ConfigError, match="preset"):
        config_from_dict({"preset": "4H-beta"})
    with pytest.raises(ConfigError, match="field_max"):
        config_from_dict({"scan": {"field_min": 10, "field_max": 5}})


def test_invalid_json_reports_line(tmp_path):
    with pytest.raises(ConfigError, match=":2:"):
        parse_config(write(tmp_path / "c.json", '{\n "preset": }'))
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.json")


def test_eom_sugar():
    cfg = config_from_dict({"scan": {"eom": {}}})
    grid = cfg.scan.detuning_grid()
    assert grid[0] == 0.0 and grid[-1] == 1500.0


def test_inline_model_and_constants():
    cfg = config_from_dict({
        "model": {"ground": {"g_tensor": [0, 0, 1.748], "A_tensor": [165, -165, 232]},
                  "excited": {"g_tensor": 2.18, "A_tensor": 0}, "zpl_wavelength_nm": 1278.78},
        "constants": {"mu_B_over_h": 14.0},
    })
    m = cfg.defect_model()
    assert m.ground.g_tensor[2, 2] == 1.748 and m.excited.g_tensor[0, 0] == 2.18
    assert cfg.physical_constants().mu_B_over_h == 14.0


def test_presets_match_documented_table():
    doc = {
        "4H-alpha": {"g_gs": 1.748, "A_gs": (165, -165, 232), "g_es": 2.18, "A_es": (75, -213), "zpl": 1278.78},
        "6H-alpha": {"g_gs": 1.749, "A_gs": (165, -165, 232), "g_es": 2.24, "A_es": (20, 200), "zpl": 1308.56},
    }
    for name, d in doc.items():
        assert GROUND_G[name][1] == d["g_gs"] and GROUND_A[name] == d["A_gs"]
        assert EXCITED_G[name] == d["g_es"] and EXCITED_A[name] == d["A_es"]
        assert ZPL_WAVELENGTH_NM[name] == d["zpl"]
        m = make_preset(name)
        np.testing.assert_array_equal(np.diag(m.ground.A_tensor), d["A_gs"])
        assert (m.excited.A_tensor[0, 2], m.excited.A_tensor[2, 2]) == d["A_es"]


# ---------------------------------------------------------------------------
# ingestion


def test_ingest_recovery(tmp_path):
    curve = vio.ingest_trace(write(tmp_path / "r.csv", "tau_s,recovered_fraction\n0,0.1\n1,0.5\n2,0.9\n"), "recovery")
    np.testing.assert_array_equal(curve.tau, [0, 1, 2])
    np.testing.assert_array_equal(curve.recovered_fraction, [0.1, 0.5, 0.9])


def test_ingest_unit_conversion(tmp_path):
    curve = vio.ingest_trace(write(tmp_path / "r.csv", "tau_ms,recovered_fraction\n1,0.1\n250,0.5\n"), "recovery")
    np.testing.assert_allclose(curve.tau, [1e-3, 0.25])
    tr = vio.ingest_trace(write(tmp_path / "s.csv", "detuning_GHz,signal\n-1.5,0\n2,1\n"), "spectrum")
    np.testing.assert_allclose(tr.x, [-1500, 2000])


def test_ingest_sigma_column(tmp_path):
    curve = vio.ingest_trace(write(tmp_path / "r.csv", "tau_s,recovered_fraction,sigma\n0,0.1,0.02\n1,0.2,0.03\n"),
                             "recovery")
    np.testing.assert_array_equal(curve.sigma, [0.02, 0.03])
    with pytest.raises(TraceFormatError, match=":3: sigma"):
        vio.ingest_trace(write(tmp_path / "b.csv", "tau_s,recovered_fraction,sigma\n0,0.1,0.02\n1,0.2,0\n"),
                         "recovery")


@pytest.mark.parametrize("body,pattern", [
    ("tau_s,recovered_fraction\n0,0.1\n1,0.2\n1,0.3\n", r":3,4: duplicate"),
    ("tau_s,recovered_fraction\n0,0.1\n2,0.2\n1,0.3\n", r":4: abscissa decreases"),
    ("tau_s,recovered_fraction\n0,0.1\n1,nan\n", r":3: NaN"),
    ("tau_s,recovered_fraction\n0,0.1\n1,abc\n", r":3: malformed"),
    ("tau_s,recovered_fraction\n0,0.1,5\n", r":2: expected 2 fields"),
    ("time_s,recovered_fraction\n0,0.1\n", r":1: header"),
    ("tau_s,recovered_fraction\n", r"no data rows"),
])
def test_ingest_rejections(tmp_path, body, pattern):
    with pytest.raises(TraceFormatError, match=pattern):
        vio.ingest_trace(write(tmp_path / "r.csv", body), "recovery")


def test_ingest_unknown_kind(tmp_path):
    with pytest.raises(TraceFormatError):
        vio.ingest_trace(write(tmp_path / "r.csv", "x,y\n"), "histogram")


def test_read_features(tmp_path):
    feats = vio.read_features(write(tmp_path / "f.csv", "b_mT,detuning_MHz,family\n100,605,Pi\n200,1209,Pi\n"))
    assert [(f.field, f.detuning, f.family) for f in feats] == [(100, 605, "Pi"), (200, 1209, "Pi")]
    with pytest.raises(TraceFormatError, match=":1:"):
        vio.read_features(write(tmp_path / "g.csv", "b,d,f\n"))


def test_format_number_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, 0.0, -0.0):
        assert float(vio.format_number(v)) == v
    assert vio.format_number(-0.0) == "0.0"
    assert vio.format_number(np.int64(4)) == "4"


def test_atomic_write_leaves_original_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "x.csv"
    vio.write_csv(target, ["a"], [[1]])

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        vio.write_csv(target, ["a"], [[2]])
    assert target.read_text() == "a\n1\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


# ---------------------------------------------------------------------------
# command line


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_eig_zero_field(tmp_path):
    assert run(tmp_path, "eig") == 0
    header, rows = read_csv(tmp_path / "levels.csv")
    assert header[:4] == ["b_mT", "manifold", "index", "energy_MHz"]
    for manifold in ("ground", "excited"):
        e = np.sort([float(r[3]) for r in rows if r[1] == manifold])
        assert e.size == 16
    gs = np.sort([float(r[3]) for r in rows if r[1] == "ground"])
    gaps = np.diff(gs)
    # integer total spin: no Kramers theorem, 7 pairs and 2 singlets
    assert np.sum(gaps < 1e-6) == 7


def test_spectrum_and_dynamics_outputs(tmp_path):
    assert run(tmp_path, "spectrum") == 0
    header, rows = read_csv(tmp_path / "transitions.csv")
    assert header[:5] == ["b_mT", "gs_index", "es_index", "frequency_offset_MHz", "strength"] and rows
    assert run(tmp_path, "dynamics") == 0
    assert read_csv(tmp_path / "recovery.csv")[0] == ["tau_s", "recovered_fraction"]
    header, rows = read_csv(tmp_path / "trace.csv")
    assert header == ["time_s", "fluorescence"] and rows


def test_map_default_axes_and_envelope(tmp_path):
    assert run(tmp_path, "map", "--field-steps", "7", "--detuning-steps", "11") == 0
    header, rows = read_csv(tmp_path / "map.csv")
    assert header == ["b_mT", "detuning_MHz", "intensity"] and len(rows) == 77
    B = sorted({float(r[0]) for r in rows})
    d = sorted({float(r[1]) for r in rows})
    assert (B[0], B[-1], d[0], d[-1]) == (0.0, 61.0, 0.0, 1499.0)
    env = json.loads((tmp_path / "map.json").read_text())
    assert env["model"] == "4H-alpha" and env["data"] == "map.csv"
    assert env["field_axis_mT"] == {"min": 0.0, "max": 61.0, "steps": 7}


def test_map_reproducible_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "map", "--field-steps", "9", "--detuning-steps", "13", "--seed", "5") == 0
    for name in ("map.csv", "map.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_fit_t1_packaged(tmp_path, capsys):
    assert run(tmp_path, "fit-t1") == 0
    rep = json.loads((tmp_path / "fit_t1.json").read_text())
    assert rep["parameters"]["Gamma_0"] == pytest.approx(100, rel=0.05)
    assert rep["parameters"]["Gamma_1"] == pytest.approx(0.04, rel=0.05)
    assert rep["converged"] is True
    assert str(tmp_path / "fit_t1.json") in capsys.readouterr().out


def test_fit_hyperfine_and_depletion(tmp_path):
    assert run(tmp_path, "fit-hyperfine") == 0
    rep = json.loads((tmp_path / "fit_hyperfine.json").read_text())
    assert rep["parameters"]["A_xz"] == pytest.approx(75, abs=4)
    assert run(tmp_path, "fit-depletion") == 0
    rep = json.loads((tmp_path / "fit_depletion.json").read_text())
    assert rep["parameters"]["hwhm_MHz"] == pytest.approx(800, rel=0.1)


def test_fit_doublet(tmp_path):
    assert run(tmp_path, "fit-doublet") == 0
    rep = json.loads((tmp_path / "fit_doublet.json").read_text())
    assert rep["spin_temperature_K"] == pytest.approx(0.230, abs=0.01)


def test_validation_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", '{"gN_typo": 1}')
    assert main(["eig", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("E:config:")
    bad = write(tmp_path / "r.csv", "tau_s,recovered_fraction\n0,0.1\n0,0.2\n")
    assert run(tmp_path, "fit-t1", "--input", str(bad)) == 2
    assert capsys.readouterr().err.startswith("E:trace-format:")
    assert main(["nonsense"]) == 2


def test_nonconvergence_exit_code(tmp_path, capsys):
    flat = write(tmp_path / "d.csv", "b_mT,depletion\n" + "".join(f"{b},0.3\n" for b in range(0, 100, 10)))
    assert run(tmp_path, "fit-depletion", "--input", str(flat)) == 3
    assert capsys.readouterr().err.startswith("E:not-converged:")
    # the report is still written for inspection
    assert json.loads((tmp_path / "fit_depletion.json").read_text())["converged"] is False


def test_run_subcommand_direct(tmp_path):
    cfg = RunConfig(out=str(tmp_path), eig={"fields": [0.0, 490.0]})
    status, paths = run_subcommand("eig", cfg)
    assert status == 0 and paths == [tmp_path / "levels.csv"]
    _, rows = read_csv(paths[0])
    assert {float(r[0]) for r in rows} == {0.0, 490.0} and len(rows) == 64
