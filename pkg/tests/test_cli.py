import csv
import json
import math

import numpy as np
import pytest

from nmgeo import GridSpec, TimeSeries
from nmgeo.cli import (
    SERIES_COLUMNS,
    load_config,
    run,
    write_series_csv,
    write_sweep_csv,
)
from nmgeo.errors import ConfigParseError, UnknownConfigKey
from nmgeo.phasediagram import PhaseCell, classify_point


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_series_csv_shape_and_header(tmp_path):
    grid = GridSpec.uniform(0.3, 0.1)
    series = TimeSeries(grid, {"g": np.array([1.0, 0.9, 0.8, 0.7])})
    out = tmp_path / "s.csv"
    write_series_csv(series, str(out))
    rows = _read_csv(out)
    assert rows[0] == SERIES_COLUMNS
    assert len(rows) == 5  # header + n_steps + 1
    # absent channels are empty fields
    assert rows[1][SERIES_COLUMNS.index("sx")] == ""
    assert rows[1][SERIES_COLUMNS.index("g")] == "1"


def test_series_csv_round_trip_exact(tmp_path, rng):
    grid = GridSpec.uniform(1.0, 0.25)
    vals = rng.standard_normal(5) * 1e3
    nts = np.abs(rng.standard_normal(5))
    series = TimeSeries(grid, {"g": vals, "N_t": nts})
    out = tmp_path / "rt.csv"
    write_series_csv(series, str(out))
    rows = _read_csv(out)
    gi = SERIES_COLUMNS.index("g")
    ni = SERIES_COLUMNS.index("Nt")
    for k in range(5):
        assert float(rows[1 + k][gi]) == vals[k]
        assert float(rows[1 + k][ni]) == nts[k]


def test_series_csv_pole_row_clamps_beta(tmp_path):
    grid = GridSpec.uniform(0.4, 0.1)
    beta_i = np.array([-1.0, -30.0, np.nan, -20.0, -2.0])
    pole = np.array([False, False, True, False, False])
    series = TimeSeries(grid, {"beta_I": beta_i, "pole": pole})
    out = tmp_path / "p.csv"
    write_series_csv(series, str(out))
    rows = _read_csv(out)
    bi = SERIES_COLUMNS.index("beta_I_clamped")
    pi = SERIES_COLUMNS.index("pole")
    assert rows[3][pi] == "1"
    assert float(rows[3][bi]) == -50.0
    assert rows[2][pi] == "0"


def test_sweep_csv_contents(tmp_path):
    cells = [classify_point(0.9, 0.43, t_max=20.0)]
    cells += [PhaseCell(0.5, 0.1, "M", None, 0.0)] * 99
    cells.append(PhaseCell(1.0, 0.2, "ERR", None, math.nan, error="boom, with comma"))
    out = tmp_path / "sweep.csv"
    write_sweep_csv(cells, str(out))
    rows = _read_csv(out)
    assert len(rows) == 102
    assert rows[0] == ["gamma_w", "kappa", "region", "t_first_divergence", "N_total", "error"]
    first = rows[1]
    assert float(first[0]) == 0.9 and float(first[1]) == 0.43
    assert first[2] == "NM_DIV"
    assert abs(float(first[3]) - 5.19) < 0.02
    err_row = rows[-1]
    assert err_row[2] == "ERR"
    assert err_row[3] == "" and err_row[4] == ""
    assert "boom" in err_row[5]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_load_config_roundtrip(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text('{"gamma_w": 0.9, "kappa": 0.43}')
    cfg = load_config(str(cfg_path), "gfun")
    assert cfg == {"gamma_w": 0.9, "kappa": 0.43}


def test_load_config_rejects_malformed(tmp_path):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text('{"gamma_w": 0.9,,}')
    with pytest.raises(ConfigParseError) as err:
        load_config(str(cfg_path), "gfun")
    assert "line 1" in str(err.value)


def test_load_config_rejects_unknown_key(tmp_path):
    cfg_path = tmp_path / "typo.json"
    cfg_path.write_text('{"kapa": 0.43}')
    with pytest.raises(UnknownConfigKey) as err:
        load_config(str(cfg_path), "gfun")
    assert "kapa" in str(err.value)


def test_cli_flag_overrides_config(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text('{"gamma_w": 0.9, "kappa": 0.1, "t_max": 2.0, "dt": 0.1}')
    out = tmp_path / "g.csv"
    code = run([
        "gfun", "--config", str(cfg_path), "--kappa", "0.43",
        "--out", str(out),
    ])
    assert code == 0
    manifest = json.loads((tmp_path / "g.csv.manifest.json").read_text())
    assert manifest["params"]["kappa"] == 0.43
    assert manifest["params"]["gamma_w"] == 0.9
    assert manifest["grid"]["t_max"] == 2.0


# ---------------------------------------------------------------------------
# subcommands and exit codes
# ---------------------------------------------------------------------------

def test_gfun_row_count(tmp_path):
    out = tmp_path / "g.csv"
    code = run([
        "gfun", "--gamma-w", "0.9", "--kappa", "0.43",
        "--t-max", "20", "--dt", "0.01", "--out", str(out),
    ])
    assert code == 0
    rows = _read_csv(out)
    assert len(rows) == 2002  # header + 2001 data rows


def test_phase_manifest_lists_divergences(tmp_path):
    out = tmp_path / "phase.csv"
    code = run([
        "phase", "--gamma-w", "0.9", "--kappa", "0.43",
        "--theta", str(math.pi / 4), "--t-max", "20", "--dt", "0.01",
        "--out", str(out),
    ])
    assert code == 0
    manifest = json.loads((tmp_path / "phase.csv.manifest.json").read_text())
    times = manifest["divergence_times"]
    for expected in (5.19, 8.85, 14.87):
        assert any(abs(t - expected) < 0.02 for t in times)


def test_malformed_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    code = run(["gfun", "--config", str(cfg), "--out", str(tmp_path / "g.csv")])
    assert code == 2


def test_series_csv_uses_lf_newlines(tmp_path):
    grid = GridSpec.uniform(0.2, 0.1)
    series = TimeSeries(grid, {"g": np.array([1.0, 0.9, 0.8])})
    out = tmp_path / "nl.csv"
    write_series_csv(series, str(out))
    raw = out.read_bytes()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")


def test_sweep_inverted_range_exits_2(tmp_path):
    code = run([
        "sweep", "--gamma-w-range", "1.0:0.5:0.1", "--kappa-range", "0.1:0.2:0.05",
        "--out", str(tmp_path / "s.csv"),
    ])
    assert code == 2


def test_missing_out_exits_2():
    assert run(["gfun", "--gamma-w", "0.9", "--kappa", "0.43"]) == 2


def test_structural_config_errors_exit_2(tmp_path):
    out = str(tmp_path / "x.csv")
    base = ["--gamma-w", "0.9", "--kappa", "0.43", "--out", out]
    assert run(["gfun", *base, "--dt", "-0.1"]) == 2
    assert run(["gfun", *base, "--t-max", "0"]) == 2
    assert run(["phase", *base, "--theta", "4.0"]) == 2


def test_computation_error_exits_1_and_writes_manifest(tmp_path):
    out = tmp_path / "g.csv"
    code = run([
        "gfun", "--gamma-w", "-1.0", "--kappa", "0.43",
        "--t-max", "5", "--dt", "0.1", "--out", str(out),
    ])
    assert code == 1
    manifest = json.loads((tmp_path / "g.csv.manifest.json").read_text())
    assert manifest["status"] == "error"
    assert "gamma_w" in manifest["error"]


def test_byte_identical_reruns(tmp_path):
    args = [
        "gfun", "--gamma-w", "0.9", "--kappa", "0.43",
        "--t-max", "5", "--dt", "0.01",
    ]
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(args + ["--out", str(out1)]) == 0
    assert run(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_qsd_byte_identical_and_within_band(tmp_path):
    args = [
        "qsd", "--gamma-w", "0.9", "--kappa", "0.43",
        "--theta", str(math.pi / 4), "--t-max", "1.0", "--dt", "0.01",
        "--n-traj", "500", "--seed", "7",
    ]
    out1, out2 = tmp_path / "q1.csv", tmp_path / "q2.csv"
    assert run(args + ["--out", str(out1), "--workers", "1"]) == 0
    assert run(args + ["--out", str(out2), "--workers", "3"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    manifest = json.loads((tmp_path / "q1.csv.manifest.json").read_text())
    assert manifest["max_deviation_from_master_equation"] <= manifest["deviation_band_5_over_sqrt_n"]
    assert manifest["seed"] == 7 and manifest["n_traj"] == 500


def test_sweep_csv_via_cli(tmp_path):
    out = tmp_path / "s.csv"
    code = run([
        "sweep", "--gamma-w-range", "0.8:1.0:0.1", "--kappa-range", "0.1:0.45:0.35",
        "--t-max", "50", "--out", str(out),
    ])
    assert code == 0
    rows = _read_csv(out)
    assert len(rows) == 7  # header + 3 * 2 cells
    regions = {r[2] for r in rows[1:]}
    assert regions <= {"M", "NM_DIV", "NM_NODIV"}


def test_boundaries_csv(tmp_path):
    out = tmp_path / "b.csv"
    code = run(["boundaries", "--gamma-w-range", "1.6:2.0:0.2", "--out", str(out)])
    assert code == 0
    rows = _read_csv(out)
    assert rows[0] == ["gamma_w", "kappa_green", "kappa_blue", "kappa_tangency"]
    # gamma_w = 1.6: green + tangency, no blue; gamma_w = 2.0: blue only
    row16 = rows[1]
    assert row16[1] != "" and row16[2] == "" and row16[3] != ""
    row20 = rows[3]
    assert row20[1] != "" and row20[2] != "" and row20[3] == ""


def test_markov_limit_manifest_roots(tmp_path):
    out = tmp_path / "m.csv"
    code = run([
        "markov-limit", "--kappa", "0.5", "--t-max", "30", "--dt", "0.01",
        "--out", str(out),
    ])
    assert code == 0
    manifest = json.loads((tmp_path / "m.csv.manifest.json").read_text())
    roots = manifest["root_times"]
    assert len(roots) == 4
    assert roots[0] == pytest.approx(4.8368, abs=1e-3)


def test_json_format_output(tmp_path):
    out = tmp_path / "g.json"
    code = run([
        "gfun", "--gamma-w", "0.9", "--kappa", "0.43",
        "--t-max", "1", "--dt", "0.1", "--out", str(out), "--format", "json",
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert len(payload["t"]) == 11
    assert payload["g"][0] == 1.0
    assert payload["sx"] is None
