import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sheetfield import cli
from sheetfield.config import ExperimentConfig, from_mapping, load_config, parse_config_text, parse_value
from sheetfield.errors import ConfigError
from sheetfield.experiments import KINDS
from sheetfield.io import load_sheet
from sheetfield.parallel import map_stack, mean_stderr

SMALL = """
[experiment]
kind = girsanov
seed0 = 3
n = 300

[grid]
n = 8

[params]
drifts = sign, tanh
horizons = 0.25
horizon_paths = 100
"""


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_values():
    assert parse_value(" 3 ") == 3
    assert parse_value("1e-3") == 1e-3
    assert parse_value("yes") is True and parse_value("Off") is False
    assert parse_value("0.25, 0.75; 1, 1") == [[0.25, 0.75], [1, 1]]
    assert parse_value("sign") == "sign"


def test_config_fields_and_hash(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.kind == "girsanov" and cfg.n == 300 and cfg.grid.n_s == 8
    assert cfg.list_param("drifts", []) == ["sign", "tanh"]
    # cosmetic whitespace and key order do not change the hash
    head, rest = SMALL.split("[grid]")
    other = parse_config_text("[grid]" + rest + head.replace("n = 300", "n   =   300"))
    assert other.hash == cfg.hash
    assert cfg.with_seed_offset(5).seed0 == 8
    assert cfg.with_seed_offset(5).hash != cfg.hash


@given(n=st.integers(1, 10_000), seed0=st.integers(0, 2**40), grid=st.integers(1, 512),
       x=st.floats(-1e6, 1e6, allow_nan=False))
def test_canonical_text_round_trip(n, seed0, grid, x):
    raw = {"experiment": {"kind": "tail", "n": str(n), "seed0": str(seed0)}, "grid": {"n": str(grid)},
           "params": {"x": repr(x)}}
    cfg = from_mapping(raw)
    back = parse_config_text(cfg.canonical())
    assert back.hash == cfg.hash
    assert back.param("x") == cfg.param("x") and back.n == n and back.seed0 == seed0


def test_drift_parameters_keep_their_case(tmp_path):
    cfg = load_config(_write(tmp_path, "[experiment]\nKind = tail\n[drift]\nid = sign\nM = 0.5\n"))
    assert cfg.kind == "tail" and cfg.drift_params == {"M": 0.5}


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config_text("[experiment]\nn = 3\n")
    with pytest.raises(ConfigError):
        parse_config_text("[experiment]\nkind = tail\n[extra]\na = 1\n")
    with pytest.raises(ConfigError):
        parse_config_text("[experiment]\nkind = tail\nn = many\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_run_writes_report_and_csv(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(_write(tmp_path, SMALL)), "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["seed_range"] == [3, 302]
    assert rep["statement"] == KINDS["girsanov"].statement
    rows = list(csv.reader(open(out / "girsanov_mean_one.csv")))
    assert rows[0][0] == "drift" and len(rows) == 3
    assert "PASS" in capsys.readouterr().out


def test_replay_identical_across_workers_and_detects_edits(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["--workers", "1", "run", str(_write(tmp_path, SMALL)), "--out", str(out)]) == 0
    for w in ("4", "16"):
        assert cli.main(["replay", str(out), "--workers", w]) == 0
    rep = json.loads((out / "report.json").read_text())
    cell = rep["tables"]["mean_one"][1]
    cell["mean"] = float(np.nextafter(cell["mean"], np.inf))
    (out / "report.json").write_text(json.dumps(rep))
    capsys.readouterr()
    assert cli.main(["replay", str(out)]) == 1
    assert "mean_one[1].mean" in capsys.readouterr().out


def test_replay_detects_config_edit(tmp_path):
    out = tmp_path / "out"
    cli.main(["run", str(_write(tmp_path, SMALL)), "--out", str(out)])
    rep = json.loads((out / "report.json").read_text())
    rep["config_text"] = rep["config_text"].replace("n = 300", "n = 301")
    (out / "report.json").write_text(json.dumps(rep))
    assert cli.main(["replay", str(out)]) == 1


def test_failing_assertion_exits_one(tmp_path, capsys):
    text = SMALL.replace("[params]", "[params]\nk_stderr = 0")
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 1
    assert "failing assertions" in capsys.readouterr().out


def test_skipped_assertions_are_not_checked(tmp_path):
    text = SMALL.replace("[params]", "[params]\nk_stderr = 0") + "\n[assert]\nskip = " + \
        "mean_one[sign], mean_one[tanh], second_moment_stable[0.25]\n"
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0


def test_config_and_regime_errors_exit_two(tmp_path, capsys):
    assert cli.main(["run", str(_write(tmp_path, "[experiment]\nkind = nothing\n"))]) == 2
    bad = "[experiment]\nkind = l2_bounds\nn = 20\n[drift]\nid = affine\n[grid]\nn = 8\n"
    assert cli.main(["run", str(_write(tmp_path, bad)), "--out", str(tmp_path / "o")]) == 2
    assert "tau" in capsys.readouterr().err
    assert cli.main(["run"]) == 2


def test_uniqueness_zero_drift_config(tmp_path):
    text = "[experiment]\nkind = uniqueness\nn = 2\n[drift]\nid = zero\n[grid]\nn = 16\n[params]\n" \
           "grids = 4, 8, 16\nfinal_tol = 1e-12\n"
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0


def test_describe_and_catalog(capsys):
    assert cli.main(["describe", "gronwall"]) == 0
    out = capsys.readouterr().out
    assert "3^(k+k'-1)" in out
    assert cli.main(["describe", "local_time"]) == 0
    assert cli.main(["describe", "unknown"]) == 2
    assert cli.main(["catalog"]) == 0
    assert "mean_tanh" in capsys.readouterr().out


def test_sheet_command(tmp_path):
    p = tmp_path / "w.bin"
    assert cli.main(["sheet", "--seed", "4", "--n-s", "8", "--d", "2", "--out", str(p)]) == 0
    w = load_sheet(p)
    assert w.grid.d == 2 and w.seed == 4


@given(workers=st.integers(1, 8), chunk=st.integers(1, 17), n=st.integers(1, 60))
def test_worker_count_does_not_change_results(workers, chunk, n):
    f = lambda items: np.array([np.sin(i) * 1e3 + 1e-3 * i for i in items])
    a = map_stack(f, range(n), chunk=chunk, workers=1)
    b = map_stack(f, range(n), chunk=chunk, workers=workers)
    np.testing.assert_array_equal(a, b)
    assert mean_stderr(a)[0] == mean_stderr(b)[0]
