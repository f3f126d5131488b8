import csv
import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatflow import cli
from flatflow.geometry import BinarySet, GridDomain, save_mask

BALL = """# a disk at rest
grid_cells = 48x48
preset = ball
h_time = 16
T_time = 64
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run_cli(args, capsys=None):
    code = cli.main(args)
    err = capsys.readouterr().err if capsys else ""
    return code, err


def test_ball_run(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", write(tmp_path, BALL), "--out", str(out)]) == 0
    with open(out / "steps.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert len({r["volume_cells"] for r in rows}) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["checks"]["volume_conserved"] is True
    assert summary["config"]["radius_length"] == 12.0  # defaulted field is echoed
    assert summary["tolerances"]["inner_tol_energy"] == pytest.approx(0.01)
    assert sorted(p.name for p in (out / "masks").iterdir())[0] == "t_0.000000.mask"


def test_resolution_guard(tmp_path, capsys):
    cfg = write(tmp_path, BALL.replace("h_time = 16", "h_time = 4"))
    code, err = run_cli(["run", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "config" and "sqrt(h)" in payload["message"]
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--override-resolution-guard"]) == 0


@pytest.mark.parametrize("text", ["grid_cells = 48x48\nbogus = 1\n", "grid_cells = 48x\n", "h_time = -1\n",
                                  "preset = star\n", "kind = hexagonal\n", "aspect = 2\n", "h_time\n",
                                  "h_time = 16\nh_time = 16\n", "write_pgm = maybe\n"])
def test_config_errors_exit_2(tmp_path, capsys, text):
    code, err = run_cli(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert json.loads(err)["exit_code"] == 2


def test_missing_config_exit_2(tmp_path, capsys):
    code, _ = run_cli(["run", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "o")], capsys)
    assert code == 2


def test_unwritable_output_exit_3(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, err = run_cli(["run", "--config", write(tmp_path, BALL), "--out", str(blocker / "x")], capsys)
    assert code == 3
    assert json.loads(err)["error"] == "io"


def test_missing_mask_file_exit_3(tmp_path, capsys):
    text = BALL.replace("preset = ball", f"preset = from-file\nmask_path = {tmp_path / 'nope.mask'}")
    code, _ = run_cli(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")], capsys)
    assert code == 3


def test_solver_failure_exit_4(tmp_path, capsys):
    text = BALL + "inner_max_iters = 3\ninner_tol_energy = 1e-12\n"
    code, err = run_cli(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")], capsys)
    assert code == 4
    assert json.loads(err)["error"] == "solver"
    assert (tmp_path / "o" / "error.json").exists()


def test_containment_failure_exit_4(tmp_path, capsys):
    text = BALL.replace("preset = ball", "preset = ball\nradius_length = 23")
    code, _ = run_cli(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")], capsys)
    assert code == 4


def test_run_is_deterministic(tmp_path):
    text = BALL.replace("preset = ball", "preset = perturbed-circle\nseed = 7")
    cfg = write(tmp_path, text)
    for name in ("a", "b"):
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("steps.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_flag_changes_perturbation(tmp_path):
    base = cli.RunConfig(grid_cells=(48, 48), preset="perturbed-circle", seed=1)
    a = cli.build_initial_set(base).mask
    b = cli.build_initial_set(dataclasses.replace(base, seed=2)).mask
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("preset", ["ball", "ellipse", "two-balls", "perturbed-circle"])
def test_presets_build(preset):
    cfg = cli.RunConfig(grid_cells=(64, 64), preset=preset, radius_length=12)
    s = cli.build_initial_set(cfg)
    assert 0 < s.cell_count < 64 * 64
    assert s.cell_count == pytest.approx((2 if preset == "two-balls" else 1) * math.pi * 144, rel=0.1)


def test_from_file_preset(tmp_path):
    dom = GridDomain((32, 32))
    m = np.zeros((32, 32), bool)
    m[10:20, 12:18] = True
    save_mask(BinarySet(dom, m), tmp_path / "e.mask")
    cfg = cli.RunConfig(grid_cells=(32, 32), preset="from-file", mask_path=str(tmp_path / "e.mask"))
    assert np.array_equal(cli.build_initial_set(cfg).mask, m)
    with pytest.raises(cli.ConfigError):
        cli.build_initial_set(dataclasses.replace(cfg, grid_cells=(32, 40)))


def test_pgm_snapshots(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", "--config", write(tmp_path, BALL + "write_pgm = true\n"), "--out", str(out)]) == 0
    assert any(p.suffix == ".pgm" for p in (out / "masks").iterdir())


def test_study(tmp_path):
    text = BALL.replace("h_time = 16", "h_time = 64").replace("T_time = 64", "T_time = 128") + \
        "ladder_time = 64,32,16\n"
    out = tmp_path / "s"
    assert cli.main(["study", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    with open(out / "study.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {float(r["h"]) for r in rows} == {64.0, 32.0, 16.0}
    assert {float(r["time"]) for r in rows} == {0.0, 64.0, 128.0}
    layer = 4 * 24  # rough anisotropic perimeter of the r = 12 disk
    assert all(float(r["sym_diff_to_next_h"]) <= 2 * layer for r in rows if r["sym_diff_to_next_h"])
    for h in ("64", "32", "16"):
        assert (out / f"h_{h}" / "summary.json").exists()


def test_study_needs_two_values(tmp_path, capsys):
    code, _ = run_cli(["study", "--config", write(tmp_path, BALL), "--out", str(tmp_path / "s"),
                       "--ladder", "16"], capsys)
    assert code == 2


def test_oracle_zero_count(capsys):
    assert cli.main(["oracle-test", "--count", "0"]) == 0
    assert "0/0 passed" in capsys.readouterr().out


def test_oracle_small_run_is_deterministic(tmp_path, capsys):
    assert cli.main(["oracle-test", "--count", "6", "--seed", "3", "--out", str(tmp_path / "a")]) == 0
    first = capsys.readouterr().out
    assert cli.main(["oracle-test", "--count", "6", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == first
    assert (tmp_path / "a" / "oracle.csv").read_bytes() == (tmp_path / "b" / "oracle.csv").read_bytes()


def test_oracle_negative_count(capsys):
    assert cli.main(["oracle-test", "--count", "-1"]) == 2


configs = st.builds(
    cli.RunConfig,
    grid_cells=st.tuples(st.integers(16, 300), st.integers(16, 300)),
    dx_length=st.floats(0.01, 10, allow_nan=False),
    boundary=st.sampled_from(["neumann", "periodic"]),
    preset=st.sampled_from(["ball", "ellipse", "two-balls", "perturbed-circle"]),
    radius_length=st.none() | st.floats(0.5, 100),
    aspect=st.sampled_from(["2:1", "3:2", "1:1.5"]),
    h_time=st.floats(1e-3, 1e4),
    T_time=st.floats(0, 1e5),
    kind=st.sampled_from(["isotropic", "anisotropic4"]),
    mode=st.sampled_from(["volume_constrained", "unconstrained"]),
    inner_tol_energy=st.none() | st.floats(1e-9, 1.0),
    lambda_tol_cells=st.integers(0, 5),
    ladder_time=st.lists(st.floats(0.1, 1e3), max_size=4).map(tuple),
    write_pgm=st.booleans(),
    seed=st.integers(0, 2 ** 31),
    override_resolution_guard=st.booleans(),
)


@given(configs)
def test_config_round_trip(cfg):
    assert cli.RunConfig.from_text(cfg.to_text()) == cfg


def test_resolved_config_fills_defaults():
    r = cli.RunConfig(grid_cells=(100, 80), dx_length=0.5).resolved()
    assert r["radius_length"] == 10.0
    assert all(v is not None for v in r.values())
