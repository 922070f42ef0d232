import json
import math
import subprocess
import sys

import numpy as np
import pytest

from lagphase import cli, grid
from lagphase.errors import ValidationError
from lagphase.expr import ExpressionSyntaxError

QUAD = """\
# half the squared norm solves the pi/2 problem
setting: real2
box: 0 0  1 1
resolution: 17
delta: 0.5
h: expr: pi/2
phi: expr: 0.5*(x1^2 + x2^2)
usub: expr: 0.5*(x1^2 + x2^2)
"""


def write(tmp_path, text, name="p.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, command, text=QUAD, seed=0, out="out"):
    spec = write(tmp_path, text)
    cfg = cli.RunConfig(command, spec, tmp_path / out, seed=seed)
    status = cli.run(cfg)
    report = json.loads((tmp_path / out / "report.json").read_text())
    return status, report


# -- parsing -------------------------------------------------------------------------


def test_parse_minimal_spec():
    spec = cli.parse_problem(QUAD)
    assert spec.setting.name == "real2"
    assert spec.domain.resolution == 17
    assert spec.h.values[3, 3] == pytest.approx(math.pi / 2)


def test_parse_pi_in_box_and_complex_setting():
    text = QUAD.replace("real2", "complex1").replace("box: 0 0  1 1", "box: 0, 0, pi, pi/2")
    text = text.replace("h: expr: pi/2", "h: expr: atan(0.5)")
    spec = cli.parse_problem(text)
    assert spec.domain.upper == (math.pi, math.pi / 2)


@pytest.mark.parametrize("delta", ["0", "-0.2"])
def test_parse_bad_delta(delta):
    with pytest.raises(ValidationError, match="delta"):
        cli.parse_problem(QUAD.replace("delta: 0.5", f"delta: {delta}"))


def test_parse_boundary_mismatch_names_node():
    text = QUAD.replace("usub: expr: 0.5*(x1^2 + x2^2)", "usub: expr: 0.5*(x1^2 + x2^2) + 1e-3*x1*x2")
    with pytest.raises(ValidationError, match=r"boundary node \(16, 1\)"):
        cli.parse_problem(text)


def test_parse_h_below_band_names_node():
    text = QUAD.replace("h: expr: pi/2", "h: expr: pi/2 - 2*x1")
    with pytest.raises(ValidationError, match=r"h below supercritical band at node \(9, 1\)"):
        cli.parse_problem(text)


def test_parse_syntax_error_position():
    text = QUAD.replace("h: expr: pi/2", "h: expr: pi/ * 2")
    with pytest.raises(ExpressionSyntaxError) as info:
        cli.parse_problem(text)
    assert (info.value.line, info.value.column) == (6, 14)


@pytest.mark.parametrize(
    "edit,match",
    [
        (lambda t: t.replace("resolution: 17\n", ""), "missing keys: resolution"),
        (lambda t: t + "colour: blue\n", "unknown key"),
        (lambda t: t + "delta: 0.3\n", "duplicate key"),
        (lambda t: t.replace("box: 0 0  1 1", "box: 0 0 1"), "box needs 4 numbers"),
        (lambda t: t.replace("resolution: 17", "resolution: 17.5"), "integer"),
        (lambda t: t.replace("expr: pi/2", "pi/2"), "expr:<expression>"),
        (lambda t: t.replace("h: expr: pi/2", "h: expr: x3"), "x3 used in a 2-dimensional box"),
        (lambda t: t.replace("setting: real2", "setting: real5"), "supports n = 2, 3"),
        (lambda t: t + "no colon here\n", "key: value"),
    ],
)
def test_parse_errors(edit, match):
    with pytest.raises(ValidationError, match=match):
        cli.parse_problem(edit(QUAD))


def test_parse_csv_field(tmp_path):
    spec = cli.parse_problem(QUAD)
    grid.write_field_csv(spec.usub, tmp_path / "u.csv")
    text = QUAD.replace("usub: expr: 0.5*(x1^2 + x2^2)", "usub: csv: u.csv")
    again = cli.parse_problem(text, tmp_path)
    assert np.array_equal(again.usub.values, spec.usub.values)
    with pytest.raises(ValidationError, match="does not exist"):
        cli.parse_problem(text.replace("u.csv", "v.csv"), tmp_path)


# -- commands --------------------------------------------------------------------------


def test_solve_quadratic(tmp_path):
    status, rep = run(tmp_path, "solve")
    assert status == 0 and rep["exit_code"] == 0
    for key in ("residual_sup_F", "residual_sup_G", "path", "suites", "A_used", "delta", "timings"):
        assert key in rep
    assert rep["path"][-1]["t"] == 1
    spec = cli.parse_problem(QUAD)
    u = grid.read_field_csv(tmp_path / "out" / "solution.csv", spec.domain)
    assert np.abs(u.values - spec.usub.values).max() <= 1e-8


def test_solve_report_deterministic_except_timings(tmp_path):
    text = QUAD.replace("h: expr: pi/2", "h: expr: 1.4 + 0.1*x1*x2")
    text = text.replace("0.5*(x1^2 + x2^2)", "0.8*(x1^2 + x2^2)")
    s1, r1 = run(tmp_path, "solve", text, out="a")
    s2, r2 = run(tmp_path, "solve", text, out="b")
    assert s1 == s2 == 0
    assert r1["path"][-1]["t"] == 1 and any(p["newton_iters"] > 0 for p in r1["path"])
    r1.pop("timings")
    r2.pop("timings")
    assert r1 == r2
    assert (tmp_path / "a" / "solution.csv").read_bytes() == (tmp_path / "b" / "solution.csv").read_bytes()


def test_report_numbers_round_trip():
    text = cli.dumps_report({"b": 0.1, "a": [1 / 3, float("nan")], "c": {"z": np.float64(2.0) / 3}})
    data = json.loads(text)
    assert list(data) == ["a", "b", "c"]
    assert data["a"][0] == 1 / 3 and data["a"][1] is None and data["c"]["z"] == 2 / 3
    assert "0.33333333333333331" in text


def test_verify_subsolution_failing(tmp_path):
    text = QUAD.replace("h: expr: pi/2", "h: expr: pi/2 + 0.01")
    status, rep = run(tmp_path, "verify-subsolution", text)
    assert status == 1
    assert rep["passed"] is False
    assert rep["min_margin"] == pytest.approx(-0.01)
    assert (tmp_path / "out" / "margin.csv").exists()


def test_solve_with_non_subsolution_exits_1(tmp_path):
    text = QUAD.replace("h: expr: pi/2", "h: expr: pi/2 + 0.01")
    status, rep = run(tmp_path, "solve", text)
    assert status == 1 and rep["error"]["type"] == "PreconditionError"


def test_check_cone_and_forward(tmp_path):
    status, rep = run(tmp_path, "check-cone")
    assert status == 0 and rep["suites"]["cone"]["passed"]
    status, rep = run(tmp_path, "forward", out="fwd")
    assert status == 0
    assert rep["forward_min"] == pytest.approx(math.pi / 2)
    assert (tmp_path / "fwd" / "forward.csv").exists()


def test_check_cone_reports_node(tmp_path):
    # saddle subsolution has phase 0, outside the cone
    text = QUAD.replace("0.5*(x1^2 + x2^2)", "0.5*(x1^2 - x2^2)").replace("h: expr: pi/2", "h: expr: 1")
    status, rep = run(tmp_path, "check-cone", text)
    assert status == 1
    f = rep["suites"]["cone"]["failures"][0]
    assert f["node"] == [1, 1] and f["inside"] is False


def test_suites_command(tmp_path):
    cfg = cli.RunConfig("suites", None, tmp_path / "s", seed=3)
    assert cli.run(cfg) == 0
    rep = json.loads((tmp_path / "s" / "report.json").read_text())
    assert rep["seed"] == 3
    names = [v["name"] for v in rep["suites"].values()]
    assert "concavity_negative_control" in names and "det_identity" in names
    assert len(names) == 24


def test_validation_error_exit_2(tmp_path):
    status, rep = run(tmp_path, "solve", QUAD.replace("delta: 0.5", "delta: -1"))
    assert status == 2 and "delta" in rep["error"]["message"]


def test_run_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        cli.RunConfig("bogus", None, tmp_path)
    with pytest.raises(ValidationError):
        cli.RunConfig("solve", tmp_path / "missing.txt", tmp_path)


def test_main_flags(tmp_path, capsys):
    spec = write(tmp_path, QUAD)
    assert cli.main(["--spec", str(spec), "--out", str(tmp_path / "m"), "--tol", "1e-11", "--max-iters", "5"]) == 0
    assert cli.main(["--spec", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "m")]) == 2
    assert "does not exist" in capsys.readouterr().err
    assert cli.main(["--spec", str(spec), "--out", str(tmp_path / "m"), "--tol", "-1"]) == 2


def test_module_entry_point(tmp_path):
    spec = write(tmp_path, QUAD)
    proc = subprocess.run(
        [sys.executable, "-m", "lagphase", "--command", "forward", "--spec", str(spec), "--out", str(tmp_path / "e")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
