"""Command-line front end.

Problem files are line-oriented ``key: value`` text; ``#`` starts a
comment.  Example::

    setting: real2
    box: 0 0  1 1          # lower corner, then upper corner
    resolution: 33
    delta: 0.5
    h: expr: pi/2
    phi: expr: 0.5*(x1^2 + x2^2)
    usub: expr: 0.5*(x1^2 + x2^2)

Fields are ``expr:<expression>`` or ``csv:<path>`` (relative to the
problem file).  Each run writes ``report.json`` into ``--out``; ``solve``
also writes ``solution.csv``.  Exit status is 0 on success, 1 when a
solve or check fails and 2 for invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import grid, phase_core, spectral, verify
from .errors import LagPhaseError, PreconditionError, SolverError, ValidationError
from .expr import ExpressionSyntaxError, evaluate_constant, parse_expression
from .grid import BoxDomain, GridField, ProblemSpec, Setting
from .solver import NewtonConfig, continuity_solve, verify_subsolution

COMMANDS = ("solve", "verify-subsolution", "check-cone", "suites", "forward")
REQUIRED_KEYS = ("setting", "box", "resolution", "delta", "h", "phi", "usub")
EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    command: str
    spec_path: Path | None
    output_dir: Path
    seed: int = 0
    residual_tol: float | None = None
    max_iters: int | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        if self.command != "suites":
            if self.spec_path is None:
                raise ValidationError(f"command {self.command!r} needs --spec")
            if not Path(self.spec_path).is_file():
                raise ValidationError(f"problem file {self.spec_path} does not exist")

    def newton_config(self) -> NewtonConfig:
        kw = {}
        if self.residual_tol is not None:
            kw["residual_tol"] = self.residual_tol
        if self.max_iters is not None:
            kw["max_iters"] = self.max_iters
        try:
            return NewtonConfig(**kw)
        except PreconditionError as exc:
            raise ValidationError(str(exc)) from None


def _split_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        key, sep, value = body.partition(":")
        if not sep:
            col = len(body) - len(body.lstrip()) + 1
            raise ExpressionSyntaxError("expected 'key: value'", lineno, col)
        col = len(key) + 2 + (len(value) - len(value.lstrip()))
        yield lineno, key.strip(), value.strip(), col


def _field(value: str, lineno: int, col: int, domain: BoxDomain, base_dir: Path) -> GridField:
    kind, sep, rest = value.partition(":")
    kind = kind.strip()
    inner_col = col + len(kind) + 1 + (len(rest) - len(rest.lstrip()))
    if not sep or kind not in ("expr", "csv"):
        raise ExpressionSyntaxError("field must be 'expr:<expression>' or 'csv:<path>'", lineno, col)
    if kind == "csv":
        path = Path(rest.strip())
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ValidationError(f"line {lineno}: field file {path} does not exist")
        return grid.read_field_csv(path, domain)
    e = parse_expression(rest.strip(), lineno, inner_col)
    need = max((int(v[1:]) for v in e.variables), default=0)
    if need > domain.dim:
        raise ValidationError(f"line {lineno}: x{need} used in a {domain.dim}-dimensional box")
    return domain.sample(e)


def parse_problem(text: str, base_dir=".") -> ProblemSpec:
    """Parse and fully validate a problem file.

    Raises
    ------
    ExpressionSyntaxError
        Malformed line or expression (carries line and column).
    ValidationError
        Missing keys or violated problem invariants.
    """
    base_dir = Path(base_dir)
    entries = {}
    for lineno, key, value, col in _split_lines(text):
        if key not in REQUIRED_KEYS:
            raise ExpressionSyntaxError(f"unknown key {key!r}", lineno, 1)
        if key in entries:
            raise ExpressionSyntaxError(f"duplicate key {key!r}", lineno, 1)
        entries[key] = (lineno, value, col)
    missing = [k for k in REQUIRED_KEYS if k not in entries]
    if missing:
        raise ValidationError(f"missing keys: {', '.join(missing)}")

    lineno, value, _ = entries["setting"]
    setting = Setting.parse(value)

    lineno, value, col = entries["box"]
    parts = value.replace(",", " ").split()
    if len(parts) != 2 * setting.dim:
        raise ValidationError(
            f"line {lineno}: box needs {2 * setting.dim} numbers (lower corner then upper corner) "
            f"for setting {setting.name}, got {len(parts)}"
        )
    corners = [evaluate_constant(p, lineno, col) for p in parts]

    lineno, value, _ = entries["resolution"]
    try:
        resolution = int(value)
    except ValueError:
        raise ValidationError(f"line {lineno}: resolution must be an integer, got {value!r}") from None
    domain = BoxDomain(setting.dim, corners[: setting.dim], corners[setting.dim :], resolution)

    lineno, value, col = entries["delta"]
    delta = evaluate_constant(value, lineno, col)

    fields = {k: _field(entries[k][1], entries[k][0], entries[k][2], domain, base_dir) for k in ("h", "phi", "usub")}
    return ProblemSpec(domain, setting, fields["h"], fields["phi"], fields["usub"], delta)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


class _Float17(float):
    def __repr__(self):
        if math.isnan(self) or math.isinf(self):
            raise ValueError
        return f"{float(self):.17g}"


def dumps_report(report: dict) -> str:
    """JSON with sorted keys and 17 significant digits; non-finite numbers become null."""

    def conv(o):
        if isinstance(o, dict):
            return {k: conv(v) for k, v in o.items()}
        if isinstance(o, list):
            return [conv(v) for v in o]
        if isinstance(o, float):
            return _Float17(o) if math.isfinite(o) else None
        return o

    return _encode(conv(_clean(report))) + "\n"


def _encode(o, indent=0) -> str:
    pad = "  " * (indent + 1)
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(o[k], indent + 1)}" for k in sorted(o)]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(o, list):
        if not o:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in o):
            return "[" + ", ".join(_encode(v) for v in o) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in o) + "\n" + "  " * indent + "]"
    if isinstance(o, _Float17):
        return repr(o)
    return json.dumps(o)


def _solve(cfg: RunConfig, spec: ProblemSpec, report: dict) -> int:
    ncfg = cfg.newton_config()
    u, sr = continuity_solve(spec, ncfg)
    grid.write_field_csv(u, cfg.output_dir / "solution.csv")
    check = verify.suite_solution(spec, u, ncfg)
    report.update(
        A_used=sr.A_used,
        delta=sr.delta,
        residual_sup_F=sr.residual_sup_F,
        residual_sup_G=sr.residual_sup_G,
        path=[{"t": p.t, "newton_iters": p.newton_iters, "final_residual": p.final_residual,
               "rhs_margin": p.rhs_margin} for p in sr.path],
        total_linear_solves=sr.total_linear_solves,
        failed_attempts=sr.failed_attempts,
        suites={"solution": check.to_dict()},
    )
    report["timings"]["solve"] = sr.wall_time
    return EXIT_OK if check.passed else EXIT_FAILED


def _verify_subsolution(cfg: RunConfig, spec: ProblemSpec, report: dict) -> int:
    v = verify_subsolution(spec)
    grid.write_field_csv(v.margin, cfg.output_dir / "margin.csv")
    report.update(passed=v.passed, min_margin=v.min_margin, worst_node=list(v.worst_node),
                  boundary_exact=v.boundary_exact, delta=spec.delta)
    return EXIT_OK if v.passed else EXIT_FAILED


def _check_cone(cfg: RunConfig, spec: ProblemSpec, report: dict) -> int:
    M = grid.discrete_hessians(spec.setting, spec.usub.values, spec.domain)
    lam = spectral.eigvals_batch(M)
    n = spec.setting.n
    flat = np.moveaxis(lam, -1, 0).reshape(n, -1, order="F").T
    res = verify.suite_cone_facts(spec.band, len(flat), cfg.seed, spectra=flat)
    for f in res.failures:
        f["node"] = [int(i) + 1 for i in np.unravel_index(f["index"], spec.domain.interior_shape, order="F")]
    report.update(delta=spec.delta, A_used=phase_core.choose_A(spec.band), suites={"cone": res.to_dict()})
    return EXIT_OK if res.passed else EXIT_FAILED


def _forward(cfg: RunConfig, spec: ProblemSpec, report: dict) -> int:
    F = grid.eval_operator_field(spec, spec.usub)
    grid.write_field_csv(F, cfg.output_dir / "forward.csv")
    inner = F.interior()
    report.update(delta=spec.delta, forward_min=float(inner.min()), forward_max=float(inner.max()))
    return EXIT_OK


def _suites(cfg: RunConfig, report: dict) -> int:
    results = verify.run_lemma_suites(cfg.seed)
    ok = all(r["passed"] != r.get("expected_failures", False) for r in results)
    report["suites"] = {f"{i:02d}_{r['name']}": r for i, r in enumerate(results)}
    return EXIT_OK if ok else EXIT_FAILED


def run(cfg: RunConfig) -> int:
    """Execute one command, always leaving ``report.json`` in the output directory."""
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"command": cfg.command, "seed": cfg.seed, "timings": {}}
    try:
        if cfg.command == "suites":
            status = _suites(cfg, report)
        else:
            spec_path = Path(cfg.spec_path)
            report["spec"] = str(spec_path)
            spec = parse_problem(spec_path.read_text(encoding="utf-8"), spec_path.parent)
            handler = {"solve": _solve, "verify-subsolution": _verify_subsolution,
                       "check-cone": _check_cone, "forward": _forward}[cfg.command]
            status = handler(cfg, spec, report)
    except ValidationError as exc:
        status = EXIT_INVALID
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    except (SolverError, PreconditionError, LagPhaseError) as exc:
        status = EXIT_FAILED
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    report["exit_code"] = status
    report["timings"]["total"] = time.perf_counter() - start
    (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagphase", description="Supercritical Lagrangian phase Dirichlet solver.")
    p.add_argument("--command", default="solve", choices=COMMANDS)
    p.add_argument("--spec", type=Path, help="problem file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, help="Newton residual tolerance")
    p.add_argument("--max-iters", type=int, help="Newton iteration cap per continuity step")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig(args.command, args.spec, args.out, args.seed, args.tol, args.max_iters)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    status = run(cfg)
    if status != EXIT_OK:
        err = json.loads((Path(cfg.output_dir) / "report.json").read_text()).get("error")
        if err:
            print(f"error: {err['message']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
