"""Nonlinear solvers for the discrete Dirichlet problem.

The equation ``F(Hess u) = h`` is solved in its concave form
``G(Hess u) = -exp(-A F) = psi := -exp(-A h)`` by a damped Newton
iteration, and the continuity method carries the solution from the
subsolution's own phase ``h0 = F(Hess ubar)`` (where ``ubar`` is exact)
to the target ``h``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid, spectral
from .errors import (
    ContinuityStall,
    LinearSolveFailure,
    LineSearchStall,
    MaxItersExceeded,
    PreconditionError,
    SupercriticalViolation,
)
from .grid import BoxDomain, GridField, ProblemSpec
from .phase_core import choose_A

log = logging.getLogger(__name__)

STEP_CAP = 0.25
STEP_GROWTH = 1.5
STEP_FLOOR = 1e-4


@dataclass(frozen=True)
class NewtonConfig:
    residual_tol: float = 1e-10
    max_iters: int = 50
    max_backtracks: int = 30
    linear_rel_tol: float = 1e-12
    cone_slack: float = 0.5

    def __post_init__(self):
        if not (self.residual_tol > 0 and self.linear_rel_tol > 0):
            raise PreconditionError("tolerances must be positive")
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise PreconditionError("iteration limits must be positive")
        if not 0.0 < self.cone_slack < 1.0:
            raise PreconditionError("cone_slack must lie in (0, 1)")


@dataclass
class NewtonLog:
    """Per-iteration history; ``residuals`` holds the weighted merit, ``g_residuals`` plain sup |G - psi|."""

    residuals: list = field(default_factory=list)
    g_residuals: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    linear_solves: int = 0

    @property
    def iterations(self) -> int:
        return len(self.step_lengths)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


@dataclass(frozen=True)
class PathEntry:
    t: float
    newton_iters: int
    final_residual: float
    rhs_margin: float


@dataclass
class SolveReport:
    path: list = field(default_factory=list)
    total_linear_solves: int = 0
    wall_time: float = 0.0
    A_used: float = float("nan")
    delta: float = float("nan")
    residual_sup_G: float = float("nan")
    residual_sup_F: float = float("nan")
    failed_attempts: int = 0
    verification: dict = field(default_factory=dict)

    @property
    def min_rhs_margin(self) -> float:
        return min(p.rhs_margin for p in self.path)

    @property
    def reached_end(self) -> bool:
        return bool(self.path) and self.path[-1].t == 1.0


@dataclass(frozen=True)
class SubsolutionVerdict:
    passed: bool
    margin: GridField
    min_margin: float
    worst_node: tuple
    boundary_exact: bool


def _inner(domain: BoxDomain):
    return (slice(1, -1),) * domain.dim


def _interior_columns(domain: BoxDomain) -> np.ndarray:
    return np.flatnonzero(~domain.boundary_mask().ravel(order="F"))


def _to_unknowns(arr) -> np.ndarray:
    return np.asarray(arr).ravel(order="F")


def _from_unknowns(vec, domain: BoxDomain) -> np.ndarray:
    return np.asarray(vec).reshape(domain.interior_shape, order="F")


def laplace_solve(domain: BoxDomain, boundary, source=None) -> GridField:
    """Discrete Dirichlet problem for the ``2*dim``-point Laplacian.

    ``boundary`` is a GridField (or array) whose boundary-node values are
    imposed exactly; interior values are ignored.  With ``source`` (an
    interior-shaped array or a GridField) solves ``Lap w = source``
    instead of ``Lap w = 0``.
    """
    bvals = np.asarray(getattr(boundary, "values", boundary), dtype=float)
    if bvals.shape != domain.shape:
        raise PreconditionError("boundary data does not match the domain")
    mask = domain.boundary_mask()
    if not np.all(np.isfinite(bvals[mask])):
        raise PreconditionError("boundary data must be finite")
    eye = np.broadcast_to(np.eye(domain.dim), domain.interior_shape + (domain.dim, domain.dim))
    op = grid.second_order_operator(domain, eye)
    inner_cols = _interior_columns(domain)
    bnd_cols = np.flatnonzero(mask.ravel(order="F"))
    full = np.where(mask, bvals, 0.0)
    rhs = -(op[:, bnd_cols] @ full.ravel(order="F")[bnd_cols])
    if source is not None:
        src = np.asarray(getattr(source, "values", source), dtype=float)
        if src.shape == domain.shape:
            src = src[_inner(domain)]
        rhs = rhs + _to_unknowns(src)
    K = op[:, inner_cols].tocsc()
    sol = spla.spsolve(K, rhs)
    out = full.copy()
    out[_inner(domain)] = _from_unknowns(sol, domain)
    w = GridField(domain, out)

    lap = np.trace(grid.hessian_real_all(w.values, domain), axis1=-2, axis2=-1)
    scale = (1.0 + np.abs(bvals[mask]).max()) / min(domain.spacing) ** 2
    target = 0.0
    if source is not None:
        target = src
        scale += float(np.abs(src).max())
    if not np.all(np.isfinite(sol)) or np.abs(lap - target).max() > 1e-10 * scale:
        raise LinearSolveFailure("Laplace solve did not reach the requested residual")
    return w


class _Discretization:
    """Per-solve cache: operator evaluation, Jacobian assembly, linear solves."""

    def __init__(self, spec: ProblemSpec, A: float):
        self.spec = spec
        self.domain = spec.domain
        self.setting = spec.setting
        self.A = A
        self.inner_cols = _interior_columns(self.domain)
        self.phase_floor = (self.setting.n - 2) * math.pi / 2

    def evaluate(self, values):
        M = grid.discrete_hessians(self.setting, values, self.domain)
        F, _, G, Gcoef = spectral.value_and_linearization(M, self.A)
        return np.asarray(F), np.asarray(G), Gcoef

    def jacobian(self, Gcoef) -> sp.csc_matrix:
        if self.setting.kind == "complex":
            C = grid.real_coefficients_from_complex(Gcoef)
        else:
            C = Gcoef
        op = grid.second_order_operator(self.domain, C)
        return op[:, self.inner_cols].tocsc()


def _solve_linear(J, b, rel_tol: float):
    lu = spla.splu(J)
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    for _ in range(3):
        r = b - J @ x
        if not np.all(np.isfinite(x)):
            break
        if np.linalg.norm(r) <= rel_tol * bnorm:
            return x
        x = x + lu.solve(r)
    raise LinearSolveFailure(
        f"linear relative residual {np.linalg.norm(b - J @ x) / bnorm:.3e} exceeds {rel_tol:.1e}"
    )


def _check_rhs(spec: ProblemSpec, rhs) -> np.ndarray:
    band = spec.band
    r = np.asarray(getattr(rhs, "values", rhs), dtype=float)
    if r.shape == spec.domain.shape:
        r = r[_inner(spec.domain)]
    if r.shape != spec.domain.interior_shape:
        raise PreconditionError("rhs does not match the interior of the domain")
    low = r < band.lower
    if low.any() or not np.all(np.isfinite(r)):
        node = tuple(int(i) + 1 for i in np.argwhere(low | ~np.isfinite(r))[0])
        raise SupercriticalViolation(
            f"rhs {r[tuple(i - 1 for i in node)]!r} below (n-2)pi/2 + delta = {band.lower!r} at node {node}"
        )
    if np.any(r >= band.upper):
        raise SupercriticalViolation(f"rhs reaches n*pi/2 = {band.upper!r}")
    return r


def newton_solve(spec: ProblemSpec, rhs, init: GridField, cfg: NewtonConfig | None = None):
    """Damped Newton iteration for ``G(Hess u) = -exp(-A rhs)``.

    Convergence and step acceptance use the weighted residual
    ``|G - psi| / min(1, |psi|)``, which bounds the plain G-residual from
    above and stays meaningful when ``psi`` is tiny (large ``A``).  Every
    accepted iterate keeps the phase at least
    ``(n-2)pi/2 + cone_slack * delta`` at every interior node, and the
    sup-norm of the weighted residual decreases strictly.

    Returns
    -------
    u : GridField
    log : NewtonLog
    """
    cfg = cfg or NewtonConfig()
    r = _check_rhs(spec, rhs)
    A = choose_A(spec.band)
    disc = _Discretization(spec, A)
    floor = disc.phase_floor + cfg.cone_slack * spec.delta
    mask = spec.domain.boundary_mask()
    if init.domain != spec.domain or not np.array_equal(init.values[mask], spec.phi.values[mask]):
        raise PreconditionError("initial guess must carry the boundary data exactly")

    psi = -np.exp(-A * r)
    weight = 1.0 / np.minimum(1.0, -psi)
    u = init.values.copy()
    F, G, Gcoef = disc.evaluate(u)
    if np.any(F < floor):
        raise PreconditionError("initial guess is outside the cone margin")
    res = G - psi
    rnorm = float((np.abs(res) * weight).max())
    out = NewtonLog(residuals=[rnorm], g_residuals=[float(np.abs(res).max())])
    inner = _inner(spec.domain)

    while rnorm > cfg.residual_tol:
        if out.iterations >= cfg.max_iters:
            raise MaxItersExceeded(f"weighted G-residual {rnorm:.3e} after {cfg.max_iters} Newton iterations")
        J = disc.jacobian(Gcoef)
        delta_u = _solve_linear(J, -_to_unknowns(res), cfg.linear_rel_tol)
        out.linear_solves += 1
        step = _from_unknowns(delta_u, spec.domain)
        alpha = 1.0
        for _ in range(cfg.max_backtracks + 1):
            trial = u.copy()
            trial[inner] = u[inner] + alpha * step
            tF, tG, tGcoef = disc.evaluate(trial)
            tres = tG - psi
            tnorm = float((np.abs(tres) * weight).max())
            if np.all(tF >= floor) and tnorm < rnorm:
                break
            alpha *= 0.5
        else:
            raise LineSearchStall(
                f"no admissible step after {cfg.max_backtracks} halvings (residual {rnorm:.3e})"
            )
        u, F, Gcoef, res, rnorm = trial, tF, tGcoef, tres, tnorm
        out.residuals.append(rnorm)
        out.g_residuals.append(float(np.abs(res).max()))
        out.step_lengths.append(alpha)
        log.debug("newton iter %d: residual %.3e, step %.3g", out.iterations, rnorm, alpha)
    return GridField(spec.domain, u), out


def verify_subsolution(spec: ProblemSpec, tol: float = 1e-12) -> SubsolutionVerdict:
    """Check ``F(Hess ubar) >= h - tol`` at interior nodes and ``ubar = phi`` on the boundary."""
    F = grid.eval_operator_field(spec, spec.usub)
    margin = F.values - np.where(spec.domain.boundary_mask(), np.nan, spec.h.values)
    inner = margin[_inner(spec.domain)]
    flat = _to_unknowns(inner)
    k = int(np.argmin(flat))
    worst = tuple(int(i) + 1 for i in np.unravel_index(k, inner.shape, order="F"))
    mask = spec.domain.boundary_mask()
    boundary_exact = bool(np.array_equal(spec.usub.values[mask], spec.phi.values[mask]))
    passed = bool(np.all(inner >= -tol)) and boundary_exact
    return SubsolutionVerdict(passed, GridField(spec.domain, margin), float(flat[k]), worst, boundary_exact)


def subsolution_gap(spec: ProblemSpec, u: GridField) -> GridField:
    """``trace(F'(Hess u) (Hess ubar - Hess u))`` at interior nodes, NaN on the boundary."""
    Mu = grid.discrete_hessians(spec.setting, u.values, spec.domain)
    Ms = grid.discrete_hessians(spec.setting, spec.usub.values, spec.domain)
    L = spectral.linearization(Mu)
    gap = np.einsum("...ij,...ji->...", L, Ms - Mu).real
    out = np.full(spec.domain.shape, np.nan)
    out[_inner(spec.domain)] = gap
    return GridField(spec.domain, out)


def continuity_solve(spec: ProblemSpec, cfg: NewtonConfig | None = None):
    """Continuity method from ``t = 0`` (``u = ubar``) to ``t = 1``.

    The target along the path is ``t h + (1 - t) h0`` with
    ``h0 = F(Hess ubar)``.  A failed Newton solve halves the step; a
    successful one grows it by 1.5, capped at 0.25.

    Returns
    -------
    u : GridField
    report : SolveReport
    """
    cfg = cfg or NewtonConfig()
    start = time.perf_counter()
    verdict = verify_subsolution(spec)
    if not verdict.passed:
        raise PreconditionError(
            f"usub is not a subsolution: margin {verdict.min_margin!r} at node {verdict.worst_node}"
        )
    band = spec.band
    A = choose_A(band)
    inner = _inner(spec.domain)
    h = spec.h.values[inner]
    h0 = grid.eval_operator_field(spec, spec.usub).values[inner]
    report = SolveReport(A_used=A, delta=spec.delta)

    u = spec.usub
    t = 0.0
    u, first = newton_solve(spec, h0, u, cfg)
    report.total_linear_solves += first.linear_solves
    report.path.append(PathEntry(0.0, first.iterations, first.final_residual,
                                 float((h0 - band.lower).min())))
    step = STEP_CAP
    while t < 1.0:
        t_try = min(1.0, t + step)
        rhs = t_try * h + (1.0 - t_try) * h0
        try:
            u_new, nlog = newton_solve(spec, rhs, u, cfg)
        except (MaxItersExceeded, LineSearchStall, LinearSolveFailure) as exc:
            report.failed_attempts += 1
            step *= 0.5
            log.info("continuity step to t=%.6g failed (%s); step -> %.3g", t_try, exc, step)
            if step < STEP_FLOOR:
                raise ContinuityStall(f"continuity step fell below {STEP_FLOOR} at t={t!r}") from exc
            continue
        report.total_linear_solves += nlog.linear_solves
        t = t_try
        u = u_new
        report.path.append(PathEntry(t, nlog.iterations, nlog.final_residual,
                                     float((rhs - band.lower).min())))
        step = min(STEP_CAP, STEP_GROWTH * step)

    F, G, _ = _Discretization(spec, A).evaluate(u.values)
    report.residual_sup_G = float(np.abs(G + np.exp(-A * h)).max())
    report.residual_sup_F = float(np.abs(F - h).max())
    report.wall_time = time.perf_counter() - start
    return u, report
