"""Executable property suites and post-solve verification.

Each suite is deterministic for a fixed seed, records the seed, and keeps
enough of every failing case to re-run it in isolation.  Sample counts
and tolerances live here so that tightening a suite never changes the
library semantics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grid, phase_core, spectral
from .grid import GridField, ProblemSpec
from .phase_core import ConcavityCertificate, PhaseBand, Spectrum
from .solver import NewtonConfig, laplace_solve, subsolution_gap

MAX_RECORDED_FAILURES = 25
CONCAVITY_RTOL = 1e-9
SEGMENT_TOL = 1e-12
SCHUR_HORN_TOL = 1e-12
COMPARISON_TOL = 1e-8
SEGMENT_WEIGHTS = tuple(k / 10 for k in range(1, 10))


@dataclass
class SuiteReport:
    name: str
    cases: int
    failures: list = field(default_factory=list)
    failure_count: int = 0
    worst_margin: float = float("inf")
    seed: int | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failure_count == 0

    def record(self, failure: dict) -> None:
        self.failure_count += 1
        if len(self.failures) < MAX_RECORDED_FAILURES:
            self.failures.append(failure)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def certificate_to_dict(cert: ConcavityCertificate) -> dict:
    return {
        "name": "concavity",
        "A": cert.A,
        "n": cert.band.n,
        "delta": cert.band.delta,
        "samples": cert.samples,
        "min_H_eigenvalue": cert.min_H_eigenvalue,
        "witness": list(cert.witness.values),
        "seed": cert.seed,
        "tolerance": cert.tolerance,
        "failure_count": len(cert.failures),
        "failures": cert.failures[:MAX_RECORDED_FAILURES],
        "segment_checks": cert.segment_checks,
        "segment_failures": cert.segment_failures,
        "passed": cert.passed,
    }


def suite_cone_facts(band: PhaseBand, count: int, seed: int, spectra=None) -> SuiteReport:
    """Sample the cone and check all five structural facts on every sample.

    ``spectra`` replaces the sampled corpus (rows descending), which is how
    negative controls are injected.
    """
    lam = phase_core.sample_cone_array(band, count, seed)[0] if spectra is None else np.asarray(spectra, float)
    report = SuiteReport(f"cone_facts[n={band.n},delta={band.delta}]", len(lam), seed=seed)
    phase = phase_core.phase_sum(lam)
    inside = phase >= band.lower
    facts = phase_core.cone_facts(lam, band.delta)
    ok = inside.copy()
    for holds, _ in facts.values():
        ok &= holds
    minima = {"phase_margin": float((phase - band.lower).min())}
    for name, (_, slack) in facts.items():
        finite = slack[np.isfinite(slack)]
        minima[name] = float(finite.min()) if finite.size else None
    for i in np.flatnonzero(~ok):
        report.record({
            "index": int(i),
            "spectrum": lam[i].tolist(),
            "n": band.n,
            "delta": band.delta,
            "phase": float(phase[i]),
            "inside": bool(inside[i]),
            "failed": [k for k, (h, _) in facts.items() if not h[i]],
        })
    report.details = {"min_slack": minima}
    report.worst_margin = min(v for v in minima.values() if v is not None)
    return report


def suite_concavity(band: PhaseBand, count: int, seed: int, A: float | None = None,
                    segment_pairs: int | None = None) -> ConcavityCertificate:
    """Certify that ``H(A, lam)`` is positive semidefinite over sampled cone points.

    Also spot-checks concavity of ``g`` along segments between consecutive
    samples.  With ``A`` below the admissible threshold failures are
    expected and recorded.
    """
    if A is None:
        A = phase_core.choose_A(band)
    lam, _ = phase_core.sample_cone_array(band, count, seed)
    H = phase_core.h_matrix(A, lam)
    eig = spectral.eigvals_batch(H)
    min_eig = eig[:, -1]
    scale = 1.0 + np.abs(H).max(axis=(1, 2))
    bad = min_eig < -CONCAVITY_RTOL * scale
    k = int(np.argmin(min_eig))
    failures = [
        {"spectrum": lam[i].tolist(), "A": A, "delta": band.delta,
         "min_H_eigenvalue": float(min_eig[i]), "bound": float(-CONCAVITY_RTOL * scale[i])}
        for i in np.flatnonzero(bad)
    ]

    pairs = min(count // 2, 1000) if segment_pairs is None else segment_pairs
    seg_fail = 0
    checks = 0
    if pairs > 0:
        s, s2 = lam[0 : 2 * pairs : 2], lam[1 : 2 * pairs : 2]
        g1, g2 = phase_core.g_value(A, s), phase_core.g_value(A, s2)
        for t in SEGMENT_WEIGHTS:
            mid = phase_core.g_value(A, t * s + (1 - t) * s2)
            seg_fail += int(np.count_nonzero(mid < t * g1 + (1 - t) * g2 - SEGMENT_TOL))
            checks += len(s)

    return ConcavityCertificate(
        A=A, band=band, samples=len(lam), min_H_eigenvalue=float(min_eig[k]),
        witness=Spectrum(tuple(lam[k])), seed=seed, tolerance=CONCAVITY_RTOL,
        failures=failures, segment_checks=checks, segment_failures=seg_fail,
    )


def random_orthogonal(n: int, count: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrices via QR with sign correction."""
    Z = rng.standard_normal((count, n, n))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diagonal(R, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    return Q * signs[:, None, :]


def conjugated(lam, Q) -> np.ndarray:
    M = (Q * np.asarray(lam)[:, None, :]) @ np.swapaxes(Q, 1, 2)
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def suite_schur_horn(n: int, band: PhaseBand, count: int, seed: int, matrices=None) -> SuiteReport:
    """Principal-block phase inequalities on randomly rotated cone spectra."""
    if n not in (2, 3, 4) or band.n != n:
        raise phase_core.PreconditionError("suite_schur_horn needs n in {2,3,4} matching the band")
    if matrices is None:
        lam, _ = phase_core.sample_cone_array(band, count, seed)
        rng = np.random.default_rng([seed, 1])
        M = conjugated(lam, random_orthogonal(n, len(lam), rng))
    else:
        M = np.asarray(matrices, dtype=float)
    report = SuiteReport(f"schur_horn[n={n},delta={band.delta}]", len(M), seed=seed)
    block, rhs, bound = spectral.compression_sides(M, band)
    F = spectral.operator_value(M)
    slack_full = block - rhs
    slack_band = block - bound
    bad = (slack_full < -SCHUR_HORN_TOL) | (slack_band < -SCHUR_HORN_TOL)
    for i in np.flatnonzero(bad):
        report.record({
            "index": int(i), "matrix": M[i].tolist(), "delta": band.delta,
            "phase": float(F[i]), "slack_full": float(slack_full[i]), "slack_band": float(slack_band[i]),
        })
    report.details = {
        "min_slack_full": float(slack_full.min()),
        "min_slack_band": float(slack_band.min()),
        "below_band": int(np.count_nonzero(F < band.lower)),
    }
    report.worst_margin = float(min(slack_full.min(), slack_band.min()))
    return report


def suite_det_identity(count: int, seed: int, rtol: float = 1e-10) -> SuiteReport:
    """Closed-form ``det(A + 2 diag(lam))`` and ``det(H) prod(1+lam^2)^2`` against LU determinants."""
    rng = np.random.default_rng(seed)
    report = SuiteReport("det_identity", count, seed=seed)
    worst = 0.0
    for i in range(count):
        n = int(rng.integers(2, 5))
        lam = np.sort(rng.uniform(-3.0, 3.0, n))[::-1]
        A = float(rng.uniform(0.1, 10.0))
        dense = np.linalg.det(A * np.ones((n, n)) + np.diag(2.0 * lam))
        closed = float(phase_core.concavity_det(A, lam))
        pulled = float(np.linalg.det(phase_core.h_matrix(A, lam)) * np.prod((1 + lam**2) ** 2))
        err = float(max(abs(closed - dense), abs(pulled - dense)) / abs(dense))
        worst = max(worst, err)
        if err > rtol:
            report.record({"index": i, "A": A, "spectrum": lam.tolist(), "dense": dense,
                           "closed": closed, "pulled": pulled, "rel_err": err})
    report.worst_margin = rtol - worst
    report.details = {"max_rel_err": float(worst), "rtol": rtol}
    return report


def suite_cns_asymptotics(seed: int, scales=(1e2, 1e3, 1e4), trials: int = 20,
                          slope_window=(-1.2, -0.8)) -> SuiteReport:
    """Eigenvalue deviations of bordered matrices shrink like ``1/a``.

    For each trial draws ``|d_i| <= 2`` and off-diagonal entries bounded by
    1, so every default scale satisfies the size precondition, measures the
    largest deviation at every scale ``a`` and fits the log-log slope.
    """
    rng = np.random.default_rng(seed)
    report = SuiteReport("cns_asymptotics", trials, seed=seed)
    slopes = []
    for i in range(trials):
        k = int(rng.integers(1, 4))
        d = rng.uniform(-2.0, 2.0, k)
        b = rng.uniform(-1.0, 1.0, k)
        devs = []
        for a in scales:
            res = spectral.cns_asymptotics_check(d, b, a, bound=1.0)
            devs.append(res.max_deviation)
            if not res.within_bound:
                report.record({"trial": i, "d": d.tolist(), "a_offdiag": b.tolist(), "a": res.a,
                               "deviation": res.max_deviation, "bound": res.K / res.a})
        slope = float(np.polyfit(np.log(scales), np.log(devs), 1)[0])
        slopes.append(slope)
        if not slope_window[0] <= slope <= slope_window[1]:
            report.record({"trial": i, "d": d.tolist(), "a_offdiag": b.tolist(), "slope": slope})
    report.details = {"slopes": slopes, "slope_window": list(slope_window)}
    report.worst_margin = float(min(min(s - slope_window[0], slope_window[1] - s) for s in slopes))
    return report


def _random_direction(n, complex_, rng):
    V = rng.standard_normal((n, n))
    if complex_:
        V = V + 1j * rng.standard_normal((n, n))
        V = V + V.conj().T
    else:
        V = V + V.T
    return V


def suite_linearization(count_real: int, count_complex: int, seed: int,
                        rtol: float = 1e-6, eps: float = 1e-5) -> SuiteReport:
    """Directional central differences of the phase against ``trace(linearization @ V)``."""
    rng = np.random.default_rng(seed)
    report = SuiteReport("linearization_gradient", count_real + count_complex, seed=seed)
    worst = 0.0
    cases = [(False, int(rng.integers(2, 5))) for _ in range(count_real)]
    cases += [(True, int(rng.integers(1, 3))) for _ in range(count_complex)]
    for i, (cplx, n) in enumerate(cases):
        M = _random_direction(n, cplx, rng) * 0.5
        V = _random_direction(n, cplx, rng)
        V = V / np.abs(V).max()
        exact = float(np.trace(spectral.linearization(M) @ V).real)
        fd = (spectral.operator_value(M + eps * V) - spectral.operator_value(M - eps * V)) / (2 * eps)
        err = float(abs(fd - exact) / max(abs(exact), 1e-300))
        worst = max(worst, err)
        if err > rtol:
            report.record({"index": i, "complex": cplx, "matrix": _jsonable(M),
                           "direction": _jsonable(V), "exact": exact, "fd": float(fd), "rel_err": err})
    report.details = {"max_rel_err": float(worst), "rtol": rtol, "eps": eps}
    report.worst_margin = rtol - worst
    return report


def _jsonable(M):
    M = np.asarray(M)
    if np.iscomplexobj(M):
        return {"re": M.real.tolist(), "im": M.imag.tolist()}
    return M.tolist()


def _node(idx, shape):
    return tuple(int(i) + 1 for i in np.unravel_index(idx, shape, order="F"))


def suite_solution(spec: ProblemSpec, u: GridField, cfg: NewtonConfig | None = None) -> SuiteReport:
    """Post-solve checks on a converged field.

    (a) F-residual within the tolerance implied by ``cfg``; (b) comparison
    ``ubar <= u <= w`` with ``w`` the discrete harmonic extension of the
    boundary data; (c) cone membership with margin ``cone_slack * delta``
    and the cone facts at every interior node; (d) exact boundary data.
    Statistics of the subsolution gap are attached without assertion.
    """
    cfg = cfg or NewtonConfig()
    band = spec.band
    A = phase_core.choose_A(band)
    dom = spec.domain
    inner = (slice(1, -1),) * dom.dim
    ishape = dom.interior_shape
    report = SuiteReport("solution", int(np.prod(ishape)))
    slacks = {}

    M = grid.discrete_hessians(spec.setting, u.values, dom)
    lam = spectral.eigvals_batch(M)
    F = phase_core.phase_sum(lam)
    h = spec.h.values[inner]
    f_tol = -math.log1p(-cfg.residual_tol) / A * (1 + 1e-6)
    resid = np.abs(F - h)
    flat = resid.ravel(order="F")
    for i in np.argsort(-flat, kind="stable"):
        if flat[i] <= f_tol:
            break
        report.record({"check": "residual", "node": _node(i, ishape), "observed": float(flat[i]), "bound": f_tol})
    slacks["residual"] = f_tol - float(resid.max())

    w = laplace_solve(dom, spec.phi)
    lo = (u.values - spec.usub.values).ravel(order="F")
    hi = (w.values - u.values).ravel(order="F")
    for name, gap in (("comparison_lower", lo), ("comparison_upper", hi)):
        for i in np.flatnonzero(gap < -COMPARISON_TOL):
            node = tuple(int(j) for j in np.unravel_index(i, dom.shape, order="F"))
            report.record({"check": name, "node": node, "observed": float(gap[i]), "bound": -COMPARISON_TOL})
        slacks[name] = float(gap.min()) + COMPARISON_TOL

    margin_delta = cfg.cone_slack * spec.delta
    floor = (band.n - 2) * math.pi / 2 + margin_delta
    flat_lam = np.moveaxis(lam, -1, 0).reshape(band.n, -1, order="F").T
    facts = phase_core.cone_facts(flat_lam, margin_delta)
    Fflat = F.ravel(order="F")
    ok = Fflat >= floor
    for holds, _ in facts.values():
        ok &= holds
    for i in np.flatnonzero(~ok):
        report.record({"check": "cone", "node": _node(i, ishape), "spectrum": flat_lam[i].tolist(),
                       "phase": float(Fflat[i]), "bound": floor})
    slacks["cone"] = float((Fflat - floor).min())

    mask = dom.boundary_mask()
    if not np.array_equal(u.values[mask], spec.phi.values[mask]):
        bad = np.flatnonzero((mask & (u.values != spec.phi.values)).ravel(order="F"))
        node = tuple(int(j) for j in np.unravel_index(bad[0], dom.shape, order="F"))
        report.record({"check": "boundary", "node": node})
        slacks["boundary"] = -1.0
    else:
        slacks["boundary"] = 0.0

    gap = subsolution_gap(spec, u).values[inner]
    report.details = {
        "slacks": slacks,
        "residual_sup_F": float(resid.max()),
        "residual_bound_F": f_tol,
        "subsolution_gap": {"min": float(gap.min()), "max": float(gap.max()), "mean": float(gap.mean())},
    }
    report.worst_margin = min(slacks.values())
    return report


def run_lemma_suites(seed: int, cone_count: int = 10_000, concavity_count: int = 10_000,
                     schur_count: int = 10_000) -> list[dict]:
    """Every lemma suite at its default grid of parameters, serialized."""
    out = []
    deltas = (0.2, 0.5, 1.0)
    for n in (2, 3, 4):
        for delta in deltas:
            out.append(suite_cone_facts(PhaseBand(n, delta), cone_count, seed).to_dict())
    for n in (2, 3, 4):
        for delta in deltas:
            out.append(certificate_to_dict(suite_concavity(PhaseBand(n, delta), concavity_count, seed)))
    control = suite_concavity(PhaseBand(3, 0.05), concavity_count, seed, A=1.0)
    ctrl = certificate_to_dict(control)
    ctrl["name"] = "concavity_negative_control"
    ctrl["expected_failures"] = True
    out.append(ctrl)
    for n in (3, 4):
        out.append(suite_schur_horn(n, PhaseBand(n, 0.2), schur_count, seed).to_dict())
    out.append(suite_det_identity(1000, seed).to_dict())
    out.append(suite_cns_asymptotics(seed).to_dict())
    out.append(suite_linearization(100, 100, seed).to_dict())
    return out
