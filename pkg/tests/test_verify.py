import json
import math

import numpy as np
import pytest

from conftest import manufactured_spec, quadratic_spec
from lagphase import phase_core, solver, spectral, verify
from lagphase.grid import GridField, Setting
from lagphase.phase_core import PhaseBand


# -- cone facts ------------------------------------------------------------------


@pytest.mark.parametrize("n,delta", [(2, 0.3), (3, 1.0)])
def test_cone_suite_passes(n, delta):
    rep = verify.suite_cone_facts(PhaseBand(n, delta), 10_000, seed=1)
    assert rep.passed and rep.cases == 10_000 and rep.seed == 1
    assert rep.worst_margin >= 0


def test_cone_suite_records_corrupted_sample():
    band = PhaseBand(2, 0.3)
    lam, _ = phase_core.sample_cone_array(band, 100, seed=2)
    lam[17, -1] = -2 / math.tan(band.delta)
    lam[17] = np.sort(lam[17])[::-1]
    rep = verify.suite_cone_facts(band, 100, seed=2, spectra=lam)
    assert not rep.passed
    assert rep.failure_count == 1
    f = rep.failures[0]
    assert f["index"] == 17
    # reproducer: the recorded spectrum fails again on its own
    again = verify.suite_cone_facts(band, 1, seed=2, spectra=[f["spectrum"]])
    assert not again.passed


def test_suites_deterministic_and_serializable():
    a = verify.suite_cone_facts(PhaseBand(3, 0.5), 2000, seed=9).to_dict()
    b = verify.suite_cone_facts(PhaseBand(3, 0.5), 2000, seed=9).to_dict()
    assert a == b
    json.dumps(a)


# -- concavity ---------------------------------------------------------------------


def test_concavity_certificate_n3():
    cert = verify.suite_concavity(PhaseBand(3, 0.2), 20_000, seed=3)
    assert cert.passed
    assert cert.min_H_eigenvalue > -1e-9
    assert cert.segment_checks > 0 and cert.segment_failures == 0
    assert cert.A == phase_core.choose_A(PhaseBand(3, 0.2))
    # the witness reproduces the reported minimum
    H = phase_core.h_matrix(cert.A, np.array(cert.witness.values))
    assert np.linalg.eigvalsh(H)[0] == pytest.approx(cert.min_H_eigenvalue, abs=1e-12)


def test_concavity_negative_control():
    cert = verify.suite_concavity(PhaseBand(3, 0.05), 20_000, seed=3, A=1.0)
    assert not cert.passed
    assert len(cert.failures) > 0
    f = cert.failures[0]
    H = phase_core.h_matrix(f["A"], np.array(f["spectrum"]))
    assert np.linalg.eigvalsh(H)[0] < f["bound"]
    d = verify.certificate_to_dict(cert)
    assert len(d["failures"]) <= verify.MAX_RECORDED_FAILURES
    assert d["failure_count"] == len(cert.failures)


def test_concavity_positive_definite_when_spectrum_nonnegative(rng):
    lam = np.sort(rng.uniform(0, 20, (5000, 2)), axis=1)[:, ::-1]
    for delta in (0.2, 1.0, 2.0):
        A = phase_core.choose_A(PhaseBand(2, delta))
        assert np.all(np.linalg.eigvalsh(phase_core.h_matrix(A, lam))[:, 0] > 0)


# -- Schur-Horn ------------------------------------------------------------------------


def test_schur_horn_suite_passes():
    rep = verify.suite_schur_horn(3, PhaseBand(3, 0.2), 10_000, seed=4)
    assert rep.passed and rep.details["below_band"] == 0


def test_schur_horn_diagonal_equality():
    band = PhaseBand(3, 0.4)
    lam, _ = phase_core.sample_cone_array(band, 200, seed=5)
    M = np.stack([np.diag(r) for r in lam])
    rep = verify.suite_schur_horn(3, band, 0, seed=5, matrices=M)
    assert rep.passed
    assert abs(rep.details["min_slack_full"]) <= 1e-12


def test_schur_horn_conjugation_invariance(rng):
    band = PhaseBand(4, 0.3)
    lam, _ = phase_core.sample_cone_array(band, 200, seed=6)
    Q = verify.random_orthogonal(4, 200, rng)
    M = verify.conjugated(lam, Q)
    P = np.eye(4)[[1, 0, 2, 3]]
    Mp = verify.conjugated(lam, Q @ P)
    a = verify.suite_schur_horn(4, band, 0, seed=6, matrices=M)
    b = verify.suite_schur_horn(4, band, 0, seed=6, matrices=Mp)
    assert a.passed == b.passed
    np.testing.assert_allclose(spectral.operator_value(M), spectral.operator_value(Mp), atol=1e-12)


def test_schur_horn_records_violation():
    band = PhaseBand(3, 0.2)
    # block phase too small relative to the band: a matrix below the band
    M = np.diag([1.0, -0.9, -0.9])[None]
    rep = verify.suite_schur_horn(3, band, 0, seed=0, matrices=M)
    assert not rep.passed and rep.failures[0]["matrix"] == M[0].tolist()


def test_schur_horn_rejects_bad_dimension():
    with pytest.raises(phase_core.PreconditionError):
        verify.suite_schur_horn(3, PhaseBand(4, 0.2), 10, seed=0)


def test_random_orthogonal(rng):
    Q = verify.random_orthogonal(4, 100, rng)
    np.testing.assert_allclose(Q @ np.swapaxes(Q, 1, 2), np.broadcast_to(np.eye(4), Q.shape), atol=1e-13)


# -- algebraic and asymptotic suites --------------------------------------------------------


def test_det_identity_suite():
    rep = verify.suite_det_identity(1000, seed=7)
    assert rep.passed and rep.details["max_rel_err"] <= 1e-10


def test_cns_suite():
    rep = verify.suite_cns_asymptotics(seed=8)
    assert rep.passed
    assert all(-1.2 <= s <= -0.8 for s in rep.details["slopes"])


def test_linearization_suite():
    rep = verify.suite_linearization(100, 100, seed=9)
    assert rep.passed and rep.cases == 200


# -- solution suite ----------------------------------------------------------------------------


def test_solution_suite_quadratic_exact():
    spec = quadratic_spec(Setting("real", 3), 9, h=3 * math.pi / 4)
    u, _ = solver.continuity_solve(spec)
    rep = verify.suite_solution(spec, u)
    assert rep.passed
    assert rep.details["residual_sup_F"] == 0.0


def test_solution_suite_localizes_perturbation():
    spec = quadratic_spec(Setting("real", 2), 17)
    u, _ = solver.continuity_solve(spec)
    v = u.values.copy()
    v[5, 9] += 1e-3
    rep = verify.suite_solution(spec, GridField(spec.domain, v))
    assert not rep.passed
    first = rep.failures[0]
    assert first["check"] == "residual" and first["node"] == (5, 9)


def test_solution_suite_flags_boundary_change():
    spec = quadratic_spec(Setting("real", 2), 9)
    v = spec.usub.values.copy()
    v[0, 3] += 1.0
    rep = verify.suite_solution(spec, GridField(spec.domain, v))
    assert any(f["check"] == "boundary" and f["node"] == (0, 3) for f in rep.failures)


def test_solution_suite_manufactured_passes():
    spec, _ = manufactured_spec(17)
    u, _ = solver.continuity_solve(spec)
    rep = verify.suite_solution(spec, u)
    assert rep.passed
    gap = rep.details["subsolution_gap"]
    assert all(math.isfinite(gap[k]) for k in ("min", "max", "mean"))


# -- aggregate ---------------------------------------------------------------------------------------


def test_run_lemma_suites_small():
    out = verify.run_lemma_suites(seed=0, cone_count=500, concavity_count=500, schur_count=500)
    control = [r for r in out if r.get("expected_failures")]
    assert len(control) == 1 and not control[0]["passed"]
    assert all(r["passed"] for r in out if not r.get("expected_failures"))
    json.dumps(out)
