"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's own numerics: subset
enumeration, cofactor expansion, inertia-counting bisection and
extended-precision arithmetic.
"""

import itertools
import math

import numpy as np
import pytest

from lagphase.grid import BoxDomain, GridField, ProblemSpec, Setting


def subset_sigma(values, k):
    """Elementary symmetric polynomial by enumerating k-subsets."""
    if k == 0:
        return 1.0
    return float(sum(math.prod(c) for c in itertools.combinations(values, k)))


def cofactor_det(M):
    """Determinant by Laplace expansion along the first row."""
    M = [list(r) for r in M]
    n = len(M)
    if n == 1:
        return M[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1 :] for row in M[1:]]
        total += (-1) ** j * M[0][j] * cofactor_det(minor)
    return total


def _negative_count(M, sigma):
    """Number of eigenvalues of Hermitian M below sigma, from LDL* pivots (Sylvester inertia)."""
    A = np.array(M, dtype=complex) - sigma * np.eye(len(M))
    n = len(A)
    neg = 0
    for k in range(n):
        piv = A[k, k].real
        if piv == 0.0:
            piv = -1e-300
        if piv < 0:
            neg += 1
        if k + 1 < n:
            col = A[k + 1 :, k].copy()
            A[k + 1 :, k + 1 :] -= np.outer(col, col.conj()) / piv
    return neg


def bisection_eigenvalues(M, tol=1e-13):
    """All eigenvalues of a small Hermitian matrix, descending, by inertia bisection."""
    M = np.asarray(M)
    n = len(M)
    radius = float(np.abs(M).sum(axis=1).max()) + 1.0
    out = []
    for j in range(n):
        # j-th smallest eigenvalue: smallest x with negative_count(x) > j
        lo, hi = -radius, radius
        while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
            mid = 0.5 * (lo + hi)
            if _negative_count(M, mid) > j:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out[::-1])


def random_symmetric(rng, n, scale=1.0):
    X = rng.standard_normal((n, n)) * scale
    return X + X.T


def random_hermitian(rng, n, scale=1.0):
    X = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * scale
    return X + X.conj().T


def quadratic_spec(setting, res, lo=0.0, hi=1.0, K=1.0, h=None, delta=0.5):
    """Spec with phi = usub = K|x|^2/2; h defaults to the phase of that quadratic."""
    dom = BoxDomain.cube(setting.dim, lo, hi, res)
    X = dom.coordinates()
    q = 0.5 * K * sum(x * x for x in X)
    if h is None:
        lam = K if setting.kind == "real" else K / 2
        h = setting.n * math.atan(lam)
    hf = GridField(dom, np.full(dom.shape, float(h)))
    return ProblemSpec(dom, setting, hf, GridField(dom, q), GridField(dom, q), delta)


def manufactured_spec(res, delta=1.0):
    """Real n=2 on [0, pi]^2 with exact solution 0.75|x|^2 + 0.05 sin x1 sin x2.

    The subsolution flips the sign of the trigonometric term; both agree on
    the faces, where the boundary data is taken from the subsolution.
    Returns ``(spec, exact)`` where ``exact`` is the analytic solution on the grid.
    """
    from lagphase import spectral

    dom = BoxDomain.cube(2, 0.0, math.pi, res)
    x1, x2 = dom.coordinates()
    base = 0.75 * (x1**2 + x2**2)
    bump = 0.05 * np.sin(x1) * np.sin(x2)
    usub = base - bump
    exact = base + bump
    hess = np.empty(dom.shape + (2, 2))
    hess[..., 0, 0] = 1.5 - bump
    hess[..., 1, 1] = 1.5 - bump
    hess[..., 0, 1] = hess[..., 1, 0] = 0.05 * np.cos(x1) * np.cos(x2)
    h = spectral.operator_value(hess)
    sub = GridField(dom, usub)
    spec = ProblemSpec(dom, Setting("real", 2), GridField(dom, h), sub, sub, delta)
    return spec, exact


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
