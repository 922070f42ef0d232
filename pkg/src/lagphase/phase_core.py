"""Scalar functions of eigenvalue vectors.

Everything here acts on the spectrum of a Hessian: the phase sum
``f(lam) = sum(arctan(lam))``, its concave transform ``g = -exp(-A f)``,
the supercritical cone and its structural facts, and the matrix ``H``
whose positive semidefiniteness is equivalent to concavity of ``g``.

Functions accept either a :class:`Spectrum` or a plain array whose last
axis holds eigenvalues, so suites can evaluate whole batches at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConeFactViolation,
    DimensionMismatch,
    PreconditionError,
    SamplingBudgetExhausted,
)

MAX_DIM = 4
# roundoff slack used by the structural cone checks
_FACT_RTOL = 1e-12
_REJECTION_BUDGET = 10**6
_SAMPLE_BATCH = 4096


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted in descending order."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not 1 <= len(vals) <= MAX_DIM:
            raise PreconditionError(f"spectrum length {len(vals)} outside 1..{MAX_DIM}")
        if not all(math.isfinite(v) for v in vals):
            raise PreconditionError("spectrum entries must be finite")
        if any(vals[i] < vals[i + 1] for i in range(len(vals) - 1)):
            raise PreconditionError("spectrum must be sorted in descending order")
        object.__setattr__(self, "values", vals)

    @classmethod
    def of(cls, values) -> "Spectrum":
        """Build a spectrum from eigenvalues in any order."""
        return cls(tuple(sorted((float(v) for v in values), reverse=True)))

    @property
    def n(self) -> int:
        return len(self.values)

    def scaled(self, t: float) -> "Spectrum":
        if t <= 0:
            raise PreconditionError("scale must be positive")
        return Spectrum(tuple(t * v for v in self.values))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class PhaseBand:
    """The supercritical band ``[(n-2)pi/2 + delta, n pi/2)``."""

    n: int
    delta: float

    def __post_init__(self):
        if not 1 <= self.n <= MAX_DIM:
            raise PreconditionError(f"dimension {self.n} outside 1..{MAX_DIM}")
        if not 0.0 < self.delta < math.pi:
            raise PreconditionError(f"delta must lie in (0, pi), got {self.delta!r}")

    @property
    def lower(self) -> float:
        return (self.n - 2) * math.pi / 2 + self.delta

    @property
    def upper(self) -> float:
        return self.n * math.pi / 2


@dataclass
class ConcavityCertificate:
    A: float
    band: PhaseBand
    samples: int
    min_H_eigenvalue: float
    witness: Spectrum | None
    seed: int | None = None
    tolerance: float = 1e-9
    failures: list = field(default_factory=list)
    segment_checks: int = 0
    segment_failures: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise PreconditionError("certificate needs at least one sample")
        if self.witness is None:
            raise PreconditionError("certificate with samples must carry a witness")

    @property
    def passed(self) -> bool:
        return not self.failures and self.segment_failures == 0


def _values(s) -> np.ndarray:
    return np.asarray(s, dtype=float)


def _sorted_desc(lam: np.ndarray) -> np.ndarray:
    return -np.sort(-lam, axis=-1)


def phase_sum(s):
    """Sum of ``arctan`` over the eigenvalues (last axis)."""
    return np.arctan(_values(s)).sum(axis=-1)[()]


def elementary_symmetric(values, k: int):
    """k-th elementary symmetric polynomial of the entries on the last axis.

    ``sigma_0 = 1`` and ``sigma_k = 0`` for ``k > n``.
    """
    if k < 0:
        raise PreconditionError("k must be non-negative")
    lam = _values(values)
    n = lam.shape[-1]
    if k > n:
        return np.zeros(lam.shape[:-1])[()]
    # e[j] holds sigma_j of the entries consumed so far
    e = [np.ones(lam.shape[:-1])] + [np.zeros(lam.shape[:-1]) for _ in range(k)]
    for i in range(n):
        x = lam[..., i]
        for j in range(min(i + 1, k), 0, -1):
            e[j] = e[j] + x * e[j - 1]
    return e[k][()]


def concavity_det(A: float, s):
    """Closed form of ``det(A * ones + 2 * diag(lam))``."""
    if A <= 0:
        raise PreconditionError("A must be positive")
    lam = _values(s)
    n = lam.shape[-1]
    return (A * 2.0 ** (n - 1) * elementary_symmetric(lam, n - 1)
            + 2.0**n * elementary_symmetric(lam, n))


def h_matrix(A: float, s) -> np.ndarray:
    """Concavity matrix ``H_ij = (A + 2 lam_i delta_ij) / ((1+lam_i^2)(1+lam_j^2))``.

    ``-Hess g = A exp(-A f) H``, so ``g`` is concave exactly where ``H`` is
    positive semidefinite.
    """
    if A <= 0:
        raise PreconditionError("A must be positive")
    lam = _values(s)
    d = 1.0 / (1.0 + lam * lam)
    outer = d[..., :, None] * d[..., None, :]
    H = A * outer
    n = lam.shape[-1]
    idx = np.arange(n)
    H[..., idx, idx] += 2.0 * lam * d * d
    return H


def choose_A(band: PhaseBand) -> float:
    # the sharp requirement is A > 2 / tan(delta) when lam_n < 0
    t = math.tan(band.delta)
    if t <= 0:
        return 1.0
    return max(1.0, 3.0 / t)


def g_value(A: float, s):
    if A <= 0:
        raise PreconditionError("A must be positive")
    return -np.exp(-A * phase_sum(s))


def g_gradient(A: float, s) -> np.ndarray:
    if A <= 0:
        raise PreconditionError("A must be positive")
    lam = _values(s)
    scale = A * np.exp(-A * phase_sum(lam))
    return np.asarray(scale)[..., None] / (1.0 + lam * lam)


@dataclass(frozen=True)
class ConeVerdict:
    """Membership verdict plus the structural facts it implies.

    ``facts`` maps a short label to ``(holds, slack)``; see :func:`cone_facts`.
    """

    inside: bool
    phase: float
    threshold: float
    facts: dict

    @property
    def facts_hold(self) -> bool:
        return all(ok for ok, _ in self.facts.values())

    @property
    def margin(self) -> float:
        return self.phase - self.threshold


FACT_NAMES = (
    "second_smallest_positive",
    "smallest_dominated",
    "trace_nonnegative",
    "smallest_lower_bound",
    "reciprocal_sum_bound",
)


def cone_facts(lam, delta: float) -> dict:
    """Evaluate the five cone facts on a batch of descending spectra.

    Returns a dict ``name -> (bool array, slack array)`` where a positive
    slack means the fact holds with room to spare:

    * ``second_smallest_positive``: ``lam_{n-1}``
    * ``smallest_dominated``: ``lam_{n-1} - |lam_n|``
    * ``trace_nonnegative``: ``sum(lam)``
    * ``smallest_lower_bound``: ``lam_n + cot(delta)``
    * ``reciprocal_sum_bound``: ``-tan(delta) - sum(1/lam)`` when ``lam_n < 0``

    Facts that need two or more eigenvalues are vacuous for ``n = 1``,
    and the reciprocal bound is vacuous (slack NaN) when ``lam_n >= 0``.
    """
    lam = _values(lam)
    if lam.ndim == 1:
        lam = lam[None, :]
    n = lam.shape[-1]
    last = lam[:, -1]
    ones = np.ones(lam.shape[0], dtype=bool)
    nan = np.full(lam.shape[0], np.nan)
    cot = math.cos(delta) / math.sin(delta)
    tan = math.tan(delta)

    if n >= 2:
        second = lam[:, -2]
        f1 = (second > 0, second)
        f2 = (np.abs(last) <= second * (1 + _FACT_RTOL), second - np.abs(last))
        trace = lam.sum(axis=1)
        f3 = (trace >= -_FACT_RTOL * np.abs(lam).sum(axis=1), trace)
    else:
        f1 = (ones, nan)
        f2 = (ones, nan)
        f3 = (ones, nan)

    f4 = (last >= -cot - _FACT_RTOL * (1 + abs(cot)), last + cot)

    neg = last < 0
    with np.errstate(divide="ignore"):
        recip = np.where(neg[:, None], 1.0 / np.where(neg[:, None], lam, 1.0), 0.0)
    rsum = recip.sum(axis=1)
    slack = _FACT_RTOL * (np.abs(recip).sum(axis=1) + abs(tan))
    f5 = (~neg | (rsum <= -tan + slack), np.where(neg, -tan - rsum, np.nan))
    return dict(zip(FACT_NAMES, (f1, f2, f3, f4, f5)))


def cone_membership(s: Spectrum, band: PhaseBand) -> ConeVerdict:
    """Test ``phase_sum(s) >= (n-2)pi/2 + delta`` and check the cone facts.

    Raises
    ------
    DimensionMismatch
        If the spectrum and band dimensions differ.
    ConeFactViolation
        If ``s`` is inside the cone but a structural fact fails.
    """
    if s.n != band.n:
        raise DimensionMismatch(f"spectrum has n={s.n}, band has n={band.n}")
    phase = float(phase_sum(s))
    inside = phase >= band.lower
    facts = {}
    for name, (ok, obs) in cone_facts(s, band.delta).items():
        facts[name] = (bool(ok[0]), float(obs[0]))
    verdict = ConeVerdict(inside, phase, band.lower, facts)
    if inside and not verdict.facts_hold:
        bad = [k for k, (ok, _) in facts.items() if not ok]
        raise ConeFactViolation(f"cone facts {bad} fail for {s.values} at delta={band.delta}")
    return verdict


def sample_cone_array(band: PhaseBand, count: int, seed: int):
    """Rejection-sample supercritical spectra in angle space.

    Angles are drawn uniformly from the open box
    ``(-pi/2 + eps, pi/2 - eps)^n``; draws whose recomputed phase
    ``sum(arctan(tan(theta)))`` falls below the band are rejected.

    Returns
    -------
    spectra : ndarray, shape (count, n)
        Accepted spectra, each row descending.
    draws : int
        Total number of angle vectors drawn.
    """
    if count < 1:
        raise PreconditionError("count must be at least 1")
    eps = np.finfo(float).eps
    lo, hi = -np.pi / 2 + eps, np.pi / 2 - eps
    rng = np.random.default_rng(seed)
    chunks = []
    have = 0
    draws = 0
    consecutive = 0
    while have < count:
        theta = rng.uniform(lo, hi, size=(_SAMPLE_BATCH, band.n))
        lam = np.tan(theta)
        ok = np.arctan(lam).sum(axis=1) >= band.lower
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            consecutive += _SAMPLE_BATCH
            draws += _SAMPLE_BATCH
            if consecutive >= _REJECTION_BUDGET:
                raise SamplingBudgetExhausted(
                    f"{consecutive} consecutive rejections at n={band.n}, "
                    f"delta={band.delta}; delta is too close to pi"
                )
            continue
        if consecutive + int(hits[0]) >= _REJECTION_BUDGET:
            raise SamplingBudgetExhausted(
                f"{_REJECTION_BUDGET} consecutive rejections at n={band.n}, "
                f"delta={band.delta}; delta is too close to pi"
            )
        take = hits[: count - have]
        chunks.append(lam[take])
        have += take.size
        if have == count:
            draws += int(take[-1]) + 1
        else:
            draws += _SAMPLE_BATCH
            consecutive = _SAMPLE_BATCH - 1 - int(hits[-1])
    return _sorted_desc(np.concatenate(chunks)), draws


def sample_cone(band: PhaseBand, count: int, seed: int) -> list[Spectrum]:
    lam, _ = sample_cone_array(band, count, seed)
    return [Spectrum(tuple(row)) for row in lam]


def scaling_counterexample(s: Spectrum, A: float, max_power: int = 60):
    """Smallest ``t`` in ``1, 2, 4, ..., 2**max_power`` with ``concavity_det(A, t*s) < 0``.

    For a spectrum with ``lam_{n-1} > 0 > lam_n`` the determinant equals
    ``2^{n-1} t^n sigma_n (A sum(1/lam)/t + 2)``, which turns negative once
    ``t`` exceeds ``-A sum(1/lam) / 2``.  Returns ``None`` if the budget
    runs out.
    """
    if s.n < 2 or not (s.values[-2] > 0 > s.values[-1]):
        raise PreconditionError(
            "scaling counterexample needs lam_{n-1} > 0 > lam_n, got " f"{s.values}"
        )
    if A <= 0:
        raise PreconditionError("A must be positive")
    lam = np.asarray(s.values)
    for p in range(max_power + 1):
        t = 2.0**p
        if concavity_det(A, t * lam) < 0:
            return t
    return None

