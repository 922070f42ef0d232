"""Small dense symmetric / Hermitian eigenproblems and the phase operator on matrices.

All routines accept a single matrix wrapper (:class:`SymMatrix`,
:class:`HermMatrix`) or a stacked ndarray of shape ``(..., n, n)``; the
batched form is what the grid code uses to treat every node at once.

Eigenvalues come from closed forms for ``n <= 2`` and from a cyclic
Jacobi iteration for real ``n = 3, 4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import phase_core
from .errors import ConeFactViolation, DimensionMismatch, EigenConvergenceError, PreconditionError
from .phase_core import PhaseBand, Spectrum

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 50


@dataclass(frozen=True)
class SymMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or not 1 <= a.shape[0] <= 4:
            raise PreconditionError(f"expected a square matrix of size 1..4, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise PreconditionError("matrix entries must be finite")
        if not np.array_equal(a, a.T):
            raise PreconditionError("matrix is not exactly symmetric")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def symmetrized(cls, a) -> "SymMatrix":
        a = np.asarray(a, dtype=float)
        return cls(0.5 * (a + a.T))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class HermMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or not 1 <= a.shape[0] <= 2:
            raise PreconditionError(f"expected a square matrix of size 1..2, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise PreconditionError("matrix entries must be finite")
        if not np.array_equal(a, a.conj().T):
            raise PreconditionError("matrix is not exactly Hermitian")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def hermitized(cls, a) -> "HermMatrix":
        a = np.asarray(a, dtype=complex)
        h = 0.5 * (a + a.conj().T)
        h[np.diag_indices_from(h)] = h.diagonal().real
        return cls(h)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class EigenPair:
    """Descending spectrum and a column frame with ``M = Q diag(spectrum) Q*``."""

    spectrum: Spectrum
    frame: np.ndarray


def _as_stack(M) -> np.ndarray:
    a = np.asarray(M)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise PreconditionError(f"expected (..., n, n) matrices, got shape {a.shape}")
    if np.iscomplexobj(a):
        return a.astype(complex, copy=False)
    return a.astype(float, copy=False)


def _eig2_real(a, b, c):
    mean = 0.5 * (a + c)
    r = np.hypot(0.5 * (a - c), b)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    cs, sn = np.cos(theta), np.sin(theta)
    vals = np.stack([mean + r, mean - r], axis=-1)
    # columns: (cos, sin) for the larger eigenvalue, (-sin, cos) for the smaller
    vecs = np.stack([np.stack([cs, -sn], axis=-1), np.stack([sn, cs], axis=-1)], axis=-2)
    return vals, vecs


def _eig2_herm(M):
    a = M[..., 0, 0].real
    c = M[..., 1, 1].real
    z = M[..., 0, 1]
    mod = np.abs(z)
    vals, q = _eig2_real(a, mod, c)
    safe = np.where(mod > 0, mod, 1.0)
    phase = np.where(mod > 0, np.conj(z) / safe, 1.0)
    frame = q.astype(complex)
    frame[..., 1, :] *= phase[..., None]
    return vals, frame


def _jacobi(M):
    A = np.array(M, dtype=float)
    batch, n = A.shape[:-2], A.shape[-1]
    A = A.reshape((-1, n, n))
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    scale = np.abs(A).max(axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    iu = np.triu_indices(n, 1)
    for sweep in range(JACOBI_MAX_SWEEPS + 1):
        off = np.abs(A[:, iu[0], iu[1]]).max(axis=1) / scale
        if np.all(off <= JACOBI_TOL):
            break
        if sweep == JACOBI_MAX_SWEEPS:
            raise EigenConvergenceError(sweep, float(off.max()))
        for p, q in pairs:
            apq = A[:, p, q]
            active = np.abs(apq) > JACOBI_TOL * scale
            if not active.any():
                continue
            safe_apq = np.where(active, apq, 1.0)
            theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe_apq)
            big = np.abs(theta) > 1e150
            root = np.sqrt(np.where(big, 1.0, theta * theta) + 1.0)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + root))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            J = np.broadcast_to(np.eye(n), A.shape).copy()
            J[:, p, p] = c
            J[:, q, q] = c
            J[:, p, q] = s
            J[:, q, p] = -s
            A = np.swapaxes(J, 1, 2) @ A @ J
            A = 0.5 * (A + np.swapaxes(A, 1, 2))
            A[active, p, q] = 0.0
            A[active, q, p] = 0.0
            V = V @ J
    vals = np.diagonal(A, axis1=1, axis2=2)
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return vals.reshape(batch + (n,)), V.reshape(batch + (n, n))


def eigh_batch(M):
    """Eigenvalues (descending) and frames of a stack of symmetric/Hermitian matrices."""
    a = _as_stack(M)
    n = a.shape[-1]
    if n == 1:
        vals = a[..., 0, 0].real[..., None].copy()
        frame = np.ones(a.shape, dtype=a.dtype)
        return vals, frame
    if np.iscomplexobj(a):
        if n != 2:
            raise PreconditionError("Hermitian eigensolver supports n <= 2 only")
        return _eig2_herm(a)
    if n == 2:
        return _eig2_real(a[..., 0, 0], a[..., 0, 1], a[..., 1, 1])
    return _jacobi(a)


def eigvals_batch(M) -> np.ndarray:
    return eigh_batch(M)[0]


def eigen_decompose(M) -> EigenPair:
    if not isinstance(M, (SymMatrix, HermMatrix)):
        raise PreconditionError("eigen_decompose expects a SymMatrix or HermMatrix")
    vals, frame = eigh_batch(M.entries)
    return EigenPair(Spectrum(tuple(vals)), frame)


def _recompose(frame, weights):
    # Q diag(w) Q*; hermitize so the result is exactly symmetric/Hermitian
    out = (frame * weights[..., None, :]) @ np.conj(np.swapaxes(frame, -1, -2))
    out = 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))
    if np.iscomplexobj(out):
        idx = np.arange(out.shape[-1])
        out[..., idx, idx] = out[..., idx, idx].real
    return out


def _band_for(M, band: PhaseBand):
    if np.asarray(M).shape[-1] != band.n:
        raise DimensionMismatch(f"matrix size {np.asarray(M).shape[-1]} != band dimension {band.n}")


def operator_value(M):
    """Phase ``sum(arctan(eigenvalues))`` of one matrix or a stack."""
    return phase_core.phase_sum(eigvals_batch(np.asarray(M)))


def linearization(M) -> np.ndarray:
    """Derivative of the phase with respect to the matrix entries.

    Returns ``Q diag(1/(1+lam^2)) Q*``; ``trace(L @ V)`` is the directional
    derivative along a symmetric/Hermitian direction ``V``.
    """
    vals, frame = eigh_batch(np.asarray(M))
    return _recompose(frame, 1.0 / (1.0 + vals * vals))


def g_linearization(A: float, M) -> np.ndarray:
    if A <= 0:
        raise PreconditionError("A must be positive")
    vals, frame = eigh_batch(np.asarray(M))
    F = phase_core.phase_sum(vals)
    scale = A * np.exp(-A * np.asarray(F))
    return scale[..., None, None] * _recompose(frame, 1.0 / (1.0 + vals * vals))


def value_and_linearization(M, A: float | None = None):
    """Phase values and linearizations from a single eigensolve.

    With ``A`` given, also returns ``G = -exp(-A F)`` and ``G^{ij}``.
    """
    vals, frame = eigh_batch(np.asarray(M))
    F = phase_core.phase_sum(vals)
    L = _recompose(frame, 1.0 / (1.0 + vals * vals))
    if A is None:
        return F, L
    e = np.exp(-A * np.asarray(F))
    return F, L, -e, (A * e)[..., None, None] * L


@dataclass(frozen=True)
class CompressionResult:
    block_phase: float
    full_minus_corner: float
    band_bound: float

    @property
    def slack_full(self) -> float:
        return self.block_phase - self.full_minus_corner

    @property
    def slack_band(self) -> float:
        return self.block_phase - self.band_bound


def compression_sides(M, band: PhaseBand):
    """Both sides of the principal-block phase inequalities for a stack.

    Returns ``(block_phase, full_minus_corner, band_bound)`` arrays.
    """
    a = _as_stack(M)
    n = a.shape[-1]
    if n < 2:
        raise PreconditionError("compression needs n >= 2")
    block = phase_core.phase_sum(eigvals_batch(a[..., : n - 1, : n - 1]))
    full = operator_value(a)
    corner = np.arctan(a[..., n - 1, n - 1].real)
    band_bound = (n - 3) * math.pi / 2 + band.delta
    return block, full - corner, np.full(np.shape(full), band_bound)[()]


def compression_check(M, band: PhaseBand, tol: float = 1e-12) -> CompressionResult:
    """Check the phase of the leading ``(n-1)`` block against the full phase.

    For a supercritical ``M`` the block phase is at least
    ``F(M) - arctan(M_nn)``, hence at least ``(n-3)pi/2 + delta``.

    Raises
    ------
    PreconditionError
        If ``M`` is not supercritical for ``band``.
    ConeFactViolation
        If either inequality fails by more than ``tol``.
    """
    _band_for(M, band)
    if operator_value(M) < band.lower:
        raise PreconditionError("matrix phase is below the supercritical band")
    block, rhs, bound = compression_sides(np.asarray(M), band)
    res = CompressionResult(float(block), float(rhs), float(bound))
    if res.slack_full < -tol or res.slack_band < -tol:
        raise ConeFactViolation(
            f"block phase {res.block_phase!r} violates bounds {res.full_minus_corner!r}, {res.band_bound!r}"
        )
    return res


def bordered_matrix(d, a_offdiag, a) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    b = np.asarray(a_offdiag, dtype=float)
    k = d.size
    M = np.zeros((k + 1, k + 1))
    M[np.arange(k), np.arange(k)] = d
    M[:k, k] = b
    M[k, :k] = b
    M[k, k] = a
    return M


@dataclass(frozen=True)
class CNSDeviation:
    tangential: float
    normal: float
    K: float
    a: float

    @property
    def max_deviation(self) -> float:
        return max(self.tangential, self.normal)

    @property
    def within_bound(self) -> bool:
        return self.max_deviation <= self.K / self.a


def cns_asymptotics_check(d, a_offdiag, a: float, bound: float | None = None) -> CNSDeviation:
    """Eigenvalue deviations of the bordered matrix ``[[diag(d), b], [b^T, a]]``.

    ``tangential`` is the largest gap between the lower eigenvalues and
    ``d`` (matched in sorted order); ``normal`` is ``|lam_top / a - 1|``.
    ``bound`` is the a-priori bound on ``|b_i|`` (defaults to ``max|b|``).
    """
    d = np.asarray(d, dtype=float)
    b = np.asarray(a_offdiag, dtype=float)
    if d.shape != b.shape or d.ndim != 1 or not 1 <= d.size <= 3:
        raise PreconditionError("d and a_offdiag must be 1-d of equal length 1..3")
    C = float(np.abs(b).max()) if bound is None else float(bound)
    if np.any(np.abs(b) > C):
        raise PreconditionError("off-diagonal entry exceeds its bound")
    scale = 1.0 + float(np.abs(d).max()) + C
    if a < 10.0 * scale:
        raise PreconditionError(f"a={a} must be at least {10.0 * scale}")
    vals = eigvals_batch(bordered_matrix(d, b, a))
    lower = vals[1:]
    tangential = float(np.abs(lower - np.sort(d)[::-1]).max())
    normal = abs(vals[0] / a - 1.0)
    return CNSDeviation(tangential, normal, 10.0 * scale**2, float(a))


def linearized_product_bound(M, tol: float = 1e-12) -> float:
    """Spectral radius of ``linearization(M) @ M``; at most 1/2 since ``|x/(1+x^2)| <= 1/2``."""
    a = np.asarray(M)
    P = linearization(a) @ a
    P = 0.5 * (P + np.conj(P.T))
    radius = float(np.abs(eigvals_batch(P)).max())
    if radius > 0.5 + tol:
        raise ConeFactViolation(f"linearized product radius {radius} exceeds 1/2")
    return radius
