"""Box-domain lattices, grid fields and finite-difference Hessians.

Node arrays are stored with shape ``(r,) * dim`` indexed ``[i0, i1, ...]``.
The external (CSV) node order is lexicographic with axis 0 varying
fastest, i.e. Fortran order of that array.

In the complex setting the real coordinates are ordered
``(x1, y1, x2, y2)`` and the complex Hessian is built from the real one
through ``u_{i jbar} = 1/4 [(u_{xi xj} + u_{yi yj}) + i (u_{xi yj} - u_{yi xj})]``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import spectral
from .errors import PreconditionError, ValidationError
from .phase_core import PhaseBand


@dataclass(frozen=True)
class BoxDomain:
    dim: int
    lower: tuple
    upper: tuple
    resolution: int

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if self.dim not in (2, 3, 4):
            raise ValidationError(f"box dimension must be 2, 3 or 4, got {self.dim}")
        if len(lower) != self.dim or len(upper) != self.dim:
            raise ValidationError(f"box corners need {self.dim} coordinates each")
        for k, (lo, hi) in enumerate(zip(lower, upper)):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValidationError(f"box axis {k}: need upper > lower, got [{lo}, {hi}]")
        if not 5 <= int(self.resolution) <= 257:
            raise ValidationError(f"resolution must be in [5, 257], got {self.resolution}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", int(self.resolution))

    @classmethod
    def cube(cls, dim, lo, hi, resolution):
        return cls(dim, (lo,) * dim, (hi,) * dim, resolution)

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.dim

    @property
    def interior_shape(self) -> tuple:
        return (self.resolution - 2,) * self.dim

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (self.resolution - 1) for lo, hi in zip(self.lower, self.upper))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, self.resolution) for lo, hi in zip(self.lower, self.upper)]

    def coordinates(self) -> list[np.ndarray]:
        """Per-axis coordinate arrays of shape ``self.shape``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    def is_interior(self, node) -> bool:
        return len(node) == self.dim and all(0 < i < self.resolution - 1 for i in node)

    def sample(self, func) -> "GridField":
        """Evaluate ``func(*coords)`` on every node."""
        vals = np.broadcast_to(np.asarray(func(*self.coordinates()), dtype=float), self.shape)
        return GridField(self, vals)


@dataclass(frozen=True)
class GridField:
    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.domain.shape:
            raise PreconditionError(f"field shape {v.shape} does not match domain {self.domain.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.domain.boundary_mask()

    def interior(self) -> np.ndarray:
        return self.values[(slice(1, -1),) * self.domain.dim]

    def with_interior(self, inner) -> "GridField":
        v = self.values.copy()
        v[(slice(1, -1),) * self.domain.dim] = inner
        return GridField(self.domain, v)

    def flat(self) -> np.ndarray:
        """Values in lexicographic order (axis 0 fastest)."""
        return self.values.ravel(order="F")


@dataclass(frozen=True)
class Setting:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind == "real" and self.n not in (2, 3):
            raise ValidationError("real setting supports n = 2, 3")
        if self.kind == "complex" and self.n not in (1, 2):
            raise ValidationError("complex setting supports n = 1, 2")
        if self.kind not in ("real", "complex"):
            raise ValidationError(f"unknown setting kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.n if self.kind == "real" else 2 * self.n

    @property
    def name(self) -> str:
        return f"{self.kind}{self.n}"

    @classmethod
    def parse(cls, text: str) -> "Setting":
        for kind in ("real", "complex"):
            if text.startswith(kind) and text[len(kind):].isdigit():
                return cls(kind, int(text[len(kind):]))
        raise ValidationError(f"unknown setting {text!r}; expected real2, real3, complex1 or complex2")


@dataclass(frozen=True)
class ProblemSpec:
    """Dirichlet problem ``F(Hess u) = h`` in the box, ``u = phi`` on its faces.

    ``phi`` is only read on boundary nodes and ``h`` only on interior
    nodes.  ``usub`` is the subsolution, which must agree with ``phi`` on
    the boundary bit for bit.
    """

    domain: BoxDomain
    setting: Setting
    h: GridField
    phi: GridField
    usub: GridField
    delta: float

    def __post_init__(self):
        if self.setting.dim != self.domain.dim:
            raise ValidationError(
                f"setting {self.setting.name} needs a {self.setting.dim}-dimensional box, "
                f"got dimension {self.domain.dim}"
            )
        for name in ("h", "phi", "usub"):
            if getattr(self, name).domain != self.domain:
                raise ValidationError(f"field {name} lives on a different domain")
        if not 0.0 < self.delta < math.pi:
            raise ValidationError(f"delta must satisfy 0 < delta < pi, got {self.delta}")
        band = self.band
        inner_h = self.h.interior()
        if not np.all(np.isfinite(inner_h)):
            node = _first_node(~np.isfinite(inner_h), offset=1)
            raise ValidationError(f"h is not finite at node {node}")
        low = inner_h < band.lower
        if low.any():
            node = _first_node(low, offset=1)
            raise ValidationError(
                f"h below supercritical band at node {node}: "
                f"h = {inner_h[tuple(i - 1 for i in node)]!r} < (n-2)pi/2 + delta = {band.lower!r}"
            )
        high = inner_h >= band.upper
        if high.any():
            node = _first_node(high, offset=1)
            raise ValidationError(f"h reaches n*pi/2 = {band.upper!r} at node {node}")
        mask = self.domain.boundary_mask()
        if not np.all(np.isfinite(self.usub.values)):
            raise ValidationError(f"usub is not finite at node {_first_node(~np.isfinite(self.usub.values))}")
        if not np.all(np.isfinite(self.phi.values[mask])):
            raise ValidationError(f"phi is not finite at node {_first_node(~np.isfinite(self.phi.values) & mask)}")
        mismatch = mask & (self.usub.values != self.phi.values)
        if mismatch.any():
            node = _first_node(mismatch)
            raise ValidationError(
                f"usub differs from phi at boundary node {node}: "
                f"{self.usub.values[node]!r} != {self.phi.values[node]!r}"
            )

    @property
    def band(self) -> PhaseBand:
        return PhaseBand(self.setting.n, self.delta)

    def boundary_values(self) -> np.ndarray:
        return self.phi.values


def _first_node(mask, offset=0):
    # first flagged node in lexicographic order (axis 0 fastest)
    idx = np.argwhere(mask.transpose())
    first = tuple(int(i) + offset for i in idx[0][::-1])
    return first


def _shifted(U, offsets):
    r = U.shape[0]
    return U[tuple(slice(1 + o, r - 1 + o) for o in offsets)]


def hessian_real_all(values, domain: BoxDomain) -> np.ndarray:
    """Central-difference Hessians at all interior nodes, shape ``interior + (dim, dim)``."""
    U = np.asarray(values, dtype=float)
    d = domain.dim
    hs = domain.spacing
    H = np.empty(domain.interior_shape + (d, d))
    zero = [0] * d
    center = _shifted(U, zero)
    for k in range(d):
        plus, minus = list(zero), list(zero)
        plus[k], minus[k] = 1, -1
        H[..., k, k] = (_shifted(U, plus) - 2.0 * center + _shifted(U, minus)) / (hs[k] * hs[k])
        for l in range(k + 1, d):
            o = {}
            for sk, sl in itertools.product((1, -1), repeat=2):
                off = list(zero)
                off[k], off[l] = sk, sl
                o[sk, sl] = _shifted(U, off)
            cross = (o[1, 1] - o[1, -1] - o[-1, 1] + o[-1, -1]) / (4.0 * hs[k] * hs[l])
            H[..., k, l] = cross
            H[..., l, k] = cross
    return H


def complex_from_real(R) -> np.ndarray:
    """Map real Hessians over ``(x1, y1, ..., xn, yn)`` to complex Hessians ``u_{i jbar}``."""
    R = np.asarray(R, dtype=float)
    n = R.shape[-1] // 2
    x = np.arange(n) * 2
    y = x + 1
    Rxx = R[..., x[:, None], x[None, :]]
    Ryy = R[..., y[:, None], y[None, :]]
    Rxy = R[..., x[:, None], y[None, :]]
    Ryx = R[..., y[:, None], x[None, :]]
    return 0.25 * ((Rxx + Ryy) + 1j * (Rxy - Ryx))


def real_coefficients_from_complex(L) -> np.ndarray:
    """Adjoint of :func:`complex_from_real`.

    For Hermitian ``L`` returns the real symmetric ``C`` with
    ``Re trace(L @ complex_from_real(dR)) = sum(C * dR)`` for symmetric ``dR``.
    """
    L = np.asarray(L, dtype=complex)
    n = L.shape[-1]
    C = np.zeros(L.shape[:-2] + (2 * n, 2 * n))
    x = np.arange(n) * 2
    y = x + 1
    re, im = 0.25 * L.real, 0.25 * L.imag
    C[..., x[:, None], x[None, :]] = re
    C[..., y[:, None], y[None, :]] = re
    C[..., x[:, None], y[None, :]] = im
    C[..., y[:, None], x[None, :]] = -im
    return 0.5 * (C + np.swapaxes(C, -1, -2))


def discrete_hessians(setting: Setting, values, domain: BoxDomain) -> np.ndarray:
    R = hessian_real_all(values, domain)
    if setting.kind == "complex":
        return complex_from_real(R)
    return R


def _check_node(field: GridField, node) -> tuple:
    node = tuple(int(i) for i in node)
    if not field.domain.is_interior(node):
        raise PreconditionError(f"node {node} is not an interior node")
    return node


def hessian_real(field: GridField, node) -> spectral.SymMatrix:
    """Central-difference Hessian at one interior node (same arithmetic as the batched form)."""
    node = _check_node(field, node)
    U = field.values
    d = field.domain.dim
    hs = field.domain.spacing

    def at(offsets):
        return U[tuple(i + o for i, o in zip(node, offsets))]

    zero = (0,) * d
    H = np.empty((d, d))
    for k in range(d):
        e = [0] * d
        e[k] = 1
        m = [0] * d
        m[k] = -1
        H[k, k] = (at(e) - 2.0 * at(zero) + at(m)) / (hs[k] * hs[k])
        for l in range(k + 1, d):
            o = {}
            for sk, sl in itertools.product((1, -1), repeat=2):
                off = [0] * d
                off[k], off[l] = sk, sl
                o[sk, sl] = at(off)
            cross = (o[1, 1] - o[1, -1] - o[-1, 1] + o[-1, -1]) / (4.0 * hs[k] * hs[l])
            H[k, l] = H[l, k] = cross
    return spectral.SymMatrix(H)


def hessian_complex(field: GridField, node, setting: Setting | None = None) -> spectral.HermMatrix:
    if setting is not None and setting.kind != "complex":
        raise PreconditionError("complex Hessian requested for a real setting")
    if field.domain.dim % 2:
        raise PreconditionError("complex Hessian needs an even number of real coordinates")
    R = hessian_real(field, node).entries
    return spectral.HermMatrix(complex_from_real(R))


def eval_operator_field(spec: ProblemSpec, field: GridField) -> GridField:
    """Phase of the discrete Hessian at every interior node; NaN on the boundary."""
    if field.domain != spec.domain:
        raise PreconditionError("field does not live on the problem domain")
    M = discrete_hessians(spec.setting, field.values, spec.domain)
    F = spectral.operator_value(M)
    out = np.full(spec.domain.shape, np.nan)
    out[(slice(1, -1),) * spec.domain.dim] = F
    return GridField(spec.domain, out)


def interior_numbering(domain: BoxDomain) -> np.ndarray:
    """Array over all nodes: unknown index for interior nodes, -1 on the boundary."""
    mask = domain.boundary_mask()
    number = np.full(domain.shape, -1, dtype=np.int64)
    inner = ~mask
    # lexicographic order with axis 0 fastest
    number.T[inner.T] = np.arange(int(inner.sum()))
    return number


def second_order_operator(domain: BoxDomain, coeffs) -> sp.csr_matrix:
    """Sparse matrix of ``u -> sum_ab C_ab D_ab u`` on interior rows and all-node columns.

    ``coeffs`` has shape ``interior_shape + (dim, dim)`` and must be
    symmetric in its last two axes.  Rows follow the interior unknown
    numbering, columns the lexicographic numbering of all nodes.
    """
    d = domain.dim
    r = domain.resolution
    C = np.asarray(coeffs, dtype=float)
    hs = domain.spacing
    inner_idx = np.meshgrid(*[np.arange(1, r - 1)] * d, indexing="ij")
    row_num = interior_numbering(domain)[tuple(inner_idx)]
    strides = [r**k for k in range(d)]

    def col(offsets):
        return sum((inner_idx[k] + offsets[k]) * strides[k] for k in range(d))

    rows, cols, vals = [], [], []

    def add(offsets, weight):
        rows.append(row_num.ravel())
        cols.append(col(offsets).ravel())
        vals.append(np.broadcast_to(weight, row_num.shape).ravel())

    zero = [0] * d
    for k in range(d):
        w = C[..., k, k] / (hs[k] * hs[k])
        plus, minus = list(zero), list(zero)
        plus[k], minus[k] = 1, -1
        add(plus, w)
        add(zero, -2.0 * w)
        add(minus, w)
        for l in range(k + 1, d):
            w = 2.0 * C[..., k, l] / (4.0 * hs[k] * hs[l])
            for sk, sl in itertools.product((1, -1), repeat=2):
                off = list(zero)
                off[k], off[l] = sk, sl
                add(off, w * sk * sl)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(row_num.size, r**d),
    )
    return A.tocsr()


def write_field_csv(field: GridField, path) -> None:
    """Write ``x1,...,xd,value`` rows in lexicographic node order, 17 significant digits."""
    d = field.domain.dim
    coords = [c.ravel(order="F") for c in field.domain.coordinates()]
    vals = field.flat()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(d)] + ["value"])
        for i in range(vals.size):
            w.writerow([f"{coords[k][i]:.17g}" for k in range(d)] + [f"{vals[i]:.17g}"])


def read_field_csv(path, domain: BoxDomain) -> GridField:
    """Read a field written by :func:`write_field_csv` onto ``domain``."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty field file")
    header = [c.strip() for c in rows[0]]
    if len(header) != domain.dim + 1 or header[-1] != "value":
        raise ValidationError(f"{path}: header must be x1..x{domain.dim},value, got {header}")
    body = rows[1:]
    expected = domain.resolution**domain.dim
    if len(body) != expected:
        raise ValidationError(f"{path}: expected {expected} nodes, found {len(body)}")
    try:
        data = np.array([[float(c) for c in row] for row in body])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.shape[1] != domain.dim + 1:
        raise ValidationError(f"{path}: rows must have {domain.dim + 1} columns")
    coords = [c.ravel(order="F") for c in domain.coordinates()]
    hmin = min(domain.spacing)
    for k in range(domain.dim):
        if np.abs(data[:, k] - coords[k]).max() > 1e-9 * max(1.0, hmin):
            raise ValidationError(f"{path}: coordinates of axis {k + 1} do not match the box grid")
    values = data[:, -1].reshape(domain.shape, order="F")
    return GridField(domain, values)
