"""Discrete grad/curl/div complexes.

Two backends are provided:

* ``periodic`` -- every field is collocated at the nodes of a 3-torus and the
  partial derivatives are centered differences.  Each ``D_k`` is skew and the
  three of them commute, so ``curl grad = 0`` and ``div curl = 0`` hold as
  matrix identities.
* ``bounded_staggered`` -- a box of ``n1 x n2 x n3`` cubic cells with scalars
  on nodes, vectors on edges and faces and a second scalar on cells.  The
  interior operators ``grad0``, ``curl0``, ``div0`` act on non-boundary
  entities only (zero extension, full difference, restriction), which is the
  discrete counterpart of taking the closure on compactly supported fields.
  Their partners are defined by duality: ``div := -grad0.T``,
  ``curl := curl0.T`` and ``grad := -div0.T``.

All spaces carry the inner product ``h**3 * dot(x, y)`` so that the matrix
transpose is the Hilbert space adjoint.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .exceptions import BackendError, SpaceMismatchError

__all__ = [
    "Backend",
    "EntityKind",
    "GridSpec",
    "EntitySpace",
    "SparseOp",
    "ComplexOps",
    "adjoint",
    "compose",
    "apply",
    "identity",
    "build_periodic_partials",
    "build_staggered_complex",
    "build_complex",
    "exact_sequence_residuals",
    "inner",
    "dump_coo",
]


class Backend(str, enum.Enum):
    PERIODIC = "periodic"
    BOUNDED_STAGGERED = "bounded_staggered"


class EntityKind(str, enum.Enum):
    NODE = "node"
    EDGE = "edge"
    FACE = "face"
    CELL = "cell"
    COLLOCATED = "collocated"


@dataclass(frozen=True)
class GridSpec:
    """Uniform cubic grid on a torus or a box.

    Parameters
    ----------
    backend : Backend or str
    cells : tuple of int
        Number of cells per direction.  At least 2 (periodic) or 3 (bounded).
    h : float
        Cell edge length.  Exact zero checks are bitwise when ``1/h`` is a
        power of two; other spacings are exact up to rounding of ``1/h``.
    """

    backend: Backend
    cells: tuple[int, int, int]
    h: float = 1.0

    def __post_init__(self):
        backend = Backend(self.backend)
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != 3:
            raise ValueError(f"cells must have three entries, got {self.cells!r}")
        minimum = 2 if backend is Backend.PERIODIC else 3
        if min(cells) < minimum:
            raise ValueError(
                f"{backend.value} grids need at least {minimum} cells per direction, got {cells}"
            )
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"spacing h must be positive, got {self.h}")
        object.__setattr__(self, "backend", backend)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def periodic(cls, cells, h=1.0):
        if np.isscalar(cells):
            cells = (cells,) * 3
        return cls(Backend.PERIODIC, tuple(cells), h)

    @classmethod
    def bounded(cls, cells, h=1.0):
        if np.isscalar(cells):
            cells = (cells,) * 3
        return cls(Backend.BOUNDED_STAGGERED, tuple(cells), h)

    @property
    def is_periodic(self) -> bool:
        return self.backend is Backend.PERIODIC

    @property
    def lengths(self) -> tuple[float, float, float]:
        return tuple(n * self.h for n in self.cells)

    @property
    def npoints(self) -> int:
        """Number of collocation points (periodic) or cells (bounded)."""
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return self.h**3

    def point_coordinates(self) -> np.ndarray:
        """Node coordinates of the periodic grid, shape ``(npoints, 3)``."""
        idx = np.indices(self.cells).reshape(3, -1).T
        return idx * self.h


@dataclass(frozen=True)
class EntitySpace:
    """Degrees of freedom attached to one kind of geometric entity."""

    kind: EntityKind
    dof_count: int
    ncomp: int = 1
    boundary_mask: frozenset = field(default=frozenset(), compare=False)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", EntityKind(self.kind))
        if self.dof_count <= 0:
            raise ValueError("dof_count must be positive")
        if self.dof_count % self.ncomp:
            raise ValueError("dof_count must be a multiple of ncomp")
        mask = frozenset(int(i) for i in self.boundary_mask)
        if mask and (min(mask) < 0 or max(mask) >= self.dof_count):
            raise ValueError("boundary_mask indices out of range")
        object.__setattr__(self, "boundary_mask", mask)

    @property
    def npoints(self) -> int:
        return self.dof_count // self.ncomp

    def __str__(self):
        label = self.name or self.kind.value
        return f"{label}[{self.dof_count}]"


def inner(grid: GridSpec, x, y) -> float:
    """Grid inner product ``h**3 * <x, y>`` (real part for complex data)."""
    return float(np.real(np.vdot(x, y))) * grid.cell_volume


def _canonical(mat) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


@dataclass(frozen=True, eq=False)
class SparseOp:
    """Sparse matrix between two entity spaces (CSR, sorted, no stored zeros)."""

    rows: EntitySpace
    cols: EntitySpace
    matrix: sp.csr_matrix
    name: str = ""

    def __post_init__(self):
        mat = _canonical(self.matrix)
        if mat.shape != (self.rows.dof_count, self.cols.dof_count):
            raise SpaceMismatchError(
                f"matrix shape {mat.shape} does not match {self.rows} x {self.cols}",
                self.rows,
                self.cols,
            )
        if mat.nnz and not np.all(np.isfinite(mat.data)):
            raise ValueError(f"operator {self.name!r} has non-finite entries")
        object.__setattr__(self, "matrix", mat)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def T(self) -> "SparseOp":
        return adjoint(self)

    def max_abs(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def __neg__(self):
        return SparseOp(self.rows, self.cols, -self.matrix, f"-{self.name}")

    def __matmul__(self, other):
        if isinstance(other, SparseOp):
            return compose(self, other)
        return apply(self, other)

    def __repr__(self):
        return f"SparseOp({self.name or '?'}: {self.cols} -> {self.rows}, nnz={self.matrix.nnz})"


def adjoint(op: SparseOp) -> SparseOp:
    """Hilbert adjoint, which is the transpose under the uniform inner product."""
    return SparseOp(op.cols, op.rows, op.matrix.T.conj(), f"{op.name}*")


def compose(a: SparseOp, b: SparseOp) -> SparseOp:
    if a.cols != b.rows:
        raise SpaceMismatchError(
            f"cannot compose {a.name or 'a'} (domain {a.cols}) with "
            f"{b.name or 'b'} (range {b.rows})",
            a.cols,
            b.rows,
        )
    return SparseOp(a.rows, b.cols, a.matrix @ b.matrix, f"{a.name}.{b.name}")


def apply(op: SparseOp, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != op.cols.dof_count:
        raise SpaceMismatchError(
            f"vector of length {x.shape[0]} does not live in {op.cols}", op.cols, x.shape
        )
    return op.matrix @ x


def identity(space: EntitySpace) -> SparseOp:
    return SparseOp(space, space, sp.identity(space.dof_count, format="csr"), "I")


def dump_coo(op: SparseOp, target=None) -> str:
    """Write ``row col value`` lines with 17 significant digits.

    Returns the text; also writes it to ``target`` (path or stream) if given.
    """
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    buf = io.StringIO()
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        buf.write(f"{r} {c} {v:.17g}\n")
    text = buf.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    elif target is not None:
        target.write(text)
    return text


# --------------------------------------------------------------------------
# periodic collocated backend


def _circulant_centered(n: int) -> sp.csr_matrix:
    i = np.arange(n)
    rows = np.concatenate([i, i])
    cols = np.concatenate([(i + 1) % n, (i - 1) % n])
    vals = np.concatenate([np.ones(n), -np.ones(n)])
    # n == 2 makes both neighbours coincide; the entries cancel.
    return _canonical(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def _kron3(a, b, c) -> sp.csr_matrix:
    return _canonical(sp.kron(sp.kron(a, b), c))


def _eye(n):
    return sp.identity(n, format="csr", dtype=float)


def _require(grid: GridSpec, backend: Backend, what: str):
    if grid.backend is not backend:
        raise BackendError(f"{what} requires a {backend.value} grid, got {grid.backend.value}")


def periodic_partial_stencils(grid: GridSpec) -> tuple[sp.csr_matrix, ...]:
    """Unscaled (integer) centered-difference stencils ``2h * D_k``."""
    _require(grid, Backend.PERIODIC, "centered partials")
    n1, n2, n3 = grid.cells
    return (
        _kron3(_circulant_centered(n1), _eye(n2), _eye(n3)),
        _kron3(_eye(n1), _circulant_centered(n2), _eye(n3)),
        _kron3(_eye(n1), _eye(n2), _circulant_centered(n3)),
    )


def build_periodic_partials(grid: GridSpec) -> tuple[SparseOp, SparseOp, SparseOp]:
    """Centered differences ``(f(i+1) - f(i-1)) / (2h)`` with periodic wrap.

    Points are ordered C-style over ``(i1, i2, i3)``.
    """
    space = EntitySpace(EntityKind.COLLOCATED, grid.npoints, 1, name="scalar")
    scale = 1.0 / (2.0 * grid.h)
    return tuple(
        SparseOp(space, space, s * scale, f"D{k + 1}")
        for k, s in enumerate(periodic_partial_stencils(grid))
    )


# --------------------------------------------------------------------------
# bounded staggered backend


def _diff(n: int) -> sp.csr_matrix:
    """``n x (n+1)`` forward difference."""
    i = np.arange(n)
    return _canonical(
        sp.coo_matrix(
            (np.r_[-np.ones(n), np.ones(n)], (np.r_[i, i], np.r_[i, i + 1])), shape=(n, n + 1)
        )
    )


def _staggered_shapes(cells):
    n1, n2, n3 = cells
    return {
        "node": [(n1 + 1, n2 + 1, n3 + 1)],
        "edge": [(n1, n2 + 1, n3 + 1), (n1 + 1, n2, n3 + 1), (n1 + 1, n2 + 1, n3)],
        "face": [(n1 + 1, n2, n3), (n1, n2 + 1, n3), (n1, n2, n3 + 1)],
        "cell": [(n1, n2, n3)],
    }


def _boundary_flags(shape, tangential_axes, cells) -> np.ndarray:
    """Flag entities whose index along any of ``tangential_axes`` is on the box boundary."""
    idx = np.indices(shape)
    flag = np.zeros(shape, dtype=bool)
    for ax in tangential_axes:
        flag |= (idx[ax] == 0) | (idx[ax] == cells[ax])
    return flag.ravel()


def _staggered_boundary(cells):
    n = cells
    node = _boundary_flags((n[0] + 1, n[1] + 1, n[2] + 1), (0, 1, 2), n)
    shapes = _staggered_shapes(cells)
    edge = np.concatenate(
        [
            _boundary_flags(shapes["edge"][d], [a for a in range(3) if a != d], n)
            for d in range(3)
        ]
    )
    face = np.concatenate([_boundary_flags(shapes["face"][d], [d], n) for d in range(3)])
    cell = np.zeros(int(np.prod(cells)), dtype=bool)
    return {"node": node, "edge": edge, "face": face, "cell": cell}


def _staggered_full_stencils(cells):
    n1, n2, n3 = cells
    d1, d2, d3 = _diff(n1), _diff(n2), _diff(n3)
    I = _eye
    grad = sp.vstack(
        [
            _kron3(d1, I(n2 + 1), I(n3 + 1)),
            _kron3(I(n1 + 1), d2, I(n3 + 1)),
            _kron3(I(n1 + 1), I(n2 + 1), d3),
        ]
    )
    # edge blocks: ex (n1,n2+1,n3+1), ey (n1+1,n2,n3+1), ez (n1+1,n2+1,n3)
    # face blocks: fx (n1+1,n2,n3), fy (n1,n2+1,n3), fz (n1,n2,n3+1)
    fx_dy_ez = _kron3(I(n1 + 1), d2, I(n3))
    fx_dz_ey = _kron3(I(n1 + 1), I(n2), d3)
    fy_dz_ex = _kron3(I(n1), I(n2 + 1), d3)
    fy_dx_ez = _kron3(d1, I(n2 + 1), I(n3))
    fz_dx_ey = _kron3(d1, I(n2), I(n3 + 1))
    fz_dy_ex = _kron3(I(n1), d2, I(n3 + 1))
    curl = sp.bmat(
        [
            [None, -fx_dz_ey, fx_dy_ez],
            [fy_dz_ex, None, -fy_dx_ez],
            [-fz_dy_ex, fz_dx_ey, None],
        ]
    )
    div = sp.hstack(
        [
            _kron3(d1, I(n2), I(n3)),
            _kron3(I(n1), d2, I(n3)),
            _kron3(I(n1), I(n2), d3),
        ]
    )
    return _canonical(grad), _canonical(curl), _canonical(div)


def _selector(keep: np.ndarray) -> sp.csr_matrix:
    idx = np.flatnonzero(keep)
    return _canonical(
        sp.coo_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, keep.size))
    )


# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ComplexOps:
    """The six operators of a discrete complex plus the four slot spaces.

    Slot spaces follow the block layout ``scalar + vector + vector + scalar``
    used throughout: ``s0`` (domain of grad0), ``v1`` (domain of curl0),
    ``v2`` (domain of div0), ``s3`` (range of div0).
    """

    grid: GridSpec
    s0: EntitySpace
    v1: EntitySpace
    v2: EntitySpace
    s3: EntitySpace
    grad0: SparseOp
    curl0: SparseOp
    div0: SparseOp
    div: SparseOp
    curl: SparseOp
    grad: SparseOp
    stencils: dict = field(default_factory=dict, repr=False)
    full_spaces: dict = field(default_factory=dict, repr=False)
    partials: tuple = ()

    @property
    def slots(self) -> tuple[EntitySpace, EntitySpace, EntitySpace, EntitySpace]:
        return (self.s0, self.v1, self.v2, self.s3)


def build_staggered_complex(grid: GridSpec) -> ComplexOps:
    """Interior operators on a bounded box with Dirichlet / electric / normal conditions."""
    _require(grid, Backend.BOUNDED_STAGGERED, "the staggered complex")
    G, C, D = _staggered_full_stencils(grid.cells)
    bnd = _staggered_boundary(grid.cells)
    full = {
        k: EntitySpace(
            EntityKind(k), int(v.size), 1, frozenset(np.flatnonzero(v).tolist()), name=k
        )
        for k, v in bnd.items()
    }
    R = {k: _selector(~v) for k, v in bnd.items()}
    s0 = EntitySpace(EntityKind.NODE, R["node"].shape[0], name="node0")
    v1 = EntitySpace(EntityKind.EDGE, R["edge"].shape[0], name="edge0")
    v2 = EntitySpace(EntityKind.FACE, R["face"].shape[0], name="face0")
    s3 = EntitySpace(EntityKind.CELL, R["cell"].shape[0], name="cell")
    g0 = _canonical(R["edge"] @ G @ R["node"].T)
    c0 = _canonical(R["face"] @ C @ R["edge"].T)
    d0 = _canonical(R["cell"] @ D @ R["face"].T)
    inv_h = 1.0 / grid.h
    grad0 = SparseOp(v1, s0, g0 * inv_h, "grad0")
    curl0 = SparseOp(v2, v1, c0 * inv_h, "curl0")
    div0 = SparseOp(s3, v2, d0 * inv_h, "div0")
    return ComplexOps(
        grid=grid,
        s0=s0,
        v1=v1,
        v2=v2,
        s3=s3,
        grad0=grad0,
        curl0=curl0,
        div0=div0,
        div=SparseOp(s0, v1, -grad0.matrix.T, "div"),
        curl=SparseOp(v1, v2, curl0.matrix.T, "curl"),
        grad=SparseOp(v2, s3, -div0.matrix.T, "grad"),
        stencils={"grad0": g0, "curl0": c0, "div0": d0},
        full_spaces=full,
    )


def _periodic_complex(grid: GridSpec) -> ComplexOps:
    D = build_periodic_partials(grid)
    S = periodic_partial_stencils(grid)
    N = grid.npoints
    scal = EntitySpace(EntityKind.COLLOCATED, N, 1, name="scalar")
    vec = EntitySpace(EntityKind.COLLOCATED, 3 * N, 3, name="vector")

    def grad_of(ops):
        return _canonical(sp.vstack(ops))

    def div_of(ops):
        return _canonical(sp.hstack(ops))

    def curl_of(ops):
        d1, d2, d3 = ops
        return _canonical(sp.bmat([[None, -d3, d2], [d3, None, -d1], [-d2, d1, None]]))

    mats = [d.matrix for d in D]
    grad = SparseOp(vec, scal, grad_of(mats), "grad")
    div = SparseOp(scal, vec, div_of(mats), "div")
    curl = SparseOp(vec, vec, curl_of(mats), "curl")
    return ComplexOps(
        grid=grid,
        s0=scal,
        v1=vec,
        v2=vec,
        s3=scal,
        grad0=SparseOp(vec, scal, grad.matrix, "grad0"),
        curl0=SparseOp(vec, vec, curl.matrix, "curl0"),
        div0=SparseOp(scal, vec, div.matrix, "div0"),
        div=div,
        curl=curl,
        grad=grad,
        stencils={"grad0": grad_of(S), "curl0": curl_of(S), "div0": div_of(S)},
        partials=D,
    )


def build_complex(grid: GridSpec) -> ComplexOps:
    """Dispatch on the backend."""
    if grid.is_periodic:
        return _periodic_complex(grid)
    return build_staggered_complex(grid)


def exact_sequence_residuals(cx: ComplexOps, scaled: bool = False) -> dict[str, float]:
    """Max-abs entries of the four compositions that must vanish.

    With ``scaled=False`` the products are taken on the integer stencils, so
    a zero result is an exact integer cancellation independent of ``h``.
    """
    if scaled:
        g0, c0, d0 = cx.grad0.matrix, cx.curl0.matrix, cx.div0.matrix
    else:
        g0, c0, d0 = cx.stencils["grad0"], cx.stencils["curl0"], cx.stencils["div0"]
    div, curl, grad = -g0.T, c0.T, -d0.T
    out = {}
    for name, prod in (
        ("curl0.grad0", c0 @ g0),
        ("div0.curl0", d0 @ c0),
        ("curl.grad", curl @ grad),
        ("div.curl", div @ curl),
    ):
        prod = _canonical(prod)
        out[name] = float(abs(prod).max()) if prod.nnz else 0.0
    return out


def entity_coordinates(cx: ComplexOps, slot: int) -> np.ndarray:
    """Coordinates of the degrees of freedom of slot ``slot`` (0..3).

    Periodic slots return node coordinates repeated per component; staggered
    slots return entity midpoints of the non-boundary entities.
    """
    grid = cx.grid
    if grid.is_periodic:
        pts = grid.point_coordinates()
        return np.tile(pts, (cx.slots[slot].ncomp, 1))
    kind = ["node", "edge", "face", "cell"][slot]
    shapes = _staggered_shapes(grid.cells)[kind]
    offsets = {
        "node": [(0, 0, 0)],
        "edge": [(0.5, 0, 0), (0, 0.5, 0), (0, 0, 0.5)],
        "face": [(0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)],
        "cell": [(0.5, 0.5, 0.5)],
    }[kind]
    coords = np.concatenate(
        [
            (np.indices(shape).reshape(3, -1).T + np.asarray(off)) * grid.h
            for shape, off in zip(shapes, offsets)
        ]
    )
    keep = ~_staggered_boundary(grid.cells)[kind]
    return coords[keep]


def iter_grids(backend, sizes: Iterable) -> list[GridSpec]:
    return [GridSpec(backend, tuple(s) if not np.isscalar(s) else (s,) * 3) for s in sizes]
