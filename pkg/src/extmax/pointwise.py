"""Pointwise (local) operators acting on block fields.

On the periodic backend every slot of a layout is collocated, so at each
grid point the field is a short vector of ``m`` real components and a local
operator is a field of ``m x m`` matrices.  On the staggered backend the
slots live on different entities and only per-degree-of-freedom scalars make
sense, so local operators are diagonal.

Global vectors are component-major: component ``g`` of point ``p`` sits at
``g * N + p``, which is also what stacking the slot vectors produces.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .discrete_ops import EntitySpace, GridSpec
from .exceptions import BackendError, NotSPDError, SpaceMismatchError

__all__ = ["PointwiseOperator", "PointwiseWeight", "layout_dim", "pointwise_blockdiag"]


def layout_dim(layout: Sequence[EntitySpace]) -> int:
    return int(sum(s.dof_count for s in layout))


def _slot_offsets(layout):
    return np.concatenate([[0], np.cumsum([s.dof_count for s in layout])]).astype(int)


class PointwiseOperator:
    """Local linear operator over a layout.

    Exactly one of ``blocks`` (periodic only, shape ``(N, m, m)`` or
    ``(m, m)`` broadcast to all points) and ``diag`` (shape ``(dim,)`` or a
    scalar) must be given.  A ``diag`` on a periodic grid is converted to
    diagonal blocks.
    """

    def __init__(self, grid: GridSpec, layout: Sequence[EntitySpace], blocks=None, diag=None):
        self.grid = grid
        self.layout = tuple(layout)
        self.dim = layout_dim(self.layout)
        if (blocks is None) == (diag is None):
            raise ValueError("give exactly one of blocks= or diag=")
        if grid.is_periodic:
            N = grid.npoints
            if any(s.npoints != N for s in self.layout):
                raise SpaceMismatchError("periodic layout slots must be collocated", self.layout, N)
            self.m = int(sum(s.ncomp for s in self.layout))
            if blocks is None:
                d = np.broadcast_to(np.asarray(diag, dtype=float), (self.dim,))
                blocks = np.zeros((N, self.m, self.m))
                idx = np.arange(self.m)
                blocks[:, idx, idx] = d.reshape(self.m, N).T
            blocks = np.asarray(blocks, dtype=float)
            if blocks.shape == (self.m, self.m):
                blocks = np.broadcast_to(blocks, (N, self.m, self.m))
            if blocks.shape != (N, self.m, self.m):
                raise SpaceMismatchError(
                    f"blocks of shape {blocks.shape} do not fit {N} points x {self.m} components",
                    self.layout,
                    blocks.shape,
                )
            self.blocks = np.array(blocks)
            self.diag = None
        else:
            if blocks is not None:
                raise BackendError(
                    "component-mixing local operators are not defined on the staggered backend; "
                    "use per-component scalar fields (diag=)"
                )
            self.m = None
            self.blocks = None
            self.diag = np.array(np.broadcast_to(np.asarray(diag, dtype=float), (self.dim,)))
        data = self.blocks if self.blocks is not None else self.diag
        if not np.all(np.isfinite(data)):
            raise ValueError("local operator has non-finite entries")

    # ------------------------------------------------------------------ basics

    @classmethod
    def identity(cls, grid, layout):
        return cls(grid, layout, diag=1.0)

    @classmethod
    def zeros(cls, grid, layout):
        return cls(grid, layout, diag=0.0)

    @classmethod
    def from_slot_scalars(cls, grid, layout, values):
        """Diagonal operator with one value (scalar or per-DOF array) per slot."""
        parts = []
        for s, v in zip(layout, values):
            parts.append(np.broadcast_to(np.asarray(v, dtype=float), (s.dof_count,)))
        return cls(grid, layout, diag=np.concatenate(parts))

    def _new(self, blocks=None, diag=None, layout=None):
        return PointwiseOperator._unchecked(self.grid, layout or self.layout, blocks, diag)

    @classmethod
    def _unchecked(cls, grid, layout, blocks, diag):
        obj = PointwiseOperator.__new__(PointwiseOperator)
        obj.grid, obj.layout = grid, tuple(layout)
        obj.dim = layout_dim(obj.layout)
        obj.blocks, obj.diag = blocks, diag
        obj.m = blocks.shape[1] if blocks is not None else None
        return obj

    @property
    def is_diagonal(self) -> bool:
        if self.diag is not None:
            return True
        off = self.blocks.copy()
        idx = np.arange(self.m)
        off[:, idx, idx] = 0.0
        return not np.any(off)

    def diagonal(self) -> np.ndarray:
        """Global diagonal as a length ``dim`` vector."""
        if self.diag is not None:
            return self.diag.copy()
        idx = np.arange(self.m)
        return self.blocks[:, idx, idx].T.reshape(-1)

    def matrix(self) -> sp.csr_matrix:
        if self.diag is not None:
            return sp.diags(self.diag, format="csr")
        N, m = self.grid.npoints, self.m
        a, b = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        p = np.arange(N)
        rows = (a[None] * N + p[:, None, None]).ravel()
        cols = (b[None] * N + p[:, None, None]).ravel()
        vals = self.blocks.ravel()
        keep = vals != 0
        mat = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.dim, self.dim))
        mat.sort_indices()
        return mat

    def apply(self, x):
        x = np.asarray(x)
        if self.diag is not None:
            return (self.diag * x.T).T
        N = self.grid.npoints
        xs = x.reshape(self.m, N, *x.shape[1:])
        out = np.einsum("pab,bp...->ap...", self.blocks, xs)
        return out.reshape(x.shape)

    @property
    def T(self):
        if self.diag is not None:
            return self._new(diag=self.diag.copy())
        return self._new(blocks=np.swapaxes(self.blocks, 1, 2).copy())

    def asym_max(self) -> float:
        if self.diag is not None:
            return 0.0
        return float(np.max(np.abs(self.blocks - np.swapaxes(self.blocks, 1, 2))))

    def is_symmetric(self) -> bool:
        return self.asym_max() == 0.0

    def sym(self):
        if self.diag is not None:
            return self._new(diag=self.diag.copy())
        return self._new(blocks=0.5 * (self.blocks + np.swapaxes(self.blocks, 1, 2)))

    def _check_compatible(self, other):
        if self.grid != other.grid or self.layout != other.layout:
            raise SpaceMismatchError("local operators live on different layouts", self.layout, other.layout)

    def __add__(self, other):
        self._check_compatible(other)
        if self.diag is not None:
            return self._new(diag=self.diag + other.diag)
        return self._new(blocks=self.blocks + other.blocks)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c):
        c = float(c)
        if self.diag is not None:
            return self._new(diag=c * self.diag)
        return self._new(blocks=c * self.blocks)

    __mul__ = __rmul__

    def __matmul__(self, other):
        self._check_compatible(other)
        if self.diag is not None:
            return self._new(diag=self.diag * other.diag)
        return self._new(blocks=self.blocks @ other.blocks)

    # ------------------------------------------------------------- spectra

    def point_eigvalsh(self) -> np.ndarray:
        """Eigenvalues of the symmetric part, shape ``(npoints, m)`` or ``(dim, 1)``."""
        if self.diag is not None:
            return self.diag[:, None].copy()
        if self.is_diagonal:
            idx = np.arange(self.m)
            return np.sort(self.blocks[:, idx, idx], axis=1)
        return np.linalg.eigvalsh(self.sym().blocks)

    def min_eig(self) -> tuple[float, int]:
        """Smallest eigenvalue of the symmetric part and the point where it occurs."""
        ev = self.point_eigvalsh()[:, 0]
        p = int(np.argmin(ev))
        return float(ev[p]), p

    def max_eig(self) -> float:
        return float(np.max(self.point_eigvalsh()[:, -1]))

    def _spectral(self, fn):
        if self.is_diagonal:
            d = fn(self.diagonal())
            return self._new(diag=d) if self.diag is not None else self._from_diag_blocks(d)
        w, V = np.linalg.eigh(self.blocks)
        return self._new(blocks=np.einsum("pik,pk,pjk->pij", V, fn(w), V))

    def _from_diag_blocks(self, d):
        N = self.grid.npoints
        blocks = np.zeros_like(self.blocks)
        idx = np.arange(self.m)
        blocks[:, idx, idx] = d.reshape(self.m, N).T
        return self._new(blocks=blocks)

    def inverse(self):
        if self.is_diagonal:
            return self._spectral(lambda d: 1.0 / d)
        return self._new(blocks=np.linalg.inv(self.blocks))

    # ------------------------------------------------------------ structure

    def restrict(self, slots: Sequence[int]):
        """Sub-operator on the listed slots (rows and columns)."""
        slots = list(slots)
        layout = [self.layout[i] for i in slots]
        if self.diag is not None:
            off = _slot_offsets(self.layout)
            d = np.concatenate([self.diag[off[i] : off[i + 1]] for i in slots])
            return PointwiseOperator._unchecked(self.grid, layout, None, d)
        comp_off = np.concatenate([[0], np.cumsum([s.ncomp for s in self.layout])])
        comps = np.concatenate([np.arange(comp_off[i], comp_off[i + 1]) for i in slots])
        return PointwiseOperator._unchecked(
            self.grid, layout, self.blocks[:, comps][:, :, comps].copy(), None
        )

    def slot_block(self, i: int, j: int) -> np.ndarray:
        """Local coupling block between slots ``i`` and ``j`` (periodic only)."""
        if self.blocks is None:
            raise BackendError("slot coupling blocks exist only on the periodic backend")
        comp_off = np.concatenate([[0], np.cumsum([s.ncomp for s in self.layout])])
        return self.blocks[:, comp_off[i] : comp_off[i + 1], comp_off[j] : comp_off[j + 1]]

    def __repr__(self):
        kind = "diag" if self.diag is not None else f"blocks {self.m}x{self.m}"
        return f"{type(self).__name__}(dim={self.dim}, {kind})"


class PointwiseWeight(PointwiseOperator):
    """Symmetric, strictly positive definite local operator.

    ``eps`` is the smallest admissible eigenvalue; the certified minimum is
    kept in ``min_eigenvalue``.  Square roots are principal roots computed per
    point from a symmetric eigendecomposition, with an exact elementwise path
    for diagonal weights.
    """

    def __init__(self, grid, layout, blocks=None, diag=None, eps: float = 0.0):
        super().__init__(grid, layout, blocks=blocks, diag=diag)
        self._validate(eps)

    def _validate(self, eps=0.0):
        asym = self.asym_max()
        if asym != 0.0:
            scale = float(np.max(np.abs(self.blocks)))
            p = int(np.argmax(np.max(np.abs(self.blocks - np.swapaxes(self.blocks, 1, 2)), axis=(1, 2))))
            if asym > 1e-14 * scale:
                raise NotSPDError(f"weight is not symmetric at point {p} (|W - W^T| = {asym:.3e})", p, asym)
            self.blocks = 0.5 * (self.blocks + np.swapaxes(self.blocks, 1, 2))
        lam, p = self.min_eig()
        if not lam > eps:
            raise NotSPDError(
                f"weight is not positive definite at point {p}: min eigenvalue {lam:.6g}", p, lam
            )
        self.min_eigenvalue = lam
        self._cache = {}

    @classmethod
    def from_operator(cls, op: PointwiseOperator, eps: float = 0.0) -> "PointwiseWeight":
        return cls(op.grid, op.layout, blocks=op.blocks, diag=op.diag, eps=eps)

    @classmethod
    def _unchecked(cls, grid, layout, blocks, diag):
        obj = PointwiseWeight.__new__(PointwiseWeight)
        obj.grid, obj.layout = grid, tuple(layout)
        obj.dim = layout_dim(obj.layout)
        obj.blocks, obj.diag = blocks, diag
        obj.m = blocks.shape[1] if blocks is not None else None
        obj._cache = {}
        obj.min_eigenvalue = None
        return obj

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def _weight_fn(self, fn):
        op = self._spectral(fn)
        out = PointwiseWeight._unchecked(op.grid, op.layout, op.blocks, op.diag)
        out.min_eigenvalue = float(np.min(fn(np.array([self.min_eigenvalue, self.max_eig()]))))
        return out

    def sqrt(self) -> "PointwiseWeight":
        return self._cached("sqrt", lambda: self._weight_fn(np.sqrt))

    def inv_sqrt(self) -> "PointwiseWeight":
        return self._cached("inv_sqrt", lambda: self._weight_fn(lambda w: 1.0 / np.sqrt(w)))

    def inverse(self) -> "PointwiseWeight":
        return self._cached("inv", lambda: self._weight_fn(lambda w: 1.0 / w))

    @classmethod
    def random(cls, grid, layout, rng, spread: float = 0.5, mixing: bool = True) -> "PointwiseWeight":
        """Random SPD weight with eigenvalues in ``[1 - spread, 1 + spread]``.

        ``mixing=False`` (and every staggered grid) gives a diagonal weight.
        """
        rng = np.random.default_rng(rng)
        dim = layout_dim(layout)
        if not grid.is_periodic or not mixing:
            return cls(grid, layout, diag=1.0 + spread * rng.uniform(-1, 1, dim))
        m = sum(s.ncomp for s in layout)
        Q, _ = np.linalg.qr(rng.standard_normal((grid.npoints, m, m)))
        w = 1.0 + spread * rng.uniform(-1, 1, (grid.npoints, m))
        blocks = np.einsum("pik,pk,pjk->pij", Q, w, Q)
        return cls(grid, layout, blocks=0.5 * (blocks + np.swapaxes(blocks, 1, 2)))


def pointwise_blockdiag(*ops: PointwiseOperator, cls=None):
    """Direct sum of local operators over concatenated layouts."""
    grid = ops[0].grid
    layout = tuple(s for op in ops for s in op.layout)
    cls = cls or (PointwiseWeight if all(isinstance(o, PointwiseWeight) for o in ops) else PointwiseOperator)
    if not grid.is_periodic:
        return cls(grid, layout, diag=np.concatenate([o.diag for o in ops]))
    N = grid.npoints
    m = sum(o.m for o in ops)
    blocks = np.zeros((N, m, m))
    k = 0
    for o in ops:
        blocks[:, k : k + o.m, k : k + o.m] = o.blocks
        k += o.m
    return cls(grid, layout, blocks=blocks)
