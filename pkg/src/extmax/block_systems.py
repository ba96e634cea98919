"""Block operators over the layout scalar + vector + vector + scalar.

``A_Dac``, ``A_Nac`` and ``A_Max`` are assembled from a :class:`ComplexOps`
exactly as block matrices; ``A_ac = A_Dac + A_Nac`` and the extended
operator is the sum of all three.  Because ``curl0 grad0 = 0`` and
``div0 curl0 = 0`` hold as integer identities, the products
``A_Max A_ac`` and ``A_ac A_Max`` vanish identically.
"""

from __future__ import annotations

import enum
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .discrete_ops import ComplexOps, EntitySpace, GridSpec, SparseOp, build_complex
from .exceptions import BackendError, SpaceMismatchError
from .pointwise import PointwiseOperator, PointwiseWeight, layout_dim

__all__ = [
    "BlockTag",
    "BlockOp",
    "assemble_block",
    "verify_annihilation",
    "conjugate_weighted",
    "sqrtm_pointwise",
    "wave_identity_residual",
    "hamiltonian_transform",
    "permutation_matrix",
    "HAMILTONIAN_PERMUTATION",
]


class BlockTag(str, enum.Enum):
    ADac = "ADac"
    ANac = "ANac"
    AMax = "AMax"
    Aac = "Aac"
    Extended = "Extended"
    GEM = "GEM"
    Dirac = "Dirac"
    Custom = "Custom"


SKEW_TAGS = {BlockTag.ADac, BlockTag.ANac, BlockTag.AMax, BlockTag.Aac, BlockTag.Extended, BlockTag.GEM}

HAMILTONIAN_PERMUTATION = np.array(
    [[0, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 0]], dtype=int
)


def _max_abs(mat) -> float:
    mat = sp.csr_matrix(mat)
    mat.eliminate_zeros()
    return float(abs(mat).max()) if mat.nnz else 0.0


class BlockOp:
    """Sparse block operator with an explicit slot layout.

    ``blocks`` maps ``(i, j)`` to a :class:`SparseOp` (or anything
    ``scipy.sparse`` accepts) from slot ``j`` to slot ``i``; absent blocks
    are zero.  Operators with a skew tag are checked for exact skewness.
    """

    def __init__(self, grid: GridSpec, layout: Sequence[EntitySpace], blocks: dict, tag=BlockTag.Custom):
        self.grid = grid
        self.layout = tuple(layout)
        self.tag = BlockTag(tag)
        self.blocks = {}
        for (i, j), op in blocks.items():
            if not (0 <= i < len(self.layout) and 0 <= j < len(self.layout)):
                raise SpaceMismatchError(f"block index {(i, j)} outside layout", (i, j), len(self.layout))
            if not isinstance(op, SparseOp):
                op = SparseOp(self.layout[i], self.layout[j], op)
            if op.rows != self.layout[i] or op.cols != self.layout[j]:
                raise SpaceMismatchError(
                    f"block {(i, j)} maps {op.cols} -> {op.rows}, layout expects "
                    f"{self.layout[j]} -> {self.layout[i]}",
                    op.cols,
                    self.layout[j],
                )
            if op.matrix.nnz:
                self.blocks[(i, j)] = op
        self._matrix = None
        if self.tag in SKEW_TAGS:
            asym = self.skew_defect()
            if asym != 0.0:
                raise ValueError(f"{self.tag.value} operator is not exactly skew (defect {asym:.3e})")

    @property
    def dim(self) -> int:
        return layout_dim(self.layout)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.dof_count for s in self.layout])]).astype(int)

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            n = len(self.layout)
            grid = [[None] * n for _ in range(n)]
            for i, s in enumerate(self.layout):
                grid[i][i] = sp.csr_matrix((s.dof_count, s.dof_count))
            for (i, j), op in self.blocks.items():
                grid[i][j] = op.matrix
            mat = sp.csr_matrix(sp.bmat(grid, format="csr"))
            mat.eliminate_zeros()
            mat.sort_indices()
            self._matrix = mat
        return self._matrix

    def block(self, i: int, j: int) -> sp.csr_matrix:
        if (i, j) in self.blocks:
            return self.blocks[(i, j)].matrix
        return sp.csr_matrix((self.layout[i].dof_count, self.layout[j].dof_count))

    def skew_defect(self) -> float:
        m = self.matrix()
        return _max_abs(m + m.T)

    def is_skew(self) -> bool:
        return self.skew_defect() == 0.0

    @classmethod
    def from_matrix(cls, grid, layout, mat, tag=BlockTag.Custom) -> "BlockOp":
        layout = tuple(layout)
        off = np.concatenate([[0], np.cumsum([s.dof_count for s in layout])]).astype(int)
        mat = sp.csr_matrix(mat)
        if mat.shape != (off[-1], off[-1]):
            raise SpaceMismatchError(f"matrix shape {mat.shape} does not match layout", mat.shape, off[-1])
        blocks = {}
        for i in range(len(layout)):
            rows = mat[off[i] : off[i + 1]]
            for j in range(len(layout)):
                b = rows[:, off[j] : off[j + 1]]
                b.eliminate_zeros()
                if b.nnz:
                    blocks[(i, j)] = b
        return cls(grid, layout, blocks, tag)

    def _check_same(self, other: "BlockOp"):
        if self.grid != other.grid or self.layout != other.layout:
            raise SpaceMismatchError(
                "block operators have different layouts",
                [str(s) for s in self.layout],
                [str(s) for s in other.layout],
            )

    def __add__(self, other: "BlockOp") -> "BlockOp":
        self._check_same(other)
        return BlockOp.from_matrix(self.grid, self.layout, self.matrix() + other.matrix())

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c) -> "BlockOp":
        return BlockOp.from_matrix(self.grid, self.layout, float(c) * self.matrix())

    def __neg__(self):
        return (-1.0) * self

    def __matmul__(self, other):
        if isinstance(other, BlockOp):
            self._check_same(other)
            return BlockOp.from_matrix(self.grid, self.layout, self.matrix() @ other.matrix())
        return self.matrix() @ np.asarray(other)

    @property
    def T(self) -> "BlockOp":
        return BlockOp.from_matrix(self.grid, self.layout, self.matrix().T)

    def restrict(self, slots: Sequence[int], tag=BlockTag.Custom) -> "BlockOp":
        """Sub-operator on the listed slots."""
        slots = list(slots)
        layout = [self.layout[i] for i in slots]
        blocks = {}
        for a, i in enumerate(slots):
            for b, j in enumerate(slots):
                if (i, j) in self.blocks:
                    blocks[(a, b)] = self.blocks[(i, j)]
        return BlockOp(self.grid, layout, blocks, tag)

    def weighted(self, left: PointwiseOperator, right: PointwiseOperator) -> "BlockOp":
        if left.layout != self.layout or right.layout != self.layout:
            raise SpaceMismatchError("weight layout does not match operator layout", left.layout, self.layout)
        return BlockOp.from_matrix(
            self.grid, self.layout, left.matrix() @ self.matrix() @ right.matrix()
        )

    def __repr__(self):
        return f"BlockOp({self.tag.value}, slots={[str(s) for s in self.layout]}, nnz={self.matrix().nnz})"


# ---------------------------------------------------------------------------


def _complex_for(grid, complex_ops):
    if complex_ops is None:
        return build_complex(grid)
    if complex_ops.grid != grid:
        raise SpaceMismatchError("complex operators were built on a different grid", complex_ops.grid, grid)
    return complex_ops


def assemble_block(tag, grid: GridSpec, complex_ops: ComplexOps | None = None) -> BlockOp:
    """Assemble one of the tagged block operators.

    ``ADac``: div at (0,1), grad0 at (1,0).  ``ANac``: grad at (2,3), div0 at
    (3,2).  ``AMax``: -curl at (1,2), curl0 at (2,1).  ``Aac`` and
    ``Extended`` are the sums.  ``GEM`` is ``AMax + ADac`` on the first
    three slots.
    """
    try:
        tag = BlockTag(tag)
    except ValueError:
        raise ValueError(f"unknown block tag {tag!r}") from None
    cx = _complex_for(grid, complex_ops)
    layout = cx.slots
    dac = {(0, 1): cx.div, (1, 0): cx.grad0}
    nac = {(2, 3): cx.grad, (3, 2): cx.div0}
    mx = {(1, 2): -cx.curl, (2, 1): cx.curl0}
    if tag is BlockTag.ADac:
        return BlockOp(grid, layout, dac, tag)
    if tag is BlockTag.ANac:
        return BlockOp(grid, layout, nac, tag)
    if tag is BlockTag.AMax:
        return BlockOp(grid, layout, mx, tag)
    if tag is BlockTag.Aac:
        return BlockOp(grid, layout, {**dac, **nac}, tag)
    if tag is BlockTag.Extended:
        return BlockOp(grid, layout, {**dac, **nac, **mx}, tag)
    if tag is BlockTag.GEM:
        return BlockOp(grid, layout[:3], {**dac, **mx}, tag)
    raise ValueError(f"tag {tag.value} cannot be assembled from a complex")


def verify_annihilation(a: BlockOp, b: BlockOp) -> float:
    """Max-norm of the sparse product ``a @ b``."""
    a._check_same(b)
    return _max_abs(a.matrix() @ b.matrix())


def sqrtm_pointwise(E: PointwiseOperator) -> PointwiseWeight:
    """Principal square root of a pointwise SPD operator."""
    if not isinstance(E, PointwiseWeight):
        E = PointwiseWeight.from_operator(E)
    return E.sqrt()


def conjugate_weighted(parts: Iterable, E: PointwiseOperator) -> BlockOp:
    """Sum of ``W A W`` over ``parts``.

    Each part is ``(A, side)`` with ``side`` either ``"inverse"``
    (``W = sqrt(E)^-1``) or ``"direct"`` (``W = sqrt(E)``).
    """
    if not isinstance(E, PointwiseWeight):
        E = PointwiseWeight.from_operator(E)
    parts = list(parts)
    if not parts:
        raise ValueError("no parts to conjugate")
    total = None
    grid, layout = parts[0][0].grid, parts[0][0].layout
    for op, side in parts:
        if op.layout != E.layout or op.grid != E.grid:
            raise SpaceMismatchError("weight layout does not match operator layout", E.layout, op.layout)
        if side == "inverse":
            W = E.inv_sqrt().matrix()
        elif side == "direct":
            W = E.sqrt().matrix()
        else:
            raise ValueError(f"side must be 'inverse' or 'direct', got {side!r}")
        term = W @ op.matrix() @ W
        total = term if total is None else total + term
    return BlockOp.from_matrix(grid, layout, total)


def wave_identity_residual(grid: GridSpec, drop: str | None = None) -> float:
    """``max |(A_Max + A_ac)^2 - blockdiag(Lap)|`` on a periodic grid.

    ``drop`` removes one of ``"ADac"``, ``"ANac"``, ``"AMax"`` from the sum,
    which serves as a negative control.
    """
    if not grid.is_periodic:
        raise BackendError("the wave identity is only asserted on the periodic backend")
    cx = build_complex(grid)
    names = ["ADac", "ANac", "AMax"]
    if drop is not None and drop not in names:
        raise ValueError(f"drop must be one of {names}")
    A = None
    for name in names:
        if name == drop:
            continue
        term = assemble_block(name, grid, cx).matrix()
        A = term if A is None else A + term
    lap = sum(d.matrix @ d.matrix for d in cx.partials)
    target = sp.block_diag([lap] * 8, format="csr")
    return _max_abs(A @ A - target)


def permutation_matrix(layout: Sequence[EntitySpace] | None = None):
    """The slot permutation swapping the two scalar slots.

    Without a layout, returns the 4x4 pattern; with one, the sparse global
    permutation matrix.
    """
    if layout is None:
        return HAMILTONIAN_PERMUTATION.copy()
    layout = list(layout)
    if len(layout) != 4:
        raise SpaceMismatchError("permutation needs a four-slot layout", len(layout), 4)
    off = np.concatenate([[0], np.cumsum([s.dof_count for s in layout])]).astype(int)
    perm_layout = [layout[i] for i in (3, 1, 2, 0)]
    poff = np.concatenate([[0], np.cumsum([s.dof_count for s in perm_layout])]).astype(int)
    rows, cols = [], []
    for new, old in enumerate((3, 1, 2, 0)):
        n = layout[old].dof_count
        rows.append(np.arange(poff[new], poff[new] + n))
        cols.append(np.arange(off[old], off[old] + n))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(off[-1], off[-1]))


def hamiltonian_transform(a: BlockOp) -> BlockOp:
    """Conjugate by the scalar-slot swap; the result has layout (s3, v1, v2, s0)."""
    if len(a.layout) != 4 or a.layout[1].ncomp != a.layout[2].ncomp or a.layout[0].ncomp != a.layout[3].ncomp:
        raise SpaceMismatchError("hamiltonian_transform needs a scalar+vector+vector+scalar layout", a.layout, 4)
    sigma = (3, 1, 2, 0)
    layout = [a.layout[i] for i in sigma]
    blocks = {}
    for i in range(4):
        for j in range(4):
            key = (sigma[i], sigma[j])
            if key in a.blocks:
                op = a.blocks[key]
                blocks[(i, j)] = op
    tag = a.tag if a.tag in (BlockTag.Custom, BlockTag.Dirac) else BlockTag.Custom
    return BlockOp(a.grid, layout, blocks, tag)
