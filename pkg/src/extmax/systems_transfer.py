"""Concrete systems (Maxwell, extended Maxwell, GEM) and solution transfer.

Transfers are computed by applying discrete causal resolvents: with the
backward difference ``d0`` and ``B`` skew, ``(d0 + B)^-1`` is one implicit
Euler solve with ``M0 = 1``, ``M1 = 0``.  Because ``d0`` commutes with every
spatial matrix and the weighted parts annihilate each other as matrices,

    (d0 + B1)(d0 + B2) = d0 (d0 + B1 + B2)

holds for the discrete operators, and the transfer identities hold up to
linear-solver error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .block_systems import BlockOp, assemble_block, conjugate_weighted
from .discrete_ops import ComplexOps, GridSpec, build_complex
from .evo_solver import (
    CrankNicolson,
    ExponentialPropagator,
    ImplicitEuler,
    SourceTerm,
    TimeGrid,
    Trajectory,
    d0,
    d0_inv,
)
from .exceptions import SpaceMismatchError
from .material_laws import MaterialLaw
from .pointwise import PointwiseOperator, PointwiseWeight, pointwise_blockdiag

__all__ = [
    "INTEGRATORS",
    "maxwell_operator",
    "extended_parts",
    "extended_operator",
    "gem_parts",
    "gem_operator",
    "solve_maxwell",
    "solve_extended",
    "solve_gem",
    "resolvent",
    "evolution_residual",
    "extended_to_maxwell_rhs",
    "maxwell_to_extended_rhs",
    "BlockReductionReport",
    "block_reduction_check",
    "gem_transfer",
    "gem_embedding_weight",
    "factorization_residual",
]

INTEGRATORS = {
    "implicit_euler": ImplicitEuler,
    "crank_nicolson": CrankNicolson,
    "exponential": ExponentialPropagator,
}


def _integrator(method, tg):
    try:
        return INTEGRATORS[method].from_grid(tg)
    except KeyError:
        raise ValueError(f"unknown integrator {method!r}; choose from {sorted(INTEGRATORS)}") from None


def _weight(E) -> PointwiseWeight:
    return E if isinstance(E, PointwiseWeight) else PointwiseWeight.from_operator(E)


# ---------------------------------------------------------------------------
# operators


def maxwell_operator(grid: GridSpec, cx: ComplexOps | None = None) -> BlockOp:
    """``[[0, -curl], [curl0, 0]]`` on the (E, H) slots."""
    cx = cx or build_complex(grid)
    return assemble_block("AMax", grid, cx).restrict([1, 2], tag="AMax")


def extended_parts(E, grid: GridSpec | None = None, cx: ComplexOps | None = None) -> tuple[BlockOp, BlockOp]:
    """``(sqrt(E)^-1 A_Max sqrt(E)^-1, sqrt(E) A_ac sqrt(E))``."""
    E = _weight(E)
    grid = E.grid
    cx = cx or build_complex(grid)
    amax = conjugate_weighted([(assemble_block("AMax", grid, cx), "inverse")], E)
    aac = conjugate_weighted([(assemble_block("Aac", grid, cx), "direct")], E)
    return amax, aac


def extended_operator(E, cx: ComplexOps | None = None) -> BlockOp:
    amax, aac = extended_parts(E, cx=cx)
    return amax + aac


def gem_parts(E, cx: ComplexOps | None = None) -> tuple[BlockOp, BlockOp, BlockOp]:
    """Weighted ``A_Max``, ``A_Dac`` and ``A_Nac`` on the eight-slot layout."""
    E = _weight(E)
    grid = E.grid
    cx = cx or build_complex(grid)
    amax = conjugate_weighted([(assemble_block("AMax", grid, cx), "inverse")], E)
    dac = conjugate_weighted([(assemble_block("ADac", grid, cx), "direct")], E)
    nac = conjugate_weighted([(assemble_block("ANac", grid, cx), "direct")], E)
    return amax, dac, nac


def gem_operator(C, cx: ComplexOps | None = None) -> BlockOp:
    """``sqrt(C)^-1 A_Max sqrt(C)^-1 + sqrt(C) A_Dac sqrt(C)`` on (C, E, H)."""
    C = _weight(C)
    grid = C.grid
    cx = cx or build_complex(grid)
    ext = assemble_block("Extended", grid, cx)
    amax = ext.restrict([0, 1, 2])
    amax = BlockOp(grid, amax.layout, {k: v for k, v in amax.blocks.items() if k in ((1, 2), (2, 1))})
    dac = BlockOp(grid, amax.layout, {k: v for k, v in ext.blocks.items() if k in ((0, 1), (1, 0))})
    return conjugate_weighted([(amax, "inverse"), (dac, "direct")], C)


def gem_embedding_weight(C) -> PointwiseWeight:
    """``E = blockdiag(C, 1)`` used to embed GEM into the eight-slot system."""
    C = _weight(C)
    cx = build_complex(C.grid)
    return pointwise_blockdiag(C, PointwiseWeight.identity(C.grid, cx.slots[3:]))


# ---------------------------------------------------------------------------
# solves


def solve_maxwell(law: MaterialLaw, grid: GridSpec, F: SourceTerm, tg: TimeGrid, method: str = "implicit_euler") -> Trajectory:
    """``(d0 M0 + M1 + A_Max) (E, H) = F``; the electric boundary condition is built into curl0."""
    A = maxwell_operator(grid)
    if law is not None and law.layout != A.layout:
        raise SpaceMismatchError("law layout does not match the (E, H) slots", law.layout, A.layout)
    return _integrator(method, tg).fit(A, law).transform(F)


def solve_extended(E, grid: GridSpec, F: SourceTerm, tg: TimeGrid, method: str = "implicit_euler", drop_nac: bool = False) -> Trajectory:
    E = _weight(E)
    if E.grid != grid:
        raise SpaceMismatchError("weight and grid differ", E.grid, grid)
    if drop_nac:
        amax, dac, _ = gem_parts(E)
        A = amax + dac
    else:
        A = extended_operator(E)
    return _integrator(method, tg).fit(A, None).transform(F)


def solve_gem(C, grid: GridSpec, F: SourceTerm, tg: TimeGrid, method: str = "implicit_euler") -> Trajectory:
    C = _weight(C)
    if C.grid != grid:
        raise SpaceMismatchError("weight and grid differ", C.grid, grid)
    return _integrator(method, tg).fit(gem_operator(C), None).transform(F)


def resolvent(B, F: SourceTerm, tg: TimeGrid) -> np.ndarray:
    """Samples of ``(d0 + B)^-1 F`` (implicit Euler with unit mass)."""
    return ImplicitEuler.from_grid(tg).fit(B, None).transform(F).samples


def evolution_residual(B, U: np.ndarray, F, tg: TimeGrid, M0=None) -> float:
    """``max |(d0 M0 + B) U - F|`` with ``F`` a source or rhs samples."""
    Bm = B.matrix() if hasattr(B, "matrix") else sp.csr_matrix(B)
    rhs = F.as_rhs(tg) if isinstance(F, SourceTerm) else np.asarray(F)
    dU = d0(U, tg)
    if M0 is not None:
        M0 = M0.matrix() if hasattr(M0, "matrix") else M0
        dU = (M0 @ dU.T).T
    res = dU + (Bm @ U.T).T - rhs
    return float(np.max(np.abs(res))) if res.size else 0.0


def _reg_source(samples) -> SourceTerm:
    return SourceTerm(np.asarray(samples))


def extended_to_maxwell_rhs(Ft: SourceTerm, E, tg: TimeGrid) -> SourceTerm:
    """``F = d0 (d0 + sqrt(E) A_ac sqrt(E))^-1 Ft``."""
    _, aac = extended_parts(E)
    return _reg_source(d0(resolvent(aac, Ft, tg), tg))


def maxwell_to_extended_rhs(F: SourceTerm, E, tg: TimeGrid) -> SourceTerm:
    """``Ft = (1 + d0^-1 sqrt(E) A_ac sqrt(E)) F``."""
    _, aac = extended_parts(E)
    rhs = F.as_rhs(tg)
    return _reg_source(rhs + d0_inv((aac.matrix() @ rhs.T).T, tg))


@dataclass
class BlockReductionReport:
    scalar_slot_max: float
    maxwell_deviation: float
    scalar_tol: float
    maxwell_tol: float
    failed: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed


def block_reduction_check(F: SourceTerm, E, tg: TimeGrid, scalar_tol: float = 1e-12, maxwell_tol: float = 1e-10) -> BlockReductionReport:
    """Solve ``(d0 + sqrt(E)^-1 A_Max sqrt(E)^-1) V = F`` and compare with the reduced Maxwell system.

    Asserts ``V0 = V3 = 0`` and that ``(V1, V2)`` solves
    ``(d0 + sqrt(M0)^-1 A sqrt(M0)^-1) W = (F1, F2)`` with ``M0`` the (E, H)
    block of ``E``.
    """
    E = _weight(E)
    grid = E.grid
    cx = build_complex(grid)
    amax, _ = extended_parts(E, cx=cx)
    V = ImplicitEuler.from_grid(tg).fit(amax, None).transform(F)
    scal = max(float(np.max(np.abs(V.slot(0)))), float(np.max(np.abs(V.slot(3)))))
    M0 = PointwiseWeight.from_operator(E.restrict([1, 2]))
    reduced = conjugate_weighted([(maxwell_operator(grid, cx), "inverse")], M0)
    off = V.slot_offsets()
    sel = slice(off[1], off[3])
    F12 = F.as_rhs(tg)[:, sel]
    W = ImplicitEuler.from_grid(tg).fit(reduced, None).transform(SourceTerm(F12)).samples
    dev = float(np.max(np.abs(W - V.samples[:, sel])))
    failed = []
    if not scal <= scalar_tol:
        failed.append(f"scalar slots: max |V0|, |V3| = {scal:.3e} > {scalar_tol:g}")
    if not dev <= maxwell_tol:
        failed.append(f"Maxwell block: deviation {dev:.3e} > {maxwell_tol:g}")
    return BlockReductionReport(scal, dev, scalar_tol, maxwell_tol, failed)


def gem_transfer(F: SourceTerm, E, tg: TimeGrid, direction: str) -> SourceTerm:
    """Data transfer between the GEM-reduced and the full eight-slot system.

    ``direction="to_full"``: ``Ft = (1 + d0^-1 sqrt(E) A_Nac sqrt(E)) F``.
    ``direction="to_reduced"``: ``F = d0 (d0 + sqrt(E) A_Nac sqrt(E))^-1 Ft``.
    ``E`` must make the three weighted parts annihilate pairwise, which is
    checked.
    """
    E = _weight(E)
    amax, dac, nac = gem_parts(E)
    worst = 0.0
    for a, b in ((amax, dac), (amax, nac), (dac, nac)):
        for x, y in ((a, b), (b, a)):
            prod = x.matrix() @ y.matrix()
            if prod.nnz:
                worst = max(worst, float(np.max(np.abs(prod.data))))
    scale = max(float(np.max(np.abs(amax.matrix().data), initial=0)), float(np.max(np.abs(dac.matrix().data), initial=0)), float(np.max(np.abs(nac.matrix().data), initial=0)), 1.0)
    if worst > 1e-12 * scale**2:
        raise SpaceMismatchError(
            f"weight does not have the GEM block form: weighted parts fail to annihilate ({worst:.3e})", "E", "GEM"
        )
    if direction == "to_full":
        rhs = F.as_rhs(tg)
        return _reg_source(rhs + d0_inv((nac.matrix() @ rhs.T).T, tg))
    if direction == "to_reduced":
        return _reg_source(d0(resolvent(nac, F, tg), tg))
    raise ValueError(f"direction must be 'to_full' or 'to_reduced', got {direction!r}")


def factorization_residual(B1, B2, tg: TimeGrid, rng=None, nvec: int = 3) -> float:
    """``max |(d0 + B1)(d0 + B2) X - d0 (d0 + B1 + B2) X|`` over random sequences ``X``.

    The result is relative to the size of the terms.
    """
    rng = np.random.default_rng(rng)
    B1m = B1.matrix() if hasattr(B1, "matrix") else sp.csr_matrix(B1)
    B2m = B2.matrix() if hasattr(B2, "matrix") else sp.csr_matrix(B2)
    worst = 0.0
    for _ in range(nvec):
        X = rng.standard_normal((tg.steps, B1m.shape[0]))

        def op(B, Y):
            return d0(Y, tg) + (B @ Y.T).T

        lhs = op(B1m, op(B2m, X))
        rhs = d0(op(B1m + B2m, X), tg)
        scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)))
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / scale))
    return worst
