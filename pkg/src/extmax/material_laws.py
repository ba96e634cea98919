"""Affine material laws ``M0 + d0^-1 M1`` and their positivity certificates.

All laws are local, so (H1) and (H2) reduce to small dense eigenvalue
problems per grid point (or per degree of freedom on the staggered grid).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .discrete_ops import ComplexOps, GridSpec, build_complex, entity_coordinates
from .exceptions import BackendError, MaterialLawError, SchurConditionError, SpaceMismatchError
from .pointwise import PointwiseOperator, PointwiseWeight

__all__ = [
    "MaterialLaw",
    "PositivityReport",
    "verify_H1_H2",
    "eddy_current_preset",
    "vacuum_law",
    "stitch_laws",
    "profile_field",
    "build_gem_material",
    "random_gem_material",
]


@dataclass(frozen=True)
class PositivityReport:
    nu: float
    c0: float
    min_eig_estimate: float
    method: str
    point: int = -1

    def __post_init__(self):
        if self.c0 > self.min_eig_estimate:
            raise ValueError("certified bound exceeds the eigenvalue estimate")


class MaterialLaw:
    """Pair ``(M0, M1)`` of local operators on a common layout."""

    def __init__(self, M0: PointwiseOperator, M1: PointwiseOperator | None = None):
        if M1 is None:
            M1 = PointwiseOperator.zeros(M0.grid, M0.layout)
        if M0.grid != M1.grid or M0.layout != M1.layout:
            raise SpaceMismatchError("M0 and M1 live on different layouts", M0.layout, M1.layout)
        self.M0 = M0
        self.M1 = M1
        self.report: PositivityReport | None = None

    @property
    def grid(self) -> GridSpec:
        return self.M0.grid

    @property
    def layout(self):
        return self.M0.layout

    @property
    def dim(self) -> int:
        return self.M0.dim

    def certify(self, nu: float) -> "MaterialLaw":
        self.report = verify_H1_H2(self, nu)
        return self

    @property
    def c0(self) -> float:
        if self.report is None:
            raise MaterialLawError("law has not been certified", "H2", None, None)
        return self.report.c0

    def __repr__(self):
        cert = f", c0={self.report.c0:.4g} at nu={self.report.nu:g}" if self.report else ""
        return f"MaterialLaw(dim={self.dim}{cert})"


def vacuum_law(grid: GridSpec, layout) -> MaterialLaw:
    return MaterialLaw(PointwiseOperator.identity(grid, layout))


def verify_H1_H2(law: MaterialLaw, nu: float) -> PositivityReport:
    """Certify ``M0 = M0^T`` and ``nu M0 + sym(M1) >= c0 > 0``.

    ``c0`` is the exact minimum over points of the smallest eigenvalue of
    the local symmetric block.
    """
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    asym = law.M0.asym_max()
    if asym != 0.0:
        raise MaterialLawError(f"(H1) fails: max |M0 - M0^T| = {asym:.3e}", "H1", None, asym)
    S = float(nu) * law.M0 + law.M1.sym()
    lam, p = S.min_eig()
    if not lam > 0.0:
        raise MaterialLawError(
            f"(H2) fails at point {p}: smallest eigenvalue of nu*M0 + sym(M1) is {lam:.6g}",
            "H2",
            p,
            lam,
        )
    return PositivityReport(float(nu), lam, lam, "pointwise symmetric eigensolve", p)


# ---------------------------------------------------------------------------
# presets


def profile_field(cx: ComplexOps, slot: int, profile: str, value, value2=None, axis: int = 0):
    """Per-DOF coefficient field for one slot.

    ``constant`` gives ``value`` everywhere; ``two_region`` gives ``value``
    where the coordinate along ``axis`` is below half the box length and
    ``value2`` elsewhere.
    """
    n = cx.slots[slot].dof_count
    if profile == "constant":
        return np.full(n, float(value))
    if profile == "two_region":
        if value2 is None:
            raise ValueError("two_region profile needs a second value")
        x = entity_coordinates(cx, slot)[:, axis]
        half = 0.5 * cx.grid.lengths[axis]
        return np.where(x < half, float(value), float(value2))
    raise ValueError(f"unknown profile {profile!r} (expected 'constant' or 'two_region')")


def _field(space, value, name):
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        v = np.full(space.dof_count, float(v))
    elif v.size == space.npoints and space.ncomp > 1:
        v = np.tile(v.ravel(), space.ncomp)
    if v.shape != (space.dof_count,):
        raise SpaceMismatchError(f"{name} has {v.size} values, expected {space.dof_count}", v.shape, space)
    return v


def eddy_current_preset(grid: GridSpec, sigma, mu, complex_ops: ComplexOps | None = None) -> MaterialLaw:
    """``M0 = diag(0, mu)``, ``M1 = diag(sigma, 0)`` on the (E, H) layout."""
    cx = complex_ops or build_complex(grid)
    layout = (cx.v1, cx.v2)
    s = _field(cx.v1, sigma, "sigma")
    m = _field(cx.v2, mu, "mu")
    if np.any(s <= 0) or np.any(m <= 0):
        raise MaterialLawError("eddy-current coefficients must be positive", "H2", None, min(s.min(), m.min()))
    M0 = PointwiseOperator(grid, layout, diag=np.concatenate([np.zeros_like(s), m]))
    M1 = PointwiseOperator(grid, layout, diag=np.concatenate([s, np.zeros_like(m)]))
    return MaterialLaw(M0, M1)


def stitch_laws(mask, law_a: MaterialLaw, law_b: MaterialLaw) -> MaterialLaw:
    """Take ``law_a`` where ``mask`` is true and ``law_b`` elsewhere.

    ``mask`` is per point on the periodic backend and per DOF otherwise.
    """
    if law_a.layout != law_b.layout:
        raise SpaceMismatchError("laws live on different layouts", law_a.layout, law_b.layout)
    mask = np.asarray(mask, dtype=bool)

    def pick(a, b):
        if a.blocks is not None:
            blocks = np.where(mask[:, None, None], a.blocks, b.blocks)
            return PointwiseOperator(a.grid, a.layout, blocks=blocks)
        return PointwiseOperator(a.grid, a.layout, diag=np.where(mask, a.diag, b.diag))

    return MaterialLaw(pick(law_a.M0, law_b.M0), pick(law_a.M1, law_b.M1))


def build_gem_material(Cblock: PointwiseOperator, K, S_gem, tol: float = 0.0) -> PointwiseWeight:
    """Assemble the eight-component weight ``[[C, (0,0,S)], [(0,0,S)^T, K]]``.

    ``Cblock`` lives on the first three slots (scalar, vector, vector) and
    must not couple the last vector slot to the first two.  ``K`` is a
    scalar field, ``S_gem`` a vector field coupling the last vector slot to
    the trailing scalar slot.  The Schur complement ``K - S^T C^-1 S`` is
    checked per point.
    """
    grid = Cblock.grid
    cx = build_complex(grid)
    if tuple(Cblock.layout) != cx.slots[:3]:
        raise SpaceMismatchError("C must live on the scalar+vector+vector slots", Cblock.layout, cx.slots[:3])
    if not isinstance(Cblock, PointwiseWeight):
        Cblock = PointwiseWeight.from_operator(Cblock)
    layout = cx.slots
    N = grid.npoints
    if not grid.is_periodic:
        S = np.asarray(S_gem, dtype=float)
        if np.any(S):
            raise BackendError("a nonzero S couples faces to cells, which the staggered backend cannot represent")
        k = _field(cx.s3, K, "K")
        if np.any(k <= 0):
            p = int(np.argmin(k))
            raise SchurConditionError(f"Schur condition fails at DOF {p}: value {k[p]:.6g}", p, float(k[p]))
        return PointwiseWeight(grid, layout, diag=np.concatenate([Cblock.diag, k]))
    c01_2 = Cblock.slot_block(0, 2), Cblock.slot_block(1, 2)
    if any(np.any(b) for b in c01_2):
        raise SpaceMismatchError("C must have zero coupling between the last vector slot and the rest", "C", "block form")
    k = np.broadcast_to(np.asarray(K, dtype=float), (N,))
    S = np.broadcast_to(np.asarray(S_gem, dtype=float), (N, 3))
    Cinv = Cblock.inverse().blocks
    s_full = np.zeros((N, 7))
    s_full[:, 4:7] = S
    schur = k - np.einsum("pi,pij,pj->p", s_full, Cinv, s_full)
    p = int(np.argmin(schur))
    if not schur[p] > tol:
        raise SchurConditionError(
            f"Schur condition K - S^T C^-1 S > 0 fails at point {p}: value {schur[p]:.6g}", p, float(schur[p])
        )
    blocks = np.zeros((N, 8, 8))
    blocks[:, :7, :7] = Cblock.blocks
    blocks[:, 4:7, 7] = S
    blocks[:, 7, 4:7] = S
    blocks[:, 7, 7] = k
    return PointwiseWeight(grid, layout, blocks=blocks)


def random_gem_material(grid: GridSpec, rng, spread: float = 0.3, coupling: float = 0.5) -> PointwiseWeight:
    """Random Schur-feasible GEM weight (periodic backend)."""
    rng = np.random.default_rng(rng)
    cx = build_complex(grid)
    N = grid.npoints
    C01 = PointwiseWeight.random(grid, cx.slots[:2], rng, spread).blocks
    C22 = PointwiseWeight.random(grid, cx.slots[2:3], rng, spread).blocks
    blocks = np.zeros((N, 7, 7))
    blocks[:, :4, :4] = C01
    blocks[:, 4:, 4:] = C22
    C = PointwiseWeight(grid, cx.slots[:3], blocks=blocks)
    S = coupling * rng.uniform(-1, 1, (N, 3))
    quad = np.einsum("pi,pij,pj->p", S, np.linalg.inv(C22), S)
    K = quad + rng.uniform(0.5, 1.5, N)
    return build_gem_material(C, K, S)
