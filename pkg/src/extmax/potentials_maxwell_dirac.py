"""Potentials from Maxwell fields, gauge bookkeeping and the coupled
Maxwell-Dirac system.

Potentials solve the extended system with the opposite sign,

    (d0 - A) alpha = (0, E, H, 0) + delta (0, alpha10, 0, 0),

with ``A`` the unweighted extended operator.  The coupled system stacks an
extended Maxwell block, a spinor block and a potential block.  Every time
step is one implicit Euler step of all three blocks, with the quadratic
couplings ``rho``, ``J`` and ``g`` evaluated at the previous Picard iterate.
"""

from __future__ import annotations

import warnings
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .block_systems import BlockOp, BlockTag, assemble_block
from .dirac import extended_coefficients, m1_standard
from .discrete_ops import ComplexOps, GridSpec, build_complex
from .evo_solver import ImplicitEuler, SourceTerm, TimeGrid, Trajectory, d0, d0_inv
from .exceptions import (
    AdmissibilityError,
    BackendError,
    CommutationError,
    PicardDivergence,
    SpaceMismatchError,
)
from .material_laws import vacuum_law
from .systems_transfer import solve_maxwell

__all__ = [
    "PotentialHypothesisWarning",
    "PotentialState",
    "PotentialReport",
    "GaugeResult",
    "solve_potential",
    "verify_potential",
    "range_check",
    "gauge_transform",
    "compatibility_rhs",
    "validate_couplings",
    "default_commuting_S",
    "assemble_coupled",
    "coupling_J",
    "coupling_g",
    "CoupledTrajectory",
    "solve_maxwell_dirac",
    "charge_residual",
    "global_charge",
    "random_potential_scenario",
    "random_admissible_scenario",
]

COMMUTATION_TOL = 1e-13


class PotentialHypothesisWarning(UserWarning):
    """Initial data do not satisfy ``H0 = -curl0 alpha10``."""


def _mat(op):
    return sp.csr_matrix(getattr(op, "matrix", op))


def _origin_index(tg: TimeGrid) -> int:
    """Index of ``t = 0``, where the initial data enter."""
    try:
        return tg.index_of(0.0)
    except ValueError:
        raise ValueError(f"t = 0 must be a sample of the time grid (t0={tg.t0}, tau={tg.tau})") from None


def _step_mask(tg: TimeGrid) -> np.ndarray:
    mask = np.zeros(tg.steps)
    mask[_origin_index(tg) :] = 1.0
    return mask


def _l2(grid: GridSpec, x, axis=-1):
    return np.sqrt(grid.cell_volume * np.sum(np.asarray(x) ** 2, axis=axis))


# ---------------------------------------------------------------------------
# potentials


@dataclass
class PotentialState:
    """Potential trajectory ``alpha = (alpha0, alpha1, alpha2, alpha3)``."""

    trajectory: Trajectory
    alpha10: np.ndarray
    grid: GridSpec
    diagnostics: dict = field(default_factory=dict)

    def component(self, i: int) -> np.ndarray:
        return self.trajectory.slot(i)

    @property
    def alpha0(self):
        return self.component(0)

    @property
    def alpha1(self):
        return self.component(1)

    @property
    def alpha2(self):
        return self.component(2)

    @property
    def alpha3(self):
        return self.component(3)


def _eh_samples(EH, cx: ComplexOps) -> np.ndarray:
    X = EH.samples if isinstance(EH, Trajectory) else np.asarray(EH, dtype=float)
    n = cx.v1.dof_count + cx.v2.dof_count
    if X.ndim != 2 or X.shape[1] != n:
        raise SpaceMismatchError(f"(E, H) samples have shape {X.shape}, expected (steps, {n})", X.shape, n)
    return X


def range_check(H0, grid: GridSpec, cx: ComplexOps | None = None) -> float:
    """Relative least-squares residual of ``curl0 x = H0``.

    Zero (to rounding) exactly when ``H0`` lies in the range of ``curl0``.
    """
    cx = cx or build_complex(grid)
    H0 = np.asarray(H0, dtype=float)
    nrm = np.linalg.norm(H0)
    if nrm == 0:
        return 0.0
    C = _mat(cx.curl0).toarray()
    x, *_ = np.linalg.lstsq(C, H0, rcond=None)
    return float(np.linalg.norm(C @ x - H0) / nrm)


def solve_potential(EH, alpha10, grid: GridSpec, tg: TimeGrid, H0=None, cx: ComplexOps | None = None) -> PotentialState:
    """Causal solve of ``(d0 - A) alpha = (0, E, H, 0) + delta (0, alpha10, 0, 0)``.

    Passing ``H0`` enables the hypothesis check ``H0 + curl0 alpha10 = 0``;
    a violation only warns, since the solve itself is well defined.
    """
    cx = cx or build_complex(grid)
    X = _eh_samples(EH, cx)
    if X.shape[0] != tg.steps:
        raise SpaceMismatchError("field trajectory and time grid differ in length", X.shape[0], tg.steps)
    alpha10 = np.asarray(alpha10, dtype=float).ravel()
    if alpha10.size != cx.v1.dof_count:
        raise SpaceMismatchError("alpha10 does not live on the first vector slot", alpha10.size, cx.v1.dof_count)
    A = assemble_block(BlockTag.Extended, grid, cx)
    n0 = cx.s0.dof_count
    n3 = cx.s3.dof_count
    reg = np.zeros((tg.steps, A.dim))
    reg[:, n0 : n0 + X.shape[1]] = X
    imp = np.zeros(A.dim)
    imp[n0 : n0 + alpha10.size] = alpha10
    F = SourceTerm(reg, [(_origin_index(tg), imp)])
    diag = {}
    if H0 is not None:
        mismatch = float(np.max(np.abs(np.asarray(H0, dtype=float) + _mat(cx.curl0) @ alpha10), initial=0.0))
        diag["initial_mismatch"] = mismatch
        if mismatch > 1e-10:
            warnings.warn(
                f"H0 + curl0 alpha10 = {mismatch:.3e}; alpha2 and alpha3 need not vanish",
                PotentialHypothesisWarning,
                stacklevel=2,
            )
    traj = ImplicitEuler.from_grid(tg).fit(-A).transform(F)
    comp = traj.component_norms()
    diag.update({"max_norm_alpha2": float(comp[:, 2].max()), "max_norm_alpha3": float(comp[:, 3].max()), "s3_dofs": n3})
    return PotentialState(traj, alpha10, grid, diag)


@dataclass
class PotentialReport:
    clauses: dict
    tol: float

    @property
    def failed(self) -> list:
        return [k for k, v in self.clauses.items() if not v <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed

    def __str__(self):
        parts = ", ".join(f"({k}) {v:.3e}" for k, v in self.clauses.items())
        status = "ok" if self.passed else "failed: " + ",".join(self.failed)
        return f"potential check {status} [{parts}, tol {self.tol:g}]"


def verify_potential(alpha, EH, alpha10, tg: TimeGrid, tol: float = 1e-8, cx: ComplexOps | None = None) -> PotentialReport:
    """Check the three clauses characterising a potential of ``(E, H)``.

    (a) ``alpha2 = alpha3 = 0``; (b) ``E = d0(alpha1 - step alpha10) - grad0 alpha0``;
    (c) ``H = -curl0 alpha1``.  Each value is the maximum over time of the
    discrete L2 norm.
    """
    traj = alpha.trajectory if isinstance(alpha, PotentialState) else alpha
    grid = alpha.grid if isinstance(alpha, PotentialState) else None
    if grid is None:
        raise ValueError("pass a PotentialState (the grid is needed for the spatial operators)")
    cx = cx or build_complex(grid)
    X = _eh_samples(EH, cx)
    nE = cx.v1.dof_count
    E, H = X[:, :nE], X[:, nE:]
    a0, a1, a2, a3 = (traj.slot(i) for i in range(4))
    step = _step_mask(tg)[:, None] * np.asarray(alpha10, dtype=float).ravel()[None, :]
    grad0 = _mat(cx.grad0)
    curl0 = _mat(cx.curl0)
    rb = E - d0(a1 - step, tg) + (grad0 @ a0.T).T
    rc = H + (curl0 @ a1.T).T
    clauses = {
        "a": float(max(_l2(grid, a2).max(), _l2(grid, a3).max())),
        "b": float(_l2(grid, rb).max()),
        "c": float(_l2(grid, rc).max()),
    }
    return PotentialReport(clauses, tol)


@dataclass
class GaugeResult:
    alpha: Trajectory
    shift: np.ndarray
    residual: float


def gauge_transform(alpha, phi, tg: TimeGrid, tol: float = 1e-10, cx: ComplexOps | None = None) -> GaugeResult:
    """``alpha' = alpha + (d0 phi, grad0 phi, 0, 0)`` and the right-hand side shift.

    The shift is ``((d0^2 - div grad0) phi, 0, 0, 0)``; the residual of
    ``(d0 - A) alpha' - (d0 - A) alpha - shift`` is computed directly and
    must stay below ``tol``.
    """
    state = alpha if isinstance(alpha, PotentialState) else None
    traj = state.trajectory if state else alpha
    grid = state.grid if state else None
    if grid is None:
        raise ValueError("pass a PotentialState (the grid is needed for the spatial operators)")
    cx = cx or build_complex(grid)
    phi = np.asarray(phi, dtype=float)
    n0 = cx.s0.dof_count
    n1 = cx.v1.dof_count
    if phi.shape != (tg.steps, n0):
        raise SpaceMismatchError(f"phi has shape {phi.shape}, expected {(tg.steps, n0)}", phi.shape, (tg.steps, n0))
    grad0 = _mat(cx.grad0)
    div = _mat(cx.div)
    delta = np.zeros_like(traj.samples)
    delta[:, :n0] = d0(phi, tg)
    delta[:, n0 : n0 + n1] = (grad0 @ phi.T).T
    shift = np.zeros_like(traj.samples)
    shift[:, :n0] = d0(d0(phi, tg), tg) - (div @ (grad0 @ phi.T)).T
    A = assemble_block(BlockTag.Extended, grid, cx).matrix()

    def L(X):
        return d0(X, tg) - (A @ X.T).T

    new = Trajectory(traj.samples + delta, traj.grid, traj.layout, dict(traj.metadata, gauge=True), traj.cell_volume)
    res = L(new.samples) - L(traj.samples) - shift
    scale = max(1.0, float(np.max(np.abs(shift), initial=0.0)))
    residual = float(np.max(np.abs(res), initial=0.0)) / scale
    if residual > tol:
        raise AssertionError(f"gauge identity residual {residual:.3e} exceeds {tol:g}")
    return GaugeResult(new, shift, residual)


def compatibility_rhs(J, E0, tg: TimeGrid, grid: GridSpec, cx: ComplexOps | None = None) -> np.ndarray:
    """``rho^n = -div (d0^-1 J)^n + div E0`` for ``t_n >= 0``."""
    cx = cx or build_complex(grid)
    div = _mat(cx.div)
    J = np.asarray(J, dtype=float)
    if J.shape != (tg.steps, cx.v1.dof_count):
        raise SpaceMismatchError(f"J has shape {J.shape}", J.shape, (tg.steps, cx.v1.dof_count))
    q = div @ np.asarray(E0, dtype=float)
    return -(div @ d0_inv(J, tg).T).T + _step_mask(tg)[:, None] * q[None, :]


# ---------------------------------------------------------------------------
# couplings


def validate_couplings(A_k, S, tol: float = COMMUTATION_TOL, require_skew: bool = True):
    """Check ``A_k`` symmetric, ``S`` skew and ``S A_k = A_k S``."""
    A_k = [np.asarray(a, dtype=float) for a in A_k]
    S = np.asarray(S, dtype=float)
    if len(A_k) != 3 or any(a.shape != (8, 8) for a in A_k) or S.shape != (8, 8):
        raise SpaceMismatchError("expected three 8x8 matrices A_k and an 8x8 S", [a.shape for a in A_k], S.shape)
    for k, a in enumerate(A_k):
        asym = float(np.max(np.abs(a - a.T)))
        if asym > tol:
            raise ValueError(f"A_{k + 1} is not symmetric (max |A - A^T| = {asym:.3e})")
    skew = float(np.max(np.abs(S + S.T)))
    if require_skew and skew > tol:
        raise ValueError(f"S is not skew (max |S + S^T| = {skew:.3e})")
    for k, a in enumerate(A_k):
        c = float(np.max(np.abs(S @ a - a @ S)))
        if c > tol:
            raise CommutationError(f"S does not commute with A_{k + 1}: max |[S, A_k]| = {c:.3e}", k + 1, c)
    return A_k, S


def _rref(M, tol=1e-10):
    M = np.array(M, dtype=float)
    r = 0
    rows, cols = M.shape
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(M[r:, c])))
        if abs(M[p, c]) <= tol:
            continue
        M[[r, p]] = M[[p, r]]
        M[r] /= M[r, c]
        for i in range(rows):
            if i != r:
                M[i] -= M[i, c] * M[r]
        r += 1
    M[np.abs(M) < tol] = 0.0
    return M[:r]


def _snap_rational(x, max_den: int = 64, tol: float = 1e-9):
    """Replace entries within ``tol`` of a small-denominator rational by that rational."""
    out = np.array(x, dtype=float)
    for i, v in np.ndenumerate(out):
        q = Fraction(float(v)).limit_denominator(max_den)
        if abs(float(q) - v) <= tol:
            out[i] = float(q)
    return out


def default_commuting_S(A_k=None) -> tuple[np.ndarray, dict]:
    """Skew ``S`` commuting with every ``A_k``, from a null-space computation.

    ``S`` is expanded in the basis ``E_ij - E_ji`` (``i < j``, row-major
    order).  The commutator constraints are stacked into one matrix whose
    null space is brought to reduced row echelon form and snapped to the
    nearby small rationals; the first row gives ``S``, scaled to unit
    max-norm.  If the null space is trivial, ``S = 0``.
    """
    A_k = extended_coefficients() if A_k is None else [np.asarray(a, dtype=float) for a in A_k]
    pairs = [(i, j) for i in range(8) for j in range(i + 1, 8)]
    basis = []
    for i, j in pairs:
        B = np.zeros((8, 8))
        B[i, j], B[j, i] = 1.0, -1.0
        basis.append(B)
    C = np.stack([np.concatenate([(B @ a - a @ B).ravel() for a in A_k]) for B in basis], axis=1)
    ns = sla.null_space(C)
    info = {"null_space_dim": int(ns.shape[1])}
    if ns.shape[1] == 0:
        info["note"] = "no nonzero skew matrix commutes with all A_k; using S = 0"
        return np.zeros((8, 8)), info
    # the constraints are integer, so the exact echelon basis is rational
    coeff = _snap_rational(_rref(ns.T)[0])
    S = np.einsum("b,bij->ij", coeff, np.array(basis))
    S /= np.max(np.abs(S))
    info["commutator_norm"] = float(max(np.max(np.abs(S @ a - a @ S)) for a in A_k))
    return S, info


def _spatial_from_coefficients(A_k, cx: ComplexOps) -> sp.csr_matrix:
    return sp.csr_matrix(sum(sp.kron(sp.csr_matrix(a), _mat(D)) for a, D in zip(A_k, cx.partials)))


def assemble_coupled(A_k, S, grid: GridSpec, m1=None, cx: ComplexOps | None = None, require_skew: bool = True) -> BlockOp:
    """``blockdiag(A, A, -A) + blockdiag(0, M1, 0)`` with ``A = sum_k A_k (x) D_k``.

    The layout is three copies of (s0, v1, v2, s3): Maxwell, spinor,
    potential.  ``S`` does not enter the linear operator but is validated
    against the ``A_k`` here.
    """
    if not grid.is_periodic:
        raise BackendError("the coupled system needs the collocated periodic backend")
    A_k, S = validate_couplings(A_k, S, require_skew=require_skew)
    cx = cx or build_complex(grid)
    N = grid.npoints
    m1 = m1_standard() if m1 is None else np.asarray(m1, dtype=float)
    A = _spatial_from_coefficients(A_k, cx)
    M1 = sp.kron(sp.csr_matrix(m1), sp.identity(N, format="csr"))
    mat = sp.block_diag([A, M1 + A, -A], format="csr")
    return BlockOp.from_matrix(grid, cx.slots * 3, mat, BlockTag.Custom)


def coupling_J(psi, A_k=None) -> np.ndarray:
    """``J_k = <psi, A_k psi>`` per point; ``psi`` has shape ``(..., 8N)``."""
    A_k = extended_coefficients() if A_k is None else A_k
    psi = np.asarray(psi, dtype=float)
    P = psi.reshape(psi.shape[:-1] + (8, -1))
    J = np.einsum("...ip,kij,...jp->...kp", P, np.asarray(A_k), P)
    return J.reshape(psi.shape[:-1] + (-1,))


def coupling_g(psi, alpha0, alpha_coeffs, S, A_k=None) -> np.ndarray:
    """``g = alpha0 S psi + sum_k alpha_k S A_k psi`` per point."""
    A_k = extended_coefficients() if A_k is None else A_k
    psi = np.asarray(psi, dtype=float)
    P = psi.reshape(psi.shape[:-1] + (8, -1))
    a0 = np.asarray(alpha0, dtype=float)
    M = sum(float(c) * (S @ a) for c, a in zip(alpha_coeffs, A_k))
    g = np.einsum("ij,...jp->...ip", S, P) * a0[..., None, :] if a0.ndim else np.einsum("ij,...jp->...ip", S, P) * a0
    g = g + np.einsum("ij,...jp->...ip", M, P)
    return g.reshape(psi.shape)


# ---------------------------------------------------------------------------
# coupled solve


@dataclass
class CoupledTrajectory:
    """Samples of ``(U, psi, alpha)``, each in the (s0, v1, v2, s3) layout."""

    samples: np.ndarray
    grid: GridSpec
    tg: TimeGrid
    S: np.ndarray
    A_k: tuple
    iterations: np.ndarray
    contraction: np.ndarray
    rho_background: float
    metadata: dict = field(default_factory=dict)

    @property
    def block_dim(self) -> int:
        return 8 * self.grid.npoints

    def block(self, i: int) -> np.ndarray:
        n = self.block_dim
        return self.samples[:, i * n : (i + 1) * n]

    @property
    def U(self):
        return self.block(0)

    @property
    def psi(self):
        return self.block(1)

    @property
    def alpha(self):
        return self.block(2)

    @property
    def J(self):
        return coupling_J(self.psi, self.A_k)

    def density(self) -> np.ndarray:
        """``|psi|^2`` per point and step."""
        P = self.psi.reshape(self.tg.steps, 8, -1)
        return np.sum(P**2, axis=1)


def _check_admissible(cx, E0, H0, psi0, alpha10, rho_bg, tol):
    N = cx.grid.npoints
    dens = np.sum(psi0.reshape(8, N) ** 2, axis=0)
    r1 = float(np.max(np.abs(dens - rho_bg - _mat(cx.div) @ E0)))
    if r1 > tol:
        raise AdmissibilityError(f"|psi0|^2 - rho_bg - div E0 = {r1:.3e} exceeds {tol:g}", r1)
    r2 = float(np.max(np.abs(H0 + _mat(cx.curl0) @ alpha10)))
    if r2 > tol:
        raise AdmissibilityError(f"H0 + curl0 alpha10 = {r2:.3e} exceeds {tol:g}", r2)
    return max(r1, r2)


def solve_maxwell_dirac(
    grid: GridSpec,
    E0,
    H0,
    psi0,
    alpha10,
    tg: TimeGrid,
    S=None,
    alpha_coeffs=(0.0, 0.0, 0.0),
    picard_tol: float = 1e-10,
    picard_max: int = 50,
    background="mean",
    admissibility_tol: float = 1e-8,
    A_k=None,
    m1=None,
    require_skew: bool = True,
) -> CoupledTrajectory:
    """Implicit Euler with per-step Picard iteration for the coupled system.

    Per step ``n`` the linear part ``1/tau + L`` is fixed, where ``L`` is
    ``blockdiag(A, M1 + A, -A)`` plus the ``-1`` block feeding the Maxwell
    block into the potential equation.  The right-hand side
    ``(rho, -J, 0, 0 | g | 0)`` is evaluated at the current iterate until
    two iterates differ by at most ``picard_tol`` in max-norm.

    ``rho = |psi|^2 - rho_bg``.  On the torus the total charge of ``div E0``
    vanishes, so ``background="mean"`` subtracts the mean of ``|psi0|^2``; a
    number sets ``rho_bg`` explicitly.
    """
    if not grid.is_periodic:
        raise BackendError("the coupled system needs the collocated periodic backend")
    cx = build_complex(grid)
    N = grid.npoints
    A_k = tuple(extended_coefficients() if A_k is None else (np.asarray(a, dtype=float) for a in A_k))
    S_info = {}
    if S is None:
        S, S_info = default_commuting_S(A_k)
    S = np.asarray(S, dtype=float)
    op = assemble_coupled(A_k, S, grid, m1, cx, require_skew=require_skew)
    E0 = np.asarray(E0, dtype=float).ravel()
    H0 = np.asarray(H0, dtype=float).ravel()
    psi0 = np.asarray(psi0, dtype=float).ravel()
    alpha10 = np.asarray(alpha10, dtype=float).ravel()
    for name, v, n in (("E0", E0, 3 * N), ("H0", H0, 3 * N), ("psi0", psi0, 8 * N), ("alpha10", alpha10, 3 * N)):
        if v.size != n:
            raise SpaceMismatchError(f"{name} has {v.size} entries, expected {n}", v.size, n)
    dens0 = np.sum(psi0.reshape(8, N) ** 2, axis=0)
    rho_bg = float(dens0.mean()) if background == "mean" else float(background)
    adm = _check_admissible(cx, E0, H0, psi0, alpha10, rho_bg, admissibility_tol)

    n8 = 8 * N
    dim = 3 * n8
    tau = tg.tau
    L = op.matrix().tolil()
    L[2 * n8 :, :n8] = -sp.identity(n8)
    step_mat = sp.csc_matrix(sp.identity(dim) / tau + L.tocsr())
    lu = spla.splu(step_mat)

    k0 = _origin_index(tg)
    impulse = np.zeros(dim)
    impulse[N : 4 * N] = E0
    impulse[4 * N : 7 * N] = H0
    impulse[n8 : 2 * n8] = psi0
    impulse[2 * n8 + N : 2 * n8 + 4 * N] = alpha10
    impulse /= tau

    def nonlinear(X, active):
        F = np.zeros(dim)
        psi = X[n8 : 2 * n8]
        F[:N] = np.sum(psi.reshape(8, N) ** 2, axis=0) - rho_bg * active
        F[N : 4 * N] = -coupling_J(psi, A_k)
        F[n8 : 2 * n8] = coupling_g(psi, X[2 * n8 : 2 * n8 + N], alpha_coeffs, S, A_k)
        return F

    out = np.zeros((tg.steps, dim))
    iters = np.zeros(tg.steps, dtype=int)
    contr = np.zeros(tg.steps)
    prev = np.zeros(dim)
    for n in range(tg.steps):
        base = prev / tau + (impulse if n == k0 else 0.0)
        X = prev.copy()
        last = None
        rate = 0.0
        for k in range(1, picard_max + 1):
            Xn = lu.solve(base + nonlinear(X, float(n >= k0)))
            diff = float(np.max(np.abs(Xn - X)))
            if last is not None and last > 0:
                rate = diff / last
            X, last = Xn, diff
            if not np.isfinite(diff):
                raise PicardDivergence(f"Picard iteration diverged at step {n}", n, rate)
            if diff <= picard_tol:
                break
        else:
            raise PicardDivergence(
                f"Picard iteration did not reach {picard_tol:g} within {picard_max} iterations at step {n} "
                f"(last difference {last:.3e}, contraction {rate:.3g})",
                n,
                rate,
            )
        out[n] = prev = X
        iters[n] = k
        contr[n] = rate
    meta = {
        "admissibility_residual": adm,
        "max_iterations": int(iters.max()),
        "S_source": "default null space" if S_info else "user",
        **S_info,
    }
    return CoupledTrajectory(out, grid, tg, S, A_k, iters, contr, rho_bg, meta)


def charge_residual(traj: CoupledTrajectory, tg: TimeGrid | None = None, part: str = "full") -> tuple[np.ndarray, float]:
    """``r^n = |d0(|psi|^2)^n + div J^n|`` for steps after the impulse step.

    ``part="spatial"`` returns the product-rule defect
    ``div J - 2 <psi, A psi>`` (pointwise), which vanishes when the
    centered differences obey a discrete product rule (2-point periodic
    directions) but not in general.  ``part="temporal"`` returns the
    remainder ``d0 |psi|^2 + 2 <psi, A psi>``, which is ``O(tau)`` for
    skew ``S`` on every grid.
    """
    if part not in ("full", "temporal", "spatial"):
        raise ValueError(f"part must be 'full', 'temporal' or 'spatial', got {part!r}")
    tg = tg or traj.tg
    cx = build_complex(traj.grid)
    psi = traj.psi
    divJ = (_mat(cx.div) @ traj.J.T).T
    if part == "full":
        r = d0(traj.density(), tg) + divJ
    else:
        A = _spatial_from_coefficients(traj.A_k, cx)
        P = psi.reshape(tg.steps, 8, -1)
        APsi = (A @ psi.T).T.reshape(tg.steps, 8, -1)
        quad = 2.0 * np.sum(P * APsi, axis=1)
        r = divJ - quad if part == "spatial" else d0(traj.density(), tg) + quad
    series = _l2(traj.grid, r)[_origin_index(tg) + 1 :]
    return series, float(series.max(initial=0.0))


def global_charge(traj: CoupledTrajectory) -> np.ndarray:
    """Total charge ``sum |psi|^2 h^3`` per step."""
    return traj.grid.cell_volume * traj.density().sum(axis=1)


# ---------------------------------------------------------------------------
# scenarios


def random_potential_scenario(grid: GridSpec, tg: TimeGrid, rng=None, amplitude: float = 1.0, consistent: bool = True):
    """Random vacuum Maxwell solve with ``H0 = -curl0 alpha10``.

    The current is smooth in time and vanishes at ``t = 0``.  With
    ``consistent=False`` a random perturbation is added to ``H0``.
    Returns ``(EH trajectory, alpha10, H0)``.
    """
    rng = np.random.default_rng(rng)
    cx = build_complex(grid)
    nE, nH = cx.v1.dof_count, cx.v2.dof_count
    alpha10 = amplitude * rng.standard_normal(nE)
    H0 = -(_mat(cx.curl0) @ alpha10)
    if not consistent:
        H0 = H0 + amplitude * rng.standard_normal(nH)
    E0 = amplitude * rng.standard_normal(nE)
    shape = amplitude * rng.standard_normal(nE)
    t = tg.times
    reg = np.zeros((tg.steps, nE + nH))
    reg[:, :nE] = -np.outer(np.where(t > 0, t**2 * np.exp(-t), 0.0), shape)
    F = SourceTerm(reg, [(_origin_index(tg), np.concatenate([E0, H0]))])
    law = vacuum_law(grid, (cx.v1, cx.v2))
    EH = solve_maxwell(law, grid, F, tg)
    return EH, alpha10, H0


def random_admissible_scenario(grid: GridSpec, rng=None, amplitude: float = 1e-3) -> dict:
    """Initial data satisfying ``|psi0|^2 - rho_bg = div E0`` and ``H0 = -curl0 alpha10``.

    ``E0`` solves the divergence constraint by least squares.  If the
    density fluctuation is not in the range of ``div`` (even grids have
    extra null modes of the centered difference), ``psi0`` is rescaled to
    constant pointwise norm, so the fluctuation vanishes.
    """
    if not grid.is_periodic:
        raise BackendError("the coupled system needs the collocated periodic backend")
    rng = np.random.default_rng(rng)
    cx = build_complex(grid)
    N = grid.npoints
    div = _mat(cx.div).toarray()
    P = rng.standard_normal((8, N))
    dens = np.sum(P**2, axis=0)
    q = dens - dens.mean()
    E0, *_ = np.linalg.lstsq(div, q, rcond=None)
    in_range = np.max(np.abs(div @ E0 - q), initial=0.0) <= 1e-12
    if not in_range:
        P = P / np.sqrt(dens)[None, :]
    P *= amplitude / np.sqrt(np.mean(np.sum(P**2, axis=0)))
    psi0 = P.ravel()
    E0 = np.zeros(3 * N)
    if in_range:
        dens = np.sum(P**2, axis=0)
        E0, *_ = np.linalg.lstsq(div, dens - dens.mean(), rcond=None)
    # divergence-free part
    E0 = E0 + amplitude * (_mat(cx.curl) @ rng.standard_normal(3 * N))
    alpha10 = amplitude * rng.standard_normal(3 * N)
    H0 = -(_mat(cx.curl0) @ alpha10)
    return {"E0": E0, "H0": H0, "psi0": psi0, "alpha10": alpha10}
