"""Causal time integration of ``(d0 M0 + M1 + A) U = F``.

Time is sampled at ``t_n = t0 + n * tau`` for ``n = 0 .. steps - 1`` and the
history before ``t0`` is zero.  Every scheme is a one-step recurrence, so a
source that vanishes up to some step produces a state that is bitwise zero
up to that step.

The discrete time derivative is the backward difference
``(u^n - u^{n-1}) / tau``; implicit Euler is exactly ``(d0 M0 + M1 + A) U = F``
with that derivative, which is what makes the resolvent identities used in
:mod:`extmax.systems_transfer` hold up to linear-solver error.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from .block_systems import BlockOp
from .exceptions import CausalityViolation, SolverError, SpaceMismatchError
from .material_laws import MaterialLaw
from .pointwise import PointwiseOperator

__all__ = [
    "TimeGrid",
    "SourceTerm",
    "Trajectory",
    "ImplicitEuler",
    "CrankNicolson",
    "ExponentialPropagator",
    "solve_implicit_euler",
    "solve_crank_nicolson",
    "solve_exponential",
    "discrete_d0",
    "discrete_d0_inverse",
    "d0",
    "d0_inv",
    "weighted_norm",
    "weighted_norm_samples",
    "solution_bound_check",
    "BoundReport",
    "causality_check",
    "FIELD_DUMP_MAGIC",
    "read_field_dump",
]

FIELD_DUMP_MAGIC = "EVOF1"
EXP_MAX_DIM = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time samples ``t0 + n tau`` for ``n < steps`` with weight ``nu``."""

    tau: float
    steps: int
    t0: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")
        if self.nu < 0:
            raise ValueError(f"nu must be nonnegative, got {self.nu}")
        if self.tau * self.nu >= 1:
            raise ValueError(f"tau * nu = {self.tau * self.nu:g} must stay below 1")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.tau * np.arange(self.steps)

    @property
    def t_end(self) -> float:
        return self.t0 + self.tau * (self.steps - 1)

    def weights(self, nu: float | None = None) -> np.ndarray:
        nu = self.nu if nu is None else nu
        return np.exp(-2.0 * nu * self.times)

    def index_of(self, t: float) -> int:
        k = (t - self.t0) / self.tau
        n = int(round(k))
        if abs(k - n) > 1e-9 or not 0 <= n < self.steps:
            raise ValueError(f"time {t} is not on the grid")
        return n

    def refine(self, factor: int) -> "TimeGrid":
        """Same time span with ``tau / factor``."""
        return TimeGrid(self.tau / factor, (self.steps - 1) * factor + 1, self.t0, self.nu)

    def as_params(self) -> dict:
        return {"tau": self.tau, "steps": self.steps, "t0": self.t0, "nu": self.nu}


class SourceTerm:
    """Right-hand side: sampled regular part plus impulses ``delta_{t_k} (x) v``."""

    def __init__(self, regular=None, impulses: Sequence = (), dim: int | None = None, steps: int | None = None):
        if regular is not None:
            regular = np.array(regular, dtype=float)
            if regular.ndim != 2:
                raise ValueError("regular part must have shape (steps, dim)")
            if not np.all(np.isfinite(regular)):
                raise ValueError("regular part has non-finite samples")
            steps, dim = regular.shape if steps is None else (steps, regular.shape[1])
        self.impulses = []
        for k, v in impulses:
            v = np.array(v, dtype=float)
            if dim is None:
                dim = v.size
            if v.shape != (dim,):
                raise SpaceMismatchError(f"impulse of shape {v.shape} does not match dim {dim}", v.shape, dim)
            self.impulses.append((int(k), v))
        if dim is None:
            raise ValueError("cannot infer the dimension of an empty source")
        self.regular = regular
        self.dim = int(dim)
        self.steps = steps

    @classmethod
    def zeros(cls, dim: int, tg: TimeGrid) -> "SourceTerm":
        return cls(np.zeros((tg.steps, dim)))

    @classmethod
    def impulse(cls, v, k: int = 0) -> "SourceTerm":
        return cls(None, [(k, v)])

    @classmethod
    def from_function(cls, f: Callable[[float], np.ndarray], tg: TimeGrid) -> "SourceTerm":
        return cls(np.stack([np.asarray(f(t), dtype=float) for t in tg.times]))

    def regular_samples(self, tg: TimeGrid) -> np.ndarray:
        if self.regular is None:
            return np.zeros((tg.steps, self.dim))
        if self.regular.shape[0] != tg.steps:
            raise SpaceMismatchError(
                f"source has {self.regular.shape[0]} samples, time grid has {tg.steps}",
                self.regular.shape[0],
                tg.steps,
            )
        return self.regular

    def impulse_samples(self, tg: TimeGrid) -> np.ndarray:
        out = np.zeros((tg.steps, self.dim))
        for k, v in self.impulses:
            if not 0 <= k < tg.steps:
                raise ValueError(f"impulse at step {k} lies outside the time grid")
            out[k] += v
        return out

    def as_rhs(self, tg: TimeGrid) -> np.ndarray:
        """Regular samples plus ``v / tau`` at each impulse step."""
        out = self.regular_samples(tg).copy()
        for k, v in self.impulses:
            if not 0 <= k < tg.steps:
                raise ValueError(f"impulse at step {k} lies outside the time grid")
            out[k] += v / tg.tau
        return out

    def first_support(self, tg: TimeGrid) -> int:
        """First step index at which the source is nonzero (``steps`` if never)."""
        rhs = self.as_rhs(tg)
        nz = np.flatnonzero(np.any(rhs != 0, axis=1))
        return int(nz[0]) if nz.size else tg.steps

    def __add__(self, other: "SourceTerm") -> "SourceTerm":
        if self.dim != other.dim:
            raise SpaceMismatchError("sources of different dimension", self.dim, other.dim)
        if self.regular is None:
            reg = other.regular
        elif other.regular is None:
            reg = self.regular
        else:
            reg = self.regular + other.regular
        return SourceTerm(reg, self.impulses + other.impulses, dim=self.dim)

    def scaled(self, c: float) -> "SourceTerm":
        reg = None if self.regular is None else c * self.regular
        return SourceTerm(reg, [(k, c * v) for k, v in self.impulses], dim=self.dim)

    def mapped(self, mat) -> "SourceTerm":
        """Apply a matrix to every sample and impulse."""
        reg = None if self.regular is None else np.asarray((mat @ self.regular.T).T)
        imp = [(k, np.asarray(mat @ v)) for k, v in self.impulses]
        return SourceTerm(reg, imp, dim=mat.shape[0])

    def __repr__(self):
        n = "none" if self.regular is None else f"{self.regular.shape[0]} samples"
        return f"SourceTerm(dim={self.dim}, regular={n}, impulses={len(self.impulses)})"


@dataclass
class Trajectory:
    """State history ``U(t_n)`` with diagnostics."""

    samples: np.ndarray
    grid: TimeGrid
    layout: tuple | None = None
    metadata: dict = field(default_factory=dict)
    cell_volume: float = 1.0

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def slot_offsets(self) -> np.ndarray:
        if self.layout is None:
            return np.array([0, self.dim])
        return np.concatenate([[0], np.cumsum([s.dof_count for s in self.layout])]).astype(int)

    def slot(self, i: int) -> np.ndarray:
        off = self.slot_offsets()
        return self.samples[:, off[i] : off[i + 1]]

    def norms(self) -> np.ndarray:
        return np.sqrt(self.cell_volume * np.sum(self.samples**2, axis=1))

    def component_norms(self) -> np.ndarray:
        off = self.slot_offsets()
        return np.stack(
            [np.sqrt(self.cell_volume * np.sum(self.samples[:, a:b] ** 2, axis=1)) for a, b in zip(off[:-1], off[1:])],
            axis=1,
        )

    def energy(self, M0=None) -> np.ndarray:
        """``<U^n, M0 U^n>`` per step (``M0`` defaults to the identity)."""
        if M0 is None:
            MU = self.samples
        else:
            M0 = M0.matrix() if hasattr(M0, "matrix") else M0
            MU = np.asarray((M0 @ self.samples.T).T)
        return self.cell_volume * np.sum(self.samples * MU, axis=1)

    def weighted_norm(self, nu: float | None = None) -> float:
        return weighted_norm(self, nu)

    def diagnostics(self, extra: dict | None = None) -> dict:
        w = self.grid.weights()
        cum = np.sqrt(self.grid.tau * np.cumsum(w * self.norms() ** 2))
        out = {"t": self.times, "energy": self.energy(), "weighted_norm": cum}
        comp = self.component_norms()
        for i in range(comp.shape[1]):
            out[f"norm_slot{i}"] = comp[:, i]
        for k, v in (extra or {}).items():
            out[k] = np.asarray(v)
        return out

    def to_csv(self, path, extra: dict | None = None) -> Path:
        """Write time, energy, cumulative weighted norm, per-slot norms and extras."""
        diag = self.diagnostics(extra)
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            keys = list(diag)
            writer.writerow(keys)
            for n in range(self.grid.steps):
                writer.writerow([repr(float(diag[k][n])) for k in keys])
        return path

    def dump_fields(self, path) -> Path:
        """Raw dump: one ASCII header line then little-endian float64 samples."""
        path = Path(path)
        ncomp = 1 if self.layout is None else len(self.layout)
        header = f"{FIELD_DUMP_MAGIC} {ncomp} {self.dim} {self.grid.steps} little-endian f64\n"
        with path.open("wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(self.samples, dtype="<f8").tobytes())
        return path


def read_field_dump(path) -> tuple[dict, np.ndarray]:
    """Read a file written by :meth:`Trajectory.dump_fields`."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    parts = raw[:nl].decode("ascii").split()
    if parts[0] != FIELD_DUMP_MAGIC:
        raise ValueError(f"not a field dump (magic {parts[0]!r})")
    ncomp, dofs, nsteps = (int(p) for p in parts[1:4])
    data = np.frombuffer(raw[nl + 1 :], dtype="<f8").reshape(nsteps, dofs)
    return {"ncomponents": ncomp, "dofs": dofs, "nsteps": nsteps}, data


# ---------------------------------------------------------------------------
# discrete time derivative


def discrete_d0(tg: TimeGrid) -> sp.csr_matrix:
    """Lower-bidiagonal backward difference with zero history."""
    n = tg.steps
    return sp.csr_matrix(sp.diags([np.ones(n), -np.ones(n - 1)], [0, -1]) * (1.0 / tg.tau))


def discrete_d0_inverse(tg: TimeGrid) -> sp.csr_matrix:
    """Causal running sum times ``tau``."""
    n = tg.steps
    return sp.csr_matrix(np.tril(np.ones((n, n))) * tg.tau)


def d0(samples, tg: TimeGrid) -> np.ndarray:
    """Backward difference along the time axis (axis 0)."""
    u = np.asarray(samples, dtype=float)
    return np.diff(u, axis=0, prepend=np.zeros_like(u[:1])) / tg.tau


def d0_inv(samples, tg: TimeGrid) -> np.ndarray:
    return tg.tau * np.cumsum(np.asarray(samples, dtype=float), axis=0)


# ---------------------------------------------------------------------------
# integrators


def _as_matrix(A) -> sp.csr_matrix:
    if A is None:
        return None
    if isinstance(A, BlockOp):
        return A.matrix()
    if isinstance(A, PointwiseOperator):
        return A.matrix()
    return sp.csr_matrix(A)


def _law_matrices(law, dim):
    if law is None:
        return sp.identity(dim, format="csr"), sp.csr_matrix((dim, dim))
    if isinstance(law, MaterialLaw):
        return law.M0.matrix(), law.M1.matrix()
    M0, M1 = law
    M0 = _as_matrix(M0)
    M1 = sp.csr_matrix((dim, dim)) if M1 is None else _as_matrix(M1)
    return M0, M1


def _cell_volume(A, law):
    for obj in (A, law):
        grid = getattr(obj, "grid", None)
        if grid is not None:
            return grid.cell_volume
    return 1.0


class _CausalIntegrator(BaseEstimator):
    """Shared estimator plumbing: ``fit`` assembles, ``transform`` integrates."""

    name = "base"

    def __init__(self, tau=0.05, steps=20, t0=0.0, nu=0.0, rtol=1e-10):
        self.tau = tau
        self.steps = steps
        self.t0 = t0
        self.nu = nu
        self.rtol = rtol

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.tau, self.steps, self.t0, self.nu)

    @classmethod
    def from_grid(cls, tg: TimeGrid, **kw):
        return cls(**tg.as_params(), **kw)

    def fit(self, A, law=None):
        K = _as_matrix(A)
        dim = K.shape[0] if K is not None else law.dim
        if K is None:
            K = sp.csr_matrix((dim, dim))
        M0, M1 = _law_matrices(law, dim)
        if M0.shape != (dim, dim) or M1.shape != (dim, dim):
            raise SpaceMismatchError("material law and spatial operator dimensions differ", M0.shape, K.shape)
        self.dim_ = dim
        self.M0_ = sp.csr_matrix(M0)
        self.K_ = sp.csr_matrix(K + M1)
        self.A_ = sp.csr_matrix(K)
        self.layout_ = getattr(A, "layout", None) or getattr(law, "layout", None)
        self.cell_volume_ = _cell_volume(A, law)
        self._prepare()
        return self

    def _prepare(self):
        raise NotImplementedError

    def _source(self, F) -> SourceTerm:
        if isinstance(F, SourceTerm):
            src = F
        elif F is None:
            src = SourceTerm.zeros(self.dim_, self.time_grid)
        else:
            src = SourceTerm(np.asarray(F, dtype=float))
        if src.dim != self.dim_:
            raise SpaceMismatchError(f"source dimension {src.dim} does not match operator {self.dim_}", src.dim, self.dim_)
        return src

    def _solve(self, lu, S, rhs, step):
        if not np.any(rhs):
            return np.zeros_like(rhs)
        u = lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        res = np.linalg.norm(S @ u - rhs)
        if res > self.rtol * scale:
            u = u + lu.solve(rhs - S @ u)
            res = np.linalg.norm(S @ u - rhs)
        if not np.all(np.isfinite(u)) or res > self.rtol * scale:
            raise SolverError(f"linear solve at step {step} reached relative residual {res / scale:.3e}", step)
        self._max_residual = max(self._max_residual, res / scale)
        return u

    def _factor(self, S):
        try:
            return spla.splu(sp.csc_matrix(S))
        except RuntimeError as exc:
            raise SolverError(f"step matrix is singular ({exc})", 0) from exc

    def _trajectory(self, U) -> Trajectory:
        return Trajectory(
            U,
            self.time_grid,
            self.layout_,
            {"solver": self.name, "max_relative_residual": float(self._max_residual)},
            self.cell_volume_,
        )

    def fit_transform(self, A, law=None, F=None):
        return self.fit(A, law).transform(F)


class ImplicitEuler(_CausalIntegrator):
    """``(M0/tau + M1 + A) U^n = F^n + M0 U^{n-1} / tau``; impulses enter as ``v / tau``."""

    name = "implicit_euler"

    def _prepare(self):
        self.S_ = sp.csr_matrix(self.M0_ / self.tau + self.K_)
        self.lu_ = self._factor(self.S_)

    def transform(self, F=None) -> Trajectory:
        tg = self.time_grid
        rhs_all = self._source(F).as_rhs(tg)
        U = np.zeros((tg.steps, self.dim_))
        prev = np.zeros(self.dim_)
        self._max_residual = 0.0
        for n in range(tg.steps):
            rhs = rhs_all[n] + (self.M0_ @ prev) / self.tau
            prev = U[n] = self._solve(self.lu_, self.S_, rhs, n)
        return self._trajectory(U)


class CrankNicolson(_CausalIntegrator):
    """``(M0/tau + K/2) U^n = (M0/tau - K/2) U^{n-1} + (F^{n-1} + F^n)/2``.

    ``K = M1 + A``.  An impulse ``v`` at step ``k`` is added as the exact jump
    ``M0^-1 v`` after that step when ``M0`` is invertible, and as ``v / tau``
    in the right-hand side otherwise.
    """

    name = "crank_nicolson"

    def _prepare(self):
        self.S_ = sp.csr_matrix(self.M0_ / self.tau + 0.5 * self.K_)
        self.R_ = sp.csr_matrix(self.M0_ / self.tau - 0.5 * self.K_)
        self.lu_ = self._factor(self.S_)
        d = self.M0_.diagonal()
        offdiag = self.M0_ - sp.diags(d)
        offdiag.eliminate_zeros()
        self.m0_invertible_ = bool(np.all(d > 0)) if offdiag.nnz == 0 else True
        if self.m0_invertible_:
            try:
                self.m0_lu_ = spla.splu(sp.csc_matrix(self.M0_))
            except RuntimeError:
                self.m0_invertible_ = False

    def transform(self, F=None) -> Trajectory:
        tg = self.time_grid
        src = self._source(F)
        reg = src.regular_samples(tg)
        jumps = src.impulse_samples(tg)
        U = np.zeros((tg.steps, self.dim_))
        prev = np.zeros(self.dim_)
        self._max_residual = 0.0
        for n in range(tg.steps):
            rhs = self.R_ @ prev
            if n > 0:
                rhs = rhs + 0.5 * (reg[n - 1] + reg[n])
            if not self.m0_invertible_:
                rhs = rhs + jumps[n] / tg.tau
            u = self._solve(self.lu_, self.S_, rhs, n)
            if self.m0_invertible_ and np.any(jumps[n]):
                u = u + self.m0_lu_.solve(jumps[n])
            prev = U[n] = u
        traj = self._trajectory(U)
        traj.metadata["impulse_mode"] = "jump" if self.m0_invertible_ else "rhs/tau"
        return traj


class ExponentialPropagator(_CausalIntegrator):
    """Dense propagator ``E = exp(-tau G)`` with ``G = M0^-1 (M1 + A)``.

    ``U^n = E U^{n-1} + tau/2 (E F^{n-1} + F^n)`` (trapezoidal convolution,
    sources premultiplied by ``M0^-1``), ``U^0`` carries impulses only, and
    impulses are exact jumps.  Limited to dimension 4096.
    """

    name = "exponential"

    def _prepare(self):
        if self.dim_ > EXP_MAX_DIM:
            raise ValueError(f"dense exponential limited to dimension {EXP_MAX_DIM}, got {self.dim_}")
        M0 = self.M0_.toarray()
        self.M0inv_ = np.linalg.inv(M0)
        G = self.M0inv_ @ self.K_.toarray()
        self.skew_ = bool(np.max(np.abs(G + G.T), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(G), initial=0.0)))
        if not self.skew_:
            warnings.warn("generator is not skew; conservation checks are disabled", RuntimeWarning, stacklevel=3)
        self.E_ = scipy.linalg.expm(-self.tau * G)

    def transform(self, F=None) -> Trajectory:
        tg = self.time_grid
        src = self._source(F)
        reg = src.regular_samples(tg) @ self.M0inv_.T
        jumps = src.impulse_samples(tg) @ self.M0inv_.T
        U = np.zeros((tg.steps, self.dim_))
        prev = np.zeros(self.dim_)
        for n in range(tg.steps):
            u = np.zeros(self.dim_)
            if n > 0:
                u = self.E_ @ (prev + 0.5 * tg.tau * reg[n - 1]) + 0.5 * tg.tau * reg[n]
            prev = U[n] = u + jumps[n]
        self._max_residual = 0.0
        traj = self._trajectory(U)
        traj.metadata["skew"] = self.skew_
        return traj


def solve_implicit_euler(law, A, F, tg: TimeGrid) -> Trajectory:
    return ImplicitEuler.from_grid(tg).fit(A, law).transform(F)


def solve_crank_nicolson(law, A, F, tg: TimeGrid) -> Trajectory:
    return CrankNicolson.from_grid(tg).fit(A, law).transform(F)


def solve_exponential(Aw, F, tg: TimeGrid, law=None) -> Trajectory:
    return ExponentialPropagator.from_grid(tg).fit(Aw, law).transform(F)


# ---------------------------------------------------------------------------
# norms and checks


def weighted_norm_samples(samples, tg: TimeGrid, nu: float | None = None, cell_volume: float = 1.0) -> float:
    """``(tau * sum_n h^3 |U^n|^2 exp(-2 nu t_n))^(1/2)``."""
    s = np.asarray(samples, dtype=float)
    sq = cell_volume * np.sum(s.reshape(s.shape[0], -1) ** 2, axis=1)
    return float(np.sqrt(tg.tau * np.sum(tg.weights(nu) * sq)))


def weighted_norm(traj: Trajectory, nu: float | None = None) -> float:
    return weighted_norm_samples(traj.samples, traj.grid, nu, traj.cell_volume)


@dataclass(frozen=True)
class BoundReport:
    holds: bool
    lhs: float
    rhs: float
    c0: float
    c0_discrete: float
    kappa: float

    def __bool__(self):
        return self.holds


def solution_bound_check(traj: Trajectory, F: SourceTerm, c0: float, m0_max: float = 1.0) -> BoundReport:
    """Check ``|U|_nu <= (1 + kappa tau) |F|_nu / c0`` for an implicit-Euler run.

    The backward difference only sees the weight through
    ``nu' = (1 - exp(-2 nu tau)) / (2 tau) <= nu``, which lowers the
    coercivity constant to ``c0 - (nu - nu') * lambda_max(M0)``.  ``kappa`` is
    chosen so that ``(1 + kappa tau) / c0`` is the reciprocal of that reduced
    constant; it is ``O(nu^2 lambda_max(M0) / c0)`` as ``tau -> 0``.
    ``F`` is measured including impulses as ``v / tau``.
    """
    tg = traj.grid
    nu = tg.nu
    nu_d = (1.0 - np.exp(-2.0 * nu * tg.tau)) / (2.0 * tg.tau) if nu > 0 else 0.0
    c0_d = c0 - (nu - nu_d) * m0_max
    if c0_d <= 0:
        raise ValueError("time step too large for the discrete bound (reduced constant is not positive)")
    kappa = (c0 / c0_d - 1.0) / tg.tau
    lhs = weighted_norm(traj)
    rhs = (1.0 + kappa * tg.tau) * weighted_norm_samples(F.as_rhs(tg), tg, cell_volume=traj.cell_volume) / c0
    return BoundReport(bool(lhs <= rhs * (1 + 1e-12)), lhs, rhs, c0, c0_d, kappa)


def causality_check(solve: Callable[[SourceTerm], Trajectory], F: SourceTerm, start: int | None = None) -> float:
    """Run ``solve(F)`` and assert the state vanishes bitwise before ``start``.

    ``start`` defaults to the first step where ``F`` is nonzero.  Returns the
    max-abs state before ``start`` (always 0.0 when the check passes).
    """
    traj = solve(F)
    tg = traj.grid
    support = F.first_support(tg)
    if start is None:
        start = support
    elif support < start:
        raise ValueError(f"source is nonzero at step {support}, before the declared start {start}")
    head = traj.samples[:start]
    bad = np.flatnonzero(np.any(head != 0, axis=1))
    if bad.size:
        k = int(bad[0])
        raise CausalityViolation(f"state is nonzero at step {k} before the source starts at step {start}", k)
    return float(np.max(np.abs(head))) if head.size else 0.0
