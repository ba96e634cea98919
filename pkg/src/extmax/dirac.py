"""Dirac operator and its unitary equivalence with the extended Maxwell operator.

Everything here lives on the periodic collocated grid, where each ``D_k`` is
exactly skew.  Complex spinors with ``m`` components are stored
component-major (component ``c`` of point ``p`` at ``c * N + p``).  Their real
images interleave real and imaginary parts per component: real component
``2c + r`` (``r = 0`` real part, ``r = 1`` imaginary part) sits at
``(2c + r) * N + p``, and multiplication by ``a + ib`` becomes
``[[a, -b], [b, a]]``.

The chain is::

    B0 = [[i, C], [C, -i]]  --U_q01-->  B1 = [[0, -W*], [W, 0]],  W = i(1 + C)
    realify(W) = Wt = Wc + sum_k W_k (x) D_k
    blockdiag(P_R^T, P_L) [[0, -Wt^T], [Wt, 0]] blockdiag(P_R, P_L^T)
        = M1_ham + hamiltonian form of the extended operator
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .block_systems import assemble_block, hamiltonian_transform, permutation_matrix
from .discrete_ops import GridSpec, build_complex
from .exceptions import BackendError, SpaceMismatchError

__all__ = [
    "PauliSet",
    "pauli_matrices",
    "SpinorField",
    "assemble_C_partial",
    "assemble_Q",
    "assemble_W",
    "DiracOperator",
    "realify",
    "complexify",
    "realify_operator",
    "assemble_Wtilde",
    "UnitaryChain",
    "dirac_to_extmax_unitary",
    "DiracEquivalenceReport",
    "verify_dirac_equivalence",
    "m1_hamiltonian",
    "m1_standard",
    "extended_coefficients",
    "spinor_to_extmax_matrix",
    "WTILDE_CONST",
    "WTILDE_PARTIALS",
    "P_LEFT",
    "P_RIGHT",
    "K_CONST",
    "GRAD_CURL_DIV_PARTIALS",
]

SQRT_HALF = 1.0 / np.sqrt(2.0)

# constant part of the real form of W
WTILDE_CONST = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)

# coefficient of d_k in the real form of W, rows
# (0, -d3, d2, -d1 / d3, 0, d1, d2 / -d2, -d1, 0, d3 / d1, -d2, -d3, 0)
WTILDE_PARTIALS = (
    np.array([[0, 0, 0, -1], [0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0]], dtype=float),
    np.array([[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]], dtype=float),
    np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float),
)

P_LEFT = np.array([[0, 0, -1, 0], [0, 0, 0, -1], [-1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
P_RIGHT = np.array([[0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=float)
K_CONST = np.array([[0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1]], dtype=float)

# coefficient of d_k in [[grad, curl], [0, div]], rows
# (d1, 0, -d3, d2 / d2, d3, 0, -d1 / d3, -d2, d1, 0 / 0, d1, d2, d3)
GRAD_CURL_DIV_PARTIALS = (
    np.array([[1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=float),
    np.array([[0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 1, 0]], dtype=float),
    np.array([[0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1]], dtype=float),
)


def m1_hamiltonian() -> np.ndarray:
    """Constant skew 8x8 part in the Hamiltonian slot order (s3, v1, v2, s0)."""
    M = np.zeros((8, 8))
    M[:4, 4:] = -K_CONST.T
    M[4:, :4] = K_CONST
    return M


def m1_standard() -> np.ndarray:
    """The same constant part in the order (s0, v1, v2, s3)."""
    M = np.zeros((8, 8))
    for r, c, v in [(0, 3, 1), (1, 5, 1), (2, 4, -1), (3, 0, -1), (4, 2, 1), (5, 1, -1), (6, 7, 1), (7, 6, -1)]:
        M[r, c] = v
    return M


@dataclass(frozen=True)
class PauliSet:
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def __iter__(self):
        return iter((self.p1, self.p2, self.p3))

    def check(self) -> float:
        """Max deviation from Hermiticity, involution and ``P1 P2 = i P3`` (cyclic)."""
        I = np.eye(2)
        ps = list(self)
        err = 0.0
        for p in ps:
            err = max(err, np.max(np.abs(p - p.conj().T)), np.max(np.abs(p @ p - I)))
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            err = max(err, np.max(np.abs(ps[a] @ ps[b] - 1j * ps[c])))
        return float(err)


def pauli_matrices() -> PauliSet:
    return PauliSet(
        np.array([[0, 1], [1, 0]], dtype=complex),
        np.array([[0, -1j], [1j, 0]], dtype=complex),
        np.array([[1, 0], [0, -1]], dtype=complex),
    )


def _require_periodic(grid):
    if not grid.is_periodic:
        raise BackendError("the Dirac operator is only defined on the periodic backend")


def _partials(grid):
    _require_periodic(grid)
    return [d.matrix for d in build_complex(grid).partials]


def _canon(mat):
    mat = sp.csr_matrix(mat)
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def assemble_C_partial(grid: GridSpec) -> sp.csr_matrix:
    """``C = sum_k Pi_k (x) D_k`` on two complex components."""
    D = _partials(grid)
    return _canon(sum(sp.kron(sp.csr_matrix(p), d) for p, d in zip(pauli_matrices(), D)))


def assemble_W(grid: GridSpec) -> sp.csr_matrix:
    C = assemble_C_partial(grid)
    return _canon(1j * (sp.identity(C.shape[0]) + C))


@dataclass(frozen=True)
class DiracOperator:
    """``Q = d0 + B`` with ``B = mass + spatial``."""

    variant: str
    mass: sp.csr_matrix
    spatial: sp.csr_matrix

    @property
    def B(self) -> sp.csr_matrix:
        return _canon(self.mass + self.spatial)


def assemble_Q(grid: GridSpec, variant: str = "Q0") -> DiracOperator:
    """Time-independent part of the Dirac operator in the two forms.

    ``Q0``: ``B0 = [[i, C], [C, -i]]``.  ``Q1``: ``B1 = [[0, i - iC], [i + iC, 0]]``.
    """
    C = assemble_C_partial(grid)
    n = C.shape[0]
    I = sp.identity(n, format="csr")
    Z = None
    if variant == "Q0":
        mass = sp.bmat([[1j * I, Z], [Z, -1j * I]])
        spatial = sp.bmat([[Z, C], [C, Z]])
    elif variant == "Q1":
        mass = sp.bmat([[Z, 1j * I], [1j * I, Z]])
        spatial = sp.bmat([[Z, -1j * C], [1j * C, Z]])
    else:
        raise ValueError(f"variant must be 'Q0' or 'Q1', got {variant!r}")
    return DiracOperator(variant, _canon(mass), _canon(spatial))


def u_q01(grid: GridSpec) -> sp.csr_matrix:
    """Blockwise ``(1/sqrt 2) [[i, 1], [i, -1]]`` on four complex components."""
    _require_periodic(grid)
    I = sp.identity(2 * grid.npoints, format="csr")
    return _canon(sp.bmat([[1j * SQRT_HALF * I, SQRT_HALF * I], [1j * SQRT_HALF * I, -SQRT_HALF * I]]))


# ---------------------------------------------------------------------------
# realification


def realify(psi, ncomp: int | None = None) -> np.ndarray:
    """Complex component-major vector(s) to interleaved real form.

    Works on a flat vector of length ``m N`` or on a stack ``(T, m N)``.
    """
    psi = np.asarray(psi)
    flat = psi.ndim == 1
    z = psi[None] if flat else psi
    m = ncomp or 1
    T, n = z.shape
    N = n // m
    zz = z.reshape(T, m, 1, N)
    out = np.concatenate([zz.real, zz.imag], axis=2).reshape(T, 2 * n)
    return out[0] if flat else out


def complexify(x, ncomp: int | None = None) -> np.ndarray:
    """Inverse of :func:`realify`."""
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    y = x[None] if flat else x
    m = ncomp or 1
    T, n2 = y.shape
    N = n2 // (2 * m)
    yy = y.reshape(T, m, 2, N)
    out = (yy[:, :, 0] + 1j * yy[:, :, 1]).reshape(T, m * N)
    return out[0] if flat else out


def _realify_perm(m: int, N: int) -> np.ndarray:
    """Index map from ``[Re; Im]`` stacking to interleaved-by-component order."""
    c, r, p = np.meshgrid(np.arange(m), np.arange(2), np.arange(N), indexing="ij")
    # new index (2c + r) N + p takes old index r m N + c N + p
    return (r * m * N + c * N + p).ravel()


def realify_operator(M, ncomp: int) -> sp.csr_matrix:
    """Real matrix of a complex operator on ``ncomp`` components."""
    M = sp.csr_matrix(M)
    n = M.shape[0]
    N = n // ncomp
    R, I = sp.csr_matrix(M.real), sp.csr_matrix(M.imag)
    big = sp.bmat([[R, -I], [I, R]], format="csr")
    perm = _realify_perm(ncomp, N)
    return _canon(big[perm][:, perm])


def assemble_Wtilde(grid: GridSpec) -> sp.csr_matrix:
    """Real form of ``W`` written out directly from its coefficient matrices."""
    D = _partials(grid)
    N = grid.npoints
    W = sp.kron(sp.csr_matrix(WTILDE_CONST), sp.identity(N))
    for Wk, Dk in zip(WTILDE_PARTIALS, D):
        W = W + sp.kron(sp.csr_matrix(Wk), Dk)
    return _canon(W)


# ---------------------------------------------------------------------------
# the unitary chain


@dataclass(frozen=True)
class SpinorField:
    """Dirac state on a periodic grid: four complex components per point."""

    grid: GridSpec
    complex_form: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.complex_form, dtype=complex).ravel()
        if z.size != 4 * self.grid.npoints:
            raise SpaceMismatchError("spinor needs four complex components per point", z.size, self.grid.npoints)
        object.__setattr__(self, "complex_form", z)

    @property
    def real_form(self) -> np.ndarray:
        return realify(self.complex_form, 4)

    @classmethod
    def from_real(cls, grid, x) -> "SpinorField":
        return cls(grid, complexify(x, 4))

    def extmax_form(self) -> np.ndarray:
        """Image in the extended layout (s0, v1, v2, s3)."""
        return spinor_to_extmax_matrix(self.grid) @ self.real_form


@dataclass(frozen=True)
class UnitaryChain:
    U_q01: np.ndarray
    realifier_i: np.ndarray
    P_left: np.ndarray
    P_right: np.ndarray
    full: np.ndarray = field(repr=False)

    def residuals(self) -> dict:
        """``|U^* U - I|_max`` for every factor."""
        out = {}
        for name, U in (
            ("U_q01", self.U_q01),
            ("realifier_i", self.realifier_i),
            ("P_left", self.P_left),
            ("P_right", self.P_right),
            ("full", self.full),
        ):
            out[name] = float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))))
        return out


def dirac_to_extmax_unitary() -> UnitaryChain:
    full = np.zeros((8, 8))
    full[:4, :4] = P_RIGHT.T
    full[4:, 4:] = P_LEFT
    return UnitaryChain(
        U_q01=SQRT_HALF * np.array([[1j, 1], [1j, -1]]),
        realifier_i=np.array([[0.0, -1.0], [1.0, 0.0]]),
        P_left=P_LEFT.copy(),
        P_right=P_RIGHT.copy(),
        full=full,
    )


def extended_coefficients() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric 8x8 matrices ``A_k`` with ``A = sum_k A_k (x) D_k`` (layout s0, v1, v2, s3)."""
    A = [np.zeros((8, 8)) for _ in range(3)]
    for k in range(3):
        # div at (0, v1) and grad0 at (v1, 0)
        A[k][0, 1 + k] = 1
        A[k][1 + k, 0] = 1
        # grad at (v2, 7) and div0 at (7, v2)
        A[k][4 + k, 7] = 1
        A[k][7, 4 + k] = 1
    # -curl at (v1, v2), curl0 at (v2, v1); curl = sum_k eps-structure
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
    for k in range(3):
        # (curl v)_i = sum_{k,j} eps[i,k,j] d_k v_j
        curl_k = eps[:, k, :]
        A[k][1:4, 4:7] = -curl_k
        A[k][4:7, 1:4] = curl_k
    return tuple(A)


def spinor_to_extmax_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Real orthogonal map from realified ``Q0`` spinors to the extended layout.

    Composition of ``U_q01``, realification, the signed permutations and the
    scalar-slot swap.
    """
    _require_periodic(grid)
    N = grid.npoints
    chain = dirac_to_extmax_unitary()
    U = realify_operator(u_q01(grid), 4)
    P = sp.kron(sp.csr_matrix(chain.full), sp.identity(N))
    layout = build_complex(grid).slots
    sigma = permutation_matrix(layout)
    return _canon(sigma @ P @ U)


@dataclass
class DiracEquivalenceReport:
    residuals: dict
    first_mismatch: str | None = None

    @property
    def passed(self) -> bool:
        return self.first_mismatch is None


def _max_abs(mat) -> float:
    mat = _canon(mat)
    return float(np.max(np.abs(mat.data))) if mat.nnz else 0.0


def _first_block_mismatch(diff, N, names):
    diff = sp.csr_matrix(diff)
    if not diff.nnz:
        return None
    coo = diff.tocoo()
    k = int(np.argmax(np.abs(coo.data)))
    return f"{names}({coo.row[k] // N},{coo.col[k] // N})"


def verify_dirac_equivalence(grid: GridSpec) -> DiracEquivalenceReport:
    """Check every link of the chain as a matrix identity.

    Keys: ``symbol_first_order`` and ``symbol_constant`` (4x4 integer
    products), ``first_order`` (sparse form of the same), ``wtilde_realify``
    (direct ``Wt`` against the realified ``W``), ``lemma`` (``U B0 U^* - B1``),
    ``full`` (the 8x8 block identity), ``standard_form`` (full chain from
    realified ``B0`` to ``M1 + A`` in the (s0, v1, v2, s3) order).
    """
    _require_periodic(grid)
    N = grid.npoints
    res = {}
    mismatch = None

    sym_first = max(
        float(np.max(np.abs(P_LEFT @ Wk @ P_RIGHT - Gk))) for Wk, Gk in zip(WTILDE_PARTIALS, GRAD_CURL_DIV_PARTIALS)
    )
    res["symbol_first_order"] = sym_first
    res["symbol_constant"] = float(np.max(np.abs(P_LEFT @ WTILDE_CONST @ P_RIGHT - K_CONST)))

    cx = build_complex(grid)
    Wt = assemble_Wtilde(grid)
    PL, PR = sp.kron(sp.csr_matrix(P_LEFT), sp.identity(N)), sp.kron(sp.csr_matrix(P_RIGHT), sp.identity(N))
    first = Wt - sp.kron(sp.csr_matrix(WTILDE_CONST), sp.identity(N))
    gcd = sp.bmat([[cx.grad.matrix, cx.curl.matrix], [None, cx.div.matrix]])
    diff = PL @ first @ PR - gcd
    res["first_order"] = _max_abs(diff)
    mismatch = mismatch or _first_block_mismatch(diff, N, "first_order")

    diff = Wt - realify_operator(assemble_W(grid), 2)
    res["wtilde_realify"] = _max_abs(diff)
    mismatch = mismatch or _first_block_mismatch(diff, N, "wtilde_realify")

    U = u_q01(grid)
    B0, B1 = assemble_Q(grid, "Q0").B, assemble_Q(grid, "Q1").B
    res["lemma"] = _max_abs(U @ B0 @ U.conj().T - B1)
    if res["lemma"] > 1e-14 and mismatch is None:
        mismatch = "lemma"

    ham = sp.bmat([[None, -Wt.T], [Wt, None]])
    chain = dirac_to_extmax_unitary()
    P = sp.kron(sp.csr_matrix(chain.full), sp.identity(N))
    A_sp = hamiltonian_transform(assemble_block("Extended", grid, cx)).matrix()
    target = sp.kron(sp.csr_matrix(m1_hamiltonian()), sp.identity(N)) + A_sp
    diff = P @ ham @ P.T - target
    res["full"] = _max_abs(diff)
    mismatch = mismatch or _first_block_mismatch(diff, N, "full")

    T = spinor_to_extmax_matrix(grid)
    B0r = realify_operator(B0, 4)
    std = sp.kron(sp.csr_matrix(m1_standard()), sp.identity(N)) + assemble_block("Extended", grid, cx).matrix()
    res["standard_form"] = _max_abs(T @ B0r @ T.T - std)
    if res["standard_form"] > 1e-14 and mismatch is None:
        mismatch = "standard_form"

    for key in ("symbol_first_order", "symbol_constant"):
        if res[key] != 0.0 and mismatch is None:
            mismatch = key
    return DiracEquivalenceReport(res, mismatch)
