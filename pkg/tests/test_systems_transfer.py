import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from extmax.block_systems import assemble_block
from extmax.discrete_ops import GridSpec, build_complex
from extmax.evo_solver import SourceTerm, TimeGrid
from extmax.exceptions import SpaceMismatchError
from extmax.identities import gem_embedding_residual, random_block_weight, random_nonblock_weight
from extmax.material_laws import MaterialLaw, random_gem_material
from extmax.pointwise import PointwiseWeight
from extmax.systems_transfer import (
    block_reduction_check,
    evolution_residual,
    extended_operator,
    extended_parts,
    extended_to_maxwell_rhs,
    factorization_residual,
    gem_operator,
    gem_parts,
    gem_transfer,
    maxwell_operator,
    maxwell_to_extended_rhs,
    resolvent,
    solve_extended,
    solve_maxwell,
)
from oracles import space_time_solve

TG = TimeGrid(0.05, 20)


def _dense(A):
    return A.matrix().toarray()


def _weighted(grid, E, *tags):
    """Dense ``E^-1/2 A E^-1/2`` for Maxwell-type tags, ``E^1/2 A E^1/2`` otherwise."""
    R = np.real(sla.sqrtm(E.matrix().toarray()))
    Ri = np.linalg.inv(R)
    out = []
    for tag in tags:
        A = _dense(assemble_block(tag, grid))
        out.append(Ri @ A @ Ri if tag == "AMax" else R @ A @ R)
    return out


def _src(rng, dim, steps=TG.steps):
    return SourceTerm(rng.standard_normal((steps, dim)), [(0, rng.standard_normal(dim))])


def _d0(tau, steps):
    return (np.eye(steps) - np.eye(steps, k=-1)) / tau


WEIGHTS = [
    ("bounded-block", GridSpec.bounded((3, 3, 3)), random_block_weight),
    ("periodic-mixing", GridSpec.periodic((3, 2, 3)), random_nonblock_weight),
]


@pytest.mark.parametrize("name,grid,make", WEIGHTS, ids=[w[0] for w in WEIGHTS])
def test_weighted_parts_match_dense_square_roots(name, grid, make):
    E = make(grid, np.random.default_rng(0))
    amax, aac = extended_parts(E)
    ref_max, ref_ac = _weighted(grid, E, "AMax", "Aac")
    np.testing.assert_allclose(_dense(amax), ref_max, atol=1e-12)
    np.testing.assert_allclose(_dense(aac), ref_ac, atol=1e-12)


def test_resolvent_matches_space_time_solve():
    rng = np.random.default_rng(1)
    grid = GridSpec.bounded((3, 3, 3))
    A = extended_operator(random_block_weight(grid, rng))
    F = _src(rng, A.dim)
    np.testing.assert_allclose(resolvent(A, F, TG), space_time_solve(A.matrix(), F.as_rhs(TG), TG.tau), atol=1e-12)
    U = resolvent(A, F, TG)
    assert evolution_residual(A, U, F, TG) <= 1e-12


@pytest.mark.parametrize("name,grid,make", WEIGHTS, ids=[w[0] for w in WEIGHTS])
def test_extended_data_becomes_maxwell_data(name, grid, make):
    rng = np.random.default_rng(2)
    E = make(grid, rng)
    ref_max, ref_ac = _weighted(grid, E, "AMax", "Aac")
    Ft = _src(rng, ref_max.shape[0])
    # both the extended solution and the transferred data from dense algebra
    V = space_time_solve(ref_max + ref_ac, Ft.as_rhs(TG), TG.tau)
    F_ref = _d0(TG.tau, TG.steps) @ space_time_solve(ref_ac, Ft.as_rhs(TG), TG.tau)
    F = extended_to_maxwell_rhs(Ft, E, TG)
    np.testing.assert_allclose(F.as_rhs(TG), F_ref, atol=1e-10)
    np.testing.assert_allclose(space_time_solve(ref_max, F_ref, TG.tau), V, atol=1e-10)


@pytest.mark.parametrize("name,grid,make", WEIGHTS, ids=[w[0] for w in WEIGHTS])
def test_maxwell_data_becomes_extended_data(name, grid, make):
    rng = np.random.default_rng(3)
    E = make(grid, rng)
    ref_max, ref_ac = _weighted(grid, E, "AMax", "Aac")
    F = _src(rng, ref_max.shape[0])
    rhs = F.as_rhs(TG)
    Ft_ref = rhs + np.linalg.inv(_d0(TG.tau, TG.steps)) @ rhs @ ref_ac.T
    Ft = maxwell_to_extended_rhs(F, E, TG)
    np.testing.assert_allclose(Ft.as_rhs(TG), Ft_ref, atol=1e-10)
    W = space_time_solve(ref_max, rhs, TG.tau)
    np.testing.assert_allclose(space_time_solve(ref_max + ref_ac, Ft_ref, TG.tau), W, atol=1e-10)
    back = extended_to_maxwell_rhs(Ft, E, TG)
    np.testing.assert_allclose(back.as_rhs(TG), rhs, atol=1e-11)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_factorization_for_annihilating_pairs(seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec.bounded((3, 3, 3))
    amax, aac = extended_parts(random_block_weight(grid, rng))
    assert factorization_residual(amax, aac, TG, rng) <= 1e-13
    # a pair with nonzero product is not factorised
    A = amax + aac
    assert factorization_residual(A, A, TG, rng) > 1e-3


def test_block_reduction_and_negative_control():
    rng = np.random.default_rng(4)
    grid = GridSpec.periodic((3, 3, 3))
    cx = build_complex(grid)
    off = np.cumsum([0] + [s.dof_count for s in cx.slots])
    reg = rng.standard_normal((TG.steps, off[-1]))
    reg[:, : off[1]] = 0.0
    reg[:, off[3] :] = 0.0
    F = SourceTerm(reg)
    good = block_reduction_check(F, random_block_weight(grid, rng), TG)
    assert good.passed and good.scalar_slot_max <= 1e-12 and good.maxwell_deviation <= 1e-10
    bad = block_reduction_check(F, random_nonblock_weight(grid, rng), TG)
    assert not bad.passed and bad.scalar_slot_max > 1e-3


def test_gem_operator_matches_dense_formula():
    rng = np.random.default_rng(5)
    grid = GridSpec.periodic((3, 2, 3))
    cx = build_complex(grid)
    C = PointwiseWeight.random(grid, cx.slots[:3], rng, 0.4, mixing=True)
    R = np.real(sla.sqrtm(C.matrix().toarray()))
    n7 = R.shape[0]
    amax = _dense(assemble_block("AMax", grid, cx))[:n7, :n7]
    dac = _dense(assemble_block("ADac", grid, cx))[:n7, :n7]
    ref = np.linalg.inv(R) @ amax @ np.linalg.inv(R) + R @ dac @ R
    np.testing.assert_allclose(_dense(gem_operator(C)), ref, atol=1e-12)


def test_gem_transfer():
    rng = np.random.default_rng(6)
    grid = GridSpec.periodic((3, 3, 3))
    E = random_gem_material(grid, rng)
    amax, dac, nac = gem_parts(E)
    reduced, full = _dense(amax + dac), _dense(amax + dac + nac)
    G = _src(rng, amax.dim)
    Gt = gem_transfer(G, E, TG, "to_full")
    W = space_time_solve(reduced, G.as_rhs(TG), TG.tau)
    np.testing.assert_allclose(space_time_solve(full, Gt.as_rhs(TG), TG.tau), W, atol=1e-10)
    back = gem_transfer(Gt, E, TG, "to_reduced")
    np.testing.assert_allclose(back.as_rhs(TG), G.as_rhs(TG), atol=1e-11)
    with pytest.raises(ValueError):
        gem_transfer(G, E, TG, "sideways")
    with pytest.raises(SpaceMismatchError):
        gem_transfer(G, random_nonblock_weight(grid, rng), TG, "to_full")


@pytest.mark.parametrize("grid", [GridSpec.periodic((3, 3, 3)), GridSpec.bounded((3, 4, 3))])
def test_gem_embeds_into_the_extended_system(grid):
    assert gem_embedding_residual(grid, TG, np.random.default_rng(7)) <= 1e-12


def test_solvers_and_layout_checks():
    rng = np.random.default_rng(8)
    grid = GridSpec.bounded((3, 3, 3))
    A = maxwell_operator(grid)
    F = _src(rng, A.dim)
    U = solve_maxwell(None, grid, F, TG).samples
    np.testing.assert_allclose(U, space_time_solve(A.matrix(), F.as_rhs(TG), TG.tau), atol=1e-12)
    cn = solve_maxwell(None, grid, F, TG, method="crank_nicolson")
    assert cn.metadata["solver"] == "crank_nicolson"
    cx = build_complex(grid)
    wrong = MaterialLaw(PointwiseWeight.identity(grid, cx.slots[:2]))
    with pytest.raises(SpaceMismatchError):
        solve_maxwell(wrong, grid, F, TG)
    gp = GridSpec.periodic(3)
    with pytest.raises(SpaceMismatchError):
        solve_extended(PointwiseWeight.identity(gp, build_complex(gp).slots), grid, F, TG)
