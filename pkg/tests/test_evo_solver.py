import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from extmax.discrete_ops import GridSpec, build_complex
from extmax.evo_solver import (
    CrankNicolson,
    ExponentialPropagator,
    ImplicitEuler,
    SourceTerm,
    TimeGrid,
    causality_check,
    d0,
    d0_inv,
    discrete_d0,
    discrete_d0_inverse,
    read_field_dump,
    solution_bound_check,
    weighted_norm,
)
from extmax.exceptions import CausalityViolation, SolverError, SpaceMismatchError
from extmax.material_laws import MaterialLaw, eddy_current_preset
from extmax.pointwise import PointwiseOperator, PointwiseWeight
from extmax.systems_transfer import extended_operator, maxwell_operator
from oracles import cayley_powers, ode_reference, space_time_solve

GB = GridSpec.bounded((3, 3, 3))
MX = maxwell_operator(GB)
CX = build_complex(GB)


def _random_law(rng, m1_scale=0.3):
    return MaterialLaw(
        PointwiseWeight.random(GB, MX.layout, rng, 0.5),
        PointwiseOperator(GB, MX.layout, diag=m1_scale * rng.uniform(0, 1, MX.dim)),
    )


def test_time_grid():
    tg = TimeGrid(0.1, 11, t0=-0.5)
    assert tg.index_of(0.0) == 5 and tg.t_end == pytest.approx(0.5)
    assert tg.refine(4).steps == 41 and tg.refine(4).t_end == pytest.approx(0.5)
    for bad in (dict(tau=0, steps=3), dict(tau=0.1, steps=0), dict(tau=0.1, steps=3, nu=-1), dict(tau=0.5, steps=3, nu=2)):
        with pytest.raises(ValueError):
            TimeGrid(**bad)
    with pytest.raises(ValueError):
        tg.index_of(0.05)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
def test_backward_difference_and_running_sum_are_inverse(steps, tau, seed):
    tg = TimeGrid(tau, steps)
    X = np.random.default_rng(seed).standard_normal((steps, 4))
    np.testing.assert_allclose(d0(d0_inv(X, tg), tg), X, atol=1e-11)
    np.testing.assert_allclose(d0_inv(d0(X, tg), tg), X, atol=1e-11)
    np.testing.assert_allclose((discrete_d0(tg) @ discrete_d0_inverse(tg)).toarray(), np.eye(steps), atol=1e-13)
    np.testing.assert_allclose(discrete_d0(tg) @ X, d0(X, tg), atol=1e-12)


def test_implicit_euler_matches_space_time_system():
    rng = np.random.default_rng(0)
    law = _random_law(rng)
    tg = TimeGrid(0.1, 12)
    F = SourceTerm(rng.standard_normal((tg.steps, MX.dim)), [(0, rng.standard_normal(MX.dim))])
    U = ImplicitEuler.from_grid(tg).fit(MX, law).transform(F).samples
    ref = space_time_solve(MX.matrix() + law.M1.matrix(), F.as_rhs(tg), tg.tau, law.M0.matrix())
    np.testing.assert_allclose(U, ref, atol=1e-12)


def test_implicit_euler_with_singular_mass():
    rng = np.random.default_rng(1)
    law = eddy_current_preset(GB, rng.uniform(0.5, 1.5, CX.v1.dof_count), rng.uniform(0.5, 1.5, CX.v2.dof_count), CX)
    tg = TimeGrid(0.05, 10)
    F = SourceTerm(rng.standard_normal((tg.steps, MX.dim)))
    U = ImplicitEuler.from_grid(tg).fit(MX, law).transform(F).samples
    ref = space_time_solve(MX.matrix() + law.M1.matrix(), F.as_rhs(tg), tg.tau, law.M0.matrix())
    np.testing.assert_allclose(U, ref, atol=1e-12)


def test_crank_nicolson_matches_cayley_powers():
    rng = np.random.default_rng(2)
    A = extended_operator(PointwiseWeight.random(GB, CX.slots, rng, 0.3))
    tg = TimeGrid(0.05, 25)
    u0 = rng.standard_normal(A.dim)
    tr = CrankNicolson.from_grid(tg).fit(A).transform(SourceTerm.impulse(u0))
    assert tr.metadata["impulse_mode"] == "jump"
    np.testing.assert_allclose(tr.samples, cayley_powers(A.matrix(), u0, tg.tau, tg.steps), atol=1e-12)


def test_crank_nicolson_is_second_order_against_ode_reference():
    rng = np.random.default_rng(3)
    grid = GridSpec.periodic(2)
    A = extended_operator(PointwiseWeight.random(grid, build_complex(grid).slots, rng, 0.3))
    K = A.matrix().toarray() + 0.2 * np.eye(A.dim)
    g = rng.standard_normal(A.dim)
    errs = []
    for tau in (0.1, 0.05):
        tg = TimeGrid(tau, int(round(1 / tau)) + 1)
        F = SourceTerm(np.outer(np.sin(tg.times), g))
        U = CrankNicolson.from_grid(tg).fit(sp.csr_matrix(K)).transform(F).samples
        errs.append(np.abs(U - ode_reference(K, lambda t: np.sin(t) * g, tg.times)).max())
    assert 3.6 < errs[0] / errs[1] < 4.4


def test_exponential_propagator_matches_ode_reference():
    rng = np.random.default_rng(4)
    grid = GridSpec.periodic(2)
    A = extended_operator(PointwiseWeight.random(grid, build_complex(grid).slots, rng, 0.3))
    tg = TimeGrid(0.02, 51)
    u0 = rng.standard_normal(A.dim)
    tr = ExponentialPropagator.from_grid(tg).fit(A).transform(SourceTerm.impulse(u0))
    assert tr.metadata["skew"]
    ref = ode_reference(A.matrix(), lambda t: np.zeros(A.dim), tg.times, u0)
    np.testing.assert_allclose(tr.samples, ref, atol=1e-10)


def test_exponential_warns_for_non_skew_generator():
    grid = GridSpec.periodic(2)
    A = extended_operator(PointwiseWeight.identity(grid, build_complex(grid).slots))
    with pytest.warns(RuntimeWarning):
        ExponentialPropagator(tau=0.1, steps=3).fit(A.matrix() + sp.identity(A.dim))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 15), st.sampled_from(["ie", "cn", "exp"]), st.integers(0, 2**32 - 1))
def test_causality_is_bitwise(start, which, seed):
    rng = np.random.default_rng(seed)
    law = MaterialLaw(PointwiseWeight.random(GB, MX.layout, rng, 0.5))
    tg = TimeGrid(0.05, 16)
    cls = {"ie": ImplicitEuler, "cn": CrankNicolson, "exp": ExponentialPropagator}[which]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = cls.from_grid(tg).fit(MX, law)
    reg = rng.standard_normal((tg.steps, MX.dim))
    reg[:start] = 0.0
    F = SourceTerm(reg)
    assert causality_check(est.transform, F) == 0.0
    assert np.any(est.transform(F).samples[start])


def test_causality_check_reports_violations():
    tg = TimeGrid(0.1, 5)
    F = SourceTerm(np.r_[np.zeros((2, 3)), np.ones((3, 3))])

    def leaky(src):
        from extmax.evo_solver import Trajectory

        return Trajectory(np.ones((tg.steps, 3)), tg)

    with pytest.raises(CausalityViolation) as exc:
        causality_check(leaky, F)
    assert exc.value.step == 0
    with pytest.raises(ValueError):
        causality_check(leaky, F, start=4)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_crank_nicolson_conserves_energy(seed):
    rng = np.random.default_rng(seed)
    A = extended_operator(PointwiseWeight.random(GB, CX.slots, rng, 0.4))
    tg = TimeGrid(0.1, 60)
    e = CrankNicolson.from_grid(tg).fit(A).transform(SourceTerm.impulse(rng.standard_normal(A.dim))).energy()
    assert np.max(np.abs(e - e[0])) <= 1e-12 * e[0]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_implicit_euler_dissipates(seed):
    rng = np.random.default_rng(seed)
    law = _random_law(rng)
    tg = TimeGrid(0.1, 40)
    tr = ImplicitEuler.from_grid(tg).fit(MX, law).transform(SourceTerm.impulse(rng.standard_normal(MX.dim)))
    e = tr.energy(law.M0)
    assert np.all(np.diff(e) <= 1e-14 * e[0])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 2.0))
def test_solution_bound(seed, nu):
    rng = np.random.default_rng(seed)
    law = _random_law(rng).certify(nu)
    tg = TimeGrid(0.05, 30, nu=nu)
    F = SourceTerm(rng.standard_normal((tg.steps, MX.dim)), [(0, rng.standard_normal(MX.dim))])
    tr = ImplicitEuler.from_grid(tg).fit(MX, law).transform(F)
    rep = solution_bound_check(tr, F, law.c0, law.M0.max_eig())
    assert rep.holds and rep.kappa >= 0
    assert rep.lhs == weighted_norm(tr)


def test_solution_bound_is_not_vacuous():
    # overstating c0 by a large factor must break the bound for a resonant-free source
    rng = np.random.default_rng(7)
    law = _random_law(rng, 0.0).certify(1.0)
    tg = TimeGrid(0.05, 30, nu=1.0)
    F = SourceTerm(None, [(0, rng.standard_normal(MX.dim))], dim=MX.dim)
    tr = ImplicitEuler.from_grid(tg).fit(MX, law).transform(F)
    assert solution_bound_check(tr, F, law.c0, law.M0.max_eig()).holds
    assert not solution_bound_check(tr, F, 50 * law.c0, law.M0.max_eig()).holds


def test_source_term_algebra():
    tg = TimeGrid(0.5, 4)
    a = SourceTerm(np.ones((4, 2)), [(1, [1.0, 0.0])])
    b = SourceTerm.impulse([0.0, 2.0], k=2)
    c = a + b
    np.testing.assert_array_equal(c.as_rhs(tg), [[1, 1], [3, 1], [1, 5], [1, 1]])
    assert c.first_support(tg) == 0 and b.first_support(tg) == 2
    np.testing.assert_array_equal(c.scaled(2.0).as_rhs(tg), 2 * c.as_rhs(tg))
    np.testing.assert_array_equal(c.mapped(np.array([[0, 1], [1, 0]])).as_rhs(tg), c.as_rhs(tg)[:, ::-1])
    with pytest.raises(SpaceMismatchError):
        SourceTerm(np.ones((4, 2)), [(0, [1.0])])
    with pytest.raises(ValueError):
        SourceTerm.impulse([1.0], k=9).as_rhs(tg)
    with pytest.raises(SpaceMismatchError):
        a.regular_samples(TimeGrid(0.5, 3))


def test_estimator_protocol():
    est = ImplicitEuler(tau=0.2, steps=5, nu=0.5)
    assert est.get_params() == {"tau": 0.2, "steps": 5, "t0": 0.0, "nu": 0.5, "rtol": 1e-10}
    twin = clone(est).set_params(steps=7)
    assert twin.time_grid.steps == 7 and est.time_grid.steps == 5
    tr = est.fit_transform(MX, None, SourceTerm.impulse(np.ones(MX.dim)))
    assert tr.samples.shape == (5, MX.dim) and tr.metadata["solver"] == "implicit_euler"
    with pytest.raises(SpaceMismatchError):
        est.transform(SourceTerm.impulse(np.ones(3)))


def test_singular_step_matrix_raises():
    zero = sp.csr_matrix((4, 4))
    with pytest.raises(SolverError):
        ImplicitEuler(tau=0.1, steps=3).fit(zero, (zero, None))


def test_trajectory_outputs(tmp_path):
    rng = np.random.default_rng(0)
    tg = TimeGrid(0.1, 6, nu=0.5)
    tr = ImplicitEuler.from_grid(tg).fit(MX).transform(SourceTerm.impulse(rng.standard_normal(MX.dim)))
    path = tr.to_csv(tmp_path / "d.csv", {"extra": np.arange(6)})
    lines = path.read_text().splitlines()
    assert lines[0] == "t,energy,weighted_norm,norm_slot0,norm_slot1,extra"
    assert len(lines) == 7
    last = [float(x) for x in lines[-1].split(",")]
    assert last[2] == pytest.approx(weighted_norm(tr))
    header, data = read_field_dump(tr.dump_fields(tmp_path / "f.evof"))
    assert header == {"ncomponents": 2, "dofs": MX.dim, "nsteps": 6}
    np.testing.assert_array_equal(data, tr.samples)
    raw = (tmp_path / "f.evof").read_bytes()
    assert raw.startswith(b"EVOF1 2 ")
    (tmp_path / "bad").write_bytes(b"NOPE 1 1 1\n")
    with pytest.raises(ValueError):
        read_field_dump(tmp_path / "bad")
    np.testing.assert_allclose(tr.component_norms() ** 2 @ np.ones(2), tr.norms() ** 2)
