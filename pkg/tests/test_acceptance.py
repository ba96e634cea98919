"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line through ``criterion_log``; the lines are
printed in the terminal summary under "acceptance criteria".
"""

import contextlib
import json
import shutil
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
import sympy
import yaml

from extmax.block_systems import assemble_block, verify_annihilation
from extmax.dirac import K_CONST, P_LEFT, P_RIGHT, WTILDE_CONST, WTILDE_PARTIALS, verify_dirac_equivalence
from extmax.discrete_ops import GridSpec, build_complex
from extmax.evo_solver import CrankNicolson, ExponentialPropagator, ImplicitEuler, SourceTerm, TimeGrid, solution_bound_check
from extmax.exceptions import AdmissibilityError, MaterialLawError
from extmax.identities import (
    charge_order,
    gem_embedding_residual,
    gem_transfer_residuals,
    integrator_orders,
    random_block_weight,
    transfer_residuals,
)
from extmax.material_laws import MaterialLaw, eddy_current_preset, random_gem_material, verify_H1_H2
from extmax.pointwise import PointwiseOperator, PointwiseWeight
from extmax.potentials_maxwell_dirac import (
    default_commuting_S,
    random_admissible_scenario,
    random_potential_scenario,
    range_check,
    solve_maxwell_dirac,
    solve_potential,
    verify_potential,
)
from extmax.systems_transfer import block_reduction_check, extended_operator, gem_operator, maxwell_operator


@contextlib.contextmanager
def criterion(log, number, title):
    """Record PASS only if the body finishes without an assertion error."""
    info = {"detail": ""}
    ok = False
    try:
        yield info
        ok = True
    finally:
        log.record(number, title, ok, info["detail"])


def _fmt(x):
    return f"{x:.2e}"


def test_criterion_01_exact_sequence(criterion_log):
    with criterion(criterion_log, 1, "exact sequence on staggered grids") as c:
        t0 = time.perf_counter()
        worst = 0.0
        for cells in [(3, 3, 3), (4, 4, 4), (5, 5, 5), (4, 3, 5), (3, 5, 4)]:
            cx = build_complex(GridSpec.bounded(cells))
            for prod in (cx.curl0.matrix @ cx.grad0.matrix, cx.div0.matrix @ cx.curl0.matrix):
                prod = prod.tocsr()
                prod.eliminate_zeros()
                worst = max(worst, float(np.max(np.abs(prod.data), initial=0.0)))
        elapsed = time.perf_counter() - t0
        c["detail"] = f"max residual {worst}, {elapsed:.2f} s"
        assert worst == 0.0
        assert elapsed < 5.0


def test_criterion_02_annihilation(criterion_log):
    with criterion(criterion_log, 2, "A_Max A_ac = A_ac A_Max = 0") as c:
        worst = 0.0
        grids = [GridSpec.periodic((n, n, n)) for n in (2, 3, 4, 5)]
        grids += [GridSpec.bounded((n, n, n)) for n in (3, 4, 5)] + [GridSpec.bounded((4, 3, 5))]
        for g in grids:
            cx = build_complex(g)
            amax, aac = assemble_block("AMax", g, cx), assemble_block("Aac", g, cx)
            worst = max(worst, verify_annihilation(amax, aac), verify_annihilation(aac, amax))
        c["detail"] = f"max residual {worst} over {len(grids)} grids"
        assert worst == 0.0


def test_criterion_03_wave_identity(criterion_log):
    with criterion(criterion_log, 3, "(A_Max + A_ac)^2 = blockdiag(Laplacian)") as c:
        worst = 0.0
        for cells in [(4, 4, 4), (6, 4, 4)]:
            g = GridSpec.periodic(cells)
            cx = build_complex(g)
            A = assemble_block("Extended", g, cx).matrix()
            lap = sum(d.matrix @ d.matrix for d in cx.partials)
            diff = (A @ A - sp.kron(sp.identity(8), lap)).tocsr()
            diff.eliminate_zeros()
            worst = max(worst, float(np.max(np.abs(diff.data), initial=0.0)))
        c["detail"] = f"max residual {worst}"
        assert worst == 0.0


def _sym(a):
    return sympy.Matrix(a.astype(int).tolist())


def test_criterion_04_dirac_equivalence(criterion_log):
    with criterion(criterion_log, 4, "Dirac operator unitarily equivalent to extended Maxwell") as c:
        d1, d2, d3 = sympy.symbols("d1 d2 d3")
        PL = sympy.Matrix([[0, 0, -1, 0], [0, 0, 0, -1], [-1, 0, 0, 0], [0, 1, 0, 0]])
        PR = sympy.Matrix([[0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]])
        W1 = sympy.Matrix([[0, -d3, d2, -d1], [d3, 0, d1, d2], [-d2, -d1, 0, d3], [d1, -d2, -d3, 0]])
        W0 = sympy.Matrix([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]])
        printed_first = sympy.Matrix([[d1, 0, -d3, d2], [d2, d3, 0, -d1], [d3, -d2, d1, 0], [0, d1, d2, d3]])
        printed_const = sympy.Matrix([[0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1]])
        assert W1 * PR == sympy.Matrix([[-d3, d2, -d1, 0], [0, d1, d2, d3], [-d1, 0, d3, -d2], [-d2, -d3, 0, d1]])
        assert PL * W1 * PR == printed_first
        assert W0 * PR == sympy.Matrix([[-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0], [0, 1, 0, 0]])
        assert PL * W0 * PR == printed_const
        # the package constants are the printed ones
        assert _sym(P_LEFT) == PL and _sym(P_RIGHT) == PR and _sym(WTILDE_CONST) == W0 and _sym(K_CONST) == printed_const
        assert sum((_sym(w) * d for w, d in zip(WTILDE_PARTIALS, (d1, d2, d3))), sympy.zeros(4, 4)) == W1
        res = {}
        for n in (3, 4):
            rep = verify_dirac_equivalence(GridSpec.periodic((n, n, n)))
            assert rep.passed, rep.first_mismatch
            for k, v in rep.residuals.items():
                res[k] = max(res.get(k, 0.0), v)
        exact = ("symbol_first_order", "symbol_constant", "first_order", "wtilde_realify", "full")
        c["detail"] = f"chain {max(res[k] for k in exact)}, standard form {_fmt(res['standard_form'])}"
        for k in exact:
            assert res[k] == 0.0, k
        # realified spinor map carries 1/sqrt(2) entries
        assert res["standard_form"] <= 1e-14


def test_criterion_05_q0_q1_lemma(criterion_log):
    with criterion(criterion_log, 5, "Q0 to Q1 conjugation") as c:
        r = verify_dirac_equivalence(GridSpec.periodic((3, 3, 3))).residuals["lemma"]
        c["detail"] = f"residual {_fmt(r)}"
        assert r <= 1e-14


def _scalar_free_source(grid, tg, rng):
    cx = build_complex(grid)
    off = np.cumsum([0] + [s.dof_count for s in cx.slots])
    reg = rng.standard_normal((tg.steps, off[-1]))
    reg[:, : off[1]] = 0.0
    reg[:, off[3] :] = 0.0
    return SourceTerm(reg)


def test_criterion_06_solution_transfer(criterion_log):
    with criterion(criterion_log, 6, "extended/Maxwell solution transfer") as c:
        t0 = time.perf_counter()
        grid = GridSpec.bounded((3, 3, 3))
        tg = TimeGrid(0.05, 40, nu=1.0)
        worst = {"extended_to_maxwell": 0.0, "maxwell_to_extended": 0.0, "round_trip": 0.0, "scalar": 0.0}
        for seed in (1, 2, 3):
            rng = np.random.default_rng(seed)
            E = random_block_weight(grid, rng)
            for k, v in transfer_residuals(E, tg, rng).items():
                worst[k] = max(worst[k], v)
            rep = block_reduction_check(_scalar_free_source(grid, tg, rng), E, tg)
            worst["scalar"] = max(worst["scalar"], rep.scalar_slot_max)
        elapsed = time.perf_counter() - t0
        c["detail"] = ", ".join(f"{k} {_fmt(v)}" for k, v in worst.items()) + f", {elapsed:.1f} s"
        assert worst["extended_to_maxwell"] <= 1e-10 and worst["maxwell_to_extended"] <= 1e-10
        assert worst["round_trip"] <= 1e-11
        assert worst["scalar"] <= 1e-12
        assert elapsed < 30.0


def test_criterion_07_gem_transfer(criterion_log):
    with criterion(criterion_log, 7, "GEM transfer and embedding") as c:
        grid = GridSpec.periodic((3, 3, 3))
        tg = TimeGrid(0.05, 40, nu=1.0)
        worst = {"full_to_reduced": 0.0, "reduced_to_full": 0.0, "round_trip": 0.0, "embedding": 0.0}
        for seed in (1, 2, 3):
            rng = np.random.default_rng(seed)
            E = random_gem_material(grid, rng)
            for k, v in gem_transfer_residuals(E, tg, rng).items():
                worst[k] = max(worst[k], v)
            worst["embedding"] = max(worst["embedding"], gem_embedding_residual(grid, tg, rng))
        c["detail"] = ", ".join(f"{k} {_fmt(v)}" for k, v in worst.items())
        assert worst["full_to_reduced"] <= 1e-10 and worst["reduced_to_full"] <= 1e-10
        assert worst["round_trip"] <= 1e-11
        assert worst["embedding"] <= 1e-12


def test_criterion_08_potential_reconstruction(criterion_log):
    with criterion(criterion_log, 8, "potential reconstruction") as c:
        grid = GridSpec.bounded((3, 3, 3))
        tg = TimeGrid(0.05, 40)
        rng = np.random.default_rng(8)
        worst = {"a": 0.0, "b": 0.0, "c": 0.0}
        for _ in range(5):
            EH, a10, H0 = random_potential_scenario(grid, tg, rng)
            assert range_check(H0, grid) <= 1e-10
            rep = verify_potential(solve_potential(EH, a10, grid, tg, H0=H0), EH, a10, tg, tol=1e-8)
            assert rep.passed, str(rep)
            for k, v in rep.clauses.items():
                worst[k] = max(worst[k], v)
        EH, a10, H0 = random_potential_scenario(grid, tg, rng, consistent=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            neg = verify_potential(solve_potential(EH, a10, grid, tg, H0=H0), EH, a10, tg, tol=1e-8)
        c["detail"] = ", ".join(f"({k}) {_fmt(v)}" for k, v in worst.items()) + f"; control (a) {_fmt(neg.clauses['a'])}"
        assert "a" in neg.failed


def test_criterion_09_causality(criterion_log):
    with criterion(criterion_log, 9, "causality for all integrators and systems") as c:
        rng = np.random.default_rng(9)
        gb, gp = GridSpec.bounded((3, 3, 3)), GridSpec.periodic((3, 3, 3))
        mx = maxwell_operator(gb)
        systems = [
            ("maxwell", mx, MaterialLaw(PointwiseWeight.random(gb, mx.layout, rng, 0.4))),
            ("extended", extended_operator(random_block_weight(gb, rng)), None),
            ("gem", gem_operator(PointwiseWeight.random(gp, build_complex(gp).slots[:3], rng, 0.4)), None),
        ]
        tg = TimeGrid(0.05, 20)
        checked = 0
        for name, A, law in systems:
            reg = rng.standard_normal((tg.steps, A.dim))
            reg[:5] = 0.0
            F = SourceTerm(reg)
            for cls in (ImplicitEuler, CrankNicolson, ExponentialPropagator):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    U = cls.from_grid(tg).fit(A, law).transform(F).samples
                assert not np.any(U[:5]), f"{name}/{cls.__name__}"
                assert np.any(U[5]), f"{name}/{cls.__name__} ignores the source"
                checked += 1
        c["detail"] = f"{checked} system/integrator pairs, steps 0-4 exactly zero"


def test_criterion_10_conservation_and_dissipation(criterion_log):
    with criterion(criterion_log, 10, "Crank-Nicolson conservation, implicit Euler dissipation") as c:
        rng = np.random.default_rng(10)
        gb = GridSpec.bounded((3, 3, 3))
        mx = maxwell_operator(gb)
        M0 = PointwiseWeight.random(gb, mx.layout, rng, 0.5)
        tg = TimeGrid(0.05, 201)
        u0 = rng.standard_normal(mx.dim)
        # impulse M0 u0 gives U(0+) = u0 and F = 0 afterwards
        F = SourceTerm(None, [(0, M0.matrix() @ u0)], dim=mx.dim)
        e = CrankNicolson.from_grid(tg).fit(mx, MaterialLaw(M0)).transform(F).energy(M0)
        drift = float(np.max(np.abs(e - e[0])) / e[0])
        law = MaterialLaw(M0, PointwiseOperator(gb, mx.layout, diag=rng.uniform(0.0, 0.5, mx.dim)))
        en = ImplicitEuler.from_grid(tg).fit(mx, law).transform(F).energy(M0)
        growth = float(np.max(np.diff(en)) / en[0])
        c["detail"] = f"CN drift {_fmt(drift)} over {tg.steps - 1} steps, IE max increment {_fmt(growth)}"
        assert drift <= 1e-12
        assert growth <= 1e-14


def test_criterion_11_integrator_orders(criterion_log):
    with criterion(criterion_log, 11, "convergence orders against the exponential reference") as c:
        parts = []
        orders = {}
        # the 2x2x2 centered differences vanish, so 3x3x3 adds a run with a nonzero operator
        for cells in [(2, 2, 2), (3, 3, 3)]:
            res = integrator_orders(GridSpec.periodic(cells), np.random.default_rng(11))
            ie, cn = res["implicit_euler"]["order"], res["crank_nicolson"]["order"]
            orders[cells] = (ie, cn)
            parts.append(f"{'x'.join(map(str, cells))}: IE {ie:.3f}, CN {cn:.3f}")
        c["detail"] = "; ".join(parts)
        for ie, cn in orders.values():
            assert abs(ie - 1.0) <= 0.2
            assert abs(cn - 2.0) <= 0.2


def test_criterion_12_material_laws(criterion_log):
    with criterion(criterion_log, 12, "material-law certification and solution bound") as c:
        rng = np.random.default_rng(12)
        gb = GridSpec.bounded((3, 3, 3))
        cx = build_complex(gb)
        nu = 0.7
        sigma = rng.uniform(0.5, 2.0, cx.v1.dof_count)
        mu = rng.uniform(0.5, 2.0, cx.v2.dof_count)
        rep = verify_H1_H2(eddy_current_preset(gb, sigma, mu), nu)
        assert rep.c0 == min(sigma.min(), nu * mu.min())
        bad = PointwiseOperator(gb, (cx.v1, cx.v2), diag=np.r_[-np.ones(cx.v1.dof_count), np.ones(cx.v2.dof_count)])
        with pytest.raises(MaterialLawError):
            verify_H1_H2(MaterialLaw(bad), nu)
        mx = maxwell_operator(gb)
        ratios = []
        for _ in range(10):
            tg = TimeGrid(0.05, 40, nu=1.0)
            law = MaterialLaw(
                PointwiseWeight.random(gb, mx.layout, rng, 0.5),
                PointwiseOperator(gb, mx.layout, diag=rng.uniform(-0.2, 0.5, mx.dim)),
            ).certify(tg.nu)
            F = SourceTerm(rng.standard_normal((tg.steps, mx.dim)), [(0, rng.standard_normal(mx.dim))])
            tr = ImplicitEuler.from_grid(tg).fit(mx, law).transform(F)
            b = solution_bound_check(tr, F, law.c0, law.M0.max_eig())
            assert b.holds
            ratios.append(b.lhs / b.rhs)
        c["detail"] = f"c0 exact, indefinite rejected, max lhs/rhs {max(ratios):.3f}"


def test_criterion_13_maxwell_dirac_charge(criterion_log):
    with criterion(criterion_log, 13, "Maxwell-Dirac charge residual, admissibility, skew S") as c:
        r = charge_order(GridSpec.periodic((2, 2, 2)), np.random.default_rng(13))
        order = r["order"]
        assert abs(order - 1.0) <= 0.2
        grid = GridSpec.periodic((3, 3, 3))
        rng = np.random.default_rng(130)
        data = random_admissible_scenario(grid, rng)
        tr = solve_maxwell_dirac(grid, tg=TimeGrid(0.1, 3), **data)
        adm = tr.metadata["admissibility_residual"]
        assert adm <= 1e-8
        bad = dict(data, E0=data["E0"] + 1e-6 * rng.standard_normal(data["E0"].size))
        with pytest.raises(AdmissibilityError):
            solve_maxwell_dirac(grid, tg=TimeGrid(0.1, 3), **bad)
        S, _ = default_commuting_S()
        assert not np.any(S + S.T) and not np.any(np.diag(S))
        psi = rng.standard_normal((1000, 8))
        pairs = [(i, j) for i in range(8) for j in range(i + 1, 8)]
        # each term S_ij psi_i psi_j meets its partner S_ji psi_j psi_i before summation
        paired = sum((S[i, j] + S[j, i]) * psi[:, i] * psi[:, j] for i, j in pairs)
        assert not np.any(paired)
        flat = float(np.max(np.abs(np.einsum("pi,ij,pj->p", psi, S, psi))))
        c["detail"] = f"order {order:.3f}, admissibility {_fmt(adm)}, <psi,S psi> paired 0 (unpaired sum {_fmt(flat)})"


def _cli(*args, env=None):
    exe = shutil.which("extmax")
    cmd = [exe] if exe else [sys.executable, "-m", "extmax.cli"]
    return subprocess.run(cmd + list(args), capture_output=True, text=True, env=env)


def test_criterion_14_cli_determinism(criterion_log, tmp_path, monkeypatch):
    monkeypatch.delenv("EXTMAX_OUTPUT_DIR", raising=False)
    with criterion(criterion_log, 14, "CLI determinism and exit codes") as c:
        a, b = tmp_path / "a", tmp_path / "b"
        pa = _cli("suite", "--seed", "7", "--output-dir", str(a))
        pb = _cli("suite", "--seed", "7", "--output-dir", str(b))
        assert pa.returncode == 0 and pb.returncode == 0, pa.stderr
        same = (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        assert same
        cfg = tmp_path / "neg.yaml"
        cfg.write_text(yaml.safe_dump({"scenario": "transfer_check", "grid": {"backend": "periodic"},
                                       "material": {"kind": "nonblock"}, "time": {"steps": 10}}))
        p1 = _cli("run", str(cfg), "--output-dir", str(tmp_path / "neg"))
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"scenario": "solve", "grid": {"h": -1.0}}))
        p2 = _cli("run", str(bad), "--output-dir", str(tmp_path / "bad"))
        assert p1.returncode == 1 and p2.returncode == 2
        assert json.loads(p2.stderr)["key"] == "grid.h"
        c["detail"] = f"report.json identical: {same}; exit codes 0/{p1.returncode}/{p2.returncode}"
