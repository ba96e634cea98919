"""Command line entry point: ``extmax run|suite|schema|list``.

Configs are YAML (JSON works too) and are validated against ``SCHEMA``
before anything is allocated.  Every run writes ``report.json`` (sorted
keys, no timestamps), ``timestamps.json`` and, where a trajectory exists,
``diagnostics.csv``.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import os
import platform
import sys
import time
import traceback
import warnings
from pathlib import Path

import numpy as np
import scipy
import yaml
from jsonschema import Draft7Validator

from .dirac import verify_dirac_equivalence
from .discrete_ops import GridSpec, build_complex
from .evo_solver import (
    FIELD_DUMP_MAGIC,
    SourceTerm,
    TimeGrid,
    Trajectory,
    causality_check,
    read_field_dump,
    solution_bound_check,
)
from .exceptions import ConfigError, ExtmaxError
from .identities import (
    IdentityResult,
    fitted_order,
    gem_embedding_residual,
    gem_transfer_residuals,
    random_block_weight,
    random_nonblock_weight,
    run_identity_suite,
    transfer_residuals,
)
from .material_laws import MaterialLaw, eddy_current_preset, profile_field, random_gem_material, vacuum_law
from .pointwise import PointwiseWeight
from .potentials_maxwell_dirac import (
    charge_residual,
    global_charge,
    random_admissible_scenario,
    random_potential_scenario,
    range_check,
    solve_maxwell_dirac,
    solve_potential,
    verify_potential,
)
from .systems_transfer import (
    INTEGRATORS,
    block_reduction_check,
    extended_operator,
    gem_operator,
    maxwell_operator,
)

OUTPUT_ENV = "EXTMAX_OUTPUT_DIR"

SCENARIOS = {
    "solve": "time-integrate one system (maxwell, extended, gem) and write diagnostics",
    "transfer_check": "solution transfer between the extended system and its reduced form",
    "dirac_equivalence": "Dirac operator against the extended Maxwell operator, link by link",
    "potential_reconstruction": "potentials from a Maxwell solution and the three potential clauses",
    "maxwell_dirac": "coupled Maxwell-Dirac solve with a charge-residual refinement study",
    "identity_suite": "every identity check on a range of grid sizes",
}

CSV_HELP = """\
diagnostics.csv columns (one row per time step):
  t               sample time t0 + n*tau
  energy          h^3 * |U^n|^2
  weighted_norm   running (tau * sum_k h^3 |U^k|^2 exp(-2 nu t_k))^(1/2)
  norm_slot<i>    h^3-weighted L2 norm of slot i
                  (layout s0, v1, v2, s3; maxwell: v1, v2; gem: s0, v1, v2;
                   maxwell_dirac: Maxwell, spinor, potential blocks in turn)
  charge          maxwell_dirac only: total charge h^3 * sum |psi|^2
  charge_residual maxwell_dirac only: |d0 |psi|^2 + div J| (nan at the impulse step)
  picard_iterations maxwell_dirac only: Picard iterations used per step

field dumps (output.dump_fields): one ASCII line
  "EVOF1 <ncomponents> <dofs> <steps> little-endian f64"
followed by steps*dofs little-endian float64 values, step-major.

exit codes: 0 all checks pass, 1 a check fails or the run errors,
2 the config violates the schema (the message names the key).
The output directory is taken from $EXTMAX_OUTPUT_DIR when set.
"""


def _num(default, minimum=None, exclusive=None):
    s = {"type": "number", "default": default}
    if minimum is not None:
        s["minimum"] = minimum
    if exclusive is not None:
        s["exclusiveMinimum"] = exclusive
    return s


SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "extmax scenario configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": list(SCENARIOS), "description": "what to run"},
        "seed": {"type": "integer", "minimum": 0, "default": 0, "description": "single source of randomness"},
        "output_dir": {"type": "string", "default": "extmax_out", "description": f"overridden by ${OUTPUT_ENV}"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "backend": {"enum": ["bounded_staggered", "periodic"], "default": "bounded_staggered"},
                "n": {
                    "default": 3,
                    "oneOf": [
                        {"type": "integer", "minimum": 2},
                        {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 3, "maxItems": 3},
                    ],
                    "description": "cells per direction (staggered grids need at least 3)",
                },
                "h": _num(1.0, exclusive=0),
            },
        },
        "system": {"enum": ["maxwell", "extended", "gem"], "default": "extended"},
        "material": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "kind": {
                    "enum": ["vacuum", "random", "eddy_current", "nonblock"],
                    "default": "vacuum",
                    "description": "nonblock: full random weight coupling the scalar slots (periodic only)",
                },
                "spread": {"type": "number", "minimum": 0, "exclusiveMaximum": 1, "default": 0.4},
                "profile": {"enum": ["constant", "two_region"], "default": "constant"},
                "sigma": _num(1.0, exclusive=0),
                "mu": _num(1.0, exclusive=0),
                "sigma2": _num(1.0, exclusive=0),
                "mu2": _num(1.0, exclusive=0),
                "axis": {"type": "integer", "minimum": 0, "maximum": 2, "default": 0},
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "tau": _num(0.05, exclusive=0),
                "steps": {"type": "integer", "minimum": 1, "default": 40},
                "nu": _num(1.0, minimum=0),
            },
        },
        "integrator": {"enum": list(INTEGRATORS), "default": "implicit_euler"},
        "source": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "profile": {"enum": ["zero", "pulse", "smooth", "random", "file"], "default": "smooth"},
                "amplitude": _num(1.0),
                "start_step": {"type": "integer", "minimum": 0, "default": 0},
                "path": {"type": "string", "description": ".npy array (steps, dofs) or an EVOF1 field dump"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "csv": {"type": "boolean", "default": True},
                "dump_fields": {
                    "type": "boolean",
                    "default": False,
                    "description": f"write fields.evof: ASCII header '{FIELD_DUMP_MAGIC} <ncomponents> <dofs> <steps> "
                    "little-endian f64' then little-endian float64 samples",
                },
            },
        },
        "maxwell_dirac": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "amplitude": _num(1e-3, exclusive=0),
                "picard_tol": _num(1e-10, exclusive=0),
                "picard_max": {"type": "integer", "minimum": 1, "default": 50},
                "alpha_coeffs": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3, "default": [0.0, 0.0, 0.0]},
                "refinements": {"type": "integer", "minimum": 2, "default": 3},
                "t_end": _num(1.0, exclusive=0),
            },
        },
        "suite": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1, "default": [2, 3, 4]},
            },
        },
    },
}


# ---------------------------------------------------------------------------
# config handling


def fill_defaults(schema: dict, cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if sub.get("type") == "object" and isinstance(out.get(key), dict):
            out[key] = fill_defaults(sub, out[key])
    return out


def _error_key(err) -> str:
    path = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path.append(extra[0] if extra else "?")
    elif err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        path.append(missing[0] if missing else "?")
    return ".".join(path) or "<root>"


def validate_config(cfg) -> dict:
    """Validate and default-fill; raises :class:`ConfigError` naming the key."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping", "<root>")
    errors = sorted(Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        key = _error_key(err)
        raise ConfigError(f"config error at '{key}': {err.message}", key)
    return fill_defaults(SCHEMA, cfg)


def load_config(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", "<file>") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}", "<file>") from None
    return validate_config(raw)


# ---------------------------------------------------------------------------
# building blocks from a config


def _grid(cfg) -> GridSpec:
    g = cfg["grid"]
    n = g["n"]
    cells = (n, n, n) if isinstance(n, int) else tuple(n)
    try:
        if g["backend"] == "periodic":
            return GridSpec.periodic(cells, g["h"])
        return GridSpec.bounded(cells, g["h"])
    except ValueError as exc:
        raise ConfigError(str(exc), "grid.n") from None


def _time_grid(cfg) -> TimeGrid:
    t = cfg["time"]
    try:
        return TimeGrid(t["tau"], t["steps"], 0.0, t["nu"])
    except ValueError as exc:
        raise ConfigError(str(exc), "time") from None


def _need_periodic(grid, what):
    if not grid.is_periodic:
        raise ConfigError(f"{what} needs grid.backend: periodic", "grid.backend")


def _weight(cfg, grid, rng, slots):
    """Weight on ``slots`` (all four slots or the first three) from ``material``."""
    m = cfg["material"]
    cx = build_complex(grid)
    layout = cx.slots[:slots]
    kind = m["kind"]
    if kind == "vacuum":
        return PointwiseWeight.identity(grid, layout)
    if kind == "random":
        if slots == 4:
            return random_block_weight(grid, rng, m["spread"])
        return PointwiseWeight.random(grid, layout, rng, m["spread"])
    if kind == "nonblock":
        _need_periodic(grid, "material.kind nonblock")
        if slots == 4:
            return random_nonblock_weight(grid, rng, m["spread"])
        return PointwiseWeight.random(grid, layout, rng, m["spread"])
    raise ConfigError(f"material.kind {kind} only applies to system maxwell", "material.kind")


def _maxwell_law(cfg, grid, rng) -> MaterialLaw:
    m = cfg["material"]
    cx = build_complex(grid)
    kind = m["kind"]
    if kind == "vacuum":
        return vacuum_law(grid, (cx.v1, cx.v2))
    if kind == "random":
        return MaterialLaw(PointwiseWeight.random(grid, (cx.v1, cx.v2), rng, m["spread"]))
    if kind == "eddy_current":
        two = m["profile"] == "two_region"
        sigma = profile_field(cx, 1, m["profile"], m["sigma"], m["sigma2"] if two else None, m["axis"])
        mu = profile_field(cx, 2, m["profile"], m["mu"], m["mu2"] if two else None, m["axis"])
        return eddy_current_preset(grid, sigma, mu, cx)
    raise ConfigError(f"material.kind {kind} does not apply to system maxwell", "material.kind")


def _source(cfg, tg: TimeGrid, dim: int, rng) -> SourceTerm:
    s = cfg["source"]
    k0 = s["start_step"]
    if k0 >= tg.steps:
        raise ConfigError("source.start_step lies beyond the time grid", "source.start_step")
    amp = s["amplitude"]
    prof = s["profile"]
    if prof == "zero":
        return SourceTerm.zeros(dim, tg)
    if prof == "pulse":
        return SourceTerm(None, [(k0, amp * rng.standard_normal(dim))], dim=dim, steps=tg.steps)
    if prof == "smooth":
        t = tg.times - tg.times[k0]
        f = np.where(t > 0, t**2 * np.exp(-t), 0.0)
        return SourceTerm(amp * np.outer(f, rng.standard_normal(dim)))
    if prof == "random":
        reg = amp * rng.standard_normal((tg.steps, dim))
        reg[:k0] = 0.0
        return SourceTerm(reg)
    path = s.get("path")
    if not path:
        raise ConfigError("source.profile file needs source.path", "source.path")
    p = Path(path)
    try:
        data = np.load(p) if p.suffix == ".npy" else read_field_dump(p)[1]
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read source file {path}: {exc}", "source.path") from None
    if data.shape != (tg.steps, dim):
        raise ConfigError(f"source file has shape {data.shape}, expected {(tg.steps, dim)}", "source.path")
    return SourceTerm(amp * np.asarray(data, dtype=float))


# ---------------------------------------------------------------------------
# scenarios


class _Run:
    def __init__(self, cfg, outdir: Path):
        self.cfg = cfg
        self.outdir = outdir
        self.rows: list[IdentityResult] = []
        self.extra: dict = {}
        self.timings: dict = {}
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))

    def add(self, name, anchor, residual, tol, detail=None, strict=False):
        residual = float(residual)
        ok = residual == 0.0 if strict else residual <= tol
        self.rows.append(IdentityResult(name, anchor, residual, float(tol), bool(ok), detail or {}))

    def write_traj(self, traj: Trajectory, extra=None):
        out = self.cfg["output"]
        if out["csv"]:
            traj.to_csv(self.outdir / "diagnostics.csv", extra)
        if out["dump_fields"]:
            traj.dump_fields(self.outdir / "fields.evof")


def scenario_solve(run: _Run):
    cfg = run.cfg
    grid = _grid(cfg)
    tg = _time_grid(cfg)
    system = cfg["system"]
    if system == "maxwell":
        A = maxwell_operator(grid)
        law = _maxwell_law(cfg, grid, run.rng)
    elif system == "extended":
        A = extended_operator(_weight(cfg, grid, run.rng, 4))
        law = None
    else:
        A = gem_operator(_weight(cfg, grid, run.rng, 3))
        law = None
    F = _source(cfg, tg, A.dim, run.rng)
    est = INTEGRATORS[cfg["integrator"]].from_grid(tg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est.fit(A, law)
    traj = est.transform(F)
    run.add("solve.finite", "causal-solution-operator", 0.0 if np.all(np.isfinite(traj.samples)) else 1.0, 0.0, strict=True)
    run.add(
        "solve.linear_residual",
        "causal-solution-operator",
        traj.metadata.get("max_relative_residual", 0.0),
        1e-10,
        {"solver": traj.metadata["solver"]},
    )
    start = F.first_support(tg)
    if 0 < start < tg.steps:
        run.add("solve.causality", "causal-solution-operator", causality_check(est.transform, F, start), 0.0, {"start": start}, strict=True)
    if cfg["integrator"] == "implicit_euler" and tg.nu > 0:
        if law is None:
            c0, m0max = tg.nu, 1.0
        else:
            law.certify(tg.nu)
            c0, m0max = law.c0, law.M0.max_eig()
        b = solution_bound_check(traj, F, c0, m0max)
        run.add("solve.solution_bound", "solution-bound", max(b.lhs / b.rhs - 1.0, 0.0) if b.rhs > 0 else 0.0, 0.0,
                {"lhs": b.lhs, "rhs": b.rhs, "c0": c0})
    run.extra["max_norm"] = float(traj.norms().max())
    run.write_traj(traj)


def scenario_transfer_check(run: _Run):
    cfg = run.cfg
    grid = _grid(cfg)
    tg = _time_grid(cfg)
    if cfg["system"] == "gem":
        _need_periodic(grid, "the GEM transfer")
        E = random_gem_material(grid, run.rng, cfg["material"]["spread"])
        res = gem_transfer_residuals(E, tg, run.rng)
        run.add("gem.full_to_reduced", "gem-transfer", res["full_to_reduced"], 1e-10)
        run.add("gem.reduced_to_full", "gem-transfer", res["reduced_to_full"], 1e-10)
        run.add("gem.round_trip", "gem-transfer", res["round_trip"], 1e-11)
        run.add("gem.embedding", "gem-embedding", gem_embedding_residual(grid, tg, run.rng), 1e-12)
        return
    E = _weight(cfg, grid, run.rng, 4)
    res = transfer_residuals(E, tg, run.rng)
    run.add("transfer.extended_to_maxwell", "extended-to-maxwell-transfer", res["extended_to_maxwell"], 1e-10)
    run.add("transfer.maxwell_to_extended", "extended-to-maxwell-transfer", res["maxwell_to_extended"], 1e-10)
    run.add("transfer.round_trip", "extended-to-maxwell-transfer", res["round_trip"], 1e-11)
    cx = build_complex(grid)
    off = np.concatenate([[0], np.cumsum([s.dof_count for s in cx.slots])])
    reg = run.rng.standard_normal((tg.steps, off[-1]))
    reg[:, : off[1]] = 0.0
    reg[:, off[3] :] = 0.0
    rep = block_reduction_check(SourceTerm(reg), E, tg)
    run.add("transfer.block_reduction_scalar", "extended-block-reduction", rep.scalar_slot_max, 1e-12)
    run.add("transfer.block_reduction_maxwell", "extended-block-reduction", rep.maxwell_deviation, 1e-10)
    traj = INTEGRATORS[cfg["integrator"]].from_grid(tg).fit(extended_operator(E)).transform(SourceTerm(reg))
    run.write_traj(traj)


def scenario_dirac_equivalence(run: _Run):
    grid = _grid(run.cfg)
    _need_periodic(grid, "the Dirac equivalence")
    rep = verify_dirac_equivalence(grid)
    for k in sorted(rep.residuals):
        if k in ("lemma", "standard_form"):
            run.add(f"dirac.{k}", "dirac-unitary-equivalence", rep.residuals[k], 1e-14)
        else:
            run.add(f"dirac.{k}", "dirac-unitary-equivalence", rep.residuals[k], 0.0, strict=True)
    run.extra["first_mismatch"] = rep.first_mismatch


def scenario_potential_reconstruction(run: _Run):
    cfg = run.cfg
    grid = _grid(cfg)
    tg = _time_grid(cfg)
    EH, a10, H0 = random_potential_scenario(grid, tg, run.rng, cfg["source"]["amplitude"])
    run.add("potential.range_check", "potential-range-condition", range_check(H0, grid), 1e-10)
    state = solve_potential(EH, a10, grid, tg, H0=H0)
    rep = verify_potential(state, EH, a10, tg)
    for k, v in rep.clauses.items():
        run.add(f"potential.clause_{k}", "potential-reconstruction", v, rep.tol)
    run.write_traj(state.trajectory)


def scenario_maxwell_dirac(run: _Run):
    cfg = run.cfg
    md = cfg["maxwell_dirac"]
    grid = _grid(cfg)
    _need_periodic(grid, "the Maxwell-Dirac system")
    tau0 = cfg["time"]["tau"]
    data = random_admissible_scenario(grid, run.rng, md["amplitude"])
    taus = [tau0 / 2**k for k in range(md["refinements"])]
    kw = dict(alpha_coeffs=md["alpha_coeffs"], picard_tol=md["picard_tol"], picard_max=md["picard_max"])
    residuals, temporal, drift, iters, base = [], [], [], [], None
    spatial = 0.0
    for tau in taus:
        tg = TimeGrid(tau, int(round(md["t_end"] / tau)) + 1)
        tr = solve_maxwell_dirac(grid, tg=tg, **data, **kw)
        residuals.append(charge_residual(tr)[1])
        temporal.append(charge_residual(tr, part="temporal")[1])
        spatial = max(spatial, charge_residual(tr, part="spatial")[1])
        q = global_charge(tr)
        drift.append(float(np.max(np.abs(q - q[0]))))
        iters.append(int(tr.iterations.max()))
        if base is None:
            base = tr
    run.add("maxwell_dirac.admissibility", "charge-admissibility", base.metadata["admissibility_residual"], 1e-8)
    # the full residual only converges when the spatial product-rule defect vanishes
    series = residuals if spatial == 0.0 else temporal
    name = "maxwell_dirac.charge_order" if spatial == 0.0 else "maxwell_dirac.charge_order_temporal"
    detail = {"taus": taus, "residuals": residuals, "temporal": temporal, "spatial_defect": spatial}
    if min(series) > 0:
        order = fitted_order(taus, series)
        run.add(name, "charge-density-coupling", abs(order - 1.0), 0.2, dict(detail, order=order))
    else:
        run.add(name, "charge-density-coupling", 0.0, 0.2, dict(detail, note="residual vanishes"))
    if min(drift) > 0:
        order = fitted_order(taus, drift)
        run.add("maxwell_dirac.global_charge_order", "charge-density-coupling", abs(order - 1.0), 0.2,
                {"order": order, "drift": drift})
    run.add("maxwell_dirac.skew_S", "skew-coupling-cancellation", float(np.max(np.abs(base.S + base.S.T))), 0.0, strict=True)
    run.extra["picard_max_iterations"] = iters
    run.extra["S_null_space_dim"] = base.metadata.get("null_space_dim")
    cx = build_complex(grid)
    traj = Trajectory(base.samples, base.tg, cx.slots * 3, {}, grid.cell_volume)
    series, _ = charge_residual(base)
    cr = np.concatenate([[np.nan], series])
    run.write_traj(traj, {"charge": global_charge(base), "charge_residual": cr, "picard_iterations": base.iterations})


def scenario_identity_suite(run: _Run):
    rows = run_identity_suite(run.cfg["suite"]["sizes"], run.cfg["seed"], timings=run.timings)
    run.rows.extend(rows)


RUNNERS = {
    "solve": scenario_solve,
    "transfer_check": scenario_transfer_check,
    "dirac_equivalence": scenario_dirac_equivalence,
    "potential_reconstruction": scenario_potential_reconstruction,
    "maxwell_dirac": scenario_maxwell_dirac,
    "identity_suite": scenario_identity_suite,
}


# ---------------------------------------------------------------------------
# reports


def environment_fingerprint() -> dict:
    from . import __version__

    return {
        "extmax": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    return x


def build_report(run: _Run) -> dict:
    cfg = {k: v for k, v in run.cfg.items() if k != "output_dir"}
    failed = [r.name for r in run.rows if not r.passed]
    return _jsonable(
        {
            "scenario": run.cfg["scenario"],
            "seed": run.cfg["seed"],
            "config": cfg,
            "identities": [r.as_dict() for r in run.rows],
            "extra": run.extra,
            "summary": {"total": len(run.rows), "passed": len(run.rows) - len(failed), "failed": failed},
            "passed": not failed,
            "environment": environment_fingerprint(),
        }
    )


def output_dir(cfg, override=None) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    return Path(env or override or cfg["output_dir"])


def execute(cfg: dict, outdir_override=None, stream=sys.stdout) -> int:
    """Run a validated config; returns the exit code."""
    outdir = output_dir(cfg, outdir_override)
    outdir.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    run = _Run(cfg, outdir)
    RUNNERS[cfg["scenario"]](run)
    report = build_report(run)
    (outdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    stamps = {
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "elapsed_seconds": time.perf_counter() - t0,
        "check_seconds": run.timings,
    }
    (outdir / "timestamps.json").write_text(json.dumps(stamps, indent=2, sort_keys=True) + "\n")
    for r in run.rows:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark}  {r.name:<40s} residual {r.residual:.3e}  tol {r.tolerance:g}", file=stream)
    print(f"{report['summary']['passed']}/{report['summary']['total']} passed; report in {outdir / 'report.json'}", file=stream)
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------
# argument parsing


def _sizes(text: str):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 2:
        raise argparse.ArgumentTypeError("sizes must be integers >= 2")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="extmax",
        description="Structure-preserving solvers and identity checks for Maxwell-type evolutionary systems.",
        epilog=CSV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one scenario from a YAML config", epilog=CSV_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--output-dir", help=f"output directory (${OUTPUT_ENV} takes precedence)")
    p = sub.add_parser("suite", help="run the identity suite", epilog=CSV_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", type=_sizes, default=[2, 3, 4], help="grid sizes, e.g. 2,3,4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", help=f"output directory (${OUTPUT_ENV} takes precedence)")
    sub.add_parser("schema", help="print the config schema with defaults")
    sub.add_parser("list", help="list scenario kinds")
    return ap


def list_scenarios() -> str:
    return "\n".join(f"{name:<26s}{desc}" for name, desc in SCENARIOS.items())


def print_config_schema() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print(list_scenarios())
        return 0
    if args.command == "schema":
        print(print_config_schema())
        return 0
    try:
        if args.command == "run":
            cfg = load_config(args.config)
        else:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative", "seed")
            cfg = validate_config({"scenario": "identity_suite", "seed": args.seed, "suite": {"sizes": args.sizes}})
        return execute(cfg, args.output_dir)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return 2
    except (ExtmaxError, ValueError, ArithmeticError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc), "where": traceback.format_exc(limit=1).strip().splitlines()[-1]}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
