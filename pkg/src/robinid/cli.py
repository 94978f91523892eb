"""Command-line entry point: ``robinid {solve,gradcheck,invert,rates,constants}``.

Each run reads a JSON config, fills in :data:`DEFAULTS`, writes CSV fields
and a ``report.json`` echoing the resolved config, and exits non-zero with a
JSON error record on failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, RobinIdError
from .experiment import COEFFICIENT_BAND, STATE_BAND, ExperimentPlan, _setup, make_noise, run_rate_sweep
from .field import CellField, NodalField, estimate_constants, h1_norm, l2_norm, read_csv, write_csv
from .forward import RobinProblem, SolverOptions, assemble, residual_norm, solve_state
from .grid import Mesh, build_mesh
from .invert import AdmissibleSet, OptimizerConfig, minimize
from .objective import finite_difference_check

log = logging.getLogger("robinid")

SUBCOMMANDS = ("solve", "gradcheck", "invert", "rates", "constants")

DEFAULTS = {
    "seed": 0,
    "mesh": {"dim": 1, "n": 64},
    "problem": {"a": 1.0, "b": 0.0, "f": 1.0, "bounds": [0.5, 2.0], "b_hi": 0.0},
    "solver": {"method": "direct", "rtol": 1e-10},
    "optimizer": OptimizerConfig().to_dict(),
    "gradcheck": {"z": {"state_plus": {"preset": "ramp", "slope": 3.0}}, "rho": 0.0, "a_star": None,
                  "rel_step": 1e-4, "tolerance": 1e-6},
    "invert": {"observation": None, "rho": None, "a_star": None, "a0": None, "truth": None},
    "plan": {k: v for k, v in ExperimentPlan().to_dict().items() if k != "optimizer"},
    "bands": {"coefficient": list(COEFFICIENT_BAND), "state": list(STATE_BAND)},
    "gnuplot": True,
}

_FIELD = {
    "anyOf": [
        {"type": "number"},
        {"type": "string"},
        {"type": "object", "properties": {"csv": {"type": "string"}}, "required": ["csv"]},
        {"type": "object", "properties": {"preset": {"type": "string"}}, "required": ["preset"]},
        {"type": "object", "required": ["state_plus"]},
        {"type": "object", "required": ["synthetic"]},
        {"type": "object", "required": ["offset"]},
        {"type": "object", "required": ["value"]},
    ]
}
_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_MESH = {
    "type": "object",
    "properties": {
        "dim": {"enum": [1, 2]},
        "n": {"type": "integer", "minimum": 1},
        "nx": {"type": "integer", "minimum": 1},
        "ny": {"type": "integer", "minimum": 1},
        "bounds": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}
_PROBLEM = {
    "type": "object",
    "properties": {
        "a": _FIELD, "b": _FIELD, "f": _FIELD,
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "bounds": _PAIR,
        "b_hi": {"type": "number", "minimum": 0},
    },
    "required": ["gamma"],
    "additionalProperties": False,
}
SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "mesh": _MESH,
        "problem": _PROBLEM,
        "solver": {"type": "object", "properties": {"method": {"enum": ["direct", "cg"]},
                                                     "rtol": {"type": "number", "exclusiveMinimum": 0}}},
        "optimizer": {"type": "object"},
        "gradcheck": {"type": "object"},
        "invert": {"type": "object"},
        "plan": {"type": "object"},
        "gnuplot": {"type": "boolean"},
    },
    "additionalProperties": False,
}
REQUIRED = {
    "solve": ["problem"],
    "gradcheck": ["problem"],
    "invert": ["problem", "invert"],
    "rates": [],
    "constants": [],
}


# -- config ------------------------------------------------------------------


# Sections replaced wholesale rather than merged key by key.
_REPLACE = ("mesh", "case", "a_star")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in _REPLACE:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist", field="--config")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="--config") from exc


def resolve_config(subcommand: str, raw: dict, seed: int | None = None) -> dict:
    """Validate ``raw`` against the schema and fill in defaults."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "config"
        raise ConfigError(f"config schema violation at {where}: {exc.message}", field=where) from exc
    for key in REQUIRED[subcommand]:
        if key not in raw:
            raise ConfigError(f"'{subcommand}' needs a '{key}' section", field=key)
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
        cfg["plan"]["noise_seed"] = seed
    elif "plan" not in raw or "noise_seed" not in raw.get("plan", {}):
        cfg["plan"]["noise_seed"] = cfg["seed"]
    cfg["subcommand"] = subcommand
    return cfg


# -- fields ------------------------------------------------------------------


def _preset(spec: dict, mesh: Mesh, kind: str, rng) -> np.ndarray:
    pts = mesh.nodes if kind == "nodal" else mesh.centroids
    x = pts[:, 0]
    name = spec["preset"]
    if name == "constant":
        return np.full(len(pts), float(spec.get("value", 1.0)))
    if name == "bump":
        s = np.sin(np.pi * x) * (np.sin(np.pi * pts[:, 1]) if mesh.dim == 2 else 1.0)
        return float(spec.get("base", 1.0)) + float(spec.get("amplitude", 0.5)) * s
    if name == "step":
        pos = float(spec.get("position", 0.5 * (mesh.bounds[0] + mesh.bounds[mesh.dim])))
        return np.where(x < pos, float(spec.get("left", 1.0)), float(spec.get("right", 1.5)))
    if name == "ramp":
        return float(spec.get("base", 1.0)) + float(spec.get("slope", 1.0)) * pts.sum(axis=1)
    if name == "random":
        return rng.uniform(float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0)), len(pts))
    raise ConfigError(f"unknown preset {name!r}", field="preset")


def resolve_field(spec, mesh: Mesh, kind: str, rng, field_name: str = "field"):
    """Turn a constant, preset name/dict or ``{"csv": path}`` into a field."""
    cls = NodalField if kind == "nodal" else CellField
    if isinstance(spec, bool):
        raise ConfigError(f"{field_name}: booleans are not fields", field=field_name)
    if isinstance(spec, (int, float)):
        return cls(mesh, float(spec))
    if isinstance(spec, str):
        spec = {"preset": spec}
    if not isinstance(spec, dict):
        raise ConfigError(f"{field_name}: unsupported field spec {spec!r}", field=field_name)
    if "csv" in spec:
        return read_csv(spec["csv"], mesh, kind)
    if "preset" in spec:
        try:
            return cls(mesh, _preset(spec, mesh, kind, rng))
        except ConfigError as exc:
            raise ConfigError(f"{field_name}: {exc.message}", field=field_name) from exc
    if "value" in spec:
        return cls(mesh, float(spec["value"]))
    raise ConfigError(f"{field_name}: field spec needs a number, preset or csv", field=field_name)


def build_problem(cfg: dict, mesh: Mesh, rng) -> RobinProblem:
    p = cfg["problem"]
    if "gamma" not in p:
        raise ConfigError("problem needs 'gamma'", field="problem.gamma")
    lo, hi = p["bounds"]
    return RobinProblem(
        a=resolve_field(p["a"], mesh, "cell", rng, "problem.a"),
        b=resolve_field(p["b"], mesh, "cell", rng, "problem.b"),
        f=resolve_field(p["f"], mesh, "nodal", rng, "problem.f"),
        gamma=float(p["gamma"]),
        a_lo=float(lo),
        a_hi=float(hi),
        b_hi=float(p["b_hi"]),
    )


def _solver(cfg) -> SolverOptions:
    return SolverOptions(**cfg["solver"])


def _optimizer(cfg) -> OptimizerConfig:
    try:
        return OptimizerConfig(**cfg["optimizer"])
    except TypeError as exc:
        raise ConfigError(f"bad optimizer settings: {exc}", field="optimizer") from exc


def _constants(problem: RobinProblem) -> dict:
    return problem.constants(check=False).to_dict()


# -- subcommands -------------------------------------------------------------


def cmd_solve(cfg, out: Path, rng) -> dict:
    mesh = build_mesh(cfg["mesh"])
    problem = build_problem(cfg, mesh, rng)
    system = assemble(problem)
    u = solve_state(system, _solver(cfg))
    write_csv(u, out / "u.csv")
    consts = problem.constants(check=False)
    f_l2, u_h1 = l2_norm(problem.f), h1_norm(u)
    bound = f_l2 / consts.alpha if consts.alpha > 0 else None
    return {
        "constants": consts.to_dict(),
        "result": {
            "residual": residual_norm(system, u),
            "u_h1": u_h1,
            "f_l2": f_l2,
            "stability_bound": bound,
            "stability_margin": None if bound is None else bound - u_h1,
            "u_min": float(u.values.min()),
            "u_max": float(u.values.max()),
        },
        "outputs": ["u.csv"],
    }


def _observation(spec, problem: RobinProblem, rng, field_name: str, solver: SolverOptions):
    if isinstance(spec, dict) and "state_plus" in spec:
        base = solve_state(assemble(problem), solver)
        return base + resolve_field(spec["state_plus"], problem.mesh, "nodal", rng, field_name)
    if isinstance(spec, dict) and "synthetic" in spec:
        syn = spec["synthetic"]
        delta = float(syn.get("delta", 0.0)) if isinstance(syn, dict) else float(syn)
        return make_noise(solve_state(assemble(problem), solver), delta, rng)
    return resolve_field(spec, problem.mesh, "nodal", rng, field_name)


def _a_star(spec, problem: RobinProblem, rng, field_name: str):
    if spec is None:
        return None
    if isinstance(spec, dict) and "offset" in spec:
        box = AdmissibleSet(problem.a_lo, problem.a_hi)
        return CellField(problem.mesh, np.clip(problem.a.values + float(spec["offset"]), box.lower, box.upper))
    return resolve_field(spec, problem.mesh, "cell", rng, field_name)


def cmd_gradcheck(cfg, out: Path, rng) -> dict:
    mesh = build_mesh(cfg["mesh"])
    problem = build_problem(cfg, mesh, rng)
    gc = cfg["gradcheck"]
    z = _observation(gc["z"], problem, rng, "gradcheck.z", _solver(cfg))
    rho = float(gc["rho"])
    a_star = _a_star(gc["a_star"], problem, rng, "gradcheck.a_star") if rho > 0 else None
    if rho > 0 and a_star is None:
        raise ConfigError("gradcheck with rho > 0 needs a_star", field="gradcheck.a_star")
    g, fd, rel = finite_difference_check(problem, z, a_star, rho, float(gc["rel_step"]))
    with open(out / "gradcheck.csv", "w") as fh:
        fh.write("index,closed_form,finite_difference,relative_error\n")
        for i in range(g.size):
            fh.write(f"{i},{g[i]!r},{fd[i]!r},{rel[i]!r}\n")
    tol = float(gc["tolerance"])
    worst = int(np.argmax(rel))
    return {
        "constants": _constants(problem),
        "result": {
            "passed": bool(np.all(rel <= tol)),
            "tolerance": tol,
            "max_relative_error": float(rel[worst]),
            "worst_element": worst,
            "failures": int(np.sum(rel > tol)),
        },
        "outputs": ["gradcheck.csv"],
    }


def cmd_invert(cfg, out: Path, rng) -> dict:
    mesh = build_mesh(cfg["mesh"])
    problem = build_problem(cfg, mesh, rng)
    inv = cfg["invert"]
    if inv["observation"] is None:
        raise ConfigError("invert needs an observation (csv, preset or synthetic)", field="invert.observation")
    if inv["rho"] is None:
        raise ConfigError("invert needs rho", field="invert.rho")
    box = AdmissibleSet(problem.a_lo, problem.a_hi)
    z = _observation(inv["observation"], problem, rng, "invert.observation", _solver(cfg))
    synthetic = isinstance(inv["observation"], dict) and "synthetic" in inv["observation"]
    a_star = _a_star(inv["a_star"], problem, rng, "invert.a_star")
    if a_star is None:
        a_star = CellField(mesh, 0.5 * (box.lower + box.upper))
    a0 = _a_star(inv["a0"], problem, rng, "invert.a0")
    truth = _a_star(inv["truth"], problem, rng, "invert.truth")
    if truth is None and synthetic:
        truth = problem.a
    res = minimize(problem, z, float(inv["rho"]), a_star, a0, box, _optimizer(cfg), solver=_solver(cfg))
    write_csv(res.a_hat, out / "a_hat.csv")
    outputs = ["a_hat.csv"]
    if synthetic:
        write_csv(z, out / "observation.csv")
        outputs.append("observation.csv")
    payload = {
        "iterations": res.iterations,
        "evaluations": res.evaluations,
        "converged": res.converged,
        "kkt_residual": res.kkt_residual,
        "objective_trajectory": res.objective_trajectory,
        "state_misfit_h1": res.final.value.state_misfit_h1,
    }
    if truth is not None:
        payload["coefficient_error_l2"] = l2_norm(res.a_hat - truth)
        payload["relative_coefficient_error_l2"] = l2_norm(res.a_hat - truth) / l2_norm(truth)
    return {"constants": _constants(problem), "result": payload, "outputs": outputs,
            "timings_extra": res.timings}


def cmd_rates(cfg, out: Path, rng, threads: int | None = None) -> dict:
    plan_cfg = dict(cfg["plan"])
    plan_cfg["optimizer"] = _merge(cfg["optimizer"], plan_cfg.get("optimizer") or {})
    _optimizer({"optimizer": plan_cfg["optimizer"]})
    if threads is not None:
        plan_cfg["threads"] = threads
    plan = ExperimentPlan.from_dict(plan_cfg)
    cfg["plan"] = plan.to_dict()
    report = run_rate_sweep(plan)
    report.write_csv(out / "rates.csv")
    outputs = ["rates.csv"]
    if cfg["gnuplot"]:
        outputs += [p.name for p in report.write_gnuplot(out)]
    d = report.to_dict()
    problem = _setup(plan)[2]
    return {
        "constants": _constants(problem),
        "result": {k: d[k] for k in ("coefficient_fit", "state_fit", "bands", "verdicts")}
        | {"level_medians": report.level_medians(), "rows": len(report.rows)},
        "outputs": outputs,
        "timings_extra": report.timings,
    }


def cmd_constants(cfg, out: Path, rng) -> dict:
    mesh = build_mesh(cfg["mesh"])
    p = cfg["problem"]
    lo = float(p["bounds"][0])
    consts = estimate_constants(mesh, lo, float(p["b_hi"]), float(p.get("gamma", 1.0)), check=False)
    bound = min(lo / consts.c_p if consts.c_p > 0 else math.inf, lo * consts.gamma_tilde / consts.c_f)
    return {
        "constants": consts.to_dict(),
        "result": {
            "c_p_times_pi_squared": consts.c_p * math.pi**2,
            "b_hi_bound": bound,
            "admissible": float(p["b_hi"]) < bound,
        },
        "outputs": [],
    }


COMMANDS = {"solve": cmd_solve, "gradcheck": cmd_gradcheck, "invert": cmd_invert,
            "rates": cmd_rates, "constants": cmd_constants}


# -- entry point -------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"command line: {message}", field="argv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robinid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"robinid {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, help="RNG seed; overrides the config")
        sp.add_argument("--threads", type=int, help="worker processes for rates")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(subcommand: str, raw: dict, out, seed: int | None = None, threads: int | None = None) -> dict:
    """Resolve the config, dispatch, write ``report.json`` and return it."""
    start = time.perf_counter()
    cfg = resolve_config(subcommand, raw, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    if threads is not None and threads < 1:
        raise ConfigError("--threads must be at least 1", field="--threads")
    if subcommand == "rates":
        payload = cmd_rates(cfg, out, rng, threads)
    else:
        payload = COMMANDS[subcommand](cfg, out, rng)
    timings = {"wall_seconds": time.perf_counter() - start}
    timings.update(payload.pop("timings_extra", {}) or {})
    report = {
        "subcommand": subcommand,
        "version": __version__,
        "config": cfg,
        "defaults": DEFAULTS,
        "constants": payload["constants"],
        "result": payload["result"],
        "outputs": payload["outputs"],
        "timings": timings,
    }
    write_json(report, out / "report.json")
    return report


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out_dir = None
    try:
        args = build_parser().parse_args(argv)
        out_dir = Path(args.out)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        run(args.subcommand, load_config(args.config), args.out, args.seed, args.threads)
        print(json.dumps({"status": "ok", "subcommand": args.subcommand,
                          "report": str(Path(args.out) / "report.json")}))
        return 0
    except RobinIdError as exc:
        record, status = exc.to_dict(), exc.exit_status
    except Exception as exc:  # noqa: BLE001 - last-resort structured record
        record, status = {"code": "internal_error", "message": f"{type(exc).__name__}: {exc}", "field": None}, 1
    record = {"status": "error", "exit_status": status, **_jsonable(record)}
    text = json.dumps(record, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out_dir is not None and out_dir.is_dir():
        (out_dir / "error.json").write_text(text + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
