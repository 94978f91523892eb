"""Manufactured problems, exact-magnitude noise and convergence-rate sweeps.

A sweep runs the regularized inversion at noise levels
``delta_k = delta_0 * 2**-k`` with ``rho_k = c * delta_k`` and fits log-log
slopes of the coefficient error ``||a - a+||_L2`` and the state misfit
``||U(a) - z||_H1`` against ``delta``.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import fem
from .errors import AdmissibilityError, ConfigError, DiagnosticError, DomainError, SweepError
from .field import CellField, NodalField, h1_norm, l2_norm
from .forward import RobinProblem, solve
from .grid import Mesh, build_mesh, coarse_to_fine_nodes, refine
from .invert import AdmissibleSet, OptimizerConfig, minimize

log = logging.getLogger(__name__)

COEFFICIENT_BAND = (0.4, 0.75)
STATE_BAND = (0.8, 1.2)
DEGENERACY_RTOL = 1e-8

# Data shared by every case unless overridden in the case dictionary.
CASE_DEFAULTS = {"b": 0.0, "gamma": 1.0, "f": 1.0, "bounds": (0.5, 2.0), "b_hi": 0.0}


# -- manufactured problems ---------------------------------------------------


def _case_dict(case) -> dict:
    if isinstance(case, str):
        return {"name": case}
    if isinstance(case, dict) and "name" in case:
        return dict(case)
    raise ConfigError(f"case must be a name or a dict with 'name', got {case!r}", field="case")


def _coefficient(case: dict, mesh: Mesh) -> CellField:
    name = case["name"]
    x = mesh.centroids[:, 0]
    if name == "constant":
        vals = np.full(mesh.num_elements, float(case.get("value", 1.0)))
    elif name == "bump":
        amp = float(case.get("amplitude", 0.5))
        vals = 1.0 + amp * np.sin(np.pi * x)
        if mesh.dim == 2:
            vals = 1.0 + amp * np.sin(np.pi * x) * np.sin(np.pi * mesh.centroids[:, 1])
    elif name == "step":
        pos = float(case.get("position", 0.5 * (mesh.bounds[0] + mesh.bounds[mesh.dim])))
        vals = np.where(x < pos, float(case.get("left", 1.0)), float(case.get("right", 1.5)))
    else:
        raise ConfigError(f"unknown case {name!r}; expected constant, bump or step", field="case.name")
    return CellField(mesh, vals)


def _problem(case: dict, mesh: Mesh, a_plus: CellField) -> RobinProblem:
    p = {**CASE_DEFAULTS, **case}
    try:
        lo, hi = (float(v) for v in p["bounds"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("case bounds must be a pair of numbers", field="case.bounds") from exc
    b = float(p["b"])
    prob = RobinProblem(
        a=a_plus,
        b=CellField(mesh, b),
        f=NodalField(mesh, float(p["f"])),
        gamma=float(p["gamma"]),
        a_lo=lo,
        a_hi=hi,
        b_hi=max(float(p["b_hi"]), b),
    )
    try:
        prob.validate()
    except AdmissibilityError as exc:
        raise ConfigError(f"inadmissible case parameters: {exc.message}", field="case", **exc.details) from exc
    return prob


def manufacture(case, mesh: Mesh, fine_data: bool = False) -> tuple[CellField, RobinProblem, NodalField]:
    """Build ``(a+, problem, u_hat)`` for a named case.

    ``case`` is ``"constant"``, ``"bump"`` or ``"step"``, or a dict with a
    ``name`` plus overrides of the case parameters (``value``, ``amplitude``,
    ``left``/``right``/``position``) and of :data:`CASE_DEFAULTS`.

    With ``fine_data`` the exact state is computed on a 2x refined mesh and
    injected at the coarse nodes, so the data is not produced by the same
    discretization that inverts it.
    """
    case = _case_dict(case)
    a_plus = _coefficient(case, mesh)
    problem = _problem(case, mesh, a_plus)
    if not fine_data:
        return a_plus, problem, solve(problem)
    fine = refine(mesh, 2)
    u_fine = solve(_problem(case, fine, _coefficient(case, fine)))
    return a_plus, problem, NodalField(mesh, u_fine.values[coarse_to_fine_nodes(mesh, fine)])


def make_noise(u_hat: NodalField, delta: float, seed=None) -> NodalField:
    """``u_hat`` plus standard-normal nodal noise rescaled to H1 norm ``delta``."""
    if not delta > 0:
        raise ConfigError(f"noise level must be positive, got {delta}", field="delta")
    rng = np.random.default_rng(seed)
    while True:
        noise = NodalField(u_hat.mesh, rng.standard_normal(u_hat.mesh.num_nodes))
        nrm = h1_norm(noise)
        if nrm > 0:
            break
    return u_hat + noise * (delta / nrm)


def a_star_from_spec(spec, a_plus: CellField, box: AdmissibleSet) -> CellField:
    """Prior guess: ``{"offset": c}`` gives ``a+ + c``, ``{"value": c}`` a constant; projected into the box."""
    spec = {"offset": 0.1} if spec is None else spec
    if isinstance(spec, (int, float)):
        spec = {"offset": spec}
    if "offset" in spec:
        vals = a_plus.values + float(spec["offset"])
    elif "value" in spec:
        vals = np.full(a_plus.mesh.num_elements, float(spec["value"]))
    else:
        raise ConfigError("a_star needs 'offset' or 'value'", field="a_star")
    return CellField(a_plus.mesh, np.clip(vals, box.lower, box.upper))


# -- sweeps ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    case: dict = field(default_factory=lambda: {"name": "bump"})
    mesh: dict = field(default_factory=lambda: {"dim": 1, "n": 128})
    delta_0: float = 0.1
    num_levels: int = 6
    rho_coupling: float = 1.0
    noise_seed: int = 0
    replicates: int = 1
    a_star: dict = field(default_factory=lambda: {"offset": 0.1})
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    fine_data: bool = False
    threads: int = 1

    def __post_init__(self):
        if not self.delta_0 > 0:
            raise ConfigError("delta_0 must be positive", field="plan.delta_0")
        if self.num_levels < 3:
            raise ConfigError("num_levels must be at least 3", field="plan.num_levels")
        if not self.rho_coupling > 0:
            raise ConfigError("rho_coupling must be positive", field="plan.rho_coupling")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1", field="plan.replicates")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1", field="plan.threads")
        object.__setattr__(self, "case", _case_dict(self.case))

    @property
    def deltas(self) -> np.ndarray:
        return self.delta_0 * 2.0 ** -np.arange(self.num_levels)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["optimizer"] = self.optimizer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown plan keys {sorted(unknown)}", field="plan")
        d = dict(d)
        if isinstance(d.get("optimizer"), dict):
            try:
                d["optimizer"] = OptimizerConfig(**d["optimizer"])
            except TypeError as exc:
                raise ConfigError(f"bad optimizer settings: {exc}", field="plan.optimizer") from exc
        return cls(**d)


def job_seed(noise_seed: int, level: int, replicate: int) -> int:
    """Seed for one (level, replicate) job; independent of execution order."""
    return int(np.random.SeedSequence([noise_seed, level, replicate]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RateRow:
    level: int
    replicate: int
    delta: float
    rho: float
    coef_error: float
    state_misfit: float
    iterations: int
    evaluations: int
    kkt_residual: float
    converged: bool
    seed: int


@dataclass(frozen=True)
class Fit:
    slope: float
    intercept: float
    r_squared: float


@dataclass(eq=False)
class RateReport:
    plan: ExperimentPlan
    rows: list[RateRow]
    coefficient_fit: Fit
    state_fit: Fit
    verdicts: dict
    timings: dict = field(default_factory=dict)

    def level_medians(self) -> list[tuple[float, float, float]]:
        return _medians(self.rows)

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "rows": [asdict(r) for r in self.rows],
            "coefficient_fit": asdict(self.coefficient_fit),
            "state_fit": asdict(self.state_fit),
            "bands": {"coefficient": list(COEFFICIENT_BAND), "state": list(STATE_BAND)},
            "verdicts": self.verdicts,
            "timings": self.timings,
        }

    def write_csv(self, path) -> None:
        names = [f.name for f in fields(RateRow)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, n)) for n in names])

    def write_gnuplot(self, directory) -> list[Path]:
        """Two-column ``delta error`` files of level medians, one per error norm."""
        out = []
        directory = Path(directory)
        for idx, name in ((1, "coefficient_error"), (2, "state_misfit")):
            p = directory / f"{name}.dat"
            with open(p, "w") as fh:
                fh.write(f"# delta {name} (median over converged replicates)\n")
                for row in self.level_medians():
                    fh.write(f"{row[0]!r} {row[idx]!r}\n")
            out.append(p)
        return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _setup(plan: ExperimentPlan):
    mesh = build_mesh(plan.mesh)
    a_plus, problem, u_hat = manufacture(plan.case, mesh, fine_data=plan.fine_data)
    box = AdmissibleSet(problem.a_lo, problem.a_hi)
    return mesh, a_plus, problem, u_hat, box, a_star_from_spec(plan.a_star, a_plus, box)


def _run_job(plan: ExperimentPlan, level: int, replicate: int, setup=None) -> RateRow:
    mesh, a_plus, problem, u_hat, box, a_star = setup or _setup(plan)
    delta = float(plan.deltas[level])
    rho = plan.rho_coupling * delta
    seed = job_seed(plan.noise_seed, level, replicate)
    z = make_noise(u_hat, delta, seed)
    res = minimize(problem, z, rho, a_star, None, box, plan.optimizer, raise_on_stagnation=False)
    return RateRow(
        level=level,
        replicate=replicate,
        delta=delta,
        rho=rho,
        coef_error=l2_norm(res.a_hat - a_plus),
        state_misfit=res.final.value.state_misfit_h1,
        iterations=res.iterations,
        evaluations=res.evaluations,
        kkt_residual=res.kkt_residual,
        converged=bool(res.converged),
        seed=seed,
    )


def _run_job_star(args):
    return _run_job(*args)


def _medians(rows: list[RateRow]) -> list[tuple[float, float, float]]:
    out = []
    for level in sorted({r.level for r in rows}):
        ok = [r for r in rows if r.level == level and r.converged]
        if ok:
            out.append((ok[0].delta, float(np.median([r.coef_error for r in ok])),
                        float(np.median([r.state_misfit for r in ok]))))
    return out


def run_rate_sweep(plan: ExperimentPlan, threads: int | None = None) -> RateReport:
    """Run every (level, replicate) job and fit slopes over converged level medians."""
    start = time.perf_counter()
    workers = threads or plan.threads
    jobs = [(plan, k, r) for k in range(plan.num_levels) for r in range(plan.replicates)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs), os.cpu_count() or 1)) as pool:
            rows = list(pool.map(_run_job_star, jobs))
    else:
        setup = _setup(plan)
        rows = [_run_job(p, k, r, setup) for p, k, r in jobs]
    failed = [r for r in rows if not r.converged]
    for r in failed:
        log.warning("level %d replicate %d did not converge (kkt %.3e); excluded from the fit",
                    r.level, r.replicate, r.kkt_residual)
    med = _medians(rows)
    if not med:
        raise SweepError("no inversion converged at any level", failed=len(failed))
    if len(med) < 2:
        raise SweepError("fewer than two levels converged; slopes are undefined", levels=len(med))
    deltas = [m[0] for m in med]
    cfit = Fit(*fit_loglog(list(zip(deltas, [m[1] for m in med]))))
    sfit = Fit(*fit_loglog(list(zip(deltas, [m[2] for m in med]))))
    verdicts = {
        "coefficient_slope_in_band": bool(COEFFICIENT_BAND[0] <= cfit.slope <= COEFFICIENT_BAND[1]),
        "state_slope_in_band": bool(STATE_BAND[0] <= sfit.slope <= STATE_BAND[1]),
        "smallest_below_largest": bool(med[-1][1] < med[0][1] and med[-1][2] < med[0][2]),
        "excluded_runs": len(failed),
    }
    return RateReport(plan, rows, cfit, sfit, verdicts, {"wall_seconds": time.perf_counter() - start})


def fit_loglog(points) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``: ``(slope, intercept, R^2)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("points must be (x, y) pairs", field="points")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise DomainError("log-log fit needs finite positive x and y", field="points")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.unique(lx).size < 2:
        raise DomainError("log-log fit needs at least two distinct x values", field="points")
    slope, intercept = np.polyfit(lx, ly, 1)
    ss_res = float(np.sum((ly - (slope * lx + intercept)) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def noiseless_errors(plan: ExperimentPlan, rhos) -> list[float]:
    """Coefficient errors for exact data ``z = u_hat`` over a schedule of ``rho``."""
    mesh, a_plus, problem, u_hat, box, a_star = _setup(plan)
    out = []
    for rho in rhos:
        res = minimize(problem, u_hat, rho, a_star, None, box, plan.optimizer)
        out.append(l2_norm(res.a_hat - a_plus))
    return out


# -- source condition --------------------------------------------------------


class SourceCondition(NamedTuple):
    v: NodalField
    degenerate: np.ndarray
    residual: float


def source_condition_1d(a_plus: CellField, a_star: CellField, u_hat: NodalField,
                        mesh: Mesh | None = None) -> SourceCondition:
    """Solve ``u_hat' v' = a+ - a*`` elementwise with ``v(lo) = 0``.

    Elements with ``|u_hat'| < 1e-8 max |u_hat'|`` are flagged degenerate
    (``v' = 0`` there). ``residual`` is the L2 norm of ``u_hat' v' - (a+ - a*)``
    over the remaining elements, with ``v'`` recomputed from the nodal ``v``.
    """
    mesh = mesh or a_plus.mesh
    if mesh.dim != 1:
        raise ConfigError("the source-condition diagnostic is 1-D only", field="mesh.dim")
    for f in (a_plus, a_star, u_hat):
        if f.mesh is not mesh:
            raise ConfigError("fields must live on the given mesh", field="mesh")
    du = fem.element_gradients(mesh, u_hat.values)[:, 0]
    scale = np.abs(du).max()
    degenerate = np.abs(du) < DEGENERACY_RTOL * scale if scale > 0 else np.ones(du.size, bool)
    if degenerate.all():
        raise DiagnosticError("u_hat' vanishes on every element; the condition is unverifiable", field="u_hat")
    rhs = a_plus.values - a_star.values
    dv = np.zeros_like(rhs)
    ok = ~degenerate
    dv[ok] = rhs[ok] / du[ok]
    v = np.concatenate([[0.0], np.cumsum(dv * mesh.element_measures)])
    dv_nodal = fem.element_gradients(mesh, v)[:, 0]
    r = (du * dv_nodal - rhs)[ok]
    residual = float(np.sqrt(np.sum(r * r * mesh.element_measures[ok])))
    return SourceCondition(NodalField(mesh, v), degenerate, residual)
