"""Box-constrained minimization of the Tikhonov objective.

Projected gradient descent in the L2 metric: the search direction is the
Riesz density of the gradient, each trial point is projected onto the box,
and the step is backtracked until the Armijo condition holds on the total
objective. The trial step starts from the Barzilai-Borwein estimate
(``step_rule="bb"``) or from ``initial_step`` every iteration
(``step_rule="fixed"``).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, StagnationError
from .field import CellField, NodalField
from .forward import DEFAULT_SOLVER, RobinProblem, SolverOptions
from .grid import Mesh
from .objective import Evaluation, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmissibleSet:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0 < self.lower < self.upper:
            raise ConfigError(f"need 0 < lower < upper, got ({self.lower}, {self.upper})", field="bounds")


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 20_000
    # None means 1e-8 * sqrt(domain measure).
    grad_tol: float | None = None
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    step_floor: float = 1e-14
    step_rule: str = "bb"
    step_cap: float = 1e8

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ConfigError("armijo_c must lie in (0, 1)", field="optimizer.armijo_c")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError("backtrack_factor must lie in (0, 1)", field="optimizer.backtrack_factor")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ConfigError("grad_tol must be positive", field="optimizer.grad_tol")
        if not (self.initial_step > 0 and self.step_floor > 0 and self.max_iters >= 1):
            raise ConfigError("initial_step, step_floor and max_iters must be positive", field="optimizer")
        if self.step_rule not in ("bb", "fixed"):
            raise ConfigError(f"unknown step rule {self.step_rule!r}", field="optimizer.step_rule")

    def tolerance(self, mesh: Mesh) -> float:
        return self.grad_tol if self.grad_tol is not None else 1e-8 * np.sqrt(mesh.measure)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class InversionResult:
    a_hat: CellField
    iterations: int
    objective_trajectory: list[float]
    kkt_residual: float
    converged: bool
    timings: dict = field(default_factory=dict)
    evaluations: int = 0
    final: Evaluation | None = field(default=None, repr=False)


def project(a, box: AdmissibleSet):
    """Elementwise clamp onto ``[lower, upper]``; keeps the input's type."""
    if isinstance(a, CellField):
        return CellField(a.mesh, np.clip(a.values, box.lower, box.upper))
    return np.clip(a, box.lower, box.upper)


def _projected_gradient(a: np.ndarray, g: np.ndarray, box: AdmissibleSet) -> np.ndarray:
    # Zero where the descent direction -g points out of the box at an active bound.
    pg = g.copy()
    pg[(a <= box.lower) & (g > 0)] = 0.0
    pg[(a >= box.upper) & (g < 0)] = 0.0
    return pg


def kkt_residual(a: CellField, gradient_density: CellField, box: AdmissibleSet) -> float:
    """L2 norm of the projected gradient density."""
    pg = _projected_gradient(a.values, gradient_density.values, box)
    return float(np.sqrt(np.sum(pg * pg * a.mesh.element_measures)))


def minimize(problem: RobinProblem, z: NodalField, rho: float, a_star: CellField,
             a0: CellField | None, box: AdmissibleSet, config: OptimizerConfig = OptimizerConfig(),
             mesh: Mesh | None = None, solver: SolverOptions = DEFAULT_SOLVER,
             raise_on_stagnation: bool = True) -> InversionResult:
    """Minimize ``G_z(a) + rho ||a - a*||^2`` over the box.

    ``problem`` supplies ``b``, ``f`` and ``gamma``; its coefficient is only
    a template. ``a0`` defaults to ``a*`` projected into the box.
    """
    if not rho > 0:
        raise ConfigError(f"regularization parameter must be positive, got {rho}", field="rho")
    if mesh is not None and mesh is not problem.mesh:
        raise ConfigError("problem fields are attached to a different mesh", field="mesh")
    mesh = problem.mesh
    if (box.lower, box.upper) != (problem.a_lo, problem.a_hi):
        problem = RobinProblem(problem.a, problem.b, problem.f, problem.gamma,
                               box.lower, box.upper, problem.b_hi)
    start = time.perf_counter()
    meas = mesh.element_measures
    tol = config.tolerance(mesh)
    astar = a_star.values
    a = np.clip((a0 if a0 is not None else a_star).values, box.lower, box.upper)

    def run(avals):
        return evaluate(problem.with_coefficient(avals), z, astar, rho, solver, validate=n_eval == 0)

    n_eval = 0
    ev = run(a)
    n_eval += 1
    traj = [ev.value.total]
    step = config.initial_step
    prev = None
    converged = False
    it = 0
    kkt = np.inf
    while True:
        g = ev.gradient.density.values
        pg = _projected_gradient(a, g, box)
        kkt = float(np.sqrt(np.sum(pg * pg * meas)))
        if kkt <= tol:
            converged = True
            break
        if it >= config.max_iters:
            break
        if config.step_rule == "bb" and prev is not None:
            s_vec, y_vec = a - prev[0], g - prev[1]
            sy = float(np.sum(s_vec * y_vec * meas))
            step = float(np.sum(s_vec * s_vec * meas)) / sy if sy > 0 else config.initial_step
            step = min(max(step, config.step_floor), config.step_cap)
        else:
            step = config.initial_step
        f0 = ev.value.total
        while True:
            trial = np.clip(a - step * g, box.lower, box.upper)
            d = trial - a
            slope = float(ev.gradient.euclidean @ d)
            ev_t = run(trial)
            n_eval += 1
            f_t = ev_t.value.total
            if f_t <= f0 and f_t <= f0 + config.armijo_c * slope:
                break
            step *= config.backtrack_factor
            if step < config.step_floor:
                msg = (f"no sufficient decrease at step floor {config.step_floor:g} "
                       f"(iteration {it}, kkt residual {kkt:.3e}, objective {f0:.6e})")
                if raise_on_stagnation:
                    raise StagnationError(msg, iteration=it, kkt_residual=kkt, objective=f0)
                log.warning(msg)
                return _result(problem, a, it, traj, kkt, False, start, n_eval, ev, stalled=True)
        prev = (a, g)
        a, ev = trial, ev_t
        it += 1
        assert a.min() >= box.lower and a.max() <= box.upper
        traj.append(ev.value.total)
    return _result(problem, a, it, traj, kkt, converged, start, n_eval, ev)


def _result(problem, a, it, traj, kkt, converged, start, n_eval, ev, stalled=False):
    timings = {"wall_seconds": time.perf_counter() - start}
    res = InversionResult(
        a_hat=CellField(problem.mesh, a),
        iterations=it,
        objective_trajectory=traj,
        kkt_residual=kkt,
        converged=converged,
        timings=timings,
        evaluations=n_eval,
        final=ev,
    )
    if stalled:
        res.timings["stalled"] = True
    return res
