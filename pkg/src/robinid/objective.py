"""Convex energy misfit, Tikhonov objective and their exact gradients.

For a state ``U = U(a)`` and observation ``z`` with residual ``v = U - z``::

    G(a) = 1/2 v^T A(a) v
         = 1/2 int a |grad v|^2 + 1/2 int_bdry a gamma v^2 - 1/2 int b v^2

Differentiating and eliminating ``U'(a)`` with the state equation gives a
gradient that needs no adjoint solve::

    dG/da_e = 1/2 |T_e| (|grad z|^2 - |grad U|^2)
              + 1/2 gamma sum_{F owned by e} sum_i w_{F,i} (z_i^2 - U_i^2)

The five-term form (state residual paired with ``U'(a) h``) is kept as an
independent cross-check in :func:`five_term_derivative`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import AdmissibilityError, ConfigError, CrossCheckError
from .field import CellField, NodalField, h1_norm
from .forward import (
    DEFAULT_SOLVER,
    AssembledSystem,
    RobinProblem,
    SolverOptions,
    assemble,
    solve_sensitivity,
    solve_state,
)
from .grid import Mesh

FORMULA_RTOL = 1e-10


@dataclass(frozen=True)
class ObjectiveValue:
    energy: float
    penalty: float
    total: float
    state_misfit_h1: float


@dataclass(frozen=True, eq=False)
class GradientField:
    """Derivative of an objective with respect to the elementwise coefficient.

    ``euclidean[e]`` is ``dJ/da_e``; ``density`` is its L2 Riesz
    representative ``euclidean / |T_e|``. The interior part of the energy
    gradient density is kept separately in ``interior_density``; the
    boundary part (per owning element) in ``boundary``.
    """

    density: CellField
    euclidean: np.ndarray
    interior_density: CellField
    boundary: np.ndarray

    def pair(self, h) -> float:
        """L2 pairing ``<density, h>``."""
        hv = h.values if isinstance(h, CellField) else np.asarray(h)
        return float(self.euclidean @ hv)


@dataclass(eq=False)
class Evaluation:
    value: ObjectiveValue
    gradient: GradientField
    state: NodalField
    system: AssembledSystem


def _nodal(z, mesh):
    if isinstance(z, NodalField):
        return z.values
    return np.asarray(z, dtype=float)


def _energy(problem: RobinProblem, F: np.ndarray, z: np.ndarray, w: np.ndarray) -> float:
    # G = max_w  w.(F - A z) - 1/2 w.A w, attained at w = U - z. The value is
    # stationary in w, so solve errors enter only quadratically, and the forms
    # are summed per element, so assembly round-off at the 1/h^2 scale of A
    # never cancels against the much smaller misfit.
    mesh = problem.mesh
    a, b = problem.a.values, problem.b.values
    gw = fem.element_gradients(mesh, w)
    gz = fem.element_gradients(mesh, z)
    stiff = np.einsum("ed,ed->e", gw, gz + 0.5 * gw)
    wf, zf = w[mesh.facet_nodes], z[mesh.facet_nodes]
    bdry = np.einsum("fi,fi->f", mesh.facet_weights, wf * (zf + 0.5 * wf))
    we, ze = w[mesh.elements], z[mesh.elements]
    mass = np.einsum("ei,eij,ej->e", we, fem.local_mass(mesh), ze + 0.5 * we)
    form = (np.sum(a * mesh.element_measures * stiff) + problem.gamma * np.sum(a[mesh.facet_owner] * bdry)
            - np.sum(b * mass))
    return float(w @ F) - float(form)


def _energy_grad(problem: RobinProblem, z: np.ndarray, system: AssembledSystem, u: np.ndarray):
    mesh = problem.mesh
    energy = _energy(problem, system.F, z, u - z)
    gz = fem.element_gradients(mesh, z)
    gu = fem.element_gradients(mesh, u)
    interior = 0.5 * np.einsum("ed,ed->e", gz - gu, gz + gu)
    zf, uf = z[mesh.facet_nodes], u[mesh.facet_nodes]
    per_facet = 0.5 * problem.gamma * np.einsum("fi,fi->f", mesh.facet_weights, (zf - uf) * (zf + uf))
    boundary = fem.owner_sum(mesh, per_facet)
    return energy, interior, boundary


def evaluate(problem: RobinProblem, z, a_star=None, rho: float = 0.0,
             options: SolverOptions = DEFAULT_SOLVER, validate: bool = True) -> Evaluation:
    """State solve plus value and gradient of ``G + rho ||a - a*||^2``."""
    mesh = problem.mesh
    zv = _nodal(z, mesh)
    system = assemble(problem, validate=validate)
    u = solve_state(system, options)
    energy, interior, boundary = _energy_grad(problem, zv, system, u.values)
    meas = mesh.element_measures
    euclid = interior * meas + boundary
    penalty = 0.0
    if a_star is not None:
        diff = problem.a.values - (a_star.values if isinstance(a_star, CellField) else np.asarray(a_star))
        penalty = rho * float(np.sum(diff * diff * meas))
        euclid = euclid + 2.0 * rho * diff * meas
    misfit = h1_norm(NodalField(mesh, u.values - zv))
    value = ObjectiveValue(energy=energy, penalty=penalty, total=energy + penalty, state_misfit_h1=misfit)
    grad = GradientField(
        density=CellField(mesh, euclid / meas),
        euclidean=euclid,
        interior_density=CellField(mesh, interior),
        boundary=boundary,
    )
    return Evaluation(value=value, gradient=grad, state=u, system=system)


def energy_value(problem: RobinProblem, z: NodalField, mesh: Mesh | None = None) -> ObjectiveValue:
    """``G_z(a)`` with its H1 state misfit; the penalty fields are zero."""
    problem.validate(mesh)
    return evaluate(problem, z, validate=False).value


def gradient(problem: RobinProblem, z: NodalField, mesh: Mesh | None = None) -> GradientField:
    problem.validate(mesh)
    return evaluate(problem, z, validate=False).gradient


def tikhonov_total(problem: RobinProblem, z: NodalField, a_star: CellField, rho: float,
                   mesh: Mesh | None = None) -> tuple[ObjectiveValue, GradientField]:
    if not rho > 0:
        raise ConfigError(f"regularization parameter must be positive, got {rho}", field="rho")
    problem.validate(mesh)
    ev = evaluate(problem, z, a_star, rho, validate=False)
    return ev.value, ev.gradient


def five_term_derivative(problem: RobinProblem, z: NodalField, h: CellField,
                         evaluation: Evaluation | None = None) -> float:
    """``G'(a) h`` through ``eta = U'(a) h``::

        int a grad v . grad eta + 1/2 int |grad v|^2 h + int_bdry a gamma v eta
            + 1/2 int_bdry gamma v^2 h - int b v eta
    """
    mesh = problem.mesh
    ev = evaluation or evaluate(problem, z)
    hv = h.values if isinstance(h, CellField) else np.asarray(h, dtype=float)
    eta = solve_sensitivity(problem, ev.state, hv, system=ev.system).values
    v = ev.state.values - _nodal(z, mesh)
    # The three eta terms together are eta^T A v.
    coupled = float(eta @ ev.system.matvec(v))
    grad_sq = 0.5 * float(np.sum(hv * mesh.element_measures * fem.element_grad_sq(mesh, v)))
    bdry = 0.5 * problem.gamma * float(np.sum(hv[mesh.facet_owner] * fem.facet_trace_sq(mesh, v)))
    return coupled + grad_sq + bdry


def directional_derivative(problem: RobinProblem, z: NodalField, h: CellField,
                           mesh: Mesh | None = None, crosscheck: bool = True) -> float:
    """``<gradient, h>`` in the L2 pairing, optionally verified against the five-term form."""
    problem.validate(mesh)
    ev = evaluate(problem, z, validate=False)
    d = ev.gradient.pair(h)
    if crosscheck:
        d5 = five_term_derivative(problem, z, h, evaluation=ev)
        scale = max(abs(d), abs(d5), float(np.abs(ev.gradient.euclidean) @ np.abs(_cell(h))))
        if abs(d - d5) > FORMULA_RTOL * scale:
            raise CrossCheckError(
                f"closed-form derivative {d!r} disagrees with five-term form {d5!r}",
                closed=d, five_term=d5,
            )
    return d


def _cell(h):
    return h.values if isinstance(h, CellField) else np.asarray(h, dtype=float)


def second_derivative(problem: RobinProblem, h: CellField, evaluation: Evaluation | None = None,
                      z: NodalField | None = None) -> tuple[float, NodalField]:
    """Exact ``G''(a) h^2 = eta^T A eta`` with ``eta = U'(a) h``; independent of ``z``."""
    ev = evaluation or evaluate(problem, z if z is not None else NodalField(problem.mesh, 0.0))
    eta = solve_sensitivity(problem, ev.state, _cell(h), system=ev.system)
    return float(eta.values @ ev.system.matvec(eta.values)), eta


def convexity_probe(problem: RobinProblem, z: NodalField, h: CellField, t: float,
                    mesh: Mesh | None = None) -> float:
    """Second difference ``[G(a + t h) - 2 G(a) + G(a - t h)] / t^2``."""
    hv = _cell(h)
    a = problem.a.values
    lo, hi = problem.a_lo, problem.a_hi
    for sign in (1.0, -1.0):
        trial = a + sign * t * hv
        if trial.min() < lo or trial.max() > hi:
            raise AdmissibilityError(
                f"probe a {'+' if sign > 0 else '-'} t*h leaves [{lo}, {hi}]", field="h"
            )
    g0 = energy_value(problem, z, mesh).energy
    gp = energy_value(problem.with_coefficient(a + t * hv), z).energy
    gm = energy_value(problem.with_coefficient(a - t * hv), z).energy
    return (gp - 2.0 * g0 + gm) / (t * t)


def finite_difference_check(problem: RobinProblem, z: NodalField, a_star: CellField | None = None,
                            rho: float = 0.0, rel_step: float = 1e-4) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central differences of the total objective, one element at a time.

    Returns ``(closed_form, finite_difference, relative_error)`` per element;
    the step on ``a_e`` is ``rel_step * max(1, |a_e|)`` and every probe
    re-solves the state. The default 1e-4 balances round-off in ``G``, which
    grows like ``1/step``, against the ``step^2`` truncation error.
    """
    problem.validate()
    ev = evaluate(problem, z, a_star, rho, validate=False)
    g = ev.gradient.euclidean
    a = problem.a.values
    fd = np.empty_like(g)
    for e in range(a.size):
        s = rel_step * max(1.0, abs(a[e]))
        vals = []
        for sign in (1.0, -1.0):
            trial = a.copy()
            trial[e] += sign * s
            vals.append(evaluate(problem.with_coefficient(trial), z, a_star, rho, validate=False).value.total)
        fd[e] = (vals[0] - vals[1]) / (2.0 * s)
    rel = np.abs(fd - g) / np.maximum(np.abs(g), np.finfo(float).tiny)
    return g, fd, rel
