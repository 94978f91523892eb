"""Robin-boundary forward problem and its linearization.

The weak form solved on the mesh is::

    sum_e a_e int_T grad u . grad v  +  gamma sum_F a_owner(F) int_F u v
        - int b u v  =  int f v

with P1 states, piecewise-constant ``a`` and ``b``, a nodal source ``f`` and
a lumped (trapezoid) boundary form. ``U(a)`` is defined as the exact
solution of this discrete system, so every derivative identity used by the
objective holds to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import fem
from .errors import AdmissibilityError, CoercivityError, ConfigError
from .field import CellField, NodalField, SobolevConstants, _mass, estimate_constants
from .grid import Mesh

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SolverOptions:
    method: str = "direct"
    rtol: float = RESIDUAL_TOL
    maxiter: int | None = None

    def __post_init__(self):
        if self.method not in ("direct", "cg"):
            raise ConfigError(f"unknown linear solver {self.method!r}", field="solver.method")


DEFAULT_SOLVER = SolverOptions()


@dataclass(frozen=True, eq=False)
class RobinProblem:
    """Data of one forward solve.

    ``b`` enters with a minus sign; coercivity rests on the smallness bound
    ``b_hi < min(a_lo / C_P, a_lo * gamma_tilde / C_F)`` which is checked
    in :meth:`validate`.
    """

    a: CellField
    b: CellField
    f: NodalField
    gamma: float
    a_lo: float
    a_hi: float
    b_hi: float

    @property
    def mesh(self) -> Mesh:
        return self.a.mesh

    def with_coefficient(self, a) -> "RobinProblem":
        if not isinstance(a, CellField):
            a = CellField(self.mesh, a)
        return replace(self, a=a)

    def constants(self, check: bool = True) -> SobolevConstants:
        return estimate_constants(self.mesh, self.a_lo, self.b_hi, self.gamma, check=check)

    def validate(self, mesh: Mesh | None = None) -> None:
        m = self.mesh
        if mesh is not None and mesh is not m:
            raise ConfigError("problem fields are attached to a different mesh", field="mesh")
        if self.b.mesh is not m or self.f.mesh is not m:
            raise ConfigError("a, b and f must share one mesh", field="problem")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}", field="gamma")
        if not 0 < self.a_lo < self.a_hi:
            raise ConfigError(f"need 0 < a_lo < a_hi, got ({self.a_lo}, {self.a_hi})", field="bounds")
        a = self.a.values
        if a.min() < self.a_lo or a.max() > self.a_hi:
            raise AdmissibilityError(
                f"a outside [{self.a_lo}, {self.a_hi}]: range [{a.min():.6g}, {a.max():.6g}]",
                field="a", a_min=float(a.min()), a_max=float(a.max()),
            )
        b = self.b.values
        if b.min() < 0 or b.max() > self.b_hi:
            raise AdmissibilityError(
                f"b outside [0, {self.b_hi}]: range [{b.min():.6g}, {b.max():.6g}]",
                field="b", b_min=float(b.min()), b_max=float(b.max()),
            )
        if self.b_hi > 0:
            self.constants(check=True)


@dataclass(eq=False)
class AssembledSystem:
    """Sparse forms of one problem; ``A = K(a) + gamma * B(a) - M_b``."""

    mesh: Mesh
    K: sp.csr_matrix
    B: sp.csr_matrix
    M_b: sp.csr_matrix
    F: np.ndarray
    A: sp.csr_matrix
    gamma: float
    _data: np.ndarray = field(repr=False, default=None)
    _factor: object = field(repr=False, default=None)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return fem.pattern(self.mesh).matvec(self._data, x)


def _load(mesh: Mesh, f: np.ndarray) -> np.ndarray:
    return _mass(mesh) @ f


def _operator_data(mesh: Mesh, a, b, gamma) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    p = fem.pattern(mesh)
    k = p.scatter(fem.local_stiffness(mesh), a)
    bd = p.scatter_boundary(mesh, a)
    mb = p.scatter(fem.local_mass(mesh), b)
    return k, bd, mb, k + gamma * bd - mb


def assemble(problem: RobinProblem, mesh: Mesh | None = None, validate: bool = True) -> AssembledSystem:
    """Assemble the discrete Robin system, rejecting inadmissible data first."""
    if validate:
        problem.validate(mesh)
    mesh = problem.mesh
    p = fem.pattern(mesh)
    k, bd, mb, data = _operator_data(mesh, problem.a.values, problem.b.values, problem.gamma)
    return AssembledSystem(
        mesh=mesh,
        K=p.to_csr(k),
        B=p.to_csr(bd),
        M_b=p.to_csr(mb),
        F=_load(mesh, problem.f.values),
        A=p.to_csr(data),
        gamma=problem.gamma,
        _data=data,
    )


def _pcg(matvec, rhs, diag, rtol, maxiter):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    nrm = np.linalg.norm(rhs)
    for it in range(maxiter):
        if np.linalg.norm(r) <= rtol * nrm:
            return x, it
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0:
            raise CoercivityError(
                f"conjugate gradient found nonpositive curvature {curv:.3e}; "
                "operator is not positive definite (alpha <= 0)"
            )
        step = rz / curv
        x += step * p
        r -= step * Ap
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) > rtol * nrm:
        raise CoercivityError(f"conjugate gradient did not reach rtol={rtol} in {maxiter} iterations")
    return x, maxiter


def _solve(system: AssembledSystem, rhs: np.ndarray, options: SolverOptions) -> np.ndarray:
    if not np.any(rhs):
        return np.zeros_like(rhs)
    p = fem.pattern(system.mesh)
    if options.method == "cg":
        diag = system._data[p.diag]
        if np.any(diag <= 0):
            raise CoercivityError("nonpositive diagonal in assembled operator (alpha <= 0)")
        maxiter = options.maxiter or 10 * rhs.size
        x, _ = _pcg(system.matvec, rhs, diag, options.rtol, maxiter)
        return x
    if system._factor is None:
        try:
            system._factor = sla.cholesky_banded(p.to_banded(system._data), lower=False)
        except np.linalg.LinAlgError as exc:
            raise CoercivityError(
                "banded Cholesky failed: operator is not positive definite (alpha <= 0)"
            ) from exc
    x = sla.cho_solve_banded((system._factor, False), rhs)
    nrm = np.linalg.norm(rhs)
    for _ in range(3):
        r = rhs - system.matvec(x)
        if np.linalg.norm(r) <= options.rtol * nrm:
            break
        x = x + sla.cho_solve_banded((system._factor, False), r)
    else:
        raise CoercivityError("direct solve did not reach the residual tolerance; operator near singular")
    return x


def solve_state(system: AssembledSystem, options: SolverOptions = DEFAULT_SOLVER) -> NodalField:
    """Solve ``A u = F`` and return ``u = U(a)``."""
    return NodalField(system.mesh, _solve(system, system.F, options))


def sensitivity_rhs(mesh: Mesh, gamma: float, u: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``-(K(h) + gamma * B(h)) u``: the load of the linearized problem."""
    p = fem.pattern(mesh)
    d = p.scatter(fem.local_stiffness(mesh), h) + gamma * p.scatter_boundary(mesh, h)
    return -p.matvec(d, u)


def solve_sensitivity(problem: RobinProblem, u: NodalField, h: CellField, mesh: Mesh | None = None,
                      system: AssembledSystem | None = None,
                      options: SolverOptions = DEFAULT_SOLVER) -> NodalField:
    """Directional derivative ``eta = U'(a) h``.

    Solves ``A eta = -(K(h) + gamma B(h)) u``, the discrete variational
    equation of the linearized Robin problem. Pass ``system`` to reuse an
    existing factorization of ``A``.
    """
    if system is None:
        system = assemble(problem, mesh)
    h = h.values if isinstance(h, CellField) else np.asarray(h, dtype=float)
    rhs = sensitivity_rhs(problem.mesh, problem.gamma, u.values, h)
    return NodalField(problem.mesh, _solve(system, rhs, options))


def solve(problem: RobinProblem, options: SolverOptions = DEFAULT_SOLVER) -> NodalField:
    """Assemble and solve in one call."""
    return solve_state(assemble(problem), options)


def residual_norm(system: AssembledSystem, u: NodalField) -> float:
    """Relative residual ``|F - A u| / |F|``."""
    nrm = np.linalg.norm(system.F)
    if nrm == 0:
        return float(np.linalg.norm(system.matvec(u.values)))
    return float(np.linalg.norm(system.F - system.matvec(u.values)) / nrm)
