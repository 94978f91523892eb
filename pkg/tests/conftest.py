import numpy as np
import pytest

from robinid.field import CellField, NodalField, estimate_constants
from robinid.forward import RobinProblem, solve
from robinid.grid import build_interval_mesh, build_rect_mesh


def analytic_problem(n=64):
    """a = 1, b = 0, gamma = 1, f = 1 on (0, 1): u = (-x^2 + x + 1) / 2."""
    mesh = build_interval_mesh(n)
    return RobinProblem(CellField(mesh, 1.0), CellField(mesh, 0.0), NodalField(mesh, 1.0), 1.0, 0.5, 2.0, 0.0)


def analytic_u(x):
    return (-x * x + x + 1.0) / 2.0


def random_problem(rng, mesh, a_lo=0.5, a_hi=2.0, with_b=True, gamma=None):
    """Admissible random instance: a strictly inside the box, 0 <= b < b_hi well below the bound."""
    gamma = float(rng.uniform(0.5, 2.0)) if gamma is None else gamma
    a = rng.uniform(a_lo + 0.05 * (a_hi - a_lo), a_hi - 0.05 * (a_hi - a_lo), mesh.num_elements)
    b_hi = 0.0
    b = np.zeros(mesh.num_elements)
    if with_b:
        c = estimate_constants(mesh, a_lo, 0.0, gamma, check=False)
        bound = min(a_lo / c.c_p if c.c_p > 0 else np.inf, a_lo * c.gamma_tilde / c.c_f)
        b_hi = 0.5 * bound
        b = rng.uniform(0.0, b_hi, mesh.num_elements)
    f = rng.uniform(-1.0, 2.0, mesh.num_nodes)
    return RobinProblem(CellField(mesh, a), CellField(mesh, b), NodalField(mesh, f), gamma, a_lo, a_hi, b_hi)


def naive_operator(problem):
    """Dense element-by-element assembly straight from the vertex coordinates."""
    mesh = problem.mesh
    n = mesh.num_nodes
    A = np.zeros((n, n))
    a, b = problem.a.values, problem.b.values
    for e, tri in enumerate(mesh.elements):
        X = mesh.nodes[tri]
        if mesh.dim == 1:
            h = X[1, 0] - X[0, 0]
            ke = np.array([[1, -1], [-1, 1]]) / h
            me = h / 6 * np.array([[2, 1], [1, 2]])
        else:
            T = np.column_stack([X[1] - X[0], X[2] - X[0]])
            area = abs(np.linalg.det(T)) / 2
            G = np.linalg.inv(np.vstack([np.ones(3), X.T]))[:, 1:]  # rows: grad phi_i
            ke = area * G @ G.T
            me = area / 12 * (np.ones((3, 3)) + np.eye(3))
        A[np.ix_(tri, tri)] += a[e] * ke - b[e] * me
    for nodes, owner in mesh.boundary_facets:
        pts = mesh.nodes[list(nodes)]
        length = 1.0 if mesh.dim == 1 else np.linalg.norm(pts[1] - pts[0])
        for i in nodes:
            A[i, i] += problem.gamma * a[owner] * length / len(nodes)
    return A


def ramp_observation(problem, u=None):
    """``U(a)`` plus a ramp steep enough that every gradient entry is far from zero."""
    mesh = problem.mesh
    u = solve(problem) if u is None else u
    from robinid import fem

    gmax = np.sqrt(fem.element_grad_sq(mesh, u.values).max())
    slope = 2.0 * gmax + 1.0
    # base > 2 max|U| keeps the boundary part z^2 - U^2 positive too
    base = 2.0 * np.abs(u.values).max() + 1.0
    return u + NodalField(mesh, base + slope * (mesh.nodes - mesh.nodes.min(axis=0)).sum(axis=1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def mesh1d():
    return build_interval_mesh(32)


@pytest.fixture
def mesh2d():
    return build_rect_mesh(6, 5)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line per acceptance check, then assert it."""

    def check(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
