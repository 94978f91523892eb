"""Nodal and cell fields, their norms, and discrete Sobolev constants.

Nodal fields are continuous piecewise-linear (one value per node); cell
fields are piecewise constant (one value per element). All norms use exact
quadrature: P1 mass/stiffness matrices for nodal fields, element measures
for cell fields, and the trapezoid trace weights on the boundary.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import AdmissibilityError, ConfigError, EigenSolverError
from .grid import Mesh, boundary_trace_weights

EIG_TOL = 1e-10
EIG_MAXITER = 10_000
_DENSE_LIMIT = 600


class _Field:
    def __init__(self, mesh: Mesh, values):
        values = np.array(values, dtype=float)
        if values.ndim == 0:
            values = np.full(self._size(mesh), float(values))
        if values.shape != (self._size(mesh),):
            raise ConfigError(
                f"{type(self).__name__} needs {self._size(mesh)} values, got shape {values.shape}",
                field="values",
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"{type(self).__name__} has non-finite values", field="values")
        values.setflags(write=False)
        self.mesh = mesh
        self.values = values

    @staticmethod
    def _size(mesh):  # pragma: no cover - overridden
        raise NotImplementedError

    def _new(self, values):
        return type(self)(self.mesh, values)

    def _other(self, other):
        if isinstance(other, _Field):
            if type(other) is not type(self) or other.mesh is not self.mesh:
                raise ConfigError("fields live on different meshes or spaces")
            return other.values
        return other

    def __add__(self, other):
        return self._new(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._other(other))

    def __rsub__(self, other):
        return self._new(self._other(other) - self.values)

    def __mul__(self, other):
        return self._new(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._new(self.values / self._other(other))

    def __neg__(self):
        return self._new(-self.values)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"{type(self).__name__}(n={self.values.size}, min={self.values.min():.4g}, max={self.values.max():.4g})"


class NodalField(_Field):
    """Continuous piecewise-linear field (states, observations, test functions)."""

    @staticmethod
    def _size(mesh):
        return mesh.num_nodes

    @classmethod
    def from_function(cls, mesh: Mesh, func):
        return cls(mesh, func(*mesh.nodes.T))


class CellField(_Field):
    """Piecewise-constant field (coefficients, perturbations, gradient densities)."""

    @staticmethod
    def _size(mesh):
        return mesh.num_elements

    @classmethod
    def from_function(cls, mesh: Mesh, func):
        """Sample ``func`` at element centroids."""
        return cls(mesh, func(*mesh.centroids.T))


# -- norms -----------------------------------------------------------------


def _mass(mesh):
    if "mass" not in mesh._cache:
        mesh._cache["mass"] = fem.mass_matrix(mesh)
    return mesh._cache["mass"]


def _stiff(mesh):
    if "stiffness" not in mesh._cache:
        mesh._cache["stiffness"] = fem.stiffness_matrix(mesh)
    return mesh._cache["stiffness"]


def l2_norm(field: NodalField | CellField) -> float:
    v = field.values
    if isinstance(field, CellField):
        return float(np.sqrt(np.sum(v * v * field.mesh.element_measures)))
    return float(np.sqrt(max(v @ (_mass(field.mesh) @ v), 0.0)))


def h1_seminorm(field: NodalField) -> float:
    v = field.values
    return float(np.sqrt(max(v @ (_stiff(field.mesh) @ v), 0.0)))


def h1_norm(field: NodalField) -> float:
    return float(np.hypot(l2_norm(field), h1_seminorm(field)))


def boundary_l2(field: NodalField) -> float:
    w = boundary_trace_weights(field.mesh)
    return float(np.sqrt(np.sum(w * field.values**2)))


def linf_norm(field) -> float:
    return float(np.max(np.abs(field.values)))


def l2_error(field: NodalField, exact, order: int = 5) -> float:
    """L2 distance between a nodal field and a callable, by Gauss quadrature.

    Only used to measure discretization error against analytic solutions.
    """
    mesh = field.mesh
    gx, gw = np.polynomial.legendre.leggauss(order)
    gx, gw = (gx + 1) / 2, gw / 2
    verts = mesh.nodes[mesh.elements]
    vals = field.values[mesh.elements]
    if mesh.dim == 1:
        lam = np.stack([1 - gx, gx], axis=1)  # (q, 2)
        pts = np.einsum("qk,ek->eq", lam, verts[:, :, 0])
        uh = np.einsum("qk,ek->eq", lam, vals)
        err = (uh - exact(pts)) ** 2
        return float(np.sqrt(np.sum(err * gw[None, :] * mesh.element_measures[:, None])))
    # Collapsed (Duffy) tensor rule on the reference triangle.
    s, t = np.meshgrid(gx, gx, indexing="ij")
    w = np.outer(gw, gw) * (1 - s)
    l1, l2 = (s * 1.0).ravel(), (t * (1 - s)).ravel()
    w = 2 * w.ravel()
    lam = np.stack([1 - l1 - l2, l1, l2], axis=1)
    px = np.einsum("qk,ek->eq", lam, verts[:, :, 0])
    py = np.einsum("qk,ek->eq", lam, verts[:, :, 1])
    uh = np.einsum("qk,ek->eq", lam, vals)
    err = (uh - exact(px, py)) ** 2
    return float(np.sqrt(np.sum(err * w[None, :] * mesh.element_measures[:, None])))


# -- Sobolev constants -----------------------------------------------------


@dataclass(frozen=True)
class SobolevConstants:
    c_p: float
    c_f: float
    c_t: float
    alpha: float
    beta: float
    gamma_tilde: float
    # Variant with gamma_tilde dropped, as used in the rate proof.
    lam: float

    def to_dict(self) -> dict:
        return asdict(self)


def _smallest_eig(A, B) -> float:
    """Smallest eigenvalue of the symmetric-definite pencil (A, B)."""
    n = A.shape[0]
    if n <= _DENSE_LIMIT:
        w = sla.eigh(A.toarray(), B.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(w[0])
    try:
        w = spla.eigsh(A.tocsc(), k=1, M=B.tocsc(), sigma=0.0, which="LM",
                       tol=EIG_TOL, maxiter=EIG_MAXITER, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolverError(f"shift-invert iteration did not converge: {exc}") from exc
    return float(np.min(w))


def _largest_eig(A, B) -> float:
    n = A.shape[0]
    if n <= _DENSE_LIMIT:
        w = sla.eigh(A.toarray(), B.toarray(), eigvals_only=True, subset_by_index=[n - 1, n - 1])
        return float(w[0])
    try:
        w = spla.eigsh(A.tocsc(), k=1, M=B.tocsc(), which="LA",
                       tol=EIG_TOL, maxiter=EIG_MAXITER, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolverError(f"Lanczos iteration did not converge: {exc}") from exc
    return float(np.max(w))


def embedding_constants(mesh: Mesh) -> tuple[float, float, float]:
    """Discrete-optimal ``(C_P, C_F, C_t)`` for the P1 space on ``mesh``.

    * ``C_P = 1 / lambda_1`` of the Dirichlet stiffness/mass pencil;
    * ``C_F = 1 / mu_1`` of ``(K + q q^T, K + M)``, ``q`` the trace weights;
    * ``C_t^2`` = largest eigenvalue of ``(B, K + M)``, ``B`` the boundary mass.

    Depends only on the mesh and is cached on it.
    """
    if "embedding" in mesh._cache:
        return mesh._cache["embedding"]
    K, M = _stiff(mesh), _mass(mesh)
    H = (K + M).tocsr()
    inner = mesh.interior_nodes
    if inner.size == 0:
        # The discrete Dirichlet space is {0}; any constant works.
        c_p = 0.0
    else:
        c_p = 1.0 / _smallest_eig(K[inner][:, inner], M[inner][:, inner])
    q = boundary_trace_weights(mesh)
    Q = sp.csr_matrix(np.outer(q, q)) if mesh.num_nodes <= _DENSE_LIMIT else None
    if Q is not None:
        c_f = 1.0 / _smallest_eig((K + Q).tocsr(), H)
    else:
        c_f = 1.0 / _smallest_rank_one_pencil(K, q, H)
    B = fem.boundary_matrix(mesh)
    c_t = float(np.sqrt(_largest_eig(B, H)))
    mesh._cache["embedding"] = (c_p, c_f, c_t)
    return mesh._cache["embedding"]


def _smallest_rank_one_pencil(K, q, H) -> float:
    """Smallest eigenvalue of ``(K + q q^T, H)`` without forming ``q q^T``.

    The shifted pencil is inverted with a sparse LU of ``K + H`` plus a
    Sherman-Morrison correction for the rank-one term.
    """
    # (K + qq^T) x = mu H x  <=>  (K + H + qq^T) x = (mu + 1) H x
    n = K.shape[0]
    S = (K + H).tocsc()
    lu = spla.splu(S)
    Sq = lu.solve(q)
    denom = 1.0 + q @ Sq

    def solve(x):
        y = lu.solve(x)
        return y - Sq * (q @ y) / denom

    op = spla.LinearOperator((n, n), matvec=lambda x: solve(H @ x), dtype=float)
    try:
        # Largest eigenvalue of (K + qq^T + H)^{-1} H  is 1/(mu_1 + 1).
        w = spla.eigs(op, k=1, which="LM", tol=EIG_TOL, maxiter=EIG_MAXITER, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolverError(f"Friedrichs eigen-iteration did not converge: {exc}") from exc
    return float(1.0 / np.real(w[0]) - 1.0)


def estimate_constants(mesh: Mesh, a_lo: float, b_hi: float, gamma: float,
                       check: bool = True) -> SobolevConstants:
    """Embedding constants plus the coercivity/sensitivity constants.

    Raises
    ------
    AdmissibilityError
        If ``check`` and ``b_hi >= min(a_lo / C_P, a_lo * gamma_tilde / C_F)``.
    """
    if not a_lo > 0:
        raise ConfigError(f"a_lo must be positive, got {a_lo}", field="a_lo")
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}", field="gamma")
    if b_hi < 0:
        raise ConfigError(f"b_hi must be nonnegative, got {b_hi}", field="b_hi")
    c_p, c_f, c_t = embedding_constants(mesh)
    gt = min(1.0, gamma)
    bound = min(a_lo / c_p if c_p > 0 else np.inf, a_lo * gt / c_f)
    if check and not b_hi < bound:
        raise AdmissibilityError(
            f"b_hi = {b_hi:.6g} violates b_hi < min(a_lo/C_P, a_lo*gamma_tilde/C_F) = {bound:.6g}",
            field="b_hi",
            b_hi=b_hi,
            bound=bound,
            a_lo_over_cp=a_lo / c_p if c_p > 0 else None,
            a_lo_gt_over_cf=a_lo * gt / c_f,
        )
    alpha = (a_lo * gt - b_hi * c_f) / c_f
    beta = (a_lo * gt - b_hi * c_p) / (c_f * (1.0 + gamma * c_t**2))
    lam = (a_lo - b_hi * c_f) / c_f
    return SobolevConstants(c_p=c_p, c_f=c_f, c_t=c_t, alpha=alpha, beta=beta, gamma_tilde=gt, lam=lam)


# -- CSV -------------------------------------------------------------------


def write_csv(field: NodalField | CellField, path) -> None:
    """Write ``index,x[,y],value`` rows (node coordinates or element centroids)."""
    mesh = field.mesh
    coords = mesh.nodes if isinstance(field, NodalField) else mesh.centroids
    header = ["index", "x"] + (["y"] if mesh.dim == 2 else []) + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (c, v) in enumerate(zip(coords, field.values)):
            w.writerow([i] + [repr(float(x)) for x in c] + [repr(float(v))])


def read_csv(path, mesh: Mesh, kind: str = "nodal") -> NodalField | CellField:
    """Read a field written by :func:`write_csv`; cardinality must match ``mesh``."""
    cls = NodalField if kind == "nodal" else CellField
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"field file {path} does not exist", field=str(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    expected = cls._size(mesh)
    if len(rows) != expected:
        raise ConfigError(f"{path} has {len(rows)} rows, mesh needs {expected}", field=str(path))
    values = np.empty(expected)
    try:
        for r in rows:
            values[int(r["index"])] = float(r["value"])
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed field file {path}: {exc}", field=str(path)) from exc
    return cls(mesh, values)
