"""Uniform simplicial meshes of intervals and rectangles.

Only structured meshes are supported. In 1-D each element is a segment and
the boundary consists of the two end points; in 2-D every grid cell is split
into two right triangles along the bottom-left to top-right diagonal.

Boundary integrals use per-facet trapezoid weights: a facet of measure
``|F|`` gives ``|F| / 2`` to each of its end points in 2-D, and each end
point of an interval carries unit weight (counting measure) in 1-D.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidMeshError

__all__ = [
    "Mesh",
    "build_interval_mesh",
    "build_rect_mesh",
    "build_mesh",
    "boundary_trace_weights",
    "refine",
]


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    nodes : ndarray, shape (num_nodes, dim)
    elements : ndarray, shape (num_elements, dim + 1)
        Node indices of each simplex.
    facet_nodes : ndarray, shape (num_facets, dim)
        Node indices of each boundary facet (a point in 1-D, an edge in 2-D).
    facet_owner : ndarray, shape (num_facets,)
        Index of the unique element containing each boundary facet.
    element_measures, facet_measures : ndarray
        Lengths/areas. Facet measures are 1 in 1-D.
    shape : tuple of int
        ``(n,)`` or ``(nx, ny)``.
    bounds : tuple of float
        ``(lo, hi)`` or ``(x0, y0, x1, y1)``.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    facet_nodes: np.ndarray
    facet_owner: np.ndarray
    element_measures: np.ndarray
    facet_measures: np.ndarray
    shape: tuple
    bounds: tuple
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def num_facets(self) -> int:
        return self.facet_nodes.shape[0]

    @property
    def measure(self) -> float:
        return float(self.element_measures.sum())

    @property
    def boundary_measure(self) -> float:
        return float(self.facet_measures.sum())

    @property
    def boundary_facets(self) -> list[tuple[tuple[int, ...], int]]:
        return [
            (tuple(int(i) for i in fn), int(o))
            for fn, o in zip(self.facet_nodes, self.facet_owner)
        ]

    @cached_property
    def centroids(self) -> np.ndarray:
        c = self.nodes[self.elements].mean(axis=1)
        c.setflags(write=False)
        return c

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the P1 hat functions, shape (ne, dim+1, dim)."""
        verts = self.nodes[self.elements]
        if self.dim == 1:
            h = verts[:, 1, 0] - verts[:, 0, 0]
            g = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        else:
            # Rows of inv(J)^T give the gradients of barycentrics 1 and 2.
            jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
            inv_t = np.linalg.inv(jac).transpose(0, 2, 1)
            g1, g2 = inv_t[:, :, 0], inv_t[:, :, 1]
            g = np.stack([-g1 - g2, g1, g2], axis=1)
        g.setflags(write=False)
        return g

    @cached_property
    def facet_weights(self) -> np.ndarray:
        """Trapezoid weight of each facet node, shape (num_facets, dim)."""
        if self.dim == 1:
            w = np.ones((self.num_facets, 1))
        else:
            w = np.repeat(self.facet_measures[:, None] / 2.0, 2, axis=1)
        w.setflags(write=False)
        return w

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        b = np.unique(self.facet_nodes)
        b.setflags(write=False)
        return b

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.num_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        i = np.flatnonzero(mask)
        i.setflags(write=False)
        return i

    def spec(self) -> dict:
        """Parameters that rebuild this mesh (used for provenance in reports)."""
        if self.dim == 1:
            return {"dim": 1, "n": self.shape[0], "bounds": list(self.bounds)}
        return {"dim": 2, "nx": self.shape[0], "ny": self.shape[1], "bounds": list(self.bounds)}

    def __repr__(self) -> str:
        return f"Mesh(dim={self.dim}, shape={self.shape}, bounds={self.bounds})"


def build_interval_mesh(n: int, lo: float = 0.0, hi: float = 1.0) -> Mesh:
    """Uniform mesh of ``[lo, hi]`` with ``n`` elements."""
    if int(n) != n or n < 1:
        raise InvalidMeshError(f"element count must be a positive integer, got {n!r}", field="n")
    if not hi > lo:
        raise InvalidMeshError(f"need hi > lo, got lo={lo}, hi={hi}", field="bounds")
    n = int(n)
    x = lo + np.arange(n + 1) * ((hi - lo) / n)
    x[-1] = hi
    elements = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    return Mesh(
        dim=1,
        nodes=_frozen(x[:, None], float),
        elements=_frozen(elements, np.int64),
        facet_nodes=_frozen([[0], [n]], np.int64),
        facet_owner=_frozen([0, n - 1], np.int64),
        element_measures=_frozen(np.diff(x), float),
        facet_measures=_frozen([1.0, 1.0], float),
        shape=(n,),
        bounds=(float(lo), float(hi)),
    )


def build_rect_mesh(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Uniform triangulation of the rectangle ``(x0, y0, x1, y1)``.

    Node ``(i, j)`` has index ``j * (nx + 1) + i``. Cell ``(i, j)`` yields the
    triangles ``(00, 10, 11)`` and ``(00, 11, 01)`` at element indices
    ``2 * (j * nx + i)`` and ``2 * (j * nx + i) + 1``.
    """
    for name, v in (("nx", nx), ("ny", ny)):
        if int(v) != v or v < 1:
            raise InvalidMeshError(f"{name} must be a positive integer, got {v!r}", field=name)
    x0, y0, x1, y1 = (float(v) for v in rect)
    if not (x1 > x0 and y1 > y0):
        raise InvalidMeshError(f"degenerate rectangle {rect!r}", field="bounds")
    nx, ny = int(nx), int(ny)
    xs = x0 + np.arange(nx + 1) * ((x1 - x0) / nx)
    ys = y0 + np.arange(ny + 1) * ((y1 - y0) / ny)
    xs[-1], ys[-1] = x1, y1
    X, Y = np.meshgrid(xs, ys)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    def nid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    n00, n10, n01, n11 = nid(I, J), nid(I + 1, J), nid(I, J + 1), nid(I + 1, J + 1)
    lower = np.stack([n00, n10, n11], axis=1)
    upper = np.stack([n00, n11, n01], axis=1)
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    def cell(i, j):
        return 2 * (j * nx + i)

    fn, fo, fm = [], [], []
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    for i in range(nx):
        fn.append((nid(i, 0), nid(i + 1, 0)))
        fo.append(cell(i, 0))
        fm.append(hx)
    for j in range(ny):
        fn.append((nid(nx, j), nid(nx, j + 1)))
        fo.append(cell(nx - 1, j))
        fm.append(hy)
    for i in range(nx):
        fn.append((nid(i + 1, ny), nid(i, ny)))
        fo.append(cell(i, ny - 1) + 1)
        fm.append(hx)
    for j in range(ny):
        fn.append((nid(0, j + 1), nid(0, j)))
        fo.append(cell(0, j) + 1)
        fm.append(hy)

    area = np.full(elements.shape[0], 0.5 * hx * hy)
    return Mesh(
        dim=2,
        nodes=_frozen(nodes, float),
        elements=_frozen(elements, np.int64),
        facet_nodes=_frozen(fn, np.int64),
        facet_owner=_frozen(fo, np.int64),
        element_measures=_frozen(area, float),
        facet_measures=_frozen(fm, float),
        shape=(nx, ny),
        bounds=(x0, y0, x1, y1),
    )


def build_mesh(spec: dict) -> Mesh:
    """Build a mesh from a ``Mesh.spec()``-style dictionary."""
    dim = spec.get("dim", 1)
    if dim == 1:
        lo, hi = spec.get("bounds", (0.0, 1.0))
        if "n" not in spec:
            raise InvalidMeshError("1-D mesh spec needs 'n'", field="mesh.n")
        return build_interval_mesh(spec["n"], lo, hi)
    if dim == 2:
        for key in ("nx", "ny"):
            if key not in spec:
                raise InvalidMeshError(f"2-D mesh spec needs '{key}'", field=f"mesh.{key}")
        return build_rect_mesh(spec["nx"], spec["ny"], spec.get("bounds", (0.0, 0.0, 1.0, 1.0)))
    raise InvalidMeshError(f"unsupported dimension {dim!r}", field="mesh.dim")


def refine(mesh: Mesh, factor: int = 2) -> Mesh:
    """Uniform refinement; coarse node ``i`` sits at fine node ``factor * i`` (per axis)."""
    if mesh.dim == 1:
        return build_interval_mesh(mesh.shape[0] * factor, *mesh.bounds)
    return build_rect_mesh(mesh.shape[0] * factor, mesh.shape[1] * factor, mesh.bounds)


def coarse_to_fine_nodes(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Indices into ``fine`` of the nodes of a nested ``coarse`` mesh."""
    if coarse.dim == 1:
        f = fine.shape[0] // coarse.shape[0]
        return np.arange(coarse.num_nodes) * f
    f = fine.shape[0] // coarse.shape[0]
    nx, ny = coarse.shape
    j, i = np.divmod(np.arange(coarse.num_nodes), nx + 1)
    return (f * j) * (fine.shape[0] + 1) + f * i


def boundary_trace_weights(mesh: Mesh) -> np.ndarray:
    """Per-node boundary quadrature weights, zero at interior nodes.

    ``w @ v`` integrates a piecewise-linear ``v`` over the boundary exactly.
    """
    w = np.zeros(mesh.num_nodes)
    np.add.at(w, mesh.facet_nodes.ravel(), mesh.facet_weights.ravel())
    return w
