"""P1 element matrices and a shared scatter pattern for fast reassembly.

All matrices used by the package (stiffness, mass, lumped boundary mass,
and their coefficient-weighted variants) live on the same node-to-node
sparsity pattern, so a weighted matrix is a single ``bincount`` of
precomputed local entries. The pattern also knows how to lay its data out
in LAPACK upper band storage for the banded Cholesky solver.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Mesh


def local_stiffness(mesh: Mesh) -> np.ndarray:
    """``|T| grad(phi_i) . grad(phi_j)`` per element, shape (ne, k, k)."""
    key = "local_stiffness"
    if key not in mesh._cache:
        g = mesh.basis_gradients
        ke = np.einsum("eid,ejd->eij", g, g) * mesh.element_measures[:, None, None]
        ke.setflags(write=False)
        mesh._cache[key] = ke
    return mesh._cache[key]


def local_mass(mesh: Mesh) -> np.ndarray:
    """Exact P1 element mass matrices, shape (ne, k, k)."""
    key = "local_mass"
    if key not in mesh._cache:
        k = mesh.dim + 1
        ref = (np.ones((k, k)) + np.eye(k)) / ((k + 1) * k)
        me = ref[None, :, :] * mesh.element_measures[:, None, None]
        me.setflags(write=False)
        mesh._cache[key] = me
    return mesh._cache[key]


class Pattern:
    """Union sparsity pattern of all P1 forms on a mesh."""

    def __init__(self, mesh: Mesh):
        n = mesh.num_nodes
        k = mesh.dim + 1
        el = mesh.elements
        rows = np.repeat(el, k, axis=1).ravel()
        cols = np.tile(el, (1, k)).ravel()
        lin = rows * n + cols
        uniq, inverse = np.unique(lin, return_inverse=True)
        self.n = n
        self.nnz = uniq.size
        self.element_slots = inverse.reshape(el.shape[0], k * k)
        self.indices = (uniq % n).astype(np.int32)
        r = uniq // n
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n))]).astype(np.int32)
        self.row = r
        self.diag = np.searchsorted(uniq, np.arange(n) * n + np.arange(n))
        self.facet_slots = self.diag[mesh.facet_nodes]
        # Upper band storage: ab[bw + r - c, c] = A[r, c] for c >= r.
        upper = self.indices >= r
        self.band_src = np.flatnonzero(upper)
        self.bandwidth = int(np.max(self.indices[upper] - r[upper]))
        self.band_dst = (self.bandwidth + r[upper] - self.indices[upper], self.indices[upper])

    def scatter(self, local: np.ndarray, coef=None) -> np.ndarray:
        w = local.reshape(local.shape[0], -1)
        if coef is not None:
            w = w * np.asarray(coef)[:, None]
        return np.bincount(self.element_slots.ravel(), weights=w.ravel(), minlength=self.nnz)

    def scatter_boundary(self, mesh: Mesh, coef=None) -> np.ndarray:
        """Lumped boundary mass: facet weight times owner coefficient on the diagonal."""
        w = mesh.facet_weights
        if coef is not None:
            w = w * np.asarray(coef)[mesh.facet_owner][:, None]
        return np.bincount(self.facet_slots.ravel(), weights=w.ravel(), minlength=self.nnz)

    def to_csr(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_banded(self, data: np.ndarray) -> np.ndarray:
        ab = np.zeros((self.bandwidth + 1, self.n))
        ab[self.band_dst] = data[self.band_src]
        return ab

    def matvec(self, data: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.row, weights=data * x[self.indices], minlength=self.n)


def pattern(mesh: Mesh) -> Pattern:
    if "pattern" not in mesh._cache:
        mesh._cache["pattern"] = Pattern(mesh)
    return mesh._cache["pattern"]


def stiffness_matrix(mesh: Mesh, coef=None) -> sp.csr_matrix:
    p = pattern(mesh)
    return p.to_csr(p.scatter(local_stiffness(mesh), coef))


def mass_matrix(mesh: Mesh, coef=None) -> sp.csr_matrix:
    p = pattern(mesh)
    return p.to_csr(p.scatter(local_mass(mesh), coef))


def boundary_matrix(mesh: Mesh, coef=None) -> sp.csr_matrix:
    p = pattern(mesh)
    return p.to_csr(p.scatter_boundary(mesh, coef))


def element_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Constant gradient of a P1 field on each element, shape (ne, dim)."""
    return np.einsum("eid,ei->ed", mesh.basis_gradients, values[mesh.elements])


def element_grad_sq(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """``|grad v|^2`` per element."""
    g = element_gradients(mesh, values)
    return np.einsum("ed,ed->e", g, g)


def facet_trace_sq(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """``sum_i w_{f,i} v_i^2`` per boundary facet."""
    return np.einsum("fi,fi->f", mesh.facet_weights, values[mesh.facet_nodes] ** 2)


def owner_sum(mesh: Mesh, per_facet: np.ndarray) -> np.ndarray:
    """Accumulate a per-facet quantity onto the owning elements."""
    return np.bincount(mesh.facet_owner, weights=per_facet, minlength=mesh.num_elements)
