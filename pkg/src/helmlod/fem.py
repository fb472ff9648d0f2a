"""Complex P1 assembly of the Helmholtz form with impedance boundary terms.

Matrices follow the convention ``A[i, j] = a(phi_j, phi_i)`` with the second
argument of every inner product conjugated, so that ``a(u, v) = v^H A u``.
All integrals of products of P1 functions are evaluated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import ROBIN, Mesh


class DofSpace:
    """P1 space on ``mesh`` with one dof per vertex off the Dirichlet boundary."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        dirichlet = np.zeros(mesh.n_vertices, dtype=bool)
        dirichlet[mesh.dirichlet_vertices] = True
        self.free_nodes = np.flatnonzero(~dirichlet)
        self.node_to_dof = -np.ones(mesh.n_vertices, dtype=np.int64)
        self.node_to_dof[self.free_nodes] = np.arange(self.free_nodes.size)
        self.free_nodes.setflags(write=False)
        self.node_to_dof.setflags(write=False)

    @property
    def n_dofs(self) -> int:
        return int(self.free_nodes.size)

    def embed(self, x: np.ndarray, fill=None) -> np.ndarray:
        """Vertex vector from dof coefficients; Dirichlet entries from ``fill``."""
        out = np.zeros(self.mesh.n_vertices, dtype=np.result_type(x, complex))
        if fill is not None:
            out[:] = fill
        out[self.free_nodes] = x
        return out

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free_nodes]

    @cached_property
    def local(self) -> LocalMatrices:
        return LocalMatrices.of(self.mesh)

    def __repr__(self):
        return f"DofSpace(dim={self.mesh.dim}, n_dofs={self.n_dofs})"


@dataclass(frozen=True)
class LocalMatrices:
    """Per-element stiffness and mass blocks plus Robin facet mass blocks."""

    stiffness: np.ndarray
    mass: np.ndarray
    robin_facets: np.ndarray
    robin_owner: np.ndarray
    robin_mass: np.ndarray

    @classmethod
    def of(cls, mesh: Mesh) -> LocalMatrices:
        d = mesh.dim
        x = mesh.vertices[mesh.elements]  # (ne, d+1, d)
        aug = np.concatenate([np.ones(x.shape[:2] + (1,)), x], axis=2)
        inv = np.linalg.inv(aug)
        grads = inv[:, 1:, :]  # (ne, d, d+1): gradient of each barycentric coordinate
        vol = np.abs(mesh.measures)
        stiff = vol[:, None, None] * np.einsum("eki,ekj->eij", grads, grads)
        ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
        mass = vol[:, None, None] * ref
        robin = mesh.facet_labels == ROBIN
        fref = (np.ones((d, d)) + np.eye(d)) / (d * (d + 1))
        fmass = mesh.facet_measures[robin][:, None, None] * fref
        return cls(stiff, mass, mesh.facets[robin], mesh.facet_owner[robin], fmass)


def _scatter(space: DofSpace, conn: np.ndarray, blocks: np.ndarray) -> sp.csr_matrix:
    n = space.n_dofs
    if conn.size == 0:
        return sp.csr_matrix((n, n))
    k = conn.shape[1]
    dofs = space.node_to_dof[conn]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    vals = blocks.reshape(blocks.shape[0], -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def _element_mask(space: DofSpace, restriction) -> np.ndarray | None:
    if restriction is None:
        return None
    restriction = np.asarray(restriction)
    if restriction.dtype == bool:
        return restriction
    mask = np.zeros(space.mesh.n_elements, dtype=bool)
    mask[restriction] = True
    return mask


def form_parts(space: DofSpace, restriction=None):
    """Return ``(stiffness, mass, robin)`` on the dofs, optionally restricted.

    ``restriction`` is a set of element indices (or a boolean mask).  A Robin
    facet contributes only when its owning element belongs to the restriction.
    """
    loc = space.local
    mask = _element_mask(space, restriction)
    conn = space.mesh.elements
    fconn, fblocks = loc.robin_facets, loc.robin_mass
    stiff, mass = loc.stiffness, loc.mass
    if mask is not None:
        conn, stiff, mass = conn[mask], stiff[mask], mass[mask]
        fsel = mask[loc.robin_owner]
        fconn, fblocks = fconn[fsel], fblocks[fsel]
    return (_scatter(space, conn, stiff), _scatter(space, conn, mass),
            _scatter(space, fconn, fblocks))


def assemble_form(space: DofSpace, kappa: float, restriction=None) -> sp.csr_matrix:
    """Helmholtz matrix ``S - kappa^2 M - i kappa R`` on ``space``."""
    if not kappa > 0:
        raise ValueError(f"wave number must be positive, got {kappa}")
    stiff, mass, robin = form_parts(space, restriction)
    mat = (stiff - kappa**2 * mass - 1j * kappa * robin).tocsr()
    mat.eliminate_zeros()
    return mat


def hermitian_energy_matrices(space: DofSpace):
    """Real ``(mass, stiffness)`` matrices on the dofs of ``space``."""
    stiff, mass, _ = form_parts(space)
    return mass, stiff


def assemble_load(space: DofSpace, f) -> np.ndarray:
    """Load vector ``(f, phi_i)`` for ``f`` constant on every element."""
    mesh = space.mesh
    f = np.broadcast_to(np.asarray(f, dtype=complex), (mesh.n_elements,))
    k = mesh.dim + 1
    contrib = (np.abs(mesh.measures) * f / k)[:, None] * np.ones(k)
    full = np.zeros(mesh.n_vertices, dtype=complex)
    np.add.at(full, mesh.elements, contrib)
    return space.restrict(full)


def assemble_load_pieces_1d(space: DofSpace, pieces) -> np.ndarray:
    """Exact load for a 1D function given as ``[(a, b, value), ...]``.

    Hat supports are split at the breakpoints, so the result is exact even when
    the breakpoints do not coincide with mesh vertices.
    """
    mesh = space.mesh
    if mesh.dim != 1:
        raise ValueError("piecewise loads are only defined on interval meshes")
    full = np.zeros(mesh.n_vertices, dtype=complex)
    x0 = mesh.vertices[mesh.elements[:, 0], 0]
    x1 = mesh.vertices[mesh.elements[:, 1], 0]
    h = x1 - x0
    for a, b, value in pieces:
        lo = np.clip(np.maximum(x0, a), x0, x1)
        hi = np.clip(np.minimum(x1, b), x0, x1)
        ok = hi > lo
        # int_lo^hi of the hat that is 1 at x1 (resp. x0), on element [x0, x1]
        right = ((hi - x0) ** 2 - (lo - x0) ** 2) / (2 * h)
        left = (hi - lo) - right
        np.add.at(full, mesh.elements[ok, 0], value * left[ok])
        np.add.at(full, mesh.elements[ok, 1], value * right[ok])
    return space.restrict(full)


def v_norm(space: DofSpace, kappa: float, u: np.ndarray) -> float:
    """``sqrt(kappa^2 |u|_L2^2 + |grad u|_L2^2)`` for dof coefficients ``u``."""
    mass, stiff = hermitian_energy_matrices(space)
    return energy_norm(mass, stiff, kappa, u)


def energy_norm(mass, stiff, kappa, u) -> float:
    u = np.asarray(u)
    val = kappa**2 * np.vdot(u, mass @ u) + np.vdot(u, stiff @ u)
    return float(np.sqrt(max(val.real, 0.0)))


def l2_norm(mass, u) -> float:
    u = np.asarray(u)
    return float(np.sqrt(max(np.vdot(u, mass @ u).real, 0.0)))


def vertex_matrices(mesh: Mesh):
    """Mass and stiffness on all vertices, Dirichlet ones included."""
    loc = LocalMatrices.of(mesh)
    n = mesh.n_vertices
    k = mesh.dim + 1
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    mass = sp.csr_matrix((loc.mass.ravel(), (rows, cols)), shape=(n, n))
    stiff = sp.csr_matrix((loc.stiffness.ravel(), (rows, cols)), shape=(n, n))
    return mass, stiff


def write_matrix_coo(matrix, path) -> None:
    """Dump ``row col re im`` lines for debugging."""
    coo = sp.coo_matrix(matrix)
    vals = coo.data.astype(complex)
    lines = [f"{r} {c} {v.real:.17g} {v.imag:.17g}" for r, c, v in zip(coo.row, coo.col, vals)]
    Path(path).write_text(f"{matrix.shape[0]} {matrix.shape[1]} {coo.nnz}\n" + "\n".join(lines) + "\n")
