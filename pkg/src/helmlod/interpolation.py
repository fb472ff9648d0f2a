"""Transfer operators between a coarse P1 space and a nested fine P1 space.

Two quasi-interpolations are available.  The weighted Clement operator uses the
nodal functionals ``(v, phi_z) / (1, phi_z)``.  The projective variant evaluates
at ``z`` the local L2 projection of ``v`` onto P1 on the nodal patch of ``z``.
Both are stored as sparse matrices acting on fine dof coefficients; their
kernels define the fine-scale remainder space used by the correctors.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import DofSpace, LocalMatrices, hermitian_energy_matrices
from .mesh import MeshError, Patch, ancestor_map

CLEMENT = "clement"
PROJECTIVE = "projective"
KINDS = (CLEMENT, PROJECTIVE)


def vertex_prolongation(coarse_mesh, fine_mesh) -> sp.csr_matrix:
    """Fine-vertex values of every coarse hat, Dirichlet vertices included."""
    anc = ancestor_map(fine_mesh, coarse_mesh)
    d = fine_mesh.dim
    cx = coarse_mesh.vertices[coarse_mesh.elements[anc]]  # (nef, d+1, d)
    aug = np.concatenate([np.ones(cx.shape[:2] + (1,)), cx], axis=2)
    inv = np.linalg.inv(aug)  # rows of aug @ inv = identity: barycentrics = [1, x] @ inv
    fx = fine_mesh.vertices[fine_mesh.elements]  # (nef, d+1, d)
    faug = np.concatenate([np.ones(fx.shape[:2] + (1,)), fx], axis=2)
    lam = np.einsum("eik,ekj->eij", faug, inv)  # (nef, fine vertex, coarse vertex)
    if lam.min() < -1e-10:
        raise MeshError("fine element is not contained in its coarse ancestor")
    fverts = fine_mesh.elements.ravel()
    _, first = np.unique(fverts, return_index=True)
    e, i = np.divmod(first, d + 1)
    rows = np.repeat(fverts[first], d + 1)
    cols = coarse_mesh.elements[anc[e]].ravel()
    vals = lam[e, i, :].ravel()
    keep = np.abs(vals) > 1e-14
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(fine_mesh.n_vertices, coarse_mesh.n_vertices))


def group_by_ancestor(anc: np.ndarray, n_coarse: int) -> list[np.ndarray]:
    """Fine element indices of every coarse element, in ascending order."""
    order = np.argsort(anc, kind="stable")
    bounds = np.searchsorted(anc[order], np.arange(n_coarse + 1))
    return [order[bounds[k]:bounds[k + 1]] for k in range(n_coarse)]


def build_prolongation(coarse: DofSpace, fine: DofSpace) -> sp.csr_matrix:
    """Matrix whose column ``z`` holds the fine dof values of the coarse hat ``phi_z``."""
    full = vertex_prolongation(coarse.mesh, fine.mesh)
    return full[fine.free_nodes][:, coarse.free_nodes].tocsr()


@dataclass(frozen=True, eq=False)
class TransferPair:
    fine: DofSpace
    coarse: DofSpace
    prolong: sp.csr_matrix
    interp: sp.csr_matrix
    kind: str

    @cached_property
    def ancestors(self) -> np.ndarray:
        return ancestor_map(self.fine.mesh, self.coarse.mesh)

    @cached_property
    def fine_mass(self) -> sp.csr_matrix:
        return hermitian_energy_matrices(self.fine)[0]

    @cached_property
    def coarse_mass(self) -> sp.csr_matrix:
        return (self.prolong.T @ self.fine_mass @ self.prolong).tocsr()

    @cached_property
    def fine_elements_of(self) -> list[np.ndarray]:
        return group_by_ancestor(self.ancestors, self.coarse.mesh.n_elements)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Coarse coefficients of the quasi-interpolant of fine ``v``."""
        return self.interp @ v

    def projection(self, v: np.ndarray) -> np.ndarray:
        """``(I_H restricted to V_H)^{-1} I_H v`` in coarse coefficients."""
        restricted = (self.interp @ self.prolong).toarray()
        return np.linalg.solve(restricted, self.interp @ v)


def build_clement(coarse: DofSpace, fine: DofSpace, prolong=None) -> sp.csr_matrix:
    """Weighted Clement functionals as rows acting on fine coefficients."""
    if prolong is None:
        prolong = build_prolongation(coarse, fine)
    loc = LocalMatrices.of(fine.mesh)
    # integral of each fine hat, Dirichlet vertices included
    hat_integrals = np.zeros(fine.mesh.n_vertices)
    np.add.at(hat_integrals, fine.mesh.elements, loc.mass.sum(axis=2))
    full_prolong = vertex_prolongation(coarse.mesh, fine.mesh)[:, coarse.free_nodes]
    weights = full_prolong.T @ hat_integrals
    mass = hermitian_energy_matrices(fine)[0]
    rows = sp.diags(1.0 / weights) @ (prolong.T @ mass)
    return rows.tocsr()


def build_projective(coarse: DofSpace, fine: DofSpace) -> sp.csr_matrix:
    """Functionals ``v -> (local L2 projection of v on supp phi_z)(z)``."""
    cmesh, fmesh = coarse.mesh, fine.mesh
    full_prolong = vertex_prolongation(cmesh, fmesh).tocsc()
    children = group_by_ancestor(ancestor_map(fmesh, cmesh), cmesh.n_elements)
    loc = LocalMatrices.of(fmesh)
    k = fmesh.dim + 1
    inc = cmesh.vertex_element
    out_rows, out_cols, out_vals = [], [], []
    for row, z in enumerate(coarse.free_nodes):
        celems = inc[z].indices
        cverts = np.unique(cmesh.elements[celems])
        felems = np.concatenate([children[c] for c in celems])
        conn = fmesh.elements[felems]
        local = np.unique(conn)
        pos = np.searchsorted(local, conn)
        mass = sp.coo_matrix((loc.mass[felems].ravel(),
                              (np.repeat(pos, k, axis=1).ravel(), np.tile(pos, (1, k)).ravel())),
                             shape=(local.size, local.size)).tocsr()
        hats = full_prolong[local][:, cverts].toarray()  # (local fine verts, local coarse verts)
        rhs = hats.T @ mass  # (coarse local, fine local)
        gram = hats.T @ (mass @ hats)
        zi = int(np.searchsorted(cverts, z))
        try:
            weights = sla.solve(gram, np.eye(cverts.size)[zi], assume_a="pos")
        except (sla.LinAlgError, ValueError) as exc:
            raise ArithmeticError(f"singular local Gram matrix at coarse vertex {z}") from exc
        vals = weights @ rhs
        dofs = fine.node_to_dof[local]
        keep = (dofs >= 0) & (np.abs(vals) > 0)
        out_rows.append(np.full(keep.sum(), row))
        out_cols.append(dofs[keep])
        out_vals.append(vals[keep])
    return sp.csr_matrix((np.concatenate(out_vals), (np.concatenate(out_rows), np.concatenate(out_cols))),
                         shape=(coarse.n_dofs, fine.n_dofs))


def build_transfer(coarse: DofSpace, fine: DofSpace, kind: str = CLEMENT) -> TransferPair:
    if kind not in KINDS:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    prolong = build_prolongation(coarse, fine)
    if kind == CLEMENT:
        interp = build_clement(coarse, fine, prolong)
    else:
        interp = build_projective(coarse, fine)
    return TransferPair(fine, coarse, prolong, interp, kind)


def l2_projection(pair: TransferPair, v_fine: np.ndarray) -> np.ndarray:
    """Coarse coefficients of the L2-orthogonal projection of ``v_fine``."""
    rhs = pair.prolong.T @ (pair.fine_mass @ v_fine)
    return spla.spsolve(pair.coarse_mass.tocsc(), rhs)


def patch_fine_dofs(pair: TransferPair, patch: Patch) -> np.ndarray:
    """Fine dofs that may be nonzero for functions vanishing outside ``patch``.

    These are the non-Dirichlet fine vertices of the patch minus those on the
    artificial boundary shared with elements outside the patch.
    """
    fmesh = pair.fine.mesh
    inside = np.zeros(pair.coarse.mesh.n_elements, dtype=bool)
    inside[patch.elements] = True
    fine_inside = inside[pair.ancestors]
    touched_in = np.zeros(fmesh.n_vertices, dtype=bool)
    touched_in[fmesh.elements[fine_inside]] = True
    touched_out = np.zeros(fmesh.n_vertices, dtype=bool)
    touched_out[fmesh.elements[~fine_inside]] = True
    dofs = pair.fine.node_to_dof[touched_in & ~touched_out]
    return np.sort(dofs[dofs >= 0])


def kernel_constraint_rows(pair: TransferPair, patch: Patch, fine_dofs=None):
    """Constraint block for the remainder space on ``patch``.

    Returns ``(rows, coarse_dofs)``: the interpolation functionals of the
    non-Dirichlet coarse vertices in the closed patch, restricted to the columns
    ``fine_dofs`` (the patch dofs by default).  Rows that vanish identically on
    those columns are dropped.
    """
    if fine_dofs is None:
        fine_dofs = patch_fine_dofs(pair, patch)
    cdofs = pair.coarse.node_to_dof[patch.vertex_set]
    cdofs = np.sort(cdofs[cdofs >= 0])
    block = pair.interp[cdofs][:, fine_dofs].tocsr()
    block.eliminate_zeros()
    nonzero = np.diff(block.indptr) > 0
    return block[nonzero], cdofs[nonzero]
