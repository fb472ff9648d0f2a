"""Nested simplicial meshes of the unit interval and the unit square.

A :class:`Mesh` stores vertices, elements and labelled boundary facets.  Meshes
produced by :func:`uniform_refine` keep a link to their parent together with the
parent element of every child, which is all that is needed to build transfer
operators between levels.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ROBIN = "robin"
LABELS = (DIRICHLET, NEUMANN, ROBIN)

# right-isoceles scatterer used by the 2D scattering experiment
DEFAULT_SCATTERER = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75))


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    facet_labels: np.ndarray
    parent: Mesh | None = None
    parent_element: np.ndarray | None = None

    def __post_init__(self):
        for name in ("vertices", "elements", "facets", "facet_labels", "parent_element"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    @cached_property
    def measures(self) -> np.ndarray:
        """Signed element measures (length in 1D, area in 2D)."""
        x = self.vertices[self.elements]
        edges = x[:, 1:, :] - x[:, :1, :]
        if self.dim == 1:
            return edges[:, 0, 0]
        return 0.5 * (edges[:, 0, 0] * edges[:, 1, 1] - edges[:, 0, 1] * edges[:, 1, 0])

    @cached_property
    def element_diameters(self) -> np.ndarray:
        x = self.vertices[self.elements]
        k = self.dim + 1
        diam = np.zeros(self.n_elements)
        for i in range(k):
            for j in range(i + 1, k):
                diam = np.maximum(diam, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return diam

    @cached_property
    def facet_measures(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(self.n_facets)
        x = self.vertices[self.facets]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    @cached_property
    def shape_regularity(self) -> float:
        """Max circumradius/inradius ratio (2D); 1 for interval meshes."""
        if self.dim == 1:
            return 1.0
        x = self.vertices[self.elements]
        a = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
        b = np.linalg.norm(x[:, 0] - x[:, 2], axis=1)
        c = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
        area = np.abs(self.measures)
        s = 0.5 * (a + b + c)
        circum = a * b * c / (4.0 * area)
        inner = area / s
        return float(np.max(circum / inner))

    @cached_property
    def facet_owner(self) -> np.ndarray:
        """Index of the unique element containing each boundary facet."""
        keys = _face_keys(self.elements, self.n_vertices)
        fkeys = _sorted_key(self.facets, self.n_vertices)
        order = np.argsort(keys.ravel(), kind="stable")
        flat = keys.ravel()[order]
        pos = np.searchsorted(flat, fkeys)
        if np.any(pos >= flat.size) or np.any(flat[np.minimum(pos, flat.size - 1)] != fkeys):
            raise MeshError("boundary facet is not a face of any element")
        owner = order[pos] // (self.dim + 1)
        owner.setflags(write=False)
        return owner

    @cached_property
    def vertex_element(self) -> sp.csr_matrix:
        """Incidence matrix of shape (n_vertices, n_elements)."""
        ne, k = self.elements.shape
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(ne), k)
        return sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)),
                             shape=(self.n_vertices, ne))

    def vertices_with_label(self, label: str) -> np.ndarray:
        return np.unique(self.facets[self.facet_labels == label])

    @property
    def dirichlet_vertices(self) -> np.ndarray:
        return self.vertices_with_label(DIRICHLET)

    def label_measure(self, label: str) -> float:
        return float(self.facet_measures[self.facet_labels == label].sum())

    @property
    def h(self) -> float:
        return float(self.element_diameters.max())


@dataclass(frozen=True, eq=False)
class Patch:
    """Element patch of a given order around one element."""

    center_element: int
    order: int
    elements: np.ndarray
    vertex_set: np.ndarray
    boundary_robin_facets: np.ndarray
    n_mesh_elements: int

    @property
    def is_full(self) -> bool:
        return self.elements.size == self.n_mesh_elements

    def __len__(self):
        return int(self.elements.size)


def _sorted_key(faces: np.ndarray, nv: int) -> np.ndarray:
    f = np.sort(faces, axis=1).astype(np.int64)
    key = np.zeros(f.shape[0], dtype=np.int64)
    for col in range(f.shape[1]):
        key = key * nv + f[:, col]
    return key


def _face_keys(elements: np.ndarray, nv: int) -> np.ndarray:
    k = elements.shape[1]
    cols = []
    for skip in range(k):
        face = np.delete(elements, skip, axis=1)
        cols.append(_sorted_key(face, nv))
    return np.stack(cols, axis=1)


def _boundary_faces(elements: np.ndarray, nv: int) -> np.ndarray:
    k = elements.shape[1]
    faces = np.concatenate([np.delete(elements, skip, axis=1) for skip in range(k)])
    keys = _sorted_key(faces, nv)
    _, idx, counts = np.unique(keys, return_index=True, return_counts=True)
    return faces[np.sort(idx[counts == 1])]


def build_interval_mesh(n: int) -> Mesh:
    """Uniform mesh of (0, 1) with ``n`` elements and Robin conditions at both ends."""
    if n < 1:
        raise MeshError("an interval mesh needs at least one element")
    vertices = np.linspace(0.0, 1.0, n + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    facets = np.array([[0], [n]])
    return Mesh(vertices, elements, facets, np.array([ROBIN, ROBIN]))


def _point_in_triangle(p: np.ndarray, tri: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    a, b, c = tri
    mat = np.column_stack([b - a, c - a])
    lam = np.linalg.solve(mat, (p - a).T).T
    return (lam[:, 0] >= -tol) & (lam[:, 1] >= -tol) & (lam.sum(axis=1) <= 1 + tol)


def build_square_mesh(n: int, scatterer=None) -> Mesh:
    """Structured triangulation of the unit square with ``n`` cells per side.

    Every cell is cut along its anti-diagonal.  The outer boundary is Robin;
    when a triangular ``scatterer`` is given, the triangles it covers are removed
    and the new boundary edges are labelled Dirichlet.
    """
    if n < 1 or n & (n - 1):
        raise MeshError(f"subdivisions per side must be a power of two, got {n}")
    g = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([v00, v10, v01])
    elements[1::2] = np.column_stack([v10, v11, v01])

    if scatterer is not None:
        tri = np.asarray(scatterer, dtype=float)
        if tri.shape != (3, 2):
            raise MeshError("scatterer must be given by three 2D points")
        if np.any(np.abs(tri * n - np.round(tri * n)) > 1e-12):
            raise MeshError("scatterer vertices are not vertices of the grid")
        centroids = vertices[elements].mean(axis=1)
        inside = _point_in_triangle(centroids, tri)
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        removed_area = inside.sum() * 0.5 / n**2
        corners = vertices[elements[inside]].reshape(-1, 2)
        if abs(removed_area - area) > 1e-12 or not _point_in_triangle(corners, tri).all():
            raise MeshError("scatterer is not representable on this grid")
        elements = elements[~inside]
        used = np.unique(elements)
        remap = -np.ones(vertices.shape[0], dtype=np.int64)
        remap[used] = np.arange(used.size)
        vertices = vertices[used]
        elements = remap[elements]

    facets = _boundary_faces(elements, vertices.shape[0])
    mid = vertices[facets].mean(axis=1)
    outer = np.any((np.abs(mid) < 1e-12) | (np.abs(mid - 1.0) < 1e-12), axis=1)
    labels = np.where(outer, ROBIN, DIRICHLET)
    return Mesh(vertices, elements, facets, labels)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Bisect every interval, or split every triangle into four congruent ones."""
    nv = mesh.n_vertices
    if mesh.dim == 1:
        el = mesh.elements
        mids = 0.5 * (mesh.vertices[el[:, 0]] + mesh.vertices[el[:, 1]])
        m = nv + np.arange(mesh.n_elements)
        elements = np.empty((2 * mesh.n_elements, 2), dtype=np.int64)
        elements[0::2] = np.column_stack([el[:, 0], m])
        elements[1::2] = np.column_stack([m, el[:, 1]])
        vertices = np.vstack([mesh.vertices, mids])
        parent_element = np.repeat(np.arange(mesh.n_elements), 2)
        return Mesh(vertices, elements, mesh.facets.copy(), mesh.facet_labels.copy(),
                    parent=mesh, parent_element=parent_element)

    el = mesh.elements
    local_edges = ((0, 1), (1, 2), (2, 0))
    all_edges = np.concatenate([el[:, e] for e in local_edges])
    keys = _sorted_key(all_edges, nv)
    ukeys, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    edge_vertices = all_edges[first]
    mids = 0.5 * (mesh.vertices[edge_vertices[:, 0]] + mesh.vertices[edge_vertices[:, 1]])
    mid_index = (nv + inv).reshape(3, -1).T  # columns: m01, m12, m20
    a, b, c = el[:, 0], el[:, 1], el[:, 2]
    mab, mbc, mca = mid_index[:, 0], mid_index[:, 1], mid_index[:, 2]
    children = np.stack([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mab, mbc, mca]),
    ], axis=1).reshape(-1, 3)
    vertices = np.vstack([mesh.vertices, mids])

    fkeys = _sorted_key(mesh.facets, nv)
    fm = nv + np.searchsorted(ukeys, fkeys)
    facets = np.empty((2 * mesh.n_facets, 2), dtype=np.int64)
    facets[0::2] = np.column_stack([mesh.facets[:, 0], fm])
    facets[1::2] = np.column_stack([fm, mesh.facets[:, 1]])
    labels = np.repeat(mesh.facet_labels, 2)
    parent_element = np.repeat(np.arange(mesh.n_elements), 4)
    return Mesh(vertices, children, facets, labels, parent=mesh, parent_element=parent_element)


def refine_times(mesh: Mesh, times: int) -> Mesh:
    for _ in range(times):
        mesh = uniform_refine(mesh)
    return mesh


def ancestor_map(fine: Mesh, coarse: Mesh) -> np.ndarray:
    """Map each element of ``fine`` to the element of ``coarse`` containing it."""
    anc = np.arange(fine.n_elements)
    mesh = fine
    while mesh is not coarse:
        if mesh.parent is None:
            raise MeshError("fine mesh is not a refinement of the coarse mesh")
        anc = mesh.parent_element[anc]
        mesh = mesh.parent
    return anc


def build_patch(mesh: Mesh, T: int, ell: int) -> Patch:
    """Patch of order ``ell`` around element ``T`` grown through shared vertices."""
    if ell < 1:
        raise MeshError("patch order must be at least 1")
    inc = mesh.vertex_element
    elems = np.array([T])
    for _ in range(ell):
        verts = np.unique(mesh.elements[elems])
        grown = np.unique(inc[verts].indices)
        if grown.size == elems.size:
            break
        elems = grown
    verts = np.unique(mesh.elements[elems])
    in_patch = np.zeros(mesh.n_elements, dtype=bool)
    in_patch[elems] = True
    robin = np.flatnonzero(in_patch[mesh.facet_owner] & (mesh.facet_labels == ROBIN))
    return Patch(int(T), int(ell), elems, verts, robin, mesh.n_elements)


def patch_overlap_count(mesh: Mesh, ell: int) -> int:
    return max(len(build_patch(mesh, T, ell)) for T in range(mesh.n_elements))


def saturation_order(mesh: Mesh) -> int:
    """Smallest order for which every element patch is the whole mesh."""
    ell = 1
    while not all(build_patch(mesh, T, ell).is_full for T in range(mesh.n_elements)):
        ell += 1
    return ell


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements} {mesh.n_facets}"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in mesh.vertices]
    lines += [" ".join(str(int(v)) for v in row) for row in mesh.elements]
    lines += [" ".join(str(int(v)) for v in row) + f" {lab}"
              for row, lab in zip(mesh.facets, mesh.facet_labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = Path(path).read_text().split("\n")
    dim, nv, ne, nf = (int(t) for t in rows[0].split())
    vertices = np.array([[float(t) for t in r.split()] for r in rows[1:1 + nv]]).reshape(nv, dim)
    elements = np.array([[int(t) for t in r.split()] for r in rows[1 + nv:1 + nv + ne]],
                        dtype=np.int64).reshape(ne, dim + 1)
    frows = [r.split() for r in rows[1 + nv + ne:1 + nv + ne + nf]]
    facets = np.array([[int(t) for t in r[:-1]] for r in frows], dtype=np.int64).reshape(nf, dim)
    labels = np.array([r[-1] for r in frows])
    if not set(labels) <= set(LABELS):
        raise MeshError(f"unknown facet label in {path}")
    return Mesh(vertices, elements, facets, labels)
