import numpy as np
import pytest

from helmlod.fem import DofSpace
from helmlod.interpolation import (CLEMENT, PROJECTIVE, build_prolongation,
                                   kernel_constraint_rows, l2_projection, patch_fine_dofs)
from helmlod.mesh import (DEFAULT_SCATTERER, MeshError, ancestor_map, build_interval_mesh, build_patch,
                          build_square_mesh, refine_times)

from conftest import make_pair, random_complex


# ---- independent quadrature helpers ----------------------------------------

def quad_points(mesh):
    """Points, weights and owning element of a rule exact for quadratics."""
    x = mesh.vertices[mesh.elements]
    vol = np.abs(mesh.measures)
    if mesh.dim == 1:
        pts = np.stack([x[:, 0], 0.5 * (x[:, 0] + x[:, 1]), x[:, 1]], axis=1)
        w = vol[:, None] * np.array([1, 4, 1]) / 6
    else:
        pts = np.stack([0.5 * (x[:, 0] + x[:, 1]), 0.5 * (x[:, 1] + x[:, 2]), 0.5 * (x[:, 2] + x[:, 0])], axis=1)
        w = vol[:, None] * np.ones(3) / 3
    owner = np.repeat(np.arange(mesh.n_elements), pts.shape[1])
    return pts.reshape(-1, mesh.dim), w.ravel(), owner


def eval_p1(mesh, values, pts, owner):
    """Evaluate a P1 vertex vector at points located in the given elements."""
    out = np.zeros(len(pts), dtype=np.result_type(values, float))
    for k, (p, e) in enumerate(zip(pts, owner)):
        x = mesh.vertices[mesh.elements[e]]
        lam_rest = np.linalg.solve((x[1:] - x[0]).T, p - x[0])
        lam = np.concatenate([[1 - lam_rest.sum()], lam_rest])
        out[k] = lam @ values[mesh.elements[e]]
    return out


def coarse_hat_at(pair, z, pts, fine_owner):
    coarse = pair.coarse.mesh
    anc = ancestor_map(pair.fine.mesh, coarse)
    vals = np.zeros(coarse.n_vertices)
    vals[z] = 1.0
    return eval_p1(coarse, vals, pts, anc[fine_owner])


# ---- prolongation -----------------------------------------------------------

def test_prolongation_bisection():
    coarse = build_interval_mesh(4)
    fine = refine_times(coarse, 1)
    P = build_prolongation(DofSpace(coarse), DofSpace(fine)).toarray()
    col = P[:, 2]
    order = np.argsort(fine.vertices[:, 0])
    assert np.allclose(col[order], [0, 0, 0, 0.5, 1, 0.5, 0, 0, 0])


def test_prolongation_identity_and_constants(pair_2d):
    mesh = build_square_mesh(4)
    same = build_prolongation(DofSpace(mesh), DofSpace(mesh)).toarray()
    assert np.allclose(same, np.eye(same.shape[0]))
    ones = pair_2d.prolong @ np.ones(pair_2d.coarse.n_dofs)
    assert np.allclose(ones, 1)


def test_prolongation_rejects_unrelated_meshes():
    with pytest.raises(MeshError):
        build_prolongation(DofSpace(build_interval_mesh(4)), DofSpace(build_interval_mesh(8)))


# ---- Clement ---------------------------------------------------------------

def test_clement_constants_and_not_projection(pair_1d):
    I = pair_1d.interp
    assert np.allclose(I @ np.ones(pair_1d.fine.n_dofs), 1)
    restricted = (I @ pair_1d.prolong).toarray()
    assert not np.allclose(restricted, np.eye(restricted.shape[0]))


@pytest.mark.parametrize("which", ["1d", "2d_scatter"])
def test_clement_matches_quadrature(which, rng, pair_1d, pair_2d_scatter):
    pair = pair_1d if which == "1d" else pair_2d_scatter
    fine = pair.fine.mesh
    pts, w, owner = quad_points(fine)
    V = np.stack([random_complex(rng, pair.fine.n_dofs) for _ in range(100)], axis=1)
    got = pair.interp @ V
    vals = np.stack([eval_p1(fine, pair.fine.embed(V[:, j]), pts, owner) for j in range(100)], axis=1)
    for row, z in enumerate(pair.coarse.free_nodes):
        hat = coarse_hat_at(pair, z, pts, owner)
        expected = (w * hat) @ vals / (w @ hat)
        assert np.max(np.abs(got[row] - expected)) <= 1e-12 * np.max(np.abs(expected))


# ---- projective --------------------------------------------------------------

def test_projective_reproduces_constants_and_affine():
    pair = make_pair(build_square_mesh(4), 2, PROJECTIVE)
    fine = pair.fine.mesh
    assert np.allclose(pair.interp @ np.ones(pair.fine.n_dofs), 1)
    affine = pair.fine.restrict(1.0 + 2.0 * fine.vertices[:, 0] - 3.0 * fine.vertices[:, 1])
    zs = pair.coarse.free_nodes
    exact = 1.0 + 2.0 * pair.coarse.mesh.vertices[zs, 0] - 3.0 * pair.coarse.mesh.vertices[zs, 1]
    # the patch of every vertex supports all affine functions, even at the boundary
    assert np.allclose(pair.interp @ affine, exact, atol=1e-12)


def test_projective_matches_dense_least_squares(rng):
    pair = make_pair(build_square_mesh(4, DEFAULT_SCATTERER), 2, PROJECTIVE)
    cmesh, fine = pair.coarse.mesh, pair.fine.mesh
    anc = ancestor_map(fine, cmesh)
    pts, w, owner = quad_points(fine)
    v = random_complex(rng, pair.fine.n_dofs)
    vals = eval_p1(fine, pair.fine.embed(v), pts, owner)
    got = pair.interp @ v
    for row, z in enumerate(pair.coarse.free_nodes):
        celems = np.flatnonzero(np.any(cmesh.elements == z, axis=1))
        sel = np.isin(anc[owner], celems)
        cverts = np.unique(cmesh.elements[celems])
        basis = np.stack([coarse_hat_at(pair, y, pts[sel], owner[sel]) for y in cverts], axis=1)
        sw = np.sqrt(w[sel])
        coef, *_ = np.linalg.lstsq(sw[:, None] * basis, sw * vals[sel], rcond=None)
        assert got[row] == pytest.approx(coef[list(cverts).index(z)], rel=1e-10, abs=1e-12)


def test_kinds_agree_on_affine_at_interior_nodes():
    c = make_pair(build_square_mesh(4), 2, CLEMENT)
    q = make_pair(build_square_mesh(4), 2, PROJECTIVE)
    fine = c.fine.mesh
    v = c.fine.restrict(0.5 - fine.vertices[:, 0] + 4.0 * fine.vertices[:, 1])
    cv = c.coarse.mesh.vertices[c.coarse.free_nodes]
    interior = np.all((cv > 1e-12) & (cv < 1 - 1e-12), axis=1)
    assert np.allclose((c.interp @ v)[interior], (q.interp @ v)[interior], atol=1e-12)


# ---- projections -------------------------------------------------------------

def test_l2_projection_identities(pair_2d, rng):
    c = random_complex(rng, pair_2d.coarse.n_dofs)
    assert np.allclose(l2_projection(pair_2d, pair_2d.prolong @ c), c, atol=1e-12)
    # remove the coarse part to get something L2-orthogonal to the coarse space
    v = random_complex(rng, pair_2d.fine.n_dofs)
    w = v - pair_2d.prolong @ l2_projection(pair_2d, v)
    assert np.max(np.abs(l2_projection(pair_2d, w))) < 1e-12 * np.max(np.abs(v))


def test_l2_projection_minimal(pair_2d, rng):
    M = pair_2d.fine_mass
    v = random_complex(rng, pair_2d.fine.n_dofs)
    best = l2_projection(pair_2d, v)

    def dist(c):
        d = v - pair_2d.prolong @ c
        return np.sqrt(np.vdot(d, M @ d).real)

    d0 = dist(best)
    for _ in range(100):
        assert dist(best + 1e-3 * random_complex(rng, best.size)) >= d0


def test_projection_identity(kind, rng):
    pair = make_pair(build_square_mesh(4, DEFAULT_SCATTERER), 2, kind)
    V = np.stack([random_complex(rng, pair.fine.n_dofs) for _ in range(100)], axis=1)
    P1 = np.stack([pair.projection(V[:, j]) for j in range(100)], axis=1)
    P2 = np.stack([pair.projection(pair.prolong @ P1[:, j]) for j in range(100)], axis=1)
    assert np.max(np.abs(P2 - P1)) <= 1e-10 * np.max(np.abs(P1))
    if kind == CLEMENT:
        L2 = np.stack([l2_projection(pair, V[:, j]) for j in range(100)], axis=1)
        assert np.max(np.abs(L2 - P1)) <= 1e-10 * np.max(np.abs(P1))


def test_interp_invertible_on_coarse_space(kind, pair_1d):
    pair = make_pair(build_interval_mesh(8), 3, kind)
    restricted = (pair.interp @ pair.prolong).toarray()
    assert np.linalg.cond(restricted) < 1e3


# ---- constraints ---------------------------------------------------------------

def test_constraints_whole_domain(pair_2d_scatter):
    mesh = pair_2d_scatter.coarse.mesh
    patch = build_patch(mesh, 0, mesh.n_elements)
    rows, cdofs = kernel_constraint_rows(pair_2d_scatter, patch)
    assert (rows != pair_2d_scatter.interp).nnz == 0
    assert np.array_equal(cdofs, np.arange(pair_2d_scatter.coarse.n_dofs))


def test_constraints_count_and_outside_support(kind):
    pair = make_pair(build_square_mesh(8, DEFAULT_SCATTERER), 1, kind)
    mesh = pair.coarse.mesh
    for T in (0, 40, mesh.n_elements - 1):
        patch = build_patch(mesh, T, 1)
        dofs = patch_fine_dofs(pair, patch)
        rows, cdofs = kernel_constraint_rows(pair, patch)
        free = [z for z in patch.vertex_set if pair.coarse.node_to_dof[z] >= 0]
        assert rows.shape == (len(free), dofs.size) == (cdofs.size, dofs.size)
        # a fine function living off the patch has zero constraint values
        v = np.random.default_rng(T).standard_normal(pair.fine.n_dofs)
        v[dofs] = 0
        assert np.all(rows @ v[dofs] == 0)
        # and every constraint row touches the patch
        assert np.all(np.diff(rows.indptr) > 0)


def test_kernel_dimension(kind):
    pair = make_pair(build_square_mesh(4, DEFAULT_SCATTERER), 1, kind)
    I = pair.interp.toarray()
    assert np.linalg.matrix_rank(I) == pair.coarse.n_dofs
    null = pair.fine.n_dofs - np.linalg.matrix_rank(I)
    assert null == pair.fine.n_dofs - pair.coarse.n_dofs


def _approx_constant(levels, rng):
    coarse = build_interval_mesh(8)
    pair = make_pair(coarse, levels)
    fine = pair.fine.mesh
    x = fine.vertices[pair.fine.free_nodes, 0]
    Hs = coarse.element_diameters
    loc = pair.fine.local
    worst = 0.0
    for _ in range(100):
        freq = rng.uniform(0, 20)
        v = np.sin(freq * x + rng.uniform(0, 6)) + 0.1 * rng.standard_normal(x.size)
        err = pair.fine.embed(v - pair.prolong @ (pair.interp @ v))
        full = pair.fine.embed(v)
        conn = fine.elements
        el_l2 = np.einsum("ei,eij,ej->e", err[conn].conj(), loc.mass, err[conn]).real
        el_grad = np.einsum("ei,eij,ej->e", full[conn].conj(), loc.stiffness, full[conn]).real
        l2_T = np.bincount(pair.ancestors, weights=el_l2, minlength=coarse.n_elements)
        grad_T = np.bincount(pair.ancestors, weights=el_grad, minlength=coarse.n_elements)
        for T in range(coarse.n_elements):
            patch = build_patch(coarse, T, 1).elements
            ratio = np.sqrt(l2_T[T]) / (Hs[T] * np.sqrt(grad_T[patch].sum()))
            worst = max(worst, ratio)
    return worst


def test_clement_approximation_constant_stable_under_refinement():
    c_coarse = _approx_constant(2, np.random.default_rng(1))
    c_fine = _approx_constant(4, np.random.default_rng(1))
    assert c_fine <= 1.1 * c_coarse
    assert c_coarse < 5
