"""Localized element correctors and the corrected multiscale bases.

For a coarse element ``T``, a vertex ``y`` of ``T`` and an oversampling order
``ell``, the element corrector is the function ``c`` in the remainder space on
the patch around ``T`` with ``a_patch(c, w) = a_T(phi_y, w)`` for all ``w`` in
that space.  The remainder constraints are imposed with Lagrange multipliers
and every patch system is factorized once for all vertices of ``T``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import assemble_form
from .interpolation import TransferPair, kernel_constraint_rows, patch_fine_dofs
from .mesh import Patch, build_patch


class CorrectorError(ArithmeticError):
    pass


class CorrectorForms:
    """Fine matrices shared by all corrector problems for one wave number."""

    def __init__(self, pair: TransferPair, kappa: float):
        self.pair = pair
        self.kappa = kappa
        self.matrix = assemble_form(pair.fine, kappa).tocsr()

    def element_matrix(self, T: int) -> sp.csr_matrix:
        return assemble_form(self.pair.fine, self.kappa, self.pair.fine_elements_of[T])

    def element_rhs(self, T: int, vertices) -> np.ndarray:
        """Columns ``A_T phi_y`` for the given coarse vertices of ``T``."""
        cdofs = self.pair.coarse.node_to_dof[np.asarray(vertices)]
        hats = self.pair.prolong[:, cdofs]
        return np.asarray((self.element_matrix(T) @ hats).todense())

    def patch(self, T: int, ell: int | None) -> Patch:
        mesh = self.pair.coarse.mesh
        return build_patch(mesh, T, mesh.n_elements if ell is None else ell)


def _free_vertices(pair: TransferPair, T: int) -> np.ndarray:
    verts = pair.coarse.mesh.elements[T]
    return verts[pair.coarse.node_to_dof[verts] >= 0]


def solve_patch_system(forms: CorrectorForms, patch: Patch, rhs_full: np.ndarray,
                       adjoint: bool = False):
    """Solve the constrained patch problem for several right-hand sides.

    ``rhs_full`` holds fine-dof right-hand sides as columns.  Returns
    ``(dofs, x)`` with ``x[:, k]`` the patch coefficients of the k-th solution.
    With ``adjoint=True`` the Hermitian transpose of the patch matrix is used.
    """
    pair = forms.pair
    dofs = patch_fine_dofs(pair, patch)
    a_patch = forms.matrix[dofs][:, dofs]
    if adjoint:
        a_patch = a_patch.conj().T
    rows, _ = kernel_constraint_rows(pair, patch, dofs)
    kkt = sp.bmat([[a_patch, rows.T], [rows, None]], format="csc").astype(complex)
    rhs = np.zeros((kkt.shape[0], rhs_full.shape[1]), dtype=complex)
    rhs[:dofs.size] = rhs_full[dofs]
    try:
        lu = spla.splu(kkt)
        sol = lu.solve(rhs)
    except RuntimeError as exc:
        raise CorrectorError(
            f"singular corrector system on the patch of element {patch.center_element} "
            f"(order {patch.order})") from exc
    if not np.all(np.isfinite(sol)):
        raise CorrectorError(f"non-finite corrector on the patch of element {patch.center_element}")
    return dofs, sol[:dofs.size]


def _embed(n: int, dofs: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.zeros(n, dtype=complex)
    out[dofs] = values
    return out


def solve_element_corrector(forms: CorrectorForms, T: int, y: int, ell: int | None) -> np.ndarray:
    """Fine coefficients of the element corrector of ``phi_y`` on element ``T``.

    ``y`` is a coarse vertex index; if it is not a vertex of ``T`` the
    corrector is zero.  ``ell=None`` uses the whole domain as patch.
    """
    n = forms.pair.fine.n_dofs
    if y not in forms.pair.coarse.mesh.elements[T]:
        return np.zeros(n, dtype=complex)
    if forms.pair.coarse.node_to_dof[y] < 0:
        raise ValueError(f"vertex {y} is a Dirichlet vertex")
    patch = forms.patch(T, ell)
    try:
        dofs, x = solve_patch_system(forms, patch, forms.element_rhs(T, [y]))
    except CorrectorError as exc:
        raise CorrectorError(f"{exc} [T={T}, y={y}]") from exc
    return _embed(n, dofs, x[:, 0])


def solve_adjoint_element_corrector(forms: CorrectorForms, T: int, y: int, ell: int | None) -> np.ndarray:
    """Solve ``a(w, c) = a_T(w, phi_y)`` directly on the patch (no conjugation trick)."""
    n = forms.pair.fine.n_dofs
    patch = forms.patch(T, ell)
    cdof = forms.pair.coarse.node_to_dof[y]
    hat = forms.pair.prolong[:, [cdof]]
    rhs = np.asarray((forms.element_matrix(T).conj().T @ hat).todense())
    dofs, x = solve_patch_system(forms, patch, rhs, adjoint=True)
    return _embed(n, dofs, x[:, 0])


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    pair: TransferPair
    kappa: float
    ell: int | None
    columns: sp.csc_matrix
    per_element: dict | None = None

    @property
    def coarse_space(self):
        return self.pair.coarse

    @property
    def fine_space(self):
        return self.pair.fine

    @cached_property
    def trial_columns(self) -> sp.csc_matrix:
        return (self.pair.prolong.astype(complex) - self.columns).tocsc()


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    trial_columns: sp.csc_matrix
    test_columns: sp.csc_matrix

    @property
    def n_coarse(self) -> int:
        return self.trial_columns.shape[1]


def _solve_element(forms: CorrectorForms, ell, T: int):
    verts = _free_vertices(forms.pair, T)
    if verts.size == 0:
        return T, verts, np.zeros(0, dtype=np.int64), np.zeros((0, 0), dtype=complex)
    patch = forms.patch(T, ell)
    try:
        dofs, x = solve_patch_system(forms, patch, forms.element_rhs(T, verts))
    except CorrectorError as exc:
        raise CorrectorError(f"{exc} [T={T}, y={verts.tolist()}]") from exc
    return T, verts, dofs, x


def assemble_corrector_set(pair: TransferPair, kappa: float, ell: int | None,
                           workers: int = 1, keep_elements: bool = False,
                           forms: CorrectorForms | None = None) -> CorrectorSet:
    """Solve all element correctors and sum them per coarse vertex.

    Contributions are accumulated in ascending element order whatever the
    number of workers, so the result is bit-identical across worker counts.
    """
    if forms is None:
        forms = CorrectorForms(pair, kappa)
    elements = range(pair.coarse.mesh.n_elements)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda T: _solve_element(forms, ell, T), elements))
    else:
        results = [_solve_element(forms, ell, T) for T in elements]

    rows, cols, vals = [], [], []
    per_element = {} if keep_elements else None
    node_to_dof = pair.coarse.node_to_dof
    for T, verts, dofs, x in results:
        for k, y in enumerate(verts):
            rows.append(dofs)
            cols.append(np.full(dofs.size, node_to_dof[y]))
            vals.append(x[:, k])
            if keep_elements:
                per_element[(T, int(y))] = sp.csc_matrix(
                    (x[:, k], (dofs, np.zeros(dofs.size, dtype=np.int64))), shape=(pair.fine.n_dofs, 1))
    shape = (pair.fine.n_dofs, pair.coarse.n_dofs)
    if rows:
        columns = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=shape).tocsc()
    else:
        columns = sp.csc_matrix(shape, dtype=complex)
    return CorrectorSet(pair, kappa, ell, columns, per_element)


def conjugate_test_basis(cset: CorrectorSet) -> MultiscaleBasis:
    hats = cset.pair.prolong.astype(complex)
    trial = (hats - cset.columns).tocsc()
    test = (hats - cset.columns.conj()).tocsc()
    return MultiscaleBasis(trial, test)


def element_gradient_energy(pair: TransferPair, u: np.ndarray) -> np.ndarray:
    """Squared gradient norm of fine ``u`` on every coarse element."""
    full = pair.fine.embed(u)
    conn = pair.fine.mesh.elements
    loc = pair.fine.local.stiffness
    vals = np.einsum("ei,eij,ej->e", full[conn].conj(), loc, full[conn]).real
    return np.bincount(pair.ancestors, weights=vals, minlength=pair.coarse.mesh.n_elements)


@dataclass(frozen=True)
class DecayProfile:
    T: int
    y: int
    orders: np.ndarray
    tails: np.ndarray
    total: float
    beta: float
    fit_points: int

    @property
    def fit_ok(self) -> bool:
        return self.fit_points >= 3


def decay_profile(pair: TransferPair, kappa: float, T: int, y: int, floor: float = 1e-13,
                  forms: CorrectorForms | None = None) -> DecayProfile:
    """Tail energies of the global element corrector outside growing patches.

    Tails at or below ``floor`` times the full gradient norm are left out of the
    least-squares fit of ``log(tail)`` against the patch order.
    """
    if forms is None:
        forms = CorrectorForms(pair, kappa)
    c = solve_element_corrector(forms, T, y, None)
    energy = element_gradient_energy(pair, c)
    total = float(np.sqrt(energy.sum()))
    orders, tails = [], []
    ell = 1
    while True:
        patch = build_patch(pair.coarse.mesh, T, ell)
        outside = np.ones(energy.size, dtype=bool)
        outside[patch.elements] = False
        orders.append(ell)
        tails.append(float(np.sqrt(energy[outside].sum())))
        if patch.is_full:
            break
        ell += 1
    orders, tails = np.array(orders), np.array(tails)
    usable = tails > floor * total
    if usable.sum() >= 2:
        slope = np.polyfit(orders[usable], np.log(tails[usable]), 1)[0]
        beta = float(np.exp(slope))
    else:
        beta = float("nan")
    return DecayProfile(T, y, orders, tails, total, beta, int(usable.sum()))


def write_corrector_set(cset: CorrectorSet, path) -> None:
    """Sparse dump: one ``node fine_index re im`` line per stored entry."""
    coo = cset.columns.tocoo()
    order = np.lexsort((coo.row, coo.col))
    nodes = cset.pair.coarse.free_nodes[coo.col[order]]
    lines = [f"# kappa={cset.kappa!r} ell={cset.ell} kind={cset.pair.kind} "
             f"shape={cset.columns.shape[0]}x{cset.columns.shape[1]}"]
    lines += [f"{z} {i} {v.real:.17g} {v.imag:.17g}"
              for z, i, v in zip(nodes, coo.row[order], coo.data[order])]
    Path(path).write_text("\n".join(lines) + "\n")


def read_corrector_set(path, pair: TransferPair) -> CorrectorSet:
    text = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in text[0].lstrip("# ").split())
    if meta["kind"] != pair.kind:
        raise ValueError(f"corrector file was built with {meta['kind']} interpolation")
    data = np.loadtxt(text[1:], ndmin=2) if len(text) > 1 else np.zeros((0, 4))
    nodes = data[:, 0].astype(np.int64)
    cols = pair.coarse.node_to_dof[nodes]
    columns = sp.coo_matrix((data[:, 2] + 1j * data[:, 3], (data[:, 1].astype(np.int64), cols)),
                            shape=(pair.fine.n_dofs, pair.coarse.n_dofs)).tocsc()
    ell = None if meta["ell"] == "None" else int(meta["ell"])
    return CorrectorSet(pair, float(meta["kappa"]), ell, columns)
