"""Global solves on top of the corrected bases and their error reports."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .corrector import MultiscaleBasis
from .interpolation import vertex_prolongation
from .fem import DofSpace, assemble_form, energy_norm, hermitian_energy_matrices, l2_norm, vertex_matrices

MSPG = "MsPG"
MSPG_STABILIZED = "MsPG_stabilized"
P1 = "P1"
REFERENCE = "Reference"
BEST_APPROX_V = "BestApproxV"
METHODS = (MSPG, MSPG_STABILIZED, P1, REFERENCE, BEST_APPROX_V)

# incident direction of the 2D scattering experiment
INCIDENT_ANGLE = 0.5


class SolveError(ArithmeticError):
    pass


@dataclass
class SolveResult:
    method: str
    fine_representation: np.ndarray
    kappa: float
    H: float | None = None
    ell: int | None = None
    h: float | None = None
    coarse_solution: np.ndarray | None = None
    lifting: np.ndarray | None = None
    seconds: float = 0.0

    def total_field(self, space: DofSpace) -> np.ndarray:
        """Vertex values including the Dirichlet lifting, if any."""
        full = space.embed(self.fine_representation)
        if self.lifting is not None:
            full = full + self.lifting
        return full


@dataclass
class ErrorReport:
    rel_V_error: float
    rel_L2_error: float
    dofs_coarse: int | None
    dofs_fine: int
    timings: dict = field(default_factory=dict)


def _lu(matrix, what: str):
    try:
        return spla.splu(sp.csc_matrix(matrix, dtype=complex))
    except RuntimeError as exc:
        raise SolveError(f"{what}: {exc}") from exc


def solve_reference(space: DofSpace, kappa: float, load: np.ndarray, matrix=None,
                    lifting: np.ndarray | None = None) -> SolveResult:
    """Direct sparse solve of the full fine-scale Galerkin system."""
    t0 = time.perf_counter()
    if matrix is None:
        matrix = assemble_form(space, kappa)
    lu = _lu(matrix, "fine system is singular (is the reference problem well posed?)")
    u = lu.solve(np.asarray(load, dtype=complex))
    if not np.all(np.isfinite(u)):
        raise SolveError("fine system is singular (is the reference problem well posed?)")
    return SolveResult(REFERENCE, u, kappa, h=space.mesh.h, lifting=lifting,
                       seconds=time.perf_counter() - t0)


def _dense_solve(G: np.ndarray, g: np.ndarray, what: str) -> np.ndarray:
    try:
        lu, piv = sla.lu_factor(G, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise SolveError(what) from exc
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * max(np.abs(G).max(), 1e-300)):
        raise SolveError(what)
    return sla.lu_solve((lu, piv), g)


def solve_ms_petrov_galerkin(basis: MultiscaleBasis, matrix, load, kappa: float,
                             H=None, ell=None) -> SolveResult:
    """Petrov-Galerkin solve with corrected trial and test bases."""
    t0 = time.perf_counter()
    trial, test = basis.trial_columns, basis.test_columns
    G = (test.conj().T @ (matrix @ trial)).toarray()
    g = test.conj().T @ load
    c = _dense_solve(G, g, f"singular coarse Petrov-Galerkin matrix (kappa={kappa}, H={H}, ell={ell}); "
                           "the oversampling may be too small for stability")
    return SolveResult(MSPG, trial @ c, kappa, H=H, ell=ell, coarse_solution=c,
                       seconds=time.perf_counter() - t0)


def solve_p1(prolong, matrix, load, kappa: float, H=None) -> SolveResult:
    """Standard coarse Galerkin P1 solve, expressed through the fine forms."""
    t0 = time.perf_counter()
    G = (prolong.T @ (matrix @ prolong)).toarray()
    g = prolong.T @ load
    c = _dense_solve(G.astype(complex), g, f"singular coarse P1 matrix (kappa={kappa}, H={H})")
    return SolveResult(P1, prolong @ c, kappa, H=H, coarse_solution=c, seconds=time.perf_counter() - t0)


def solve_stabilized_pg(prolong, basis: MultiscaleBasis, matrix, load, kappa: float,
                        H=None, ell=None) -> SolveResult:
    """Petrov-Galerkin solve with P1 trial functions and corrected test functions."""
    t0 = time.perf_counter()
    test = basis.test_columns
    G = (test.conj().T @ (matrix @ prolong)).toarray()
    g = test.conj().T @ load
    c = _dense_solve(G, g, f"singular stabilized coarse matrix (kappa={kappa}, H={H}, ell={ell})")
    return SolveResult(MSPG_STABILIZED, prolong @ c, kappa, H=H, ell=ell, coarse_solution=c,
                       seconds=time.perf_counter() - t0)


def best_approximation_V(space: DofSpace, kappa: float, reference: np.ndarray, columns,
                         H=None, ell=None) -> SolveResult:
    """Best approximation of ``reference`` in the span of ``columns`` in the V-norm."""
    t0 = time.perf_counter()
    mass, stiff = hermitian_energy_matrices(space)
    energy = kappa**2 * mass + stiff
    cols = sp.csc_matrix(columns)
    gram = (cols.conj().T @ (energy @ cols)).toarray()
    rhs = cols.conj().T @ (energy @ reference)
    try:
        factor = sla.cho_factor(gram)
    except sla.LinAlgError as exc:
        raise SolveError("basis is rank deficient in the V inner product") from exc
    c = sla.cho_solve(factor, rhs)
    return SolveResult(BEST_APPROX_V, cols @ c, kappa, H=H, ell=ell, coarse_solution=c,
                       seconds=time.perf_counter() - t0)


def incident_wave(points: np.ndarray, kappa: float, angle: float = INCIDENT_ANGLE) -> np.ndarray:
    direction = np.array([math.cos(angle), math.sin(angle)])
    return np.exp(1j * kappa * (points @ direction))


def dirichlet_lifting(space: DofSpace, kappa: float, load: np.ndarray | None = None,
                      amplitude: complex = 1.0, angle: float = INCIDENT_ANGLE,
                      cutoff: np.ndarray | None = None):
    """Lifting of ``-u_inc`` on the Dirichlet vertices and the reduced load.

    Returns ``(u0, load)`` where ``u0 = -u_inc * cutoff`` at every vertex and
    the load becomes ``load - a(u0, phi_i)``.  ``cutoff`` must equal one on
    the Dirichlet vertices; by default it is their indicator, so ``u0``
    vanishes at all other vertices.  A cutoff that decays over one coarse layer
    (see :func:`coarse_cutoff`) keeps ``u0`` resolvable on the coarse scale.
    """
    mesh = space.mesh
    dverts = mesh.dirichlet_vertices
    if dverts.size == 0:
        raise ValueError("mesh has no Dirichlet boundary to lift")
    if cutoff is None:
        cutoff = np.zeros(mesh.n_vertices)
        cutoff[dverts] = 1.0
    elif not np.allclose(cutoff[dverts], 1.0, rtol=0, atol=1e-12):
        raise ValueError("cutoff must equal one on the Dirichlet boundary")
    u0 = -amplitude * cutoff * incident_wave(mesh.vertices, kappa, angle)
    if load is None:
        load = np.zeros(space.n_dofs, dtype=complex)
    return u0, load - _lifting_action(space, kappa, u0)


def coarse_cutoff(pair) -> np.ndarray:
    """Fine vertex values of the sum of coarse hats of the coarse Dirichlet vertices."""
    full = vertex_prolongation(pair.coarse.mesh, pair.fine.mesh)
    indicator = np.zeros(pair.coarse.mesh.n_vertices)
    indicator[pair.coarse.mesh.dirichlet_vertices] = 1.0
    return full @ indicator


def _lifting_action(space: DofSpace, kappa: float, u0: np.ndarray) -> np.ndarray:
    """``a(u0, phi_i)`` for every free dof ``i``."""
    loc = space.local
    mesh = space.mesh
    conn = mesh.elements
    blocks = loc.stiffness - kappa**2 * loc.mass
    out = np.zeros(mesh.n_vertices, dtype=complex)
    np.add.at(out, conn, np.einsum("eij,ej->ei", blocks, u0[conn]))
    fconn = loc.robin_facets
    if fconn.size:
        np.add.at(out, fconn, -1j * kappa * np.einsum("eij,ej->ei", loc.robin_mass, u0[fconn]))
    return space.restrict(out)


class ErrorMeter:
    """Relative V and L2 errors against a fixed reference field."""

    def __init__(self, space: DofSpace, kappa: float, reference: SolveResult):
        self.space = space
        self.kappa = kappa
        self.mass, self.stiff = vertex_matrices(space.mesh)
        self.reference = reference.total_field(space)
        self.ref_v = energy_norm(self.mass, self.stiff, kappa, self.reference)
        self.ref_l2 = l2_norm(self.mass, self.reference)
        if self.ref_v == 0.0:
            raise ValueError("reference solution has zero norm")

    def report(self, result: SolveResult, dofs_coarse=None, timings=None) -> ErrorReport:
        diff = self.reference - result.total_field(self.space)
        return ErrorReport(
            energy_norm(self.mass, self.stiff, self.kappa, diff) / self.ref_v,
            l2_norm(self.mass, diff) / self.ref_l2,
            dofs_coarse,
            self.space.n_dofs,
            dict(timings or {}),
        )


def error_report(result: SolveResult, reference: SolveResult, space: DofSpace,
                 dofs_coarse=None) -> ErrorReport:
    if result.kappa != reference.kappa:
        raise ValueError("result and reference were computed for different wave numbers")
    return ErrorMeter(space, reference.kappa, reference).report(result, dofs_coarse)
