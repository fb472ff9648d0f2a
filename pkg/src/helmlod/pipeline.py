"""One sweep cell end to end: reference, correctors, every method, error reports."""
from __future__ import annotations

from dataclasses import dataclass, field

from .corrector import CorrectorForms, CorrectorSet, MultiscaleBasis, assemble_corrector_set, conjugate_test_basis
from .interpolation import CLEMENT
from .problems import Discretization, discretize
from .solver import (BEST_APPROX_V, MSPG, MSPG_STABILIZED, P1, ErrorMeter, SolveResult,
                     best_approximation_V, solve_ms_petrov_galerkin, solve_p1, solve_reference,
                     solve_stabilized_pg)

ALL_METHODS = (MSPG, BEST_APPROX_V, MSPG_STABILIZED, P1)


@dataclass
class Cell:
    disc: Discretization
    kappa: float
    ell: int | None
    reference: SolveResult
    meter: ErrorMeter
    load: object
    lifting: object
    cset: CorrectorSet | None = None
    basis: MultiscaleBasis | None = None
    results: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    def error(self, method: str) -> float:
        return self.reports[method].rel_V_error


def solve_cell(problem: str, kappa: float, H: float, h: float, ell: int | None, kind: str = CLEMENT,
               methods=ALL_METHODS, disc: Discretization | None = None, workers: int = 1) -> Cell:
    """Solve one (kappa, H, ell) point with shared correctors; errors propagate."""
    if disc is None:
        disc = discretize(problem, H, h, kind)
    pair = disc.pair
    forms = CorrectorForms(pair, kappa)
    matrix = forms.matrix
    load, lifting = disc.load(kappa)
    reference = solve_reference(pair.fine, kappa, load, matrix, lifting=lifting)
    cell = Cell(disc, kappa, ell, reference, ErrorMeter(pair.fine, kappa, reference), load, lifting)
    if any(m != P1 for m in methods):
        cell.cset = assemble_corrector_set(pair, kappa, ell, workers=workers, forms=forms)
        cell.basis = conjugate_test_basis(cell.cset)
    for method in methods:
        if method == P1:
            res = solve_p1(pair.prolong, matrix, load, kappa, H)
        elif method == MSPG:
            res = solve_ms_petrov_galerkin(cell.basis, matrix, load, kappa, H, ell)
        elif method == MSPG_STABILIZED:
            res = solve_stabilized_pg(pair.prolong, cell.basis, matrix, load, kappa, H, ell)
        elif method == BEST_APPROX_V:
            res = best_approximation_V(pair.fine, kappa, reference.fine_representation,
                                       cell.basis.trial_columns, H, ell)
        else:
            raise ValueError(f"unknown method {method!r}")
        res.lifting = lifting
        res.h = h
        cell.results[method] = res
        cell.reports[method] = cell.meter.report(res, pair.coarse.n_dofs)
    return cell

