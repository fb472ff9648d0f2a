"""Model problems: two radiating sources in 1D and scattering from a triangle in 2D."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fem import DofSpace, assemble_form, assemble_load_pieces_1d
from .interpolation import CLEMENT, TransferPair, build_transfer
from .mesh import DEFAULT_SCATTERER, build_interval_mesh, build_square_mesh, refine_times

TWO_SOURCES_1D = "two_sources_1d"
SCATTERING_2D = "scattering_2d"
PROBLEMS = (TWO_SOURCES_1D, SCATTERING_2D)

SOURCE_VALUE = 2.0 * math.sqrt(2.0)
SOURCE_PIECES = ((3 / 16, 5 / 16, SOURCE_VALUE), (11 / 16, 13 / 16, SOURCE_VALUE))


def two_sources(x) -> np.ndarray:
    """Right-hand side of the 1D experiment."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for a, b, value in SOURCE_PIECES:
        out[(x >= a) & (x <= b)] = value
    return out


def levels_between(H: float, h: float) -> int:
    ratio = H / h
    levels = int(round(math.log2(ratio)))
    if levels < 0 or abs(2.0**levels - ratio) > 1e-9 * ratio:
        raise ValueError(f"fine width {h} is not a power-of-two refinement of {H}")
    return levels


@dataclass(eq=False)
class Discretization:
    """Coarse and fine spaces of one experiment together with their data."""

    problem: str
    H: float
    h: float
    pair: TransferPair

    @property
    def coarse(self) -> DofSpace:
        return self.pair.coarse

    @property
    def fine(self) -> DofSpace:
        return self.pair.fine

    @cached_property
    def _load_1d(self):
        return assemble_load_pieces_1d(self.fine, SOURCE_PIECES)

    def matrix(self, kappa: float):
        return assemble_form(self.fine, kappa)

    def load(self, kappa: float):
        """Return ``(load, lifting)`` on the fine dofs; ``lifting`` may be None."""
        if self.problem == TWO_SOURCES_1D:
            return self._load_1d, None
        # deferred import: solver depends on corrector, which needs this module's callers only
        from .solver import coarse_cutoff, dirichlet_lifting
        u0, load = dirichlet_lifting(self.fine, kappa, cutoff=coarse_cutoff(self.pair))
        return load, u0


def coarse_mesh(problem: str, H: float):
    n = int(round(1.0 / H))
    if abs(n * H - 1.0) > 1e-12:
        raise ValueError(f"coarse width {H} does not divide the unit length")
    if problem == TWO_SOURCES_1D:
        return build_interval_mesh(n)
    if problem == SCATTERING_2D:
        return build_square_mesh(n, DEFAULT_SCATTERER)
    raise ValueError(f"unknown problem {problem!r}")


def discretize(problem: str, H: float, h: float, kind: str = CLEMENT) -> Discretization:
    coarse = coarse_mesh(problem, H)
    fine = refine_times(coarse, levels_between(H, h))
    pair = build_transfer(DofSpace(coarse), DofSpace(fine), kind)
    return Discretization(problem, H, h, pair)
