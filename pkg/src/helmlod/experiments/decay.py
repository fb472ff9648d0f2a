"""Corrector decay study: tail energies outside growing patches and fitted rates."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corrector import CorrectorForms, decay_profile
from ..interpolation import KINDS
from ..problems import discretize
from .config import ExperimentConfig

log = logging.getLogger(__name__)

TAIL_HEADER = ["problem", "kappa", "H", "interp", "T", "y", "ell", "tail", "rel_tail"]
BETA_HEADER = ["problem", "kappa", "H", "interp", "T", "y", "beta", "fit_points", "status"]
TAIL_FLOOR = 1e-13


@dataclass
class DecayRow:
    problem: str
    kappa: float
    H: float
    interp: str
    T: int
    y: int
    beta: float
    fit_points: int
    profile: object = None

    @property
    def status(self) -> str:
        if self.fit_points < 3:
            return f"flagged: only {self.fit_points} usable tail points"
        return "ok"


def interior_element(mesh, point=None) -> int:
    """Element whose centroid is nearest to ``point``, avoiding boundary elements.

    Default point is the domain center in 1D and (3/4, 3/4) in 2D (the center
    of the square sits on the scatterer).
    """
    if point is None:
        point = (0.5,) if mesh.dim == 1 else (0.75, 0.75)
    centroids = mesh.vertices[mesh.elements].mean(axis=1)
    on_boundary = np.zeros(mesh.n_elements, dtype=bool)
    on_boundary[mesh.facet_owner] = True
    dist = np.linalg.norm(centroids - np.asarray(point, dtype=float), axis=1)
    dist[on_boundary] = np.inf
    return int(np.argmin(dist))


def decay_rows(cfg: ExperimentConfig, kinds=KINDS, floor: float = TAIL_FLOOR):
    rows = []
    for kappa in cfg.kappas:
        for H in cfg.Hs:
            for kind in kinds:
                disc = discretize(cfg.problem, H, cfg.h, kind)
                pair = disc.pair
                T = interior_element(pair.coarse.mesh)
                verts = pair.coarse.mesh.elements[T]
                y = int(verts[pair.coarse.node_to_dof[verts] >= 0][0])
                prof = decay_profile(pair, kappa, T, y, floor=floor, forms=CorrectorForms(pair, kappa))
                row = DecayRow(cfg.problem, kappa, H, kind, T, y, prof.beta, prof.fit_points, prof)
                if row.status != "ok":
                    log.warning("kappa=%g H=%g %s: %s", kappa, H, kind, row.status)
                rows.append(row)
    return rows


def run_decay_study(cfg: ExperimentConfig, out_dir=None, kinds=KINDS) -> tuple:
    """Write ``<name>_decay_tails.csv`` and ``<name>_decay_beta.csv``.

    Both interpolation kinds are run by default so the rates can be compared.
    Returns the two paths.
    """
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = decay_rows(cfg, kinds)
    tails, betas = io.StringIO(), io.StringIO()
    tw, bw = csv.writer(tails, lineterminator="\n"), csv.writer(betas, lineterminator="\n")
    tw.writerow(TAIL_HEADER)
    bw.writerow(BETA_HEADER)
    for r in rows:
        p = r.profile
        for ell, tail in zip(p.orders, p.tails):
            rel = tail / p.total if p.total > 0 else float("nan")
            tw.writerow([r.problem, repr(r.kappa), repr(r.H), r.interp, r.T, r.y, int(ell), repr(float(tail)),
                         repr(float(rel))])
        bw.writerow([r.problem, repr(r.kappa), repr(r.H), r.interp, r.T, r.y, repr(r.beta), r.fit_points,
                     r.status])
    tail_path = out / f"{cfg.name}_decay_tails.csv"
    beta_path = out / f"{cfg.name}_decay_beta.csv"
    tail_path.write_text(tails.getvalue())
    beta_path.write_text(betas.getvalue())
    return tail_path, beta_path
