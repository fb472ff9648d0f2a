"""Cheap sanity checks on a sweep cell; they only warn, never abort."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from ..mesh import Mesh, patch_overlap_count

log = logging.getLogger(__name__)

OUTSIDE = "outside resolution regime"
BORDERLINE = "borderline resolution (H kappa = 1)"
LOW_OVERSAMPLING = "oversampling below log kappa"


@dataclass
class Diagnostics:
    kappa: float
    H: float
    ell: int | None
    H_kappa: float
    resolution: str  # "ok", "borderline" or "outside"
    log2_kappa: float
    overlap: int | None = None
    warnings: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.warnings


def diagnostics(kappa: float, H: float, ell: int | None, mesh: Mesh | None = None) -> Diagnostics:
    """Report ``H kappa``, the resolution flag and the oversampling check.

    ``ell=None`` stands for the saturated patch and is never flagged.  With a
    coarse ``mesh`` the largest patch size (in elements) is included.
    """
    hk = H * kappa
    warnings = []
    if math.isclose(hk, 1.0, rel_tol=1e-12):
        resolution = "borderline"
        warnings.append(BORDERLINE)
    elif hk > 1.0:
        resolution = "outside"
        warnings.append(OUTSIDE)
    else:
        resolution = "ok"
    lk = math.log2(kappa)
    if ell is not None and ell < lk:
        warnings.append(LOW_OVERSAMPLING)
    overlap = None
    if mesh is not None:
        overlap = patch_overlap_count(mesh, mesh.n_elements if ell is None else ell)
    report = Diagnostics(kappa, H, ell, hk, resolution, lk, overlap, warnings)
    for w in warnings:
        log.warning("kappa=%g H=%g ell=%s: %s", kappa, H, ell, w)
    return report
