"""Sweep orchestration: one job per (kappa, H), rows merged in key order."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corrector import CorrectorForms, assemble_corrector_set, conjugate_test_basis
from ..problems import discretize
from ..solver import (BEST_APPROX_V, MSPG, MSPG_STABILIZED, P1, ErrorMeter, best_approximation_V,
                      solve_ms_petrov_galerkin, solve_p1, solve_reference, solve_stabilized_pg)
from .config import ExperimentConfig
from .diagnostics import diagnostics

log = logging.getLogger(__name__)

CSV_HEADER = ("problem,kappa,H,ell,h,method,interp,rel_v_err,rel_l2_err,dofs_coarse,dofs_fine,"
              "seconds_correctors,seconds_solve,status").split(",")
DIAG_HEADER = ["kappa", "H", "ell", "H_kappa", "resolution", "log2_kappa", "overlap", "warnings"]
OK = "ok"


@dataclass
class SweepRow:
    problem: str
    kappa: float
    H: float
    ell: int | None
    h: float
    method: str
    interp: str
    rel_v_err: float = math.nan
    rel_l2_err: float = math.nan
    dofs_coarse: int | None = None
    dofs_fine: int | None = None
    corrector_count: int | None = None
    seconds_correctors: float | None = None
    seconds_solve: float | None = None
    status: str = OK

    @property
    def ok(self) -> bool:
        return self.status == OK

    def csv_fields(self, timings: bool = True) -> list:
        def num(x):
            if x is None:
                return ""
            return repr(float(x))

        def sec(x):
            return f"{x:.4f}" if (timings and x is not None) else ""

        return [self.problem, num(self.kappa), num(self.H), "" if self.ell is None else str(self.ell),
                num(self.h), self.method, self.interp, num(self.rel_v_err), num(self.rel_l2_err),
                "" if self.dofs_coarse is None else str(self.dofs_coarse),
                "" if self.dofs_fine is None else str(self.dofs_fine),
                sec(self.seconds_correctors), sec(self.seconds_solve), self.status]


def _error_tag(exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    return f"error: {type(exc).__name__}: {msg}" if msg else f"error: {type(exc).__name__}"


def _corrector_count(pair) -> int:
    return int((pair.coarse.node_to_dof[pair.coarse.mesh.elements] >= 0).sum())


def run_job(cfg: ExperimentConfig, kappa: float, H: float, patch_workers: int = 1):
    """All rows and diagnostics of one (kappa, H) cell; failures become rows."""
    ells = cfg.ells_for(H)
    base = dict(problem=cfg.problem, kappa=kappa, H=H, h=cfg.h, interp=cfg.interp)
    corrected = [m for m in cfg.methods if m != P1]
    rows, diags = [], []

    def fail_all(exc):
        tag = _error_tag(exc)
        out = [SweepRow(ell=None, method=P1, status=tag, **base)] if P1 in cfg.methods else []
        out += [SweepRow(ell=e, method=m, status=tag, **base) for e in ells for m in corrected]
        return out

    try:
        disc = discretize(cfg.problem, H, cfg.h, cfg.interp)
        pair = disc.pair
        coarse_mesh = pair.coarse.mesh
        diags = [diagnostics(kappa, H, e, coarse_mesh) for e in ells]
        base.update(dofs_coarse=pair.coarse.n_dofs, dofs_fine=pair.fine.n_dofs)
        forms = CorrectorForms(pair, kappa)
        matrix = forms.matrix
        load, lifting = disc.load(kappa)
        reference = solve_reference(pair.fine, kappa, load, matrix, lifting=lifting)
        meter = ErrorMeter(pair.fine, kappa, reference)
    except Exception as exc:  # a broken cell must not take the sweep down
        log.error("kappa=%g H=%g: %s", kappa, H, exc)
        return fail_all(exc), diags

    def finish(row, result):
        result.lifting = lifting
        rep = meter.report(result)
        row.rel_v_err, row.rel_l2_err = rep.rel_V_error, rep.rel_L2_error
        row.seconds_solve = result.seconds
        return row

    if P1 in cfg.methods:
        row = SweepRow(ell=None, method=P1, **base)
        try:
            finish(row, solve_p1(pair.prolong, matrix, load, kappa, H))
        except Exception as exc:
            row.status = _error_tag(exc)
        rows.append(row)

    for ell in ells:
        if not corrected:
            break
        t0 = time.perf_counter()
        try:
            cset = assemble_corrector_set(pair, kappa, ell, workers=patch_workers, forms=forms)
            basis = conjugate_test_basis(cset)
        except Exception as exc:
            tag = _error_tag(exc)
            rows += [SweepRow(ell=ell, method=m, status=tag, **base) for m in corrected]
            continue
        t_corr = time.perf_counter() - t0
        count = _corrector_count(pair)
        for method in corrected:
            row = SweepRow(ell=ell, method=method, corrector_count=count, seconds_correctors=t_corr, **base)
            try:
                if method == MSPG:
                    result = solve_ms_petrov_galerkin(basis, matrix, load, kappa, H, ell)
                elif method == MSPG_STABILIZED:
                    result = solve_stabilized_pg(pair.prolong, basis, matrix, load, kappa, H, ell)
                elif method == BEST_APPROX_V:
                    result = best_approximation_V(pair.fine, kappa, reference.fine_representation,
                                                  basis.trial_columns, H, ell)
                else:
                    raise ValueError(f"unknown method {method}")
                finish(row, result)
            except Exception as exc:
                row.status = _error_tag(exc)
            rows.append(row)
    return rows, diags


def _job(args):
    cfg, kappa, H, patch_workers = args
    return run_job(cfg, kappa, H, patch_workers)


def sweep_rows(cfg: ExperimentConfig):
    """Run every cell; returns ``(rows, diagnostics)`` in deterministic key order."""
    jobs = [(cfg, k, H) for k in cfg.kappas for H in cfg.Hs]
    patch_workers = max(1, cfg.workers // len(jobs))
    args = [j + (patch_workers,) for j in jobs]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            results = list(pool.map(_job, args))
    else:
        results = [_job(a) for a in args]
    rows = [r for rs, _ in results for r in rs]
    diags = [d for _, ds in results for d in ds]
    return rows, diags


def rows_to_csv(rows, timings: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_fields(timings))
    return buf.getvalue()


def read_csv_rows(path) -> list:
    """Rows of a sweep CSV as dicts with numeric fields converted."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            for key in ("kappa", "H", "h", "rel_v_err", "rel_l2_err"):
                rec[key] = float(rec[key]) if rec[key] else math.nan
            rec["ell"] = int(rec["ell"]) if rec["ell"] else None
            for key in ("dofs_coarse", "dofs_fine"):
                rec[key] = int(rec[key]) if rec[key] else None
            out.append(rec)
    return out


def diagnostics_csv(diags) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DIAG_HEADER)
    for d in diags:
        writer.writerow([repr(d.kappa), repr(d.H), "" if d.ell is None else d.ell, repr(d.H_kappa),
                         d.resolution, repr(d.log2_kappa), "" if d.overlap is None else d.overlap,
                         "; ".join(d.warnings)])
    return buf.getvalue()


PLOT_TEMPLATE = '''"""Log-log error versus coarse dofs for {csv_name}. Needs matplotlib."""
import csv
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
column = sys.argv[2] if len(sys.argv) > 2 else "rel_v_err"
curves = defaultdict(list)
with open(path, newline="") as fh:
    for rec in csv.DictReader(fh):
        if rec["status"] != "ok":
            continue
        label = (rec["method"], float(rec["kappa"]), rec["ell"] if {fixed_ell} else "")
        curves[label].append((int(rec["dofs_coarse"]), float(rec[column])))

methods = sorted({{key[0] for key in curves}})
fig, axes = plt.subplots(1, len(methods), figsize=(5 * len(methods), 4), squeeze=False)
for ax, method in zip(axes[0], methods):
    for (m, kappa, ell), pts in sorted(curves.items()):
        if m != method:
            continue
        pts.sort()
        label = f"kappa={{kappa:g}}" + (f", ell={{ell}}" if ell else "")
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=label)
    ax.set_title(method)
    ax.set_xlabel("coarse dofs")
    ax.set_ylabel(column)
    ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig("{stem}_" + column + ".png", dpi=150)
'''


def plot_script(cfg: ExperimentConfig, csv_name: str) -> str:
    fixed_ell = not isinstance(cfg.ell, str)
    return PLOT_TEMPLATE.format(csv_name=csv_name, stem=Path(csv_name).stem, fixed_ell=fixed_ell)


def run_sweep(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run the sweep and write ``<name>.csv``, diagnostics and a plot script.

    Returns the CSV path.  All files are written here, by the parent process.
    """
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, diags = sweep_rows(cfg)
    csv_path = out / f"{cfg.name}.csv"
    csv_path.write_text(rows_to_csv(rows, cfg.timings))
    (out / f"{cfg.name}_diagnostics.csv").write_text(diagnostics_csv(diags))
    (out / f"plot_{cfg.name}.py").write_text(plot_script(cfg, csv_path.name))
    failed = sum(not r.ok for r in rows)
    log.info("%s: %d rows (%d failed) -> %s", cfg.name, len(rows), failed, csv_path)
    return csv_path


def fitted_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
