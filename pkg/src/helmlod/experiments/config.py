"""Sweep configuration: dataclass, key-value file parser and named presets."""
from __future__ import annotations

import dataclasses
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..interpolation import CLEMENT, KINDS, PROJECTIVE
from ..problems import PROBLEMS, SCATTERING_2D, TWO_SOURCES_1D, levels_between
from ..solver import BEST_APPROX_V, MSPG, MSPG_STABILIZED, P1

LOG2H = "log2H"
SATURATION = "saturation"
SWEEP_METHODS = (MSPG, BEST_APPROX_V, MSPG_STABILIZED, P1)
OUT_ENV = "HELMLOD_OUT"
DESK_H_2D = 2.0**-7


class ConfigError(ValueError):
    pass


def default_out() -> str:
    return os.environ.get(OUT_ENV, "results")


@dataclass
class ExperimentConfig:
    name: str
    problem: str
    kappas: list
    Hs: list
    h: float
    ell: object = LOG2H  # LOG2H, SATURATION or a list of ints
    interp: str = CLEMENT
    methods: list = field(default_factory=lambda: list(SWEEP_METHODS))
    out: str = field(default_factory=default_out)
    workers: int = 1
    timings: bool = True
    note: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not self.kappas or not self.Hs:
            raise ConfigError("kappa and H lists must be nonempty")
        if any(k <= 0 for k in self.kappas):
            raise ConfigError("wave numbers must be positive")
        if isinstance(self.ell, str):
            if self.ell not in (LOG2H, SATURATION):
                raise ConfigError(f"unknown ell policy {self.ell!r}")
        elif not self.ell or any(int(e) < 1 for e in self.ell):
            raise ConfigError("ell list must be nonempty with orders >= 1")
        if self.interp not in KINDS:
            raise ConfigError(f"unknown interpolation kind {self.interp!r}")
        bad = [m for m in self.methods if m not in SWEEP_METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for H in self.Hs:
            try:
                levels_between(H, self.h)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    def ells_for(self, H: float) -> list:
        """Oversampling orders for coarse width ``H``; None means saturation."""
        if self.ell == LOG2H:
            return [int(round(-math.log2(H)))]
        if self.ell == SATURATION:
            return [None]
        return [int(e) for e in self.ell]

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def desk(self) -> ExperimentConfig:
        """Same sweep with the 2D fine scale lowered for quick runs."""
        if self.problem != SCATTERING_2D or self.h >= DESK_H_2D:
            return self
        Hs = [H for H in self.Hs if H >= DESK_H_2D]
        return self.replace(h=DESK_H_2D, Hs=Hs)


# ---- key-value files -------------------------------------------------------

_POW = re.compile(r"^2\^(-?\d+)$")


def parse_number(text: str) -> float:
    text = text.strip()
    m = _POW.match(text)
    if m:
        return 2.0 ** int(m.group(1))
    return float(text)


def parse_number_list(text: str) -> list:
    """Comma list of numbers; ``2^a..2^b`` expands to all powers in between."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ".." in item:
            lo, hi = (s.strip() for s in item.split(".."))
            ma, mb = _POW.match(lo), _POW.match(hi)
            if not (ma and mb):
                raise ConfigError(f"ranges must be powers of two: {item!r}")
            a, b = int(ma.group(1)), int(mb.group(1))
            step = 1 if b >= a else -1
            out += [2.0**k for k in range(a, b + step, step)]
        else:
            out.append(parse_number(item))
    return out


def parse_ell(text: str):
    text = text.strip()
    if text in (LOG2H, SATURATION):
        return text
    out = []
    for item in text.split(","):
        item = item.strip()
        if ".." in item:
            a, b = (int(s) for s in item.split(".."))
            out += list(range(a, b + 1))
        elif item:
            out.append(int(item))
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_KEYS = {
    "name": str.strip,
    "problem": str.strip,
    "kappa": parse_number_list,
    "H": parse_number_list,
    "h": parse_number,
    "ell": parse_ell,
    "interp": lambda s: s.strip().lower(),
    "methods": lambda s: [m.strip() for m in s.split(",") if m.strip()],
    "out": str.strip,
    "workers": int,
    "timings": _parse_bool,
    "note": str.strip,
}
_FIELD = {"kappa": "kappas", "H": "Hs"}


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); overrides win."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[_FIELD.get(key, key)] = _KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values.setdefault("name", "custom")
    missing = [k for k in ("problem", "kappas", "Hs", "h") if k not in values]
    if missing:
        raise ConfigError(f"missing keys: {', '.join(missing)}")
    return ExperimentConfig(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    cfg = parse_config_text(Path(path).read_text(), overrides)
    if cfg.name == "custom":
        cfg = cfg.replace(name=Path(path).stem)
    return cfg


def format_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config_text` (up to float formatting)."""
    ell = cfg.ell if isinstance(cfg.ell, str) else ", ".join(str(e) for e in cfg.ell)
    lines = [
        f"name = {cfg.name}",
        f"problem = {cfg.problem}",
        "kappa = " + ", ".join(repr(k) for k in cfg.kappas),
        "H = " + ", ".join(repr(H) for H in cfg.Hs),
        f"h = {cfg.h!r}",
        f"ell = {ell}",
        f"interp = {cfg.interp}",
        "methods = " + ", ".join(cfg.methods),
        f"out = {cfg.out}",
        f"workers = {cfg.workers}",
        f"timings = {str(cfg.timings).lower()}",
    ]
    return "\n".join(lines) + "\n"


# ---- presets ---------------------------------------------------------------

def _pow2(a: int, b: int) -> list:
    step = 1 if b >= a else -1
    return [2.0**k for k in range(a, b + step, step)]


def _make_presets() -> dict:
    p = {}
    sweep_1d = dict(problem=TWO_SOURCES_1D, kappas=_pow2(3, 7), Hs=_pow2(-1, -10), h=2.0**-14)
    sweep_2d = dict(problem=SCATTERING_2D, kappas=_pow2(2, 5), Hs=_pow2(-2, -5), h=2.0**-9)

    for tag, method in zip("abcd", (MSPG, BEST_APPROX_V, MSPG_STABILIZED, P1)):
        p[f"fig1{tag}"] = dict(sweep_1d, methods=[method],
                               note=f"1D two sources, {method}, ell = |log2 H|")
        p[f"fig5{tag}"] = dict(sweep_2d, methods=[method],
                               note=f"2D scattering, {method}, ell = |log2 H|")

    ells = list(range(1, 11))
    fixed_ell = "fixed ell = 1..10"
    for tag, method in zip("abc", (MSPG, BEST_APPROX_V, MSPG_STABILIZED)):
        p[f"fig2{tag}"] = dict(sweep_1d, kappas=[2.0**7], ell=ells, methods=[method, P1],
                               note=f"1D, kappa = 2^7, {method}, {fixed_ell}")
        p[f"fig3{tag}"] = dict(sweep_1d, kappas=[2.0**7], ell=list(range(1, 9)), methods=[method, P1],
                               interp=PROJECTIVE,
                               note=f"1D, kappa = 2^7, projective interpolation, {method}, fixed ell = 1..8")
        p[f"fig6{tag}"] = dict(sweep_2d, kappas=[2.0**5], ell=ells, methods=[method, P1],
                               note=f"2D, kappa = 2^5, {method}, fixed ell = 1..10")

    p["smoke"] = dict(problem=TWO_SOURCES_1D, kappas=[2.0**3], Hs=_pow2(-2, -5), h=2.0**-9,
                      note="desk-scale 1D sweep, all methods")
    p["pollution"] = dict(problem=TWO_SOURCES_1D, kappas=[2.0**6], Hs=_pow2(-2, -8), h=2.0**-12,
                          note="1D pollution contrast, kappa = 2^6")
    p["localization"] = dict(problem=TWO_SOURCES_1D, kappas=[2.0**5], Hs=[2.0**-5], h=2.0**-10,
                             ell=list(range(1, 9)), note="1D, fixed H, ell = 1..8")
    p["scattering_desk"] = dict(problem=SCATTERING_2D, kappas=[2.0**4], Hs=_pow2(-2, -4), h=2.0**-7,
                                note="2D desk run, kappa = 2^4")
    p["decay_1d"] = dict(problem=TWO_SOURCES_1D, kappas=[2.0**3, 2.0**4], Hs=[2.0**-4, 2.0**-5],
                         h=2.0**-10, note="corrector decay at fixed H kappa = 1/2 (pairs on the diagonal)")
    p["decay_2d"] = dict(problem=SCATTERING_2D, kappas=[2.0**3], Hs=[2.0**-4], h=2.0**-7,
                         note="2D corrector decay")
    for name, values in p.items():
        values["name"] = name
    return p


_PRESETS = _make_presets()


def preset_names() -> list:
    return sorted(_PRESETS)


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; try list-presets")
    values = dict(_PRESETS[name])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)
