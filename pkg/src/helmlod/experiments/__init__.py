"""Sweep drivers for the 1D and 2D model problems."""
from .config import ExperimentConfig, load_config, parse_config_text, preset, preset_names
from .decay import run_decay_study
from .diagnostics import diagnostics
from .sweep import SweepRow, run_sweep, sweep_rows

__all__ = ["ExperimentConfig", "SweepRow", "diagnostics", "load_config", "parse_config_text",
           "preset", "preset_names", "run_decay_study", "run_sweep", "sweep_rows"]
