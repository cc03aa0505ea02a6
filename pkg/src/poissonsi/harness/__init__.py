"""Experiment harness: configs, ensemble ratio experiments, identity suites and reports."""
from .config import ExperimentConfig, load_config
from .experiments import (
    default_config,
    reverse_dual_doob_check,
    run,
    run_clark_ocone,
    run_identity_suite,
    run_ratio_experiment,
)
from .regimes import cotype_spec, hilbert_spec, regime_of, regime_table, type_spec
from .report import ExperimentReport

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "cotype_spec",
    "default_config",
    "hilbert_spec",
    "load_config",
    "regime_of",
    "regime_table",
    "reverse_dual_doob_check",
    "run",
    "run_clark_ocone",
    "run_identity_suite",
    "run_ratio_experiment",
    "type_spec",
]
