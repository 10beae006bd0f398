from genbench.harness.config import ConfigError, ExperimentConfig, load_config
from genbench.harness.experiments import run_cell, run_experiment, run_hp_sweep, write_reports

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "run_cell", "run_experiment", "run_hp_sweep", "write_reports"]
