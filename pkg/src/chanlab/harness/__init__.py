"""Configuration, sweep runners and CLI for the estimator experiments."""

from chanlab.harness.config import ConfigError, ExperimentConfig, dump_config, parse_config
from chanlab.harness.experiments import (
    NumericalFailure,
    SweepRow,
    read_results,
    run_experiment,
    write_results,
)
