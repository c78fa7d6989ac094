"""Configuration, Monte Carlo orchestration and the command line interface."""
from .config import ConfigError, RunConfig, bundled_config, load_config
from .runner import (DataError, evaluate, execute, filter_run, load_logs, run_seed, simulate_run,
                     splitmix64)

__all__ = ["ConfigError", "RunConfig", "bundled_config", "load_config", "DataError", "evaluate", "execute",
           "filter_run", "load_logs", "run_seed", "simulate_run", "splitmix64"]
