"""Campaign configuration, execution, aggregation and the command-line interface."""

from .aggregate import AggregateReport, SasReference, aggregate, coordination_regime, kendall_tau
from .campaign import failed_runs, load_index, read_trace, read_traces, run_campaign, write_trace
from .config import CampaignConfig, ConfigError, demo_config, load_config, parse_config

__all__ = [
    "AggregateReport",
    "CampaignConfig",
    "ConfigError",
    "SasReference",
    "aggregate",
    "coordination_regime",
    "demo_config",
    "failed_runs",
    "kendall_tau",
    "load_config",
    "load_index",
    "parse_config",
    "read_trace",
    "read_traces",
    "run_campaign",
    "write_trace",
]
