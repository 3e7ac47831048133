"""Coordination topologies, metrics and scaling-law tools for LLM agent systems."""

__version__ = "0.1.0"
