"""Agent-based simulator for parallel-chain proof-of-work networks."""

__version__ = "0.1.0"
