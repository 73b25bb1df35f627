"""Deterministic multi-chain simulator for hybrid cross-chain deployment and
atomic integrated execution, with a sequential baseline for comparison."""

from .network import BASELINE, INTEGRATEX, Client, Network, run_clients

__all__ = ["Network", "Client", "run_clients", "INTEGRATEX", "BASELINE"]
__version__ = "0.1.0"
