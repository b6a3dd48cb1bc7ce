"""Decentralized multi-agent actor-critic for cooperative adaptive cruise control.

Vehicles in a platoon each run an actor-critic learner on local observations
and exchange (optionally quantized) critic parameters with their neighbours.
"""

from .errors import (CaccError, ConfigError, DimensionMismatch, EmptyBatch, EncodeOverflow,
                     InvalidAction, InvalidDistribution, InvalidSize, InvalidSpec, Malformed,
                     ModeRequiresNeighbors, NonFinite)

__version__ = "0.1.0"

__all__ = [
    "CaccError", "ConfigError", "DimensionMismatch", "EmptyBatch", "EncodeOverflow",
    "InvalidAction", "InvalidDistribution", "InvalidSize", "InvalidSpec", "Malformed",
    "ModeRequiresNeighbors", "NonFinite", "__version__",
]
