"""Predictive compliance monitoring for temporal constraints on event logs.

Predicts, for running cases, whether a temporal constraint will be violated
(classification) and by how much (regression), using a binary baseline, a
hybrid regression approach, and a multi-task network.
"""

from pcm.errors import (
    ConfigError,
    ContractError,
    GenerationError,
    ParseError,
    PcmError,
    SearchError,
    TrainingError,
    UndefinedMetricError,
    VersionError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "GenerationError",
    "ParseError",
    "PcmError",
    "SearchError",
    "TrainingError",
    "UndefinedMetricError",
    "VersionError",
]
