"""Planning toolkit for dockless e-scooter fleets with charging stations."""
from .params import (
    ChargingProfileKind,
    DesignVariables,
    OptimizerBounds,
    PriorityWeights,
    Scheme,
    SystemParams,
    make_priority_weights,
    table1_params,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ChargingProfileKind",
    "DesignVariables",
    "OptimizerBounds",
    "PriorityWeights",
    "Scheme",
    "SystemParams",
    "make_priority_weights",
    "table1_params",
    "validate",
]
