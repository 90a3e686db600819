"""Bottleneck capacity estimation with packet trains."""

from .core import (CapacityEstimate, DomainError, NetworkTechnology, ProbeParameters, TechLabel,
                   TrainObservation, capacity_from_dispersion, initial_train_length)
from .engine import (HandshakeTimeout, IdleTimeout, MeasurementSession, PathMeasurement,
                     Unreachable, measure_path, run_estimator, run_prober)

__version__ = "0.1.0"

__all__ = [
    "CapacityEstimate", "DomainError", "NetworkTechnology", "ProbeParameters", "TechLabel",
    "TrainObservation", "capacity_from_dispersion", "initial_train_length",
    "HandshakeTimeout", "IdleTimeout", "MeasurementSession", "PathMeasurement", "Unreachable",
    "measure_path", "run_estimator", "run_prober",
]
