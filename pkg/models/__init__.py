"""
Physics models for nvdephase.
"""

from models.spin import (
    ContrastModel,
    DephasingEnvelope,
    FidModelParams,
    HyperfineCoupling,
    NitrogenState,
    NmModelParams,
    PopulationModel,
    bloch_length,
    bloch_length_phi,
    contrast_eval,
    envelope_eval,
    nitrogen_populations,
    population_eval,
    revival_times,
)
from models.trace import CoherenceTrace, Normalization

__all__ = [
    "CoherenceTrace",
    "ContrastModel",
    "DephasingEnvelope",
    "FidModelParams",
    "HyperfineCoupling",
    "NitrogenState",
    "NmModelParams",
    "Normalization",
    "PopulationModel",
    "bloch_length",
    "bloch_length_phi",
    "contrast_eval",
    "envelope_eval",
    "nitrogen_populations",
    "population_eval",
    "revival_times",
]
