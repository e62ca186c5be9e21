"""Coopetitive soft-gating ensembles for multi-model power forecasting."""

from .core import DataSet, ForecastRecord, LeadGrid, MemberId, align, flat_index
from .gating import soft_gate, soft_gate_all
from .training import SplitPlan, TrainConfig, fit_csge
from .weighting import EtaVector

__all__ = [
    "DataSet", "EtaVector", "ForecastRecord", "LeadGrid", "MemberId", "SplitPlan",
    "TrainConfig", "align", "fit_csge", "flat_index", "soft_gate", "soft_gate_all",
]
__version__ = "0.1.0"
