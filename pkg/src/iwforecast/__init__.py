"""Individual weighting forecasts for short panels."""

from __future__ import annotations

from .evaluation import (
    RegretReport,
    ThetaGrid,
    ThetaPoint,
    group_msfe,
    minimax_regret_scan,
    msfe_closed_form,
    regret,
)
from .forecast import ForecastRecord, Method, combine, forecast_panel, pool_forecast, ts_forecast
from .panel_data import MuMode, Observation, PanelDataset, PanelSchema, Series, load_panel, pooled_mean
from .weights import WeightKind, WeightResult, WeightRule

__version__ = "0.1.0"

__all__ = [
    "RegretReport",
    "ThetaGrid",
    "ThetaPoint",
    "group_msfe",
    "minimax_regret_scan",
    "msfe_closed_form",
    "regret",
    "ForecastRecord",
    "Method",
    "combine",
    "forecast_panel",
    "pool_forecast",
    "ts_forecast",
    "MuMode",
    "Observation",
    "PanelDataset",
    "PanelSchema",
    "Series",
    "load_panel",
    "pooled_mean",
    "WeightKind",
    "WeightResult",
    "WeightRule",
]
