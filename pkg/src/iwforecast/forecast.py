"""TS, Pool, IW and James-Stein forecasts for every unit of a panel."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any, TextIO, Union

import numpy as np

from .panel_data import PanelDataset, Series, rolling_windows
from .weights import (
    LAGGED,
    WeightResult,
    WeightRule,
    james_stein_weight,
    js_homogeneous_estimates,
)

__all__ = [
    "Method",
    "ForecastRecord",
    "ts_forecast",
    "pool_forecast",
    "combine",
    "parse_method",
    "forecast_series",
    "forecast_panel",
    "write_forecast_csv",
    "read_forecast_csv",
]


def ts_forecast(series: Series | Sequence[float] | np.ndarray, variant: str = "mean") -> float:
    """The unit's own forecast: its sample mean, or its last observation."""
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=float)
    if values.size < 1:
        raise ValueError("empty series")
    if variant == "mean":
        return float(np.mean(values))
    if variant == "last":
        return float(values[-1])
    raise ValueError(f"variant must be 'mean' or 'last', got {variant!r}")


def pool_forecast(mu: float) -> float:
    return float(mu)


def combine(forecasts: Sequence[tuple[float, float]]) -> float:
    """Weighted average of ``(value, weight)`` pairs; weights must sum to 1."""
    if not forecasts:
        raise ValueError("nothing to combine")
    weights = [w for _, w in forecasts]
    if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-9:
        raise ValueError(f"weights must be nonnegative and sum to 1, got {weights}")
    # Exact identities when a single forecast carries all the weight.
    for v, w in forecasts:
        if w == 1.0:
            return float(v)
    total = math.fsum(v * w for v, w in forecasts)
    # Rounding can push the sum a hair outside the convex hull; pull it back.
    values = [v for v, w in forecasts if w > 0]
    return min(max(total, min(values)), max(values))


@dataclass(frozen=True)
class Method:
    """A forecasting method: ``TS``, ``TS-last``, ``Pool``, ``JS`` or ``IW`` with a rule.

    ``JS`` is the feasible James-Stein forecast using cross-sectional
    estimates; a JamesStein rule with fixed parameters is an ``IW`` method.
    """

    name: str
    rule: WeightRule | None = None

    def __post_init__(self) -> None:
        if self.name not in ("TS", "TS-last", "Pool", "JS", "IW"):
            raise ValueError(f"unknown method {self.name!r}")
        if (self.name == "IW") != (self.rule is not None):
            raise ValueError("IW methods need a rule and only IW methods take one")

    @property
    def label(self) -> str:
        return self.rule.label if self.rule is not None else self.name

    @property
    def ts_variant(self) -> str:
        if self.name == "TS-last":
            return "last"
        if self.rule is not None and self.rule.timing == LAGGED:
            return "last"
        return "mean"

    def min_length(self) -> int:
        if self.rule is not None:
            return self.rule.min_length()
        return 1


def parse_method(spec: str | Method | WeightRule) -> Method:
    """``ts``, ``ts-last``, ``pool``, ``js`` or any weight-rule string."""
    if isinstance(spec, Method):
        return spec
    if isinstance(spec, WeightRule):
        return Method("IW", spec)
    key = spec.strip().lower()
    base = {"ts": "TS", "ts-mean": "TS", "ts-last": "TS-last", "pool": "Pool", "js": "JS"}
    if key in base:
        return Method(base[key])
    return Method("IW", WeightRule.parse(spec))


@dataclass(frozen=True)
class ForecastRecord:
    unit_id: Any
    origin: int
    method: str
    value: float
    weight: WeightResult | None = None
    note: str = ""

    @property
    def skipped(self) -> bool:
        return math.isnan(self.value)


def forecast_series(
    series: Series, method: Method | str, js_params: tuple[float, float] | None = None
) -> tuple[float, WeightResult | None]:
    """Forecast one series. ``js_params`` is ``(lambda2, sigma2)`` for the JS method."""
    m = parse_method(method)
    if series.T < m.min_length():
        raise ValueError(f"{m.label} needs at least {m.min_length()} observations, series has {series.T}")
    if m.name == "TS" or m.name == "TS-last":
        return ts_forecast(series, m.ts_variant), None
    if m.name == "Pool":
        return pool_forecast(series.mu), None
    if m.name == "JS":
        if js_params is None:
            raise ValueError("JS needs (lambda2, sigma2) estimates")
        lam, sig = js_params
        if sig > 0:
            w = james_stein_weight(lam, sig, series.T)
        else:
            w = 1.0 if lam > 0 else 0.0
        res = WeightResult(w=w, sigma2_hat=sig)
    else:
        res = m.rule.compute(series)  # type: ignore[union-attr]
    ts = ts_forecast(series, m.ts_variant)
    return combine([(ts, res.w), (series.mu, 1.0 - res.w)]), res


def _origin_views(
    dataset: PanelDataset, origins: str, window: int | None
) -> list[tuple[int | None, PanelDataset]]:
    """(origin, visible data) pairs. ``None`` origin means each unit's own last period."""
    if origins not in ("latest", "all"):
        raise ValueError("origins must be 'latest' or 'all'")
    if window is not None:
        views = [(target - 1, ds) for target, ds in rolling_windows(dataset, window)]
        return views[-1:] if origins == "latest" else views
    if origins == "latest":
        return [(None, dataset)]
    return [(int(p), dataset.restrict(dataset.periods <= p)) for p in dataset.all_periods]


def forecast_panel(
    dataset: PanelDataset,
    methods: Iterable[Method | str | WeightRule],
    origins: str = "latest",
    window: int | None = None,
) -> list[ForecastRecord]:
    """One record per (unit, origin, method).

    With ``origins="all"`` a forecast is made at every period where the unit
    is observed, using only data up to that period (shrink points and JS
    estimates included). With ``window=R`` each origin sees only the last R
    periods, balanced as in :func:`rolling_windows`. Units that fail a
    method's length requirement get a record with ``value = nan`` and a note.
    """
    methods = [parse_method(m) for m in methods]
    if not methods:
        raise ValueError("no methods requested")
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate methods: {labels}")
    unit_rank = {u: k for k, u in enumerate(dataset.units)}
    records: list[ForecastRecord] = []
    for origin, view in _origin_views(dataset, origins, window):
        if view.n_obs == 0:
            continue
        js_params: tuple[float, float] | None = None
        js_note = ""
        if any(m.name == "JS" for m in methods):
            try:
                js_params = js_homogeneous_estimates(view)
            except ValueError as exc:
                js_note = f"skipped: {exc}"
        for s in view.series():
            last = s.periods[-1] if s.periods else None
            if origin is not None and last != origin:
                continue
            o = last if origin is None else origin
            for m in methods:
                if m.name == "JS" and js_params is None:
                    records.append(ForecastRecord(s.unit_id, o, m.label, math.nan, None, js_note))
                    continue
                try:
                    value, res = forecast_series(s, m, js_params)
                except ValueError as exc:
                    records.append(ForecastRecord(s.unit_id, o, m.label, math.nan, None, f"skipped: {exc}"))
                    continue
                records.append(ForecastRecord(s.unit_id, o, m.label, value, res))
    order = {lab: j for j, lab in enumerate(labels)}
    records.sort(key=lambda r: (unit_rank[r.unit_id], r.origin, order[r.method]))
    return records


# -- CSV ---------------------------------------------------------------------

FORECAST_COLUMNS = ("unit", "origin", "method", "value", "weight", "zeta_bound", "clipped", "note")


def _fmt(x: float | None) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_forecast_csv(records: Iterable[ForecastRecord], stream: TextIO | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FORECAST_COLUMNS)
    for r in records:
        wr = r.weight
        w.writerow(
            [
                r.unit_id,
                r.origin,
                r.method,
                "" if r.skipped else _fmt(r.value),
                "" if wr is None else _fmt(wr.w),
                "" if wr is None or wr.zeta_bound is None else _fmt(wr.zeta_bound),
                "" if wr is None else str(wr.clipped).lower(),
                r.note,
            ]
        )
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_forecast_csv(source: Union[str, TextIO]) -> list[ForecastRecord]:
    """Inverse of :func:`write_forecast_csv`; unit ids come back as strings."""
    owned = isinstance(source, str)
    stream = open(source, newline="", encoding="utf-8") if owned else source
    try:
        reader = csv.DictReader(stream)
        missing = [c for c in ("unit", "origin", "method", "value") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"forecast file lacks column(s) {missing}")
        out = []
        for row in reader:
            try:
                weight = None
                if row.get("weight"):
                    z = row.get("zeta_bound") or ""
                    weight = WeightResult(
                        w=float(row["weight"]),
                        zeta_bound=float(z) if z else None,
                        clipped=row.get("clipped", "") == "true",
                    )
                value = float(row["value"]) if row["value"] else math.nan
                out.append(
                    ForecastRecord(row["unit"], int(row["origin"]), row["method"], value, weight, row.get("note") or "")
                )
            except ValueError as exc:
                raise ValueError(f"line {reader.line_num}: {exc}") from None
        return out
    finally:
        if owned:
            stream.close()

