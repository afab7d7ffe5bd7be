"""Scoring: MSFE, regret over parameter grids, group accuracy and distribution summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .forecast import ForecastRecord, Method, parse_method
from .weights import WeightRule

if TYPE_CHECKING:
    from .simulation.engine import MonteCarloConfig

__all__ = [
    "ThetaPoint",
    "ThetaGrid",
    "theta_grid",
    "RegretReport",
    "KdeCurve",
    "msfe_closed_form",
    "msfe_empirical",
    "regret",
    "minimax_regret_scan",
    "delta_sfe",
    "group_msfe",
    "per_unit_msfe",
    "assumption2_cov",
    "assumption2_cov_known_moment",
    "crow_siddiqui",
    "gini",
    "silverman_bandwidth",
    "kde",
]


@dataclass(frozen=True)
class ThetaPoint:
    """Effect variance ``lambda2`` and shock variance ``sigma2``."""

    lambda2: float
    sigma2: float

    def __post_init__(self) -> None:
        if not (self.lambda2 >= 0 and math.isfinite(self.lambda2)):
            raise ValueError("lambda2 must be finite and >= 0")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be finite and > 0")

    @property
    def ratio(self) -> float:
        return self.lambda2 / self.sigma2


@dataclass(frozen=True)
class ThetaGrid:
    """Ordered parameter points. When ``nu`` is set every ratio lies in [1 - nu, 1 + nu]."""

    points: tuple[ThetaPoint, ...]
    nu: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("grid is empty")
        if self.nu is not None:
            if not 0 <= self.nu < 1:
                raise ValueError("nu must lie in [0, 1)")
            tol = 1e-12
            for p in self.points:
                if not (1 - self.nu - tol <= p.ratio <= 1 + self.nu + tol):
                    raise ValueError(f"ratio {p.ratio} outside [1 - nu, 1 + nu] with nu={self.nu}")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def theta_grid(nu: float, d: int, sigma2: float = 1.0) -> ThetaGrid:
    """``d`` equally spaced ratios on [1 - nu, 1 + nu] at fixed ``sigma2``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    ratios = np.linspace(1 - nu, 1 + nu, d) if d > 1 else np.array([1.0])
    return ThetaGrid(tuple(ThetaPoint(float(r * sigma2), sigma2) for r in ratios), nu)


# -- MSFE and regret -----------------------------------------------------------


def msfe_closed_form(method: str | Method, theta: ThetaPoint, T: int | None = None) -> float:
    """Exact MSFE when the shrink point equals the effect mean.

    ``TS-last``: 2 sigma2. ``Pool``: lambda2 + sigma2. ``TS`` (the mean of
    ``T`` observations) is also available when ``T`` is given:
    sigma2 (1 + 1/T).
    """
    m = parse_method(method) if isinstance(method, str) else method
    if m.name == "TS-last":
        return 2.0 * theta.sigma2
    if m.name == "Pool":
        return theta.lambda2 + theta.sigma2
    if m.name == "TS" and T is not None:
        return theta.sigma2 * (1.0 + 1.0 / T)
    raise ValueError(f"no distribution-free closed form for {m.label}")


def msfe_empirical(pairs: Iterable[tuple[float, float]]) -> float:
    """Mean squared error over ``(forecast, realization)`` pairs."""
    arr = np.array(list(pairs), dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValueError("no forecast errors")
    return float(np.mean((arr[:, 1] - arr[:, 0]) ** 2))


def regret(msfes: Mapping[str, float]) -> dict[str, float]:
    """Each MSFE minus the smallest one."""
    if not msfes:
        raise ValueError("no methods")
    best = min(msfes.values())
    return {k: float(v - best) for k, v in msfes.items()}


@dataclass(frozen=True, eq=False)
class RegretReport:
    """MSFE and regret curves over a grid.

    ``msfe[m][j]`` is method ``m`` at ``grid.points[j]``; ``msfe_se`` is the
    Monte Carlo standard error (0 for closed-form values).
    """

    grid: ThetaGrid
    methods: tuple[str, ...]
    msfe: dict[str, np.ndarray]
    msfe_se: dict[str, np.ndarray]
    regret: dict[str, np.ndarray]
    closed_form: dict[str, bool] = field(default_factory=dict)

    @property
    def max_regret(self) -> dict[str, float]:
        return {m: float(np.max(self.regret[m])) for m in self.methods}

    @property
    def argmax(self) -> dict[str, ThetaPoint]:
        return {m: self.grid.points[int(np.argmax(self.regret[m]))] for m in self.methods}

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for j, p in enumerate(self.grid.points):
            for m in self.methods:
                out.append(
                    {
                        "lambda2": p.lambda2,
                        "sigma2": p.sigma2,
                        "ratio": p.ratio,
                        "method": m,
                        "msfe": float(self.msfe[m][j]),
                        "msfe_se": float(self.msfe_se[m][j]),
                        "regret": float(self.regret[m][j]),
                        "closed_form": bool(self.closed_form.get(m, False)),
                    }
                )
        return out

    def summary(self) -> dict[str, Any]:
        am = self.argmax
        return {
            "max_regret": self.max_regret,
            "argmax": {m: {"lambda2": p.lambda2, "sigma2": p.sigma2, "ratio": p.ratio} for m, p in am.items()},
            "max_msfe_se": {m: float(np.max(self.msfe_se[m])) for m in self.methods},
            "grid_size": len(self.grid),
            "nu": self.grid.nu,
        }

    def to_csv(self) -> str:
        return rows_to_csv(self.rows())

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def rows_to_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def minimax_regret_scan(
    grid: ThetaGrid,
    methods: Sequence[Method | str | WeightRule],
    mc: MonteCarloConfig,
) -> RegretReport:
    """MSFE and regret of each method at every grid point.

    TS-last and Pool use their closed forms when ``mc.closed_form`` is set;
    every other method is simulated with common random numbers across
    methods at each point. The stream for point ``j`` is keyed by ``j``, so
    results do not depend on ``mc.workers``.
    """
    from .simulation.engine import resolve_methods, run_tasks, simulate_point
    from .simulation.streams import batch_means_se

    ms = resolve_methods(methods)
    if not ms:
        raise ValueError("no methods")
    labels = tuple(m.label for m in ms)
    exact = {m.label: mc.closed_form and m.name in ("TS-last", "Pool") for m in ms}
    simulated = [m for m in ms if not exact[m.label]]
    for m in simulated:
        if mc.T < m.min_length():
            raise ValueError(f"{m.label} needs T >= {m.min_length()}, scan has T={mc.T}")

    def point_task(j: int):
        p = grid.points[j]
        if not simulated:
            return {}
        draws = simulate_point(mc.design(p.lambda2, p.sigma2), simulated, mc.replications, mc.seed, mc.stream, j)
        return {k: (float(np.mean(v)), batch_means_se(v, mc.batches)) for k, v in draws.sq_errors.items()}

    per_point = run_tasks(point_task, len(grid), mc.workers)
    msfe = {lab: np.empty(len(grid)) for lab in labels}
    se = {lab: np.zeros(len(grid)) for lab in labels}
    for j, p in enumerate(grid.points):
        for m in ms:
            if exact[m.label]:
                msfe[m.label][j] = msfe_closed_form(m, p)
            else:
                msfe[m.label][j], se[m.label][j] = per_point[j][m.label]
    best = np.min(np.vstack([msfe[lab] for lab in labels]), axis=0)
    reg = {lab: msfe[lab] - best for lab in labels}
    return RegretReport(grid, labels, msfe, se, reg, exact)


def delta_sfe(iw_errors: Sequence[float] | np.ndarray, js_errors: Sequence[float] | np.ndarray) -> np.ndarray:
    """Elementwise squared-error difference; negative entries favor the first method."""
    a = np.asarray(iw_errors, dtype=float)
    b = np.asarray(js_errors, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a - b


# -- group accuracy --------------------------------------------------------------


def per_unit_msfe(
    records: Iterable[ForecastRecord], realizations: Mapping[tuple[Any, int], float]
) -> dict[str, dict[Any, float]]:
    """Per-method, per-unit mean squared error. Skipped records are ignored."""
    acc: dict[str, dict[Any, list[float]]] = {}
    for r in records:
        if r.skipped:
            continue
        key = (r.unit_id, r.origin)
        if key not in realizations:
            raise ValueError(f"no realization for unit {r.unit_id!r} at origin {r.origin}")
        acc.setdefault(r.method, {}).setdefault(r.unit_id, []).append((realizations[key] - r.value) ** 2)
    return {m: {u: float(np.mean(e)) for u, e in units.items()} for m, units in acc.items()}


def group_msfe(
    records: Iterable[ForecastRecord], realizations: Mapping[tuple[Any, int], float]
) -> dict[str, float]:
    """Average over units of each unit's MSFE, per method.

    ``realizations`` maps ``(unit, origin)`` to the outcome the forecast made
    at ``origin`` targets.
    """
    per_unit = per_unit_msfe(records, realizations)
    return {m: float(np.mean(list(u.values()))) for m, u in per_unit.items()}


# -- covariance diagnostic ---------------------------------------------------------


def assumption2_cov(
    a_centered_sq: Sequence[float] | np.ndarray, one_minus_w_sq: Sequence[float] | np.ndarray | None = None
) -> float:
    """Sample covariance (divisor n - 1) of ``(A - mu)^2`` and ``(1 - W)^2``.

    Accepts two columns, or a single ``(n, 2)`` array of pairs.
    """
    if one_minus_w_sq is None:
        arr = np.asarray(a_centered_sq, dtype=float).reshape(-1, 2)
        x, y = arr[:, 0], arr[:, 1]
    else:
        x = np.asarray(a_centered_sq, dtype=float)
        y = np.asarray(one_minus_w_sq, dtype=float)
        if x.shape != y.shape:
            raise ValueError("columns differ in length")
    if x.size < 2:
        raise ValueError("need at least 2 draws")
    if np.all(y == y[0]) or np.all(x == x[0]):
        return 0.0
    return float(np.sum((x - x.mean()) * (y - y.mean())) / (x.size - 1))


def assumption2_cov_known_moment(
    a_centered_sq: np.ndarray, one_minus_w_sq: np.ndarray, lambda2: float, batches: int = 20
) -> tuple[float, float]:
    """Covariance estimate using the known mean ``lambda2`` of ``(A - mu)^2``.

    Computes ``mean(((A - mu)^2 - lambda2) (1 - W)^2)``. Unlike the sample
    covariance it stays well behaved under heavy-tailed effects: ``(1 - W)^2``
    shrinks like ``1/A^2`` in the tails, so each term has finite variance
    even when ``(A - mu)^2`` does not.
    Returns ``(estimate, batch-means standard error)``.
    """
    from .simulation.streams import batch_means_se

    x = np.asarray(a_centered_sq, dtype=float)
    y = np.asarray(one_minus_w_sq, dtype=float)
    z = (x - lambda2) * y
    return float(np.mean(z)), batch_means_se(z, batches)


# -- distribution summaries --------------------------------------------------------


def crow_siddiqui(sample: Sequence[float] | np.ndarray) -> float:
    """(Q.975 - Q.025) / (Q.75 - Q.25) with linear-interpolation quantiles."""
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size < 4:
        raise ValueError("need at least 4 observations")
    q = np.quantile(x, [0.025, 0.25, 0.75, 0.975])
    iqr = q[2] - q[1]
    if iqr <= 0:
        raise ValueError("interquartile range is zero")
    return float((q[3] - q[0]) / iqr)


def gini(sample: Sequence[float] | np.ndarray) -> float:
    """Mean absolute pairwise difference over twice the mean absolute value.

    For nonnegative samples this is the usual Gini coefficient. Using the
    mean absolute value as the scale keeps the result in [0, 1] for samples
    that straddle zero.
    """
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("empty sample")
    scale = np.mean(np.abs(x))
    if scale <= 0:
        raise ValueError("sample has zero scale")
    n = x.size
    # sum_{i,j} |x_i - x_j| = 2 * sum_k (2k - n - 1) x_(k) over sorted x
    k = np.arange(1, n + 1)
    mad = 2.0 * np.sum((2 * k - n - 1) * x) / (n * n)
    return float(mad / (2.0 * scale))


@dataclass(frozen=True, eq=False)
class KdeCurve:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float

    def to_csv(self) -> str:
        lines = ["x,density"]
        lines += [f"{format(a, '.17g')},{format(b, '.17g')}" for a, b in zip(self.x, self.density)]
        return "\n".join(lines) + "\n"


def silverman_bandwidth(sample: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5); falls back to sd when the IQR is 0."""
    x = np.asarray(sample, dtype=float)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.quantile(x, [0.75, 0.25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde(sample: Sequence[float] | np.ndarray, bandwidth: float | None = None, grid_size: int = 512) -> KdeCurve:
    """Gaussian kernel density on an even grid over [min - 3h, max + 3h]."""
    x = np.asarray(sample, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    if np.ptp(x) == 0:
        raise ValueError("sample has zero spread; density is degenerate")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    dens = np.zeros(grid_size)
    for chunk in np.array_split(x, max(1, x.size // 4096)):
        z = (grid[:, None] - chunk[None, :]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2 * math.pi)
    return KdeCurve(grid, dens, h)
