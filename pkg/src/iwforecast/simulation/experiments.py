"""Preset Monte Carlo experiments and their file outputs.

Presets:

* ``regret_curve``: TS-last, Pool and lagged IW-MR over a grid of
  signal-to-noise ratios (T = 3, normal effects and shocks).
* ``tail_heaviness``: the same rules under double Pareto effects of
  increasing tail weight, with kurtosis and covariance diagnostics.
* ``weight_comparison``: current-timing feasible rules over the ratio grid
  (T = 2, Pool = 0).
* ``tyranny``: squared-error difference of IW-MR against James-Stein per
  replication, for four effect distributions (T = 3).
* ``custom``: any grid scan or single design read from a config file.
"""

from __future__ import annotations

import json
import math
import os
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from ..evaluation import (
    ThetaGrid,
    ThetaPoint,
    assumption2_cov,
    assumption2_cov_known_moment,
    crow_siddiqui,
    minimax_regret_scan,
    rows_to_csv,
)
from .distributions import GENERALIZED, DistributionSpec
from .engine import Design, MonteCarloConfig, resolve_methods, run_tasks, simulate_point
from .streams import batch_means_se

__all__ = [
    "PRESETS",
    "ConfigError",
    "NamedDesign",
    "ExperimentConfig",
    "ExperimentResult",
    "theta_grid_from_ratios",
    "preset_config",
    "load_config",
    "run_experiment",
]

PRESETS = ("regret_curve", "tail_heaviness", "weight_comparison", "tyranny", "custom")


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


def theta_grid_from_ratios(sigma2: float, ratios: Sequence[float]) -> ThetaGrid:
    """Points ``(ratio * sigma2, sigma2)``.

    ``nu`` is set to the largest ``|ratio - 1|`` when that is below 1, so the
    grid records the parameter region it covers.
    """
    r = np.asarray(ratios, dtype=float).reshape(-1)
    if r.size == 0:
        raise ValueError("no ratios")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("ratios must be positive and finite")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    spread = float(np.max(np.abs(r - 1.0)))
    return ThetaGrid(tuple(ThetaPoint(float(x * sigma2), float(sigma2)) for x in r), spread if spread < 1 else None)


def _default_ratios() -> np.ndarray:
    return np.linspace(0.001, 2.0, 50)


@dataclass(frozen=True)
class NamedDesign:
    """An effect distribution with a name; ``js_lambda2`` overrides the
    effect variance given to the James-Stein comparator."""

    name: str
    effect: DistributionSpec
    js_lambda2: float | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "effect": self.effect.to_dict()}
        if self.js_lambda2 is not None:
            d["js_lambda2"] = self.js_lambda2
        return d


_TAIL_DESIGNS = (
    NamedDesign("dp-2.3-0.5", DistributionSpec.double_pareto(2.3, 0.5, GENERALIZED)),
    NamedDesign("dp-3-1", DistributionSpec.double_pareto(3.0, 1.0, GENERALIZED)),
    NamedDesign("dp-5-2.45", DistributionSpec.double_pareto(5.0, 2.45, GENERALIZED)),
    NamedDesign("dp-50-34.5", DistributionSpec.double_pareto(50.0, 34.5, GENERALIZED)),
)

_TYRANNY_DESIGNS = (
    NamedDesign("normal-1", DistributionSpec.normal(0.0, 1.0)),
    NamedDesign("normal-3", DistributionSpec.normal(0.0, 3.0)),
    NamedDesign("laplace", DistributionSpec.laplace(0.0, 1.0)),
    NamedDesign("double-pareto", DistributionSpec.double_pareto(3.0, 1.0, GENERALIZED), js_lambda2=1.1),
)


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    T: int
    replications: int
    seed: int = 1
    methods: tuple[str, ...] = ()
    effect: DistributionSpec = field(default_factory=DistributionSpec.normal)
    shock: DistributionSpec = field(default_factory=DistributionSpec.normal)
    grid: ThetaGrid | None = None
    designs: tuple[NamedDesign, ...] = ()
    pool: float = 0.0
    workers: int = 1
    batches: int = 20

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "designs", tuple(self.designs))
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; valid presets: {', '.join(PRESETS)}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.batches < 2:
            raise ConfigError("batches must be >= 2")
        try:
            ms = resolve_methods(self.methods)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not ms:
            raise ConfigError("no methods configured")
        for m in ms:
            if self.T < m.min_length():
                raise ConfigError(f"{m.label} needs T >= {m.min_length()}, config has T={self.T}")
        if self.preset in ("regret_curve", "weight_comparison") and self.grid is None:
            raise ConfigError(f"{self.preset} needs a grid")
        if self.preset in ("tail_heaviness", "tyranny") and not self.designs:
            raise ConfigError(f"{self.preset} needs at least one design")
        if self.preset == "tyranny":
            labels = [m.label for m in ms]
            if len(labels) != 2:
                raise ConfigError("tyranny compares exactly two methods")
        if self.preset == "tail_heaviness" and not any(m.name == "IW" for m in ms):
            raise ConfigError("tail_heaviness needs an IW rule for the covariance diagnostic")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "preset": self.preset,
            "T": self.T,
            "replications": self.replications,
            "seed": self.seed,
            "methods": list(self.methods),
            "effect": self.effect.to_dict(),
            "shock": self.shock.to_dict(),
            "pool": self.pool,
            "batches": self.batches,
        }
        if self.grid is not None:
            d["grid"] = {
                "sigma2": [p.sigma2 for p in self.grid.points],
                "lambda2": [p.lambda2 for p in self.grid.points],
            }
        if self.designs:
            d["designs"] = [x.to_dict() for x in self.designs]
        return d


def preset_config(name: str, **overrides: Any) -> ExperimentConfig:
    """Default configuration of a preset; keyword arguments replace fields.

    ``design`` (a design name) restricts tail_heaviness/tyranny to one design.
    """
    key = name.replace("-", "_")
    design = overrides.pop("design", None)
    if key == "regret_curve":
        cfg = dict(T=3, replications=100_000, methods=("ts-last", "pool", "iw-mr:lagged"),
                   grid=theta_grid_from_ratios(1.0, _default_ratios()))
    elif key == "tail_heaviness":
        cfg = dict(T=3, replications=100_000, methods=("ts-last", "pool", "iw-mr:lagged"), designs=_TAIL_DESIGNS)
    elif key == "weight_comparison":
        cfg = dict(T=2, replications=10_000, methods=("iw-mr", "iw-o", "iw-msfe-is", "iw-msfe-oos:P=1"),
                   grid=theta_grid_from_ratios(1.0, _default_ratios()))
    elif key == "tyranny":
        cfg = dict(T=3, replications=10_000, methods=("iw-mr", "js"), designs=_TYRANNY_DESIGNS)
    elif key == "custom":
        cfg = dict(T=3, replications=10_000, methods=("ts", "pool", "iw-mr"))
    else:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    cfg.update(overrides)
    if design is not None:
        pool = cfg.get("designs", ())
        chosen = tuple(d for d in pool if d.name == design)
        if not chosen:
            names = ", ".join(d.name for d in pool) or "(none)"
            raise ConfigError(f"unknown design {design!r} for {key}; valid designs: {names}")
        cfg["designs"] = chosen
    try:
        return ExperimentConfig(preset=key, **cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _grid_from_dict(d: dict[str, Any]) -> ThetaGrid:
    sigma2 = float(d.get("sigma2", 1.0))
    if "ratios" in d:
        ratios = d["ratios"]
    else:
        ratios = np.linspace(float(d.get("start", 0.001)), float(d.get("stop", 2.0)), int(d.get("num", 50)))
    return theta_grid_from_ratios(sigma2, ratios)


_CONFIG_KEYS = {"preset", "T", "replications", "seed", "methods", "effect", "shock", "grid",
                "designs", "design", "pool", "workers", "batches"}


def load_config(path: str | os.PathLike[str]) -> ExperimentConfig:
    """Read a JSON experiment config.

    Keys: ``preset`` (required), ``T``, ``replications``, ``seed``,
    ``methods`` (list of method strings), ``effect`` / ``shock``
    (distribution objects such as ``{"kind": "normal", "mean": 0,
    "variance": 1}``), ``grid`` (``{"sigma2": 1, "ratios": [...]}`` or
    ``{"sigma2": 1, "start": 0.001, "stop": 2, "num": 50}``), ``designs``
    (list of ``{"name", "effect", "js_lambda2"}``), ``design``, ``pool``,
    ``workers``, ``batches``. Missing keys take the preset's defaults.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)!r}: {exc}") from None
    if not isinstance(raw, dict) or "preset" not in raw:
        raise ConfigError("config must be a JSON object with a 'preset' key")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    kw: dict[str, Any] = {}
    try:
        for k in ("T", "replications", "seed", "workers", "batches"):
            if k in raw:
                kw[k] = int(raw[k])
        if "pool" in raw:
            kw["pool"] = float(raw["pool"])
        if "methods" in raw:
            kw["methods"] = tuple(raw["methods"])
        for k in ("effect", "shock"):
            if k in raw:
                kw[k] = DistributionSpec.from_dict(raw[k])
        if "grid" in raw:
            kw["grid"] = _grid_from_dict(raw["grid"])
        if "designs" in raw:
            kw["designs"] = tuple(
                NamedDesign(d["name"], DistributionSpec.from_dict(d["effect"]), d.get("js_lambda2"))
                for d in raw["designs"]
            )
        if "design" in raw:
            kw["design"] = raw["design"]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from None
    return preset_config(raw["preset"], **kw)


# -- results -----------------------------------------------------------------------


def _clean(x: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Aggregated output: curve rows, a summary, and per-design scatter data."""

    config: ExperimentConfig
    curves: list[dict[str, Any]]
    summary: dict[str, Any]
    scatter: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def curves_csv(self) -> str:
        return rows_to_csv(self.curves)

    def summary_json(self) -> str:
        payload = {"config": self.config.to_dict(), "results": self.summary}
        return json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n"

    def scatter_csv(self, name: str) -> str:
        a, d = self.scatter[name]
        lines = ["A,delta_sfe"] + [f"{format(x, '.17g')},{format(y, '.17g')}" for x, y in zip(a, d)]
        return "\n".join(lines) + "\n"

    def files(self) -> dict[str, str]:
        out = {"curves.csv": self.curves_csv(), "summary.json": self.summary_json()}
        for name in self.scatter:
            out[f"scatter_{name}.csv"] = self.scatter_csv(name)
        return out

    def write(self, outdir: str | os.PathLike[str]) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        for name, text in self.files().items():
            p = os.path.join(outdir, name)
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            paths.append(p)
        return paths


# -- runners -------------------------------------------------------------------------


def _scan(config: ExperimentConfig) -> ExperimentResult:
    assert config.grid is not None
    mc = MonteCarloConfig(
        replications=config.replications,
        seed=config.seed,
        T=config.T,
        effect=config.effect,
        shock=config.shock,
        pool=config.pool,
        workers=config.workers,
        batches=config.batches,
        closed_form=True,
        stream=config.preset,
    )
    report = minimax_regret_scan(config.grid, config.methods, mc)
    summary = report.summary()
    labels = report.methods
    ratio_rows = {}
    if len(labels) > 1:
        base = labels[0]
        ratio_rows = {
            f"{m}/{base}": {
                "min": float(np.min(report.msfe[m] / report.msfe[base])),
                "max": float(np.max(report.msfe[m] / report.msfe[base])),
            }
            for m in labels[1:]
        }
    summary["msfe_ratio_to_first"] = ratio_rows
    summary["best_max_regret"] = min(report.max_regret, key=report.max_regret.get)
    return ExperimentResult(config, report.rows(), summary)


def _design_for(config: ExperimentConfig, d: NamedDesign) -> Design:
    return Design(d.effect, config.shock, config.T, config.pool)


def _or_nan(fn: Any, *args: Any) -> float:
    """``fn(*args)``, or nan when the statistic is undefined for this few draws."""
    try:
        return float(fn(*args))
    except ValueError:
        return math.nan


def _batch_se(fn: Any, batches: int, *columns: np.ndarray) -> float:
    parts = [_or_nan(fn, *cols) for cols in zip(*(np.array_split(c, batches) for c in columns))]
    if len(parts) < 2 or any(math.isnan(v) for v in parts):
        return math.nan
    return float(np.std(parts, ddof=1) / math.sqrt(len(parts)))


def _tail(config: ExperimentConfig) -> ExperimentResult:
    methods = resolve_methods(config.methods)
    iw = next(m for m in methods if m.name == "IW")
    curves: list[dict[str, Any]] = []
    diag: dict[str, Any] = {}

    def task(j: int):
        d = config.designs[j]
        return simulate_point(_design_for(config, d), methods, config.replications, config.seed,
                              config.preset, j, workers=1)

    draws = run_tasks(task, len(config.designs), config.workers)
    for j, (d, dr) in enumerate(zip(config.designs, draws)):
        a_sq = (dr.A - config.pool) ** 2
        omw = (1.0 - dr.weights[iw.label]) ** 2
        lam = d.effect.variance
        cov_km, cov_km_se = assumption2_cov_known_moment(a_sq, omw, lam, config.batches)
        diag[d.name] = {
            "shape": d.effect.a,
            "scale": d.effect.b,
            "variance": lam,
            "sample_variance": float(np.var(dr.A, ddof=1)) if dr.A.size > 1 else math.nan,
            "cs_kurtosis": _or_nan(crow_siddiqui, dr.A),
            "cs_kurtosis_se": _batch_se(crow_siddiqui, config.batches, dr.A),
            "cs_kurtosis_population": d.effect.crow_siddiqui(),
            "assumption2_cov": _or_nan(assumption2_cov, a_sq, omw),
            "assumption2_cov_se": _batch_se(assumption2_cov, config.batches, a_sq, omw),
            "assumption2_cov_known_moment": cov_km,
            "assumption2_cov_known_moment_se": cov_km_se,
            "msfe": {k: float(np.mean(v)) for k, v in dr.sq_errors.items()},
            "msfe_se": {k: batch_means_se(v, config.batches) for k, v in dr.sq_errors.items()},
        }
        for m in methods:
            e = dr.sq_errors[m.label]
            curves.append({
                "design": d.name,
                "shape": d.effect.a,
                "scale": d.effect.b,
                "method": m.label,
                "msfe": float(np.mean(e)),
                "msfe_se": batch_means_se(e, config.batches),
            })
    return ExperimentResult(config, curves, {"designs": diag, "weight_rule": iw.label})


def _tyranny(config: ExperimentConfig) -> ExperimentResult:
    methods = resolve_methods(config.methods)
    first, second = methods[0].label, methods[1].label
    curves: list[dict[str, Any]] = []
    summary: dict[str, Any] = {"difference": f"{first} - {second}", "designs": {}}
    scatter = {}

    def task(j: int):
        d = config.designs[j]
        design = replace(_design_for(config, d), comparator_lambda2=d.js_lambda2)
        return simulate_point(design, methods, config.replications, config.seed, config.preset, j, workers=1)

    draws = run_tasks(task, len(config.designs), config.workers)
    for d, dr in zip(config.designs, draws):
        diff = dr.sq_errors[first] - dr.sq_errors[second]
        scatter[d.name] = (dr.A, diff)
        row = {
            "design": d.name,
            "mean_delta_sfe": float(np.mean(diff)),
            "mean_delta_sfe_se": batch_means_se(diff, config.batches),
            f"msfe_{first}": float(np.mean(dr.sq_errors[first])),
            f"msfe_{second}": float(np.mean(dr.sq_errors[second])),
            "effect_variance": d.effect.variance,
            "js_lambda2": d.js_lambda2 if d.js_lambda2 is not None else d.effect.variance,
        }
        curves.append(row)
        summary["designs"][d.name] = row
    return ExperimentResult(config, curves, summary, scatter)


def _custom(config: ExperimentConfig) -> ExperimentResult:
    if config.grid is not None:
        return _scan(config)
    methods = resolve_methods(config.methods)
    design = Design(config.effect, config.shock, config.T, config.pool)
    dr = simulate_point(design, methods, config.replications, config.seed, config.preset, 0, config.workers)
    curves = [
        {"method": m.label, "msfe": float(np.mean(dr.sq_errors[m.label])),
         "msfe_se": batch_means_se(dr.sq_errors[m.label], config.batches)}
        for m in methods
    ]
    return ExperimentResult(config, curves, {"msfe": {r["method"]: r["msfe"] for r in curves},
                                             "msfe_se": {r["method"]: r["msfe_se"] for r in curves}})


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run a configured experiment. Output is identical for any ``workers`` value."""
    if config.preset in ("regret_curve", "weight_comparison"):
        return _scan(config)
    if config.preset == "tail_heaviness":
        return _tail(config)
    if config.preset == "tyranny":
        return _tyranny(config)
    return _custom(config)

