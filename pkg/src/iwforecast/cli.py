"""Command-line interface: ``iwforecast {simulate,forecast,evaluate,report}``.

Exit codes: 0 success, 1 runtime failure (bad data, failed computation),
2 usage or configuration error.

Weight rules are written ``kind[:timing][:param=value]...`` with kinds
``iw-o``, ``iw-mr``, ``iw-mr2``, ``iw-msfe-is``, ``iw-msfe-oos``,
``oracle``, ``james-stein``, ``constant`` and timings ``current`` or
``lagged``. Parameters: ``P`` and ``window`` (iw-msfe-oos), ``lambda2`` and
``sigma2`` (oracle, james-stein), ``c`` (constant; ``constant:0.5`` also
works). The plain method names ``ts``, ``ts-last``, ``pool`` and ``js``
(feasible James-Stein) are accepted too.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .evaluation import gini, group_msfe, kde, per_unit_msfe, rows_to_csv
from .forecast import ForecastRecord, forecast_panel, parse_method, read_forecast_csv, write_forecast_csv
from .panel_data import MuMode, PanelDataset, PanelError, PanelSchema, load_panel, residualize_panel
from .simulation.experiments import PRESETS, ConfigError, load_config, preset_config, run_experiment

__all__ = ["main", "build_parser", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "IWFORECAST_OUTPUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


@dataclass(frozen=True)
class CliConfig:
    command: str
    output_dir: str
    args: argparse.Namespace


# -- output handling -------------------------------------------------------------------


def _write_outputs(outdir: str, files: dict[str, str]) -> list[str]:
    """Write all files or none: each goes to a temp name first, then is renamed."""
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {outdir!r}: {exc}") from None
    if not os.access(outdir, os.W_OK):
        raise UsageError(f"output directory {outdir!r} is not writable")
    tmp_paths: list[str] = []
    final: list[str] = []
    try:
        for name, text in files.items():
            tmp = os.path.join(outdir, f".{name}.partial")
            tmp_paths.append(tmp)
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for name, tmp in zip(files, tmp_paths):
            dest = os.path.join(outdir, name)
            os.replace(tmp, dest)
            final.append(dest)
    except BaseException:
        for p in tmp_paths + final:
            try:
                os.remove(p)
            except OSError:
                pass
        raise
    return final


def _output_dir(args: argparse.Namespace) -> str:
    return args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or os.getcwd()


# -- shared panel loading -------------------------------------------------------------


def _load_dataset(args: argparse.Namespace) -> PanelDataset:
    if not os.path.isfile(args.input):
        raise UsageError(f"input file {args.input!r} does not exist")
    covs = tuple(c for c in (args.covariates or "").split(",") if c)
    schema = PanelSchema(args.unit_col, args.period_col, args.outcome_col, covs, args.group_col)
    ds = load_panel(args.input, schema)
    if covs:
        ds = residualize_panel(ds)
    if args.mu is not None:
        mode = MuMode.known(args.mu)
    elif args.demeaned:
        mode = MuMode.known(0.0)
    elif args.group_col:
        mode = MuMode.group_pooled()
    elif covs:
        mode = MuMode.known(0.0)
    else:
        mode = MuMode.pooled()
    return ds.with_mu_mode(mode)


def _methods(args: argparse.Namespace) -> list:
    specs = ["ts", "pool"] + list(args.rule or ["iw-mr"])
    out, seen = [], set()
    for s in specs:
        try:
            m = parse_method(s)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if m.label not in seen:
            seen.add(m.label)
            out.append(m)
    return out


# -- commands ----------------------------------------------------------------------------


def cmd_simulate(cfg: CliConfig) -> int:
    a = cfg.args
    overrides: dict[str, Any] = {}
    for key in ("seed", "replications", "workers"):
        v = getattr(a, key)
        if v is not None:
            overrides[key] = v
    if a.design is not None:
        overrides["design"] = a.design
    if a.config:
        if not os.path.isfile(a.config):
            raise UsageError(f"config file {a.config!r} does not exist")
        base = load_config(a.config)
        if a.preset is not None and a.preset.replace("-", "_") != base.preset:
            raise UsageError("--preset conflicts with the preset in the config file")
        kw = {k: getattr(base, k) for k in ("T", "replications", "seed", "methods", "effect", "shock",
                                             "grid", "designs", "pool", "workers", "batches")}
        kw.update(overrides)
        config = preset_config(base.preset, **kw)
    else:
        if a.preset is None:
            raise UsageError("give --preset or --config")
        name = a.preset.replace("-", "_")
        if name not in PRESETS:
            valid = ", ".join(p.replace("_", "-") for p in PRESETS)
            raise UsageError(f"unknown preset {a.preset!r}; valid presets: {valid}")
        config = preset_config(name, **overrides)
    result = run_experiment(config)
    paths = _write_outputs(cfg.output_dir, result.files())
    s = result.summary
    if "max_regret" in s:
        for m, v in s["max_regret"].items():
            print(f"max_regret {m}: {v:.4f}")
    elif config.preset == "tyranny":
        for name, row in s["designs"].items():
            print(f"mean_delta_sfe {name}: {row['mean_delta_sfe']:.4f} (se {row['mean_delta_sfe_se']:.4f})")
    elif config.preset == "tail_heaviness":
        for name, row in s["designs"].items():
            print(
                f"{name}: cs_kurtosis {row['cs_kurtosis']:.3f}, "
                f"assumption2_cov {row['assumption2_cov']:.4f}, "
                f"known-moment {row['assumption2_cov_known_moment']:.4f}"
            )
    else:
        for m, v in s["msfe"].items():
            print(f"msfe {m}: {v:.4f}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_forecast(cfg: CliConfig) -> int:
    a = cfg.args
    methods = _methods(a)
    ds = _load_dataset(a)
    records = forecast_panel(ds, methods, "all" if a.all_origins else "latest", a.window)
    if not records:
        raise UsageError("no forecasts: the window is longer than the panel")
    _write_outputs(cfg.output_dir, {"forecasts.csv": write_forecast_csv(records)})
    skipped = sum(r.skipped for r in records)
    print(f"{len(records)} forecasts ({skipped} skipped) for {ds.n_units} units -> "
          f"{os.path.join(cfg.output_dir, 'forecasts.csv')}")
    return EXIT_OK


def _realizations(ds: PanelDataset) -> dict[tuple[Any, int], float]:
    """Map (unit, origin) to the unit's outcome in the next panel period."""
    periods = [int(p) for p in ds.all_periods]
    nxt = dict(zip(periods, periods[1:]))
    out = {}
    for k, u in enumerate(ds.units):
        vals = dict(zip((int(p) for p in ds.unit_periods(k)), ds.unit_values(k)))
        for p, v in vals.items():
            q = nxt.get(p)
            if q is not None and q in vals:
                out[(u, p)] = float(vals[q])
    return out


def _weight_quantiles(records: list[ForecastRecord], lagged: dict[tuple[Any, int], float],
                      method: str, q: int) -> list[dict[str, Any]]:
    by_origin: dict[int, list[ForecastRecord]] = {}
    for r in records:
        if r.method == method and r.weight is not None:
            by_origin.setdefault(r.origin, []).append(r)
    sums = np.zeros(q)
    counts = np.zeros(q, dtype=int)
    for recs in by_origin.values():
        x = np.array([lagged[(r.unit_id, r.origin)] for r in recs])
        w = np.array([r.weight.w for r in recs])  # type: ignore[union-attr]
        ranks = np.argsort(np.argsort(x, kind="stable"), kind="stable")
        bins = ranks * q // len(x)
        np.add.at(sums, bins, w)
        np.add.at(counts, bins, 1)
    rows = []
    for b in range(q):
        mean_w = float(sums[b] / counts[b]) if counts[b] else math.nan
        rows.append({"quantile": b + 1, "n": int(counts[b]), "mean_ts_weight": mean_w,
                     "mean_pool_weight": 1.0 - mean_w if counts[b] else math.nan})
    return rows


def cmd_evaluate(cfg: CliConfig) -> int:
    a = cfg.args
    methods = _methods(a)
    ds = _load_dataset(a)
    if ds.all_periods.size < 3:
        raise UsageError(
            f"insufficient span: evaluation needs at least 3 periods, the panel has {ds.all_periods.size}"
        )
    records = forecast_panel(ds, methods, "all", a.window)
    real = _realizations(ds)
    labels = [m.label for m in methods]
    # Score every method on the same (unit, origin) pairs.
    ok: dict[tuple[Any, int], set[str]] = {}
    for r in records:
        if not r.skipped:
            ok.setdefault((r.unit_id, r.origin), set()).add(r.method)
    common = {k for k, ms in ok.items() if len(ms) == len(labels) and k in real}
    scored = [r for r in records if (r.unit_id, r.origin) in common]
    if not scored:
        raise UsageError("insufficient span: no origin has a forecast from every method and a realization")
    table = group_msfe(scored, real)
    units = {r.unit_id for r in scored}
    rows = [{"method": m, "group_msfe": table[m], "n_units": len(units),
             "n_forecasts": len(common)} for m in labels]
    best = min(table[m] for m in labels)
    files = {
        "accuracy.csv": rows_to_csv(rows),
        "accuracy.json": json.dumps({"group_msfe": {m: table[m] for m in labels},
                                     "relative_to_best": {m: table[m] / best if best > 0 else math.nan
                                                          for m in labels},
                                     "n_units": len(units), "n_forecasts": len(common)},
                                    indent=2, sort_keys=True) + "\n",
    }
    if a.per_unit:
        pu = per_unit_msfe(scored, real)
        files["per_unit_msfe.csv"] = rows_to_csv(
            [{"unit": u, "method": m, "msfe": pu[m][u]} for m in labels for u in ds.units if u in pu[m]]
        )
    iw_labels = [m.label for m in methods if m.name == "IW"]
    if a.delta_vs is not None:
        if not iw_labels:
            raise UsageError("--delta-vs needs an IW rule")
        try:
            other = parse_method(a.delta_vs).label
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if other not in labels:
            raise UsageError(f"--delta-vs method {other!r} is not among the evaluated methods {labels}")
        val = {(r.unit_id, r.origin, r.method): r.value for r in scored}
        drows = []
        for u, o in sorted(common, key=lambda k: (ds.units.index(k[0]), k[1])):
            y = real[(u, o)]
            d = (y - val[(u, o, iw_labels[0])]) ** 2 - (y - val[(u, o, other)]) ** 2
            drows.append({"unit": u, "origin": o, "lagged_outcome": _lagged(ds, u, o), "delta_sfe": d})
        files["delta_sfe.csv"] = rows_to_csv(drows)
    if a.quantiles:
        if not iw_labels:
            raise UsageError("--quantiles needs an IW rule")
        lagged = {(r.unit_id, r.origin): _lagged(ds, r.unit_id, r.origin) for r in scored}
        files["weight_quantiles.csv"] = rows_to_csv(_weight_quantiles(scored, lagged, iw_labels[0], a.quantiles))
    _write_outputs(cfg.output_dir, files)
    for r in rows:
        print(f"group_msfe {r['method']}: {r['group_msfe']:.6g}")
    return EXIT_OK


def _lagged(ds: PanelDataset, unit: Any, origin: int) -> float:
    k = ds.units.index(unit)
    periods = ds.unit_periods(k)
    return float(ds.unit_values(k)[int(np.searchsorted(periods, origin))])


def cmd_report(cfg: CliConfig) -> int:
    a = cfg.args
    if not os.path.isfile(a.input):
        raise UsageError(f"input file {a.input!r} does not exist")
    records = [r for r in read_forecast_csv(a.input) if not r.skipped]
    if not records:
        raise ValueError("forecast file has no usable records")
    methods = list(dict.fromkeys(r.method for r in records))
    method = a.method or next((m for m in methods if m not in ("TS", "TS-last", "Pool", "JS")), methods[0])
    if method not in methods:
        raise UsageError(f"method {method!r} not in forecast file; found {methods}")
    # Latest origin per unit.
    latest: dict[Any, ForecastRecord] = {}
    pool: dict[tuple[Any, int], float] = {}
    for r in records:
        if r.method == "Pool":
            pool[(r.unit_id, r.origin)] = r.value
        if r.method == method and (r.unit_id not in latest or r.origin > latest[r.unit_id].origin):
            latest[r.unit_id] = r
    chosen = list(latest.values())
    x = np.array([r.value for r in chosen])
    if a.mu is not None:
        mu = np.full(x.size, a.mu)
    else:
        mu = np.array([pool.get((r.unit_id, r.origin), 0.0) for r in chosen])
    summary: dict[str, Any] = {
        "method": method,
        "n_units": int(x.size),
        "share_above_mu": float(np.mean(x > mu)),
        "share_below_mu": float(np.mean(x < mu)),
        "mean": float(np.mean(x)),
        "min_shift": bool(a.min_shift),
    }
    g = x - x.min() if a.min_shift else x
    try:
        summary["gini"] = gini(g)
    except ValueError as exc:
        summary["gini"] = None
        summary["gini_error"] = str(exc)
    files = {}
    try:
        curve = kde(x, a.bandwidth)
        summary["bandwidth"] = curve.bandwidth
        files["kde.csv"] = curve.to_csv()
    except ValueError as exc:
        summary["bandwidth"] = None
        summary["kde_error"] = str(exc)
        print(f"warning: no density estimate: {exc}", file=sys.stderr)
    files["report.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    _write_outputs(cfg.output_dir, files)
    gtxt = "n/a" if summary["gini"] is None else f"{summary['gini']:.4f}"
    print(f"{method}: gini {gtxt}, share above mu {summary['share_above_mu']:.3f}, "
          f"below mu {summary['share_below_mu']:.3f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _finite(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError("must be finite")
    return v


def _panel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="panel CSV (UTF-8, header row)")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--period-col", default="period")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--covariates", help="comma-separated covariate columns; outcomes are residualized by pooled OLS")
    p.add_argument("--group-col", help="group column; shrink toward group means")
    p.add_argument("--mu", type=_finite, help="known shrink point")
    p.add_argument("--demeaned", action="store_true", help="data are demeaned: shrink toward 0")
    p.add_argument("--rule", action="append", help="weight rule (repeatable), default iw-mr")
    p.add_argument("--window", type=_positive_int, help="rolling window length R")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iwforecast", description="Individual weighting forecasts for short panels.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_DIR_ENV} or the current directory)")
        return p

    p = add("simulate", "run a Monte Carlo preset")
    p.add_argument("--preset", help="one of: " + ", ".join(x.replace("_", "-") for x in PRESETS))
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--replications", type=_positive_int)
    p.add_argument("--design", help="single design of the tyranny / tail-heaviness presets")
    p.add_argument("--workers", type=_positive_int, help="threads (results do not depend on this)")

    p = add("forecast", "forecast every unit of a panel")
    _panel_flags(p)
    p.add_argument("--all-origins", action="store_true", help="forecast at every origin, not just the latest")

    p = add("evaluate", "out-of-sample accuracy over all origins")
    _panel_flags(p)
    p.add_argument("--per-unit", action="store_true", help="also write per-unit MSFE")
    p.add_argument("--delta-vs", metavar="METHOD", help="write squared-error differences of the first IW rule vs METHOD")
    p.add_argument("--quantiles", type=_positive_int, metavar="Q",
                   help="average weights by Q quantiles of the lagged outcome")

    p = add("report", "distribution summary of a forecast file")
    p.add_argument("--input", required=True, help="forecast CSV written by the forecast command")
    p.add_argument("--method", help="method to summarize (default: first IW rule)")
    p.add_argument("--mu", type=_finite, help="reference point (default: each unit's Pool forecast)")
    p.add_argument("--min-shift", action="store_true", help="shift forecasts so the minimum is 0 before the Gini")
    p.add_argument("--bandwidth", type=_finite, help="KDE bandwidth (default: Silverman's rule)")
    return parser


_COMMANDS = {"simulate": cmd_simulate, "forecast": cmd_forecast, "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = CliConfig(args.command, _output_dir(args), args)
    try:
        return _COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PanelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
