from __future__ import annotations

import json
import math

import numpy as np
import pytest

from iwforecast.simulation import (
    PRESETS,
    ConfigError,
    Design,
    DistributionSpec,
    MonteCarloConfig,
    batch_means_se,
    block_rng,
    load_config,
    preset_config,
    run_experiment,
    simulate_point,
    theta_grid_from_ratios,
)
from iwforecast.simulation.streams import block_sizes

SMALL = {
    "regret_curve": 25_000,
    "tail_heaviness": 25_000,
    "weight_comparison": 12_000,
    "tyranny": 12_000,
    "custom": 12_000,
}


class TestThetaGridFromRatios:
    def test_single(self):
        g = theta_grid_from_ratios(1.0, [1.0])
        assert [(p.lambda2, p.sigma2) for p in g] == [(1.0, 1.0)]

    def test_default_grid(self):
        g = theta_grid_from_ratios(1.0, np.linspace(0.001, 2, 50))
        assert len(g) == 50
        assert g.points[0].lambda2 == pytest.approx(0.001) and g.points[-1].lambda2 == 2.0

    def test_scaled(self):
        assert theta_grid_from_ratios(2.0, [0.5]).points[0].lambda2 == 1.0

    @pytest.mark.parametrize("ratios", [[0.0], [-1.0, 1.0], [], [math.inf]])
    def test_invalid(self, ratios):
        with pytest.raises(ValueError):
            theta_grid_from_ratios(1.0, ratios)

    def test_nu_recorded(self):
        assert theta_grid_from_ratios(1.0, [0.5, 1.2]).nu == pytest.approx(0.5)
        assert theta_grid_from_ratios(1.0, [0.001, 2.0]).nu is None


class TestStreams:
    def test_block_sizes(self):
        assert block_sizes(25_000) == [10_000, 10_000, 5_000]
        assert block_sizes(1) == [1]
        with pytest.raises(ValueError):
            block_sizes(0)

    def test_keys_separate_streams(self):
        base = block_rng(1, "p", 0, 0).random(4)
        for other in (block_rng(2, "p", 0, 0), block_rng(1, "q", 0, 0), block_rng(1, "p", 1, 0), block_rng(1, "p", 0, 1)):
            assert not np.array_equal(base, other.random(4))
        assert np.array_equal(base, block_rng(1, "p", 0, 0).random(4))

    def test_bad_seed(self):
        with pytest.raises(ValueError):
            block_rng(-1, "p", 0, 0)

    def test_batch_means_se(self, rng):
        x = rng.normal(size=20_000)
        assert batch_means_se(x) == pytest.approx(1 / math.sqrt(x.size), rel=0.4)
        assert math.isnan(batch_means_se(x[:5]))


class TestEngine:
    def test_draw_shapes(self):
        d = Design(DistributionSpec.normal(), DistributionSpec.normal(), 3, pool=2.0, lambda2=4.0)
        A, Y = d.draw(block_rng(0, "t", 0, 0), 1000)
        assert A.shape == (1000,) and Y.shape == (1000, 4)
        assert abs(A.mean() - 2.0) < 0.3 and abs(A.var() - 4.0) < 0.6

    def test_prefix_stable(self):
        d = Design(DistributionSpec.normal(), DistributionSpec.normal(), 3)
        a = simulate_point(d, ["ts", "iw-mr"], 15_000, 4, "x")
        b = simulate_point(d, ["ts", "iw-mr"], 25_000, 4, "x")
        assert np.array_equal(a.sq_errors["IW-MR"][:10_000], b.sq_errors["IW-MR"][:10_000])

    def test_common_random_numbers(self):
        d = Design(DistributionSpec.normal(), DistributionSpec.normal(), 3)
        a = simulate_point(d, ["ts"], 500, 4, "x")
        b = simulate_point(d, ["pool", "ts", "iw-o"], 500, 4, "x")
        assert np.array_equal(a.sq_errors["TS"], b.sq_errors["TS"])
        assert np.array_equal(a.A, b.A)

    def test_workers_identical(self):
        d = Design(DistributionSpec.laplace(), DistributionSpec.normal(), 3)
        a = simulate_point(d, ["iw-mr", "js"], 35_000, 8, "w", workers=1)
        b = simulate_point(d, ["iw-mr", "js"], 35_000, 8, "w", workers=4)
        for k in a.sq_errors:
            assert np.array_equal(a.sq_errors[k], b.sq_errors[k])

    def test_too_short(self):
        d = Design(DistributionSpec.normal(), DistributionSpec.normal(), 2)
        with pytest.raises(ValueError):
            simulate_point(d, ["iw-mr:lagged"], 10, 1, "x")

    def test_duplicate_methods(self):
        d = Design(DistributionSpec.normal(), DistributionSpec.normal(), 3)
        with pytest.raises(ValueError):
            simulate_point(d, ["ts", "TS"], 10, 1, "x")

    @pytest.mark.parametrize("kw", [dict(replications=0), dict(T=0), dict(workers=0)])
    def test_mc_config_invalid(self, kw):
        with pytest.raises(ValueError):
            MonteCarloConfig(**kw)

    def test_oracle_uses_design_parameters(self):
        d = Design(DistributionSpec.normal(), DistributionSpec.normal(), 3, lambda2=1.0)
        dr = simulate_point(d, ["oracle", "oracle:lagged"], 50, 1, "x")
        assert np.all(dr.weights["Oracle"] == 0.75)
        assert np.all(dr.weights["Oracle:lagged"] == 0.5)


class TestPresets:
    @pytest.mark.parametrize("name", PRESETS)
    def test_replications_one_deterministic(self, name):
        a = run_experiment(preset_config(name, replications=1, seed=11)).files()
        b = run_experiment(preset_config(name, replications=1, seed=11)).files()
        assert a == b

    @pytest.mark.parametrize("name", PRESETS)
    def test_workers_byte_identical(self, name):
        a = run_experiment(preset_config(name, replications=SMALL[name], seed=5, workers=1)).files()
        b = run_experiment(preset_config(name, replications=SMALL[name], seed=5, workers=4)).files()
        assert a == b

    def test_hyphenated_name(self):
        assert preset_config("regret-curve").preset == "regret_curve"

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="regret_curve"):
            preset_config("nope")

    def test_unknown_design(self):
        with pytest.raises(ConfigError, match="normal-1"):
            preset_config("tyranny", design="cauchy")

    def test_single_design(self):
        res = run_experiment(preset_config("tyranny", design="laplace", replications=200))
        files = res.files()
        assert set(files) == {"curves.csv", "summary.json", "scatter_laplace.csv"}
        lines = files["scatter_laplace.csv"].splitlines()
        assert lines[0] == "A,delta_sfe" and len(lines) == 201

    @pytest.mark.parametrize(
        "kw",
        [
            dict(replications=0),
            dict(T=1),
            dict(methods=("iw-mr:lagged",), T=2),
            dict(methods=()),
            dict(seed=-1),
            dict(seed=2**64),
            dict(workers=0),
            dict(methods=("iw-mr", "js", "ts")),
            dict(bogus=1),
        ],
    )
    def test_config_errors(self, kw):
        name = "tyranny" if "methods" in kw and len(kw["methods"]) == 3 else "custom"
        with pytest.raises(ConfigError):
            preset_config(name, **kw)

    def test_tail_needs_iw(self):
        with pytest.raises(ConfigError):
            preset_config("tail_heaviness", methods=("ts-last", "pool"))

    def test_summary_echoes_config(self):
        res = run_experiment(preset_config("weight_comparison", replications=50, seed=3))
        payload = json.loads(res.summary_json())
        assert payload["config"]["preset"] == "weight_comparison"
        assert payload["config"]["seed"] == 3
        assert len(payload["config"]["grid"]["lambda2"]) == 50
        assert set(payload["results"]["max_regret"]) == {"IW-MR", "IW-O", "IW-MSFE-IS", "IW-MSFE-OOS(P=1)"}

    def test_tail_reports_variances(self):
        res = run_experiment(preset_config("tail_heaviness", replications=2_000, design="dp-3-1"))
        diag = res.summary["designs"]["dp-3-1"]
        for key in ("variance", "sample_variance", "cs_kurtosis", "cs_kurtosis_population",
                    "assumption2_cov", "assumption2_cov_known_moment"):
            assert key in diag
        assert diag["variance"] == pytest.approx(1.0)

    def test_write(self, tmp_path):
        res = run_experiment(preset_config("custom", replications=100))
        paths = res.write(tmp_path / "out")
        assert sorted(p.rsplit("/", 1)[1] for p in paths) == ["curves.csv", "summary.json"]

    def test_regret_curve_iw_below_base_maxima(self):
        res = run_experiment(preset_config("regret_curve", replications=20_000, seed=2))
        rows = res.curves
        reg = {m: [r["regret"] for r in rows if r["method"] == m] for m in ("TS-last", "Pool", "IW-MR:lagged")}
        cap = min(max(reg["TS-last"]), max(reg["Pool"]))
        assert max(reg["IW-MR:lagged"]) < cap


class TestLoadConfig:
    def write(self, tmp_path, obj):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
        return p

    def test_full(self, tmp_path):
        p = self.write(tmp_path, {
            "preset": "custom",
            "T": 4,
            "replications": 300,
            "seed": 9,
            "methods": ["ts", "pool", "iw-mr2"],
            "effect": {"kind": "laplace", "location": 0, "scale": 1},
            "shock": {"kind": "normal", "mean": 0, "variance": 2},
            "grid": {"sigma2": 1, "ratios": [0.5, 1.0, 1.5]},
        })
        cfg = load_config(p)
        assert cfg.T == 4 and cfg.seed == 9 and len(cfg.grid) == 3
        assert cfg.effect == DistributionSpec.laplace(0, 1)
        res = run_experiment(cfg)
        assert len(res.curves) == 3 * 3

    def test_preset_defaults(self, tmp_path):
        cfg = load_config(self.write(tmp_path, {"preset": "tyranny", "design": "normal-3"}))
        assert cfg.replications == 10_000 and [d.name for d in cfg.designs] == ["normal-3"]

    def test_designs(self, tmp_path):
        cfg = load_config(self.write(tmp_path, {
            "preset": "tyranny",
            "designs": [{"name": "dp", "effect": {"kind": "double-pareto", "shape": 3, "scale": 1}, "js_lambda2": 1.1}],
        }))
        assert cfg.designs[0].js_lambda2 == 1.1

    @pytest.mark.parametrize(
        "obj",
        [
            "not json",
            [1, 2],
            {"T": 3},
            {"preset": "custom", "unknown": 1},
            {"preset": "custom", "effect": {"kind": "cauchy"}},
            {"preset": "custom", "T": "x"},
            {"preset": "custom", "grid": {"ratios": [-1]}},
        ],
    )
    def test_errors(self, tmp_path, obj):
        with pytest.raises(ConfigError):
            load_config(self.write(tmp_path, obj))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")
