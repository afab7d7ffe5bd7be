from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from iwforecast.panel_data import (
    EstimationError,
    MuMode,
    Observation,
    PanelDataset,
    PanelParseError,
    PanelSchema,
    PanelValidationError,
    SubjectRecord,
    aggregate_value_added,
    demean,
    load_panel,
    pooled_mean,
    pooled_ols,
    residualize_panel,
    rolling_windows,
    serialize,
)

ID_SCHEMA = PanelSchema(unit="id", period="t", outcome="y")


def panel(rows, **kw):
    return PanelDataset.from_observations([Observation(*r) for r in rows], **kw)


class TestLoadPanel:
    def test_single_unit_balanced(self, small_csv):
        ds = load_panel(small_csv, ID_SCHEMA)
        assert ds.n_units == 1
        assert ds.T_common == 2
        assert ds.balanced

    def test_unbalanced(self):
        ds = load_panel(b"id,t,y\na,1,1\nb,1,5\nb,2,7", ID_SCHEMA)
        assert ds.n_units == 2
        assert not ds.balanced
        assert ds.T_common is None

    def test_duplicate_names_pair(self):
        with pytest.raises(PanelValidationError, match=r"\('a', 1\)"):
            load_panel(b"id,t,y\na,1,2\na,1,3\n", ID_SCHEMA)

    @pytest.mark.parametrize("bad", ["nan", "inf", "-inf"])
    def test_non_finite_outcome(self, bad):
        with pytest.raises(PanelValidationError, match="non-finite"):
            load_panel(f"id,t,y\na,1,{bad}\n".encode(), ID_SCHEMA)

    @pytest.mark.parametrize(
        "text,row",
        [
            ("id,t,y\na,1,2\na,x,3\n", 3),
            ("id,t,y\na,1,2\na,2\n", 3),
            ("id,t,y\na,1,2\na,2,abc\n", 3),
            ("id,t,y\na,1.5,2\n", 2),
        ],
    )
    def test_parse_error_reports_row(self, text, row):
        with pytest.raises(PanelParseError) as info:
            load_panel(text.encode(), ID_SCHEMA)
        assert info.value.row == row
        assert f"row {row}" in str(info.value)

    def test_missing_column(self):
        with pytest.raises(PanelParseError, match="missing column"):
            load_panel(b"id,t\na,1\n", ID_SCHEMA)

    def test_sorted_by_unit_then_period(self):
        ds = load_panel(b"id,t,y\nb,2,4\na,3,1\nb,1,3\na,1,0\n", ID_SCHEMA)
        assert ds.units == ("a", "b")
        assert ds.periods.tolist() == [1, 3, 1, 2]
        assert ds.outcomes.tolist() == [0, 1, 3, 4]

    def test_reads_text_stream_and_path(self, tmp_path):
        text = "id,t,y\na,1,2.0\n"
        p = tmp_path / "p.csv"
        p.write_text(text)
        assert load_panel(io.StringIO(text), ID_SCHEMA) == load_panel(str(p), ID_SCHEMA)

    def test_covariates_and_groups(self):
        ds = load_panel(
            b"unit,period,outcome,x,g\na,1,1,0.5,G\na,2,2,1.5,G\nb,1,3,2,H\n",
            PanelSchema(covariates=("x",), group="g"),
        )
        assert ds.covariates.tolist() == [[0.5], [1.5], [2.0]]
        assert ds.groups == ("G", "H")

    def test_invalid_utf8(self):
        with pytest.raises(PanelParseError):
            load_panel(b"id,t,y\n\xff,1,2\n", ID_SCHEMA)


class TestRoundTrip:
    def test_with_covariates_and_groups(self):
        ds = panel(
            [("a", 1, 0.1, (1.0, 2.0), "g"), ("a", 2, 1 / 3, (3.0, -1e-300), "g"), ("b", 5, 2e10, (0.0, 7.0), "h")],
            covariate_names=("x1", "x2"),
        )
        back = load_panel(serialize(ds).encode(), PanelSchema(covariates=("x1", "x2"), group="group"))
        assert back == ds

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["u1", "u2", "u3"]),
                st.integers(-5, 20),
                st.floats(allow_nan=False, allow_infinity=False, width=64),
            ),
            min_size=1,
            max_size=30,
            unique_by=lambda r: (r[0], r[1]),
        )
    )
    def test_load_serialize_identity(self, rows):
        ds = panel(rows)
        assert load_panel(serialize(ds).encode()) == ds

    def test_serialized_reals_carry_full_precision(self):
        ds = panel([("a", 1, 0.1)])
        assert "0.10000000000000001" in serialize(ds)


class TestPooledMean:
    def test_two_outcomes(self):
        assert pooled_mean(panel([("a", 1, 2.0), ("a", 2, 4.0)])) == 3.0

    def test_constant(self):
        assert pooled_mean(panel([("a", t, 1.7) for t in range(5)])) == pytest.approx(1.7, abs=0)

    def test_two_by_three(self):
        ds = panel([(u, t, v) for (u, t), v in zip([(u, t) for u in "ab" for t in (1, 2, 3)], range(1, 7))])
        assert pooled_mean(ds) == 3.5

    def test_unbalanced_uses_all_observations(self):
        ds = panel([("a", 1, 1.0), ("b", 1, 5.0), ("b", 2, 7.0)])
        assert pooled_mean(ds) == pytest.approx(13 / 3)

    def test_group_map(self):
        ds = panel([("a", 1, 1.0, None, "g"), ("a", 2, 3.0, None, "g"), ("b", 1, 10.0, None, "h")],
                   mu_mode=MuMode.group_pooled())
        assert pooled_mean(ds) == {"g": 2.0, "h": 10.0}
        assert [s.mu for s in ds.series()] == [2.0, 10.0]

    def test_empty(self):
        with pytest.raises(ValueError):
            pooled_mean(panel([]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
    def test_demeaned_is_zero(self, ys):
        ds = demean(panel([("a", t, y) for t, y in enumerate(ys)]))
        assert abs(float(np.mean(ds.outcomes))) <= 1e-12 * max(1.0, max(abs(y) for y in ys))
        assert ds.mu_mode == MuMode.known(0.0)


class TestMuMode:
    def test_known_must_be_finite(self):
        with pytest.raises(ValueError):
            MuMode.known(float("nan"))

    def test_group_needs_labels(self):
        with pytest.raises(PanelValidationError):
            panel([("a", 1, 1.0)], mu_mode=MuMode.group_pooled())


class TestResidualize:
    def test_exact_fit_gives_zero_residuals(self):
        rows = [(u, t, 1.0 + 2.0 * t - 0.5 * t * t, (float(t), float(t * t))) for u in "ab" for t in range(1, 5)]
        ds = residualize_panel(panel(rows))
        assert np.allclose(ds.outcomes, 0, atol=1e-10)
        assert ds.mu_mode == MuMode.known(0.0)

    def test_zero_beta_is_identity(self):
        ds = panel([("a", t, float(t) ** 2, (float(t), 1.0)) for t in range(4)], mu_mode=MuMode.known(3.0))
        out = residualize_panel(ds, beta=[0.0, 0.0])
        assert np.array_equal(out.outcomes, ds.outcomes)
        assert out.mu_mode == MuMode.known(3.0)

    def test_single_covariate_slope(self):
        ts = [1, 2, 3, 4]
        a, b = oracles.ols(ts, [2 * t for t in ts])
        assert (a, b) == (0, 2)
        ds = panel([("a", t, 2.0 * t, (float(t),)) for t in ts])
        assert np.allclose(pooled_ols(ds), [0.0, 2.0], atol=1e-12)
        assert np.allclose(residualize_panel(ds).outcomes, 0, atol=1e-12)

    def test_rank_deficient(self):
        with pytest.raises(EstimationError):
            residualize_panel(panel([("a", t, float(t), (1.0,)) for t in range(3)]))

    def test_beta_length_mismatch(self):
        with pytest.raises(PanelValidationError):
            residualize_panel(panel([("a", 1, 1.0, (1.0,))]), beta=[1.0, 2.0])

    def test_needs_covariates(self):
        with pytest.raises(PanelValidationError):
            residualize_panel(panel([("a", 1, 1.0)]))

    def test_ragged_covariates_rejected(self):
        with pytest.raises(PanelValidationError, match="covariate length"):
            panel([("a", 1, 1.0, (1.0,)), ("a", 2, 1.0, (1.0, 2.0))])

    def test_ols_residuals_have_zero_mean(self, rng):
        n = 60
        x = rng.normal(size=(n, 2))
        y = 3 + x @ [1.5, -2.0] + rng.normal(size=n)
        ds = residualize_panel(panel([(f"u{j % 6}", j // 6, y[j], tuple(x[j])) for j in range(n)]))
        assert abs(pooled_mean(ds)) < 1e-10


class TestValueAdded:
    def test_single_subject_zero_beta(self):
        raw = [("a", 1, "s1", 4.0, ()), ("a", 2, "s1", 5.0, ()), ("b", 1, "s2", -1.0, ())]
        ds = aggregate_value_added(raw, beta=[])
        assert ds.outcomes.tolist() == [4.0, 5.0, -1.0]

    def test_mean_of_two(self):
        ds = aggregate_value_added([("a", 1, "s1", 1.0, ()), ("a", 1, "s2", 3.0, ())], beta=[])
        assert ds.outcomes.tolist() == [2.0]

    def test_covariate_adjustment(self):
        raw = [SubjectRecord("a", 1, "s1", 1.0, (2.0,)), SubjectRecord("a", 1, "s2", 3.0, (4.0,))]
        assert aggregate_value_added(raw, beta=[0.5]).outcomes.tolist() == [0.5]

    def test_mapping_with_empty_cell(self):
        with pytest.raises(PanelValidationError, match="no subjects"):
            aggregate_value_added({("a", 1): []}, beta=[])

    def test_covariate_length(self):
        with pytest.raises(PanelValidationError):
            aggregate_value_added([("a", 1, "s", 1.0, (1.0, 2.0))], beta=[1.0])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10))
    def test_one_subject_per_cell_is_identity(self, ys):
        raw = [("u", t, "s", y, (1.0,)) for t, y in enumerate(ys)]
        assert aggregate_value_added(raw, beta=[0.0]).outcomes.tolist() == ys


class TestRollingWindows:
    def test_enumeration(self):
        ds = panel([("a", t, float(t)) for t in range(1, 5)])
        wins = rolling_windows(ds, 2)
        assert [o for o, _ in wins] == [3, 4, 5]
        assert [w.periods.tolist() for _, w in wins] == [[1, 2], [2, 3], [3, 4]]

    def test_unit_window(self):
        ds = panel([("a", t, float(t)) for t in range(1, 4)])
        assert all(w.all_periods.size == 1 for _, w in rolling_windows(ds, 1))

    def test_missing_period_drops_unit(self):
        ds = panel([("a", 1, 0.0), ("a", 2, 0.0), ("a", 3, 0.0), ("b", 1, 1.0), ("b", 3, 1.0)])
        wins = dict(rolling_windows(ds, 2))
        assert wins[4].units == ("a",)
        assert wins[3].units == ("a",)

    def test_window_longer_than_span(self):
        assert rolling_windows(panel([("a", 1, 0.0), ("a", 2, 0.0)]), 5) == []

    def test_bad_window(self):
        with pytest.raises(ValueError):
            rolling_windows(panel([("a", 1, 0.0)]), 0)

    def test_windows_are_restrictions(self, rng):
        rows = [(u, t, float(rng.normal())) for u in "abcd" for t in range(1, 8) if rng.random() > 0.2]
        ds = panel(rows)
        full = {(o.unit_id, o.period): o.outcome for o in ds.observations}
        for _, w in rolling_windows(ds, 3):
            assert w.n_obs <= ds.n_obs
            for o in w.observations:
                assert full[(o.unit_id, o.period)] == o.outcome


def test_covariates_missing_on_first_row_rejected():
    with pytest.raises(PanelValidationError, match="covariate length"):
        panel([("a", 1, 1.0), ("a", 2, 1.0, (1.0,))])
