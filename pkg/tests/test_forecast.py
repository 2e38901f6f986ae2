"""Iterated forecasting: feedback, lag bookkeeping, prefix property."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iblcast import (
    ConfigurationError,
    Context,
    EmptyMemoryError,
    ForecastQuery,
    IblForecaster,
    IblParams,
    MemoryStore,
    Trajectory,
    forecast_iterated,
    trace_trajectory,
)
from iblcast.forecast import forecast_test_window, schedule_from_recorded


class ConstantModel:
    def __init__(self, value):
        self.value = value

    def predict_next(self, ctx):
        return self.value

    def fork(self):
        return self


class SpyModel:
    """Records the contexts it is queried with; echoes the previous engagement."""

    def __init__(self):
        self.seen = []

    def predict_next(self, ctx):
        self.seen.append(ctx)
        return ctx.prev_engagement

    def fork(self):
        return self


class TestForecastQuery:
    def test_schedule_length_must_match(self):
        with pytest.raises(ConfigurationError):
            ForecastQuery(0.5, 1, 3, (True,))

    def test_horizon_positive(self):
        with pytest.raises(ConfigurationError):
            ForecastQuery(0.5, 1, 0, ())


class TestForecastIterated:
    def test_single_step_equals_predict_next(self):
        model = ConstantModel(0.37)
        out = forecast_iterated(model, ForecastQuery(0.9, 2, 1, (False,)))
        assert out == [0.37]

    def test_constant_model_constant_output(self):
        model = ConstantModel(0.8)
        out = forecast_iterated(model, ForecastQuery(0.1, 0, 14, (False,) * 14))
        assert out == [0.8] * 14

    def test_lag_sequence_after_immediate_intervention(self):
        spy = SpyModel()
        schedule = (True,) + (False,) * 7
        forecast_iterated(spy, ForecastQuery(0.5, 9, 8, schedule))
        assert [c.intervention_lag for c in spy.seen] == [1, 2, 3, 4, 5, 6, 7, 8]

    def test_lag_increments_without_interventions(self):
        spy = SpyModel()
        forecast_iterated(spy, ForecastQuery(0.5, 3, 4, (False,) * 4))
        assert [c.intervention_lag for c in spy.seen] == [4, 5, 6, 7]

    def test_mid_horizon_intervention_resets(self):
        spy = SpyModel()
        schedule = (False, False, True, False)
        forecast_iterated(spy, ForecastQuery(0.5, 1, 4, schedule))
        assert [c.intervention_lag for c in spy.seen] == [2, 3, 1, 2]

    def test_feedback_uses_previous_prediction(self):
        spy = SpyModel()
        out = forecast_iterated(spy, ForecastQuery(0.64, 1, 3, (False,) * 3))
        # The echo model keeps returning the fed-back engagement.
        assert out == [0.64, 0.64, 0.64]
        assert spy.seen[1].prev_engagement == out[0]

    def test_output_clamped(self):
        model = ConstantModel(1.7)
        out = forecast_iterated(model, ForecastQuery(0.5, 1, 2, (False, False)))
        assert out == [1.0, 1.0]

    @given(st.integers(1, 12), st.integers(1, 12))
    @settings(max_examples=40)
    def test_prefix_property(self, h_small, extra):
        h_large = h_small + extra
        schedule = tuple(i % 3 == 0 for i in range(h_large))
        model = SpyModel()
        full = forecast_iterated(model, ForecastQuery(0.5, 2, h_large, schedule))
        prefix = forecast_iterated(
            model, ForecastQuery(0.5, 2, h_small, schedule[:h_small])
        )
        assert full[:h_small] == prefix

    def test_output_length(self):
        for h in (1, 5, 14):
            out = forecast_iterated(
                ConstantModel(0.5), ForecastQuery(0.2, 0, h, (False,) * h)
            )
            assert len(out) == h


class TestIblForecaster:
    def test_uniform_utility_store(self):
        store = MemoryStore(params=IblParams())
        traj = Trajectory("t", [0.7] * 10, [False] * 10)
        store = trace_trajectory(traj, 10, IblParams())
        model = IblForecaster(store)
        assert model.predict_next(Context(0.2, 5)) == pytest.approx(0.7)

    def test_empty_store_raises(self):
        model = IblForecaster(MemoryStore(params=IblParams()))
        with pytest.raises(EmptyMemoryError):
            model.predict_next(Context(0.5, 1))

    def test_deterministic_forecast(self):
        traj = Trajectory(
            "t",
            [0.2, 0.5, 0.7, 0.4, 0.6, 0.3, 0.8, 0.5, 0.4, 0.6],
            [False, True] + [False] * 8,
        )
        store = trace_trajectory(traj, 10, IblParams())
        model = IblForecaster(store)
        q = ForecastQuery(0.6, 4, 10, (False,) * 10)
        assert forecast_iterated(model, q) == forecast_iterated(model, q)

    def test_outputs_in_unit_interval(self):
        traj = Trajectory(
            "t", [0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6], [False] * 8
        )
        store = trace_trajectory(traj, 8, IblParams())
        out = forecast_iterated(
            IblForecaster(store), ForecastQuery(0.5, 1, 14, (False,) * 14)
        )
        assert all(0.0 <= v <= 1.0 for v in out)


class TestTestWindowHelpers:
    def test_schedule_mirrors_recorded_interventions(self):
        traj = Trajectory(
            "t", [0.5] * 30, [w == 27 for w in range(1, 31)]
        )
        schedule = schedule_from_recorded(traj, start_week=25, horizon=5)
        assert schedule == (False, False, True, False, False)

    def test_forecast_window_length(self):
        traj = Trajectory("t", [0.5] * 39, [False] * 39)
        out = forecast_test_window(ConstantModel(0.4), traj, 25, 14)
        assert len(out) == 14
