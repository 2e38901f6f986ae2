"""Forecaster contract and iterated multi-step forecasting.

Forecasters expose a single one-step prediction from a (previous
engagement, intervention lag) context. Long-horizon forecasts iterate
that step, feeding each prediction back as the next step's previous
engagement while the lag either increments or resets to 1 after a
scheduled intervention. Model state is never mutated: each forecast runs
on a forked session.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from .errors import ConfigurationError
from .ibl import Context, MemoryStore, blended_value
from .personalize import Trajectory, current_lag


def clamp01(value: float) -> float:
    return min(max(value, 0.0), 1.0)


@runtime_checkable
class Forecaster(Protocol):
    """One-step engagement predictor; output always clamped to [0, 1]."""

    def predict_next(self, ctx: Context) -> float: ...

    def fork(self) -> "Forecaster":
        """Independent session copy; the original stays untouched."""
        ...


@dataclass(frozen=True)
class ForecastQuery:
    """Starting state plus an intervention schedule over the horizon.

    ``schedule[j-1]`` means an intervention lands immediately before
    forecast step j, so step j's context has lag 1. An all-false schedule
    lets the lag keep incrementing from ``current_lag``.
    """

    last_engagement: float
    current_lag: int
    horizon: int
    schedule: tuple[bool, ...]

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("forecast horizon must be >= 1")
        if len(self.schedule) != self.horizon:
            raise ConfigurationError(
                f"schedule length {len(self.schedule)} != horizon {self.horizon}"
            )
        if self.current_lag < 0:
            raise ConfigurationError("current_lag must be >= 0")


class IblForecaster:
    """Blended-value predictor over a frozen, traced memory.

    Evaluation time is pinned to one step past the store clock: the
    memory is fixed once training ends.
    """

    def __init__(self, store: MemoryStore):
        self.store = store

    def predict_next(self, ctx: Context) -> float:
        return clamp01(blended_value(self.store, ctx, now=self.store.clock + 1))

    def fork(self) -> "IblForecaster":
        # Prediction is read-only on the store; no copy needed.
        return self


def forecast_iterated(model: Forecaster, query: ForecastQuery) -> list[float]:
    """H-step forecast feeding each prediction back as the next context."""
    session = model.fork()
    engagement = query.last_engagement
    lag = query.current_lag
    forecast: list[float] = []
    for step in range(query.horizon):
        lag = 1 if query.schedule[step] else lag + 1
        engagement = clamp01(
            session.predict_next(Context(engagement, lag))
        )
        forecast.append(engagement)
    return forecast


def schedule_from_recorded(traj: Trajectory, start_week: int, horizon: int) -> tuple[bool, ...]:
    """Schedule mirroring recorded interventions at weeks start_week..start_week+H-1."""
    flags = []
    for offset in range(horizon):
        week = start_week + offset
        flags.append(week <= len(traj) and traj.intervention[week - 1])
    return tuple(flags)


def forecast_test_window(
    model: Forecaster,
    traj: Trajectory,
    train_weeks: int,
    test_weeks: int,
) -> list[float]:
    """Iterated forecast of the weeks following training, one value per week.

    The starting state is the last training observation; the schedule
    replays whatever interventions the trajectory actually recorded in
    the test window.
    """
    query = ForecastQuery(
        last_engagement=traj.engagement[train_weeks - 1],
        current_lag=current_lag(traj, train_weeks),
        horizon=test_weeks,
        schedule=schedule_from_recorded(traj, train_weeks, test_weeks),
    )
    return forecast_iterated(model, query)
