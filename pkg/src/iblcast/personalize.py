"""Per-beneficiary model personalization: tracing and weight grid search.

A beneficiary's memory is built by model tracing: each training week is
recorded as an instance whose context is (previous week's engagement,
weeks since last intervention) and whose utility is that week's
engagement. The two attribute weights are fit by exhaustive grid search
minimizing a recency-weighted sum of one-step squared prediction errors:

    loss = sum_t q_t * SE_t,    q_t = exp(t/10) / sum_i exp(t_i/10)

scored over weeks t >= 2, with each week predicted strictly from the
instances of earlier weeks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigurationError, IngestionError
from .ibl import (
    Context,
    IblParams,
    MemoryStore,
    WeightProfile,
    blended_value,
    record_instance,
)

# All fitted profiles live on this grid: (0, 0) through (5, 5) in 0.5 steps.
WEIGHT_GRID = tuple(i * 0.5 for i in range(11))


@dataclass
class Trajectory:
    """One beneficiary's weekly record, weeks numbered from 1.

    ``engagement[t-1]`` is the listening fraction in week t and
    ``intervention[t-1]`` whether a service call was received that week.
    Enrollment counts as an intervention at week 0.
    """

    beneficiary_id: str
    engagement: list[float]
    intervention: list[bool]

    def __post_init__(self):
        if not self.engagement:
            raise IngestionError(
                f"trajectory {self.beneficiary_id!r} is empty"
            )
        if len(self.engagement) != len(self.intervention):
            raise IngestionError(
                f"trajectory {self.beneficiary_id!r}: engagement and "
                "intervention lengths differ"
            )
        for value in self.engagement:
            if not 0.0 <= value <= 1.0:
                raise IngestionError(
                    f"trajectory {self.beneficiary_id!r}: engagement "
                    f"{value} outside [0, 1]"
                )

    def __len__(self) -> int:
        return len(self.engagement)


@dataclass
class FitResult:
    """Outcome of a weight grid search for one beneficiary."""

    beneficiary_id: str
    best_profile: WeightProfile
    best_loss: float
    loss_surface: dict[WeightProfile, float] = field(repr=False)


def intervention_lag(traj: Trajectory, week: int) -> int:
    """Weeks since the last intervention strictly before ``week``.

    Enrollment is the week-0 intervention, so the lag is always >= 1.
    """
    for w in range(week - 1, 0, -1):
        if traj.intervention[w - 1]:
            return week - w
    return week


def current_lag(traj: Trajectory, week: int) -> int:
    """Weeks since the last intervention at or before ``week`` (0 if this week)."""
    for w in range(week, 0, -1):
        if traj.intervention[w - 1]:
            return week - w
    return week


def context_for_week(traj: Trajectory, week: int) -> Context:
    """Context observed at ``week``: previous engagement and current lag.

    Week 1 has no predecessor, so it uses its own engagement as the
    previous level rather than a sentinel outside [0, 1].
    """
    prev = traj.engagement[week - 2] if week >= 2 else traj.engagement[0]
    return Context(prev_engagement=prev, intervention_lag=intervention_lag(traj, week))


def _check_train_weeks(traj: Trajectory, train_weeks: int, minimum: int = 1) -> None:
    if train_weeks < minimum:
        raise ConfigurationError(f"train_weeks must be >= {minimum}")
    if train_weeks > len(traj):
        raise ConfigurationError(
            f"train_weeks {train_weeks} exceeds trajectory length {len(traj)}"
        )


def trace_trajectory(traj: Trajectory, train_weeks: int, params: IblParams) -> MemoryStore:
    """Build a memory by replaying the first ``train_weeks`` weeks as instances."""
    _check_train_weeks(traj, train_weeks)
    store = MemoryStore(params=params)
    for week in range(1, train_weeks + 1):
        record_instance(
            store,
            context_for_week(traj, week),
            traj.engagement[week - 1],
            week,
        )
    return store


def _loss_weights(weeks: list[int]) -> list[float]:
    """Normalized recency weights q_t over the scored weeks."""
    raw = [math.exp(t / 10.0) for t in weeks]
    total = sum(raw)
    return [r / total for r in raw]


def weighted_loss(
    traj: Trajectory,
    profile: WeightProfile,
    train_weeks: int,
    base_params: IblParams | None = None,
) -> float:
    """Recency-weighted one-step squared error of a traced memory.

    Replays the trace; each week t >= 2 is predicted by blending before
    week t is recorded, so no prediction ever sees its own target.
    """
    _check_train_weeks(traj, train_weeks, minimum=2)
    base = base_params if base_params is not None else IblParams()
    params = replace(base, weights=profile)
    store = MemoryStore(params=params)
    scored_weeks: list[int] = []
    errors: list[float] = []
    for week in range(1, train_weeks + 1):
        ctx = context_for_week(traj, week)
        actual = traj.engagement[week - 1]
        if week >= 2:
            predicted = blended_value(store, ctx, now=week)
            scored_weeks.append(week)
            errors.append((predicted - actual) ** 2)
        record_instance(store, ctx, actual, week)
    weights = _loss_weights(scored_weeks)
    return sum(q * se for q, se in zip(weights, errors))


def grid_search_weights(
    traj: Trajectory,
    train_weeks: int,
    base_params: IblParams | None = None,
) -> FitResult:
    """Exhaustive search of the 11x11 weight grid for the smallest loss.

    Iterates row-major over (w_prev, w_lag) and keeps the first strict
    improvement, so ties resolve to the smaller profile.
    """
    surface: dict[WeightProfile, float] = {}
    best_profile: WeightProfile | None = None
    best_loss = math.inf
    for w_prev in WEIGHT_GRID:
        for w_lag in WEIGHT_GRID:
            profile = WeightProfile(w_prev, w_lag)
            loss = weighted_loss(traj, profile, train_weeks, base_params)
            surface[profile] = loss
            if loss < best_loss:
                best_loss = loss
                best_profile = profile
    return FitResult(
        beneficiary_id=traj.beneficiary_id,
        best_profile=best_profile,
        best_loss=best_loss,
        loss_surface=surface,
    )


def fit_cohort(
    trajectories: list[Trajectory],
    train_weeks: int,
    base_params: IblParams | None = None,
) -> list[FitResult]:
    """Grid-search every beneficiary independently, in input order."""
    return [grid_search_weights(t, train_weeks, base_params) for t in trajectories]
