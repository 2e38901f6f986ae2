"""Time-to-disengagement ranking and the baseline allocation policies.

For each beneficiary the forecaster projects two futures: one where an
intervention lands now and never again (u = steps until predicted
engagement first drops below the threshold) and one with no intervention
at all (v). The index u / v ranks beneficiaries; the k highest indices
receive the budgeted interventions. Futures that never cross the
threshold are censored at horizon + 1 on both sides, giving index 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .forecast import Forecaster, ForecastQuery, forecast_iterated
from .ibl import Context

DEFAULT_THRESHOLD = 0.25
DEFAULT_HORIZON = 14


class PolicyKind(str, Enum):
    TARI_IBL = "tari_ibl"
    TARI_LSTM = "tari_lstm"
    RANDOM = "random"
    ROUND_ROBIN = "round_robin"
    NONE = "none"


BASELINE_KINDS = (PolicyKind.RANDOM, PolicyKind.ROUND_ROBIN, PolicyKind.NONE)


@dataclass(frozen=True)
class TariScore:
    beneficiary_id: str
    u: int
    v: int
    index: float


def time_to_disengagement(
    model: Forecaster,
    state: Context,
    intervene_now: bool,
    horizon: int = DEFAULT_HORIZON,
    threshold: float = DEFAULT_THRESHOLD,
) -> int:
    """1-based step of the first forecast below threshold; horizon+1 if none.

    The schedule intervenes at the current timestep only (or never), so
    the forecast starts with lag 1 when ``intervene_now`` is set.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("threshold must lie in (0, 1)")
    schedule = (intervene_now,) + (False,) * (horizon - 1)
    query = ForecastQuery(
        last_engagement=state.prev_engagement,
        current_lag=state.intervention_lag,
        horizon=horizon,
        schedule=schedule,
    )
    forecast = forecast_iterated(model, query)
    for step, engagement in enumerate(forecast, start=1):
        if engagement < threshold:
            return step
    return horizon + 1


def tari_index(u: int, v: int) -> float:
    if u < 1 or v < 1:
        raise ConfigurationError("disengagement times must be >= 1")
    return u / v


def score_beneficiary(
    beneficiary_id: str,
    model: Forecaster,
    state: Context,
    horizon: int = DEFAULT_HORIZON,
    threshold: float = DEFAULT_THRESHOLD,
) -> TariScore:
    """Both disengagement times and their ratio for one beneficiary."""
    u = time_to_disengagement(model, state, True, horizon, threshold)
    v = time_to_disengagement(model, state, False, horizon, threshold)
    return TariScore(beneficiary_id=beneficiary_id, u=u, v=v, index=tari_index(u, v))


def select_top_k(scores: list[TariScore], k: int) -> set[str]:
    """The min(k, N) ids with the highest index.

    Ties break toward higher u, then lexicographically smaller id, so
    selection is deterministic.
    """
    if k < 0:
        raise ConfigurationError("k must be >= 0")
    ranked = sorted(scores, key=lambda s: (-s.index, -s.u, s.beneficiary_id))
    return {s.beneficiary_id for s in ranked[: min(k, len(ranked))]}


@dataclass
class RoundRobinState:
    """Cycles through ids in order; nobody is served twice per cycle."""

    ids: list[str]
    cursor: int = 0

    def __post_init__(self):
        self.ids = sorted(self.ids)

    def select(self, k: int) -> set[str]:
        take = min(k, len(self.ids))
        chosen = set()
        for _ in range(take):
            chosen.add(self.ids[self.cursor])
            self.cursor = (self.cursor + 1) % len(self.ids)
        return chosen


def baseline_select(
    kind: PolicyKind,
    ids: list[str],
    k: int,
    rng: np.random.Generator | None = None,
    round_robin: RoundRobinState | None = None,
) -> set[str]:
    """Selection for the non-forecasting policies.

    random draws a uniform k-subset from the given generator; round_robin
    advances the provided cycling state; none selects nobody.
    """
    if k < 0:
        raise ConfigurationError("k must be >= 0")
    if kind == PolicyKind.NONE:
        return set()
    if kind == PolicyKind.RANDOM:
        if rng is None:
            raise ConfigurationError("random policy requires a seeded generator")
        take = min(k, len(ids))
        picked = rng.choice(sorted(ids), size=take, replace=False)
        return set(str(b) for b in picked)
    if kind == PolicyKind.ROUND_ROBIN:
        if round_robin is None:
            raise ConfigurationError("round_robin policy requires its cycling state")
        return round_robin.select(k)
    raise ConfigurationError(f"not a baseline policy: {kind}")
