"""Synthetic cohorts, the counterfactual engine, and policy simulation.

The cohort generator plants three behavioral archetypes whose laws mirror
the interpretable profiles the personalized models are meant to recover:

* state_stable: engagement drifts as clip(current + small noise);
* transition_consistent: engagement is pulled past an individual setpoint
  each week (an overshooting map of the current level), so the previous
  level carries the signal;
* intervention_sensitive: engagement tracks time since the last
  intervention as baseline + amplitude * exp(-lag / lambda).

Policy simulation replays recorded states verbatim until a beneficiary's
simulated actions or states deviate from the record; from then on a
counterfactual generator (the exact synthetic law, or an LSTM trained on
the whole cohort) supplies next states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError
from .forecast import IblForecaster, clamp01
from .ibl import Context, MemoryStore
from .lstm import LstmForecaster, LstmModel, lstm_forward, WINDOW_LEN
from .personalize import Trajectory
from .tari import (
    PolicyKind,
    RoundRobinState,
    TariScore,
    baseline_select,
    score_beneficiary,
    select_top_k,
)

ARCHETYPE_KINDS = (
    "state_stable",
    "transition_consistent",
    "intervention_sensitive",
)

COUNTERFACTUAL_MODES = ("exact_synthetic", "lstm_generator")

# Paper-scale cohort composition: 82 / 66 / 62 of 210.
DEFAULT_MIX = (82 / 210, 66 / 210, 62 / 210)

DEFAULT_BUDGET_FRACTION = 0.03


def _q6(value: float) -> float:
    """Engagement values are quantized to 6 decimals so CSV round-trips are exact."""
    return round(float(value), 6)


@dataclass
class ArchetypeSpec:
    """One beneficiary's hidden generating law."""

    kind: str
    baseline: float
    map_rate: float = 0.0
    boost_amplitude: float = 0.0
    boost_decay: float = 1.0
    noise_scale: float = 0.05

    def __post_init__(self):
        if self.kind not in ARCHETYPE_KINDS:
            raise ConfigurationError(f"unknown archetype kind: {self.kind!r}")


@dataclass
class CohortSpec:
    """Generator settings for a synthetic cohort."""

    n: int = 210
    mix: tuple[float, float, float] = DEFAULT_MIX
    weeks: int = 39
    noise_scale: float = 0.05
    intervention_window: int = 14
    min_interventions: int = 2
    max_interventions: int = 4

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("cohort size must be >= 1")
        if len(self.mix) != len(ARCHETYPE_KINDS) or any(p < 0 for p in self.mix):
            raise ConfigurationError("mix must be three non-negative proportions")
        if abs(sum(self.mix) - 1.0) > 1e-6:
            raise ConfigurationError(f"mix proportions sum to {sum(self.mix)}, not 1")
        if self.min_interventions < 1:
            raise ConfigurationError("every beneficiary needs >= 1 early intervention")


@dataclass
class SyntheticCohort:
    trajectories: list[Trajectory]
    archetypes: dict[str, ArchetypeSpec]

    @property
    def ids(self) -> list[str]:
        return [t.beneficiary_id for t in self.trajectories]


def archetype_mean_next(spec: ArchetypeSpec, current: float, lag_next: int) -> float:
    """Noise-free next engagement under the archetype's law."""
    if spec.kind == "state_stable":
        return current
    if spec.kind == "transition_consistent":
        return current + spec.map_rate * (spec.baseline - current)
    return spec.baseline + spec.boost_amplitude * math.exp(
        -lag_next / spec.boost_decay
    )


def _apportion(n: int, mix) -> list[int]:
    """Largest-remainder rounding of proportions to integer counts."""
    raw = [p * n for p in mix]
    counts = [int(math.floor(r)) for r in raw]
    remainders = sorted(
        range(len(mix)), key=lambda i: (raw[i] - counts[i], -i), reverse=True
    )
    for i in range(n - sum(counts)):
        counts[remainders[i % len(mix)]] += 1
    return counts


def _draw_archetype(kind: str, noise_scale: float, rng: np.random.Generator) -> ArchetypeSpec:
    if kind == "state_stable":
        # The stable type's defining trait is a fixed level; it carries no
        # transition noise, which pins its fitted weights at the low corner.
        return ArchetypeSpec(
            kind=kind,
            baseline=rng.uniform(0.35, 0.85),
            noise_scale=0.0,
        )
    if kind == "transition_consistent":
        # Overshooting pull (rate > 1) sustains an oscillation around the
        # setpoint, so the previous level stays informative all the way
        # through the heavily-weighted late training weeks.
        return ArchetypeSpec(
            kind=kind,
            baseline=rng.uniform(0.35, 0.70),
            map_rate=rng.uniform(1.8, 1.95),
            noise_scale=noise_scale,
        )
    return ArchetypeSpec(
        kind=kind,
        baseline=rng.uniform(0.05, 0.25),
        boost_amplitude=rng.uniform(0.35, 0.60),
        boost_decay=rng.uniform(2.0, 5.0),
        noise_scale=noise_scale,
    )


def _first_week_level(spec: ArchetypeSpec, rng: np.random.Generator) -> float:
    if spec.kind == "transition_consistent":
        # Seed the oscillation away from the setpoint.
        offset = rng.uniform(0.15, 0.25) * rng.choice([-1.0, 1.0])
        return spec.baseline + offset
    if spec.kind == "intervention_sensitive":
        return archetype_mean_next(spec, spec.baseline, lag_next=1)
    return spec.baseline


def generate_cohort(spec: CohortSpec, seed: int) -> SyntheticCohort:
    """Deterministic cohort with hidden archetype labels.

    Every beneficiary receives between ``min_interventions`` and
    ``max_interventions`` recorded interventions inside the early
    intervention window, mirroring enrollment-era service calls.
    """
    rng = np.random.default_rng([seed, 0xC04])
    counts = _apportion(spec.n, spec.mix)
    kinds = [
        kind for kind, count in zip(ARCHETYPE_KINDS, counts) for _ in range(count)
    ]
    width = max(4, len(str(spec.n)))
    window = min(spec.intervention_window, spec.weeks)

    trajectories: list[Trajectory] = []
    archetypes: dict[str, ArchetypeSpec] = {}
    for index, kind in enumerate(kinds):
        beneficiary_id = f"b{index:0{width}d}"
        arch = _draw_archetype(kind, spec.noise_scale, rng)
        count = int(
            rng.integers(spec.min_interventions, spec.max_interventions + 1)
        )
        count = min(count, window)
        weeks_hit = set(
            int(w) for w in rng.choice(np.arange(1, window + 1), count, replace=False)
        )
        intervention = [w in weeks_hit for w in range(1, spec.weeks + 1)]

        engagement = [
            _q6(np.clip(_first_week_level(arch, rng) + rng.normal(0.0, arch.noise_scale), 0.0, 1.0))
        ]
        last_hit = 0
        for week in range(2, spec.weeks + 1):
            if intervention[week - 2]:
                last_hit = week - 1
            lag = week - last_hit
            mean = archetype_mean_next(arch, engagement[-1], lag)
            engagement.append(
                _q6(np.clip(mean + rng.normal(0.0, arch.noise_scale), 0.0, 1.0))
            )

        trajectories.append(
            Trajectory(
                beneficiary_id=beneficiary_id,
                engagement=engagement,
                intervention=intervention,
            )
        )
        archetypes[beneficiary_id] = arch
    return SyntheticCohort(trajectories=trajectories, archetypes=archetypes)


def _lag_from_actions(actions: list[bool], week: int) -> int:
    """Weeks since the last intervention strictly before ``week`` (enrollment at 0)."""
    for w in range(min(week - 1, len(actions)), 0, -1):
        if actions[w - 1]:
            return week - w
    return week


def counterfactual_next(
    mode: str,
    recorded: Trajectory,
    sim_engagement: list[float],
    sim_actions: list[bool],
    archetype: ArchetypeSpec | None = None,
    generator: LstmModel | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Next engagement for a simulated beneficiary.

    While the simulated history still matches the record exactly, the
    recorded value is replayed verbatim; after the first deviation the
    requested generator takes over.
    """
    if mode not in COUNTERFACTUAL_MODES:
        raise ConfigurationError(f"unknown counterfactual mode: {mode!r}")
    t = len(sim_engagement)
    deviated = (
        sim_engagement != recorded.engagement[:t]
        or sim_actions[: len(sim_actions)] != recorded.intervention[: len(sim_actions)]
    )
    if not deviated:
        if t >= len(recorded):
            raise ConfigurationError(
                f"replay for {recorded.beneficiary_id!r} exhausted its "
                f"{len(recorded)} recorded weeks"
            )
        return recorded.engagement[t]

    if mode == "exact_synthetic":
        if archetype is None:
            raise ConfigurationError("exact_synthetic mode needs the archetype law")
        if rng is None:
            raise ConfigurationError("exact_synthetic mode needs a seeded generator")
        lag_next = _lag_from_actions(sim_actions, t + 1)
        mean = archetype_mean_next(archetype, sim_engagement[-1], lag_next)
        return _q6(np.clip(mean + rng.normal(0.0, archetype.noise_scale), 0.0, 1.0))

    if generator is None:
        raise UsageError("lstm_generator mode needs a trained generator model")
    if t < WINDOW_LEN or len(sim_actions) < t:
        raise UsageError(
            f"lstm_generator mode needs {WINDOW_LEN} simulated steps of history"
        )
    window = np.array(
        [
            (sim_engagement[w - 1], float(sim_actions[w - 1]))
            for w in range(t - WINDOW_LEN + 1, t + 1)
        ]
    )
    return _q6(clamp01(float(lstm_forward(generator, window)[0])))


def default_budget(n: int, fraction: float = DEFAULT_BUDGET_FRACTION) -> int:
    return max(1, round(fraction * n))


@dataclass
class SimRun:
    """One policy simulation: cohort, policy, budget, and model wiring."""

    trajectories: list[Trajectory]
    policy: PolicyKind
    seed: int
    budget_k: int | None = None
    train_weeks: int = 25
    test_weeks: int = 14
    horizon: int = 14
    threshold: float = 0.25
    counterfactual_mode: str = "exact_synthetic"
    archetypes: dict[str, ArchetypeSpec] | None = None
    generator: LstmModel | None = None
    ibl_stores: dict[str, MemoryStore] | None = None
    lstm_model: LstmModel | None = None


@dataclass
class SimResult:
    policy: PolicyKind
    budget_k: int
    weekly_engaged: list[float]
    selections: list[set[str]]
    sim_engagement: dict[str, list[float]]
    sim_actions: dict[str, list[bool]]
    weekly_scores: list[list[TariScore]] = field(default_factory=list)


def engaged_fraction(states, threshold: float = 0.25) -> float:
    """Fraction of states at or above the threshold (boundary inclusive)."""
    states = list(states)
    if not states:
        raise UsageError("engaged_fraction of an empty state list is undefined")
    return sum(1 for s in states if s >= threshold) / len(states)


def _validate_run(run: SimRun) -> None:
    if run.counterfactual_mode not in COUNTERFACTUAL_MODES:
        raise ConfigurationError(
            f"unknown counterfactual mode: {run.counterfactual_mode!r}"
        )
    if run.counterfactual_mode == "exact_synthetic" and run.archetypes is None:
        raise ConfigurationError("exact_synthetic simulation needs archetype laws")
    if run.counterfactual_mode == "lstm_generator" and run.generator is None:
        raise UsageError("lstm_generator simulation needs a trained generator")
    if run.policy == PolicyKind.TARI_IBL and not run.ibl_stores:
        raise ConfigurationError("tari_ibl policy needs fitted memory stores")
    if run.policy == PolicyKind.TARI_LSTM and run.lstm_model is None:
        raise ConfigurationError("tari_lstm policy needs the trained baseline model")
    shortest = min(len(t) for t in run.trajectories)
    needed = run.train_weeks + run.test_weeks
    if shortest < needed:
        raise ConfigurationError(
            f"replay needs {needed} recorded weeks but the shortest "
            f"trajectory has {shortest}"
        )


def run_policy_simulation(run: SimRun) -> SimResult:
    """Round-by-round allocation over the test window.

    Each round selects at most k beneficiaries, records their simulated
    action, and advances every beneficiary one week via
    replay-or-counterfactual. Fully replayable from the run seed.
    """
    _validate_run(run)
    by_id = {t.beneficiary_id: t for t in run.trajectories}
    ids = sorted(by_id)
    k = run.budget_k if run.budget_k is not None else default_budget(len(ids))

    policy_rng = np.random.default_rng([run.seed, 0xA110])
    cf_rngs = {
        b: np.random.default_rng([run.seed, 0xCF, i]) for i, b in enumerate(ids)
    }
    rr_state = RoundRobinState(ids=ids)

    sim_eng = {b: list(by_id[b].engagement[: run.train_weeks]) for b in ids}
    sim_act = {b: list(by_id[b].intervention[: run.train_weeks - 1]) for b in ids}

    weekly_engaged: list[float] = []
    selections: list[set[str]] = []
    weekly_scores: list[list[TariScore]] = []

    for round_idx in range(run.test_weeks):
        decision_week = run.train_weeks + round_idx

        if run.policy in (PolicyKind.TARI_IBL, PolicyKind.TARI_LSTM):
            scores = []
            for b in ids:
                state = Context(
                    prev_engagement=clamp01(sim_eng[b][decision_week - 1]),
                    intervention_lag=_lag_from_actions(sim_act[b], decision_week),
                )
                if run.policy == PolicyKind.TARI_IBL:
                    forecaster = IblForecaster(run.ibl_stores[b])
                else:
                    history = list(
                        zip(sim_eng[b][: decision_week - 1], map(float, sim_act[b]))
                    )
                    forecaster = LstmForecaster(run.lstm_model, history)
                scores.append(
                    score_beneficiary(
                        b, forecaster, state, run.horizon, run.threshold
                    )
                )
            selected = select_top_k(scores, k)
            weekly_scores.append(scores)
        else:
            selected = baseline_select(
                run.policy, ids, k, rng=policy_rng, round_robin=rr_state
            )

        selections.append(selected)
        for b in ids:
            sim_act[b].append(b in selected)

        new_states = []
        for b in ids:
            nxt = counterfactual_next(
                run.counterfactual_mode,
                by_id[b],
                sim_eng[b],
                sim_act[b],
                archetype=run.archetypes.get(b) if run.archetypes else None,
                generator=run.generator,
                rng=cf_rngs[b],
            )
            sim_eng[b].append(nxt)
            new_states.append(nxt)
        weekly_engaged.append(engaged_fraction(new_states, run.threshold))

    return SimResult(
        policy=run.policy,
        budget_k=k,
        weekly_engaged=weekly_engaged,
        selections=selections,
        sim_engagement=sim_eng,
        sim_actions=sim_act,
        weekly_scores=weekly_scores,
    )
