"""Instance-based memory: similarity, activation, retrieval, and blending.

One memory per beneficiary. An instance stores the context it was observed
in (previous engagement level, weeks since last intervention), the observed
utility (that week's engagement), and every timestep it occurred at. Its
activation combines power-law recency/frequency decay, weighted partial
matching against the query context, and optional logistic noise:

    A_i = ln( sum_j (now - t_ij)^-d )
          + mu * sum_k w_k * (Sim(s_ik, s_qk) - 1)
          + sigma * xi

Activations pass through a Boltzmann softmax to give retrieval
probabilities, and the predicted engagement is the probability-weighted
average of stored utilities (the blended value).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyMemoryError, TemporalOrderError

DEFAULT_DECAY = 0.5
DEFAULT_MISMATCH = 1.0
DEFAULT_NOISE = 0.0

# Temperature floor keeps the softmax well-defined for noiseless runs,
# where the tau = sigma * sqrt(2) convention would collapse to zero.
MIN_TEMPERATURE = 0.2

# Lags further apart than this many weeks count as maximally dissimilar
# (half the 26-step horizon the models are exercised over).
LAG_SIMILARITY_CAP = 13


@dataclass(frozen=True)
class WeightProfile:
    """Attribute weights of one personalized memory, the fitted quantity."""

    w_prev_engagement: float
    w_intervention_lag: float

    def __post_init__(self):
        if self.w_prev_engagement < 0 or self.w_intervention_lag < 0:
            raise ConfigurationError("attribute weights must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_prev_engagement, self.w_intervention_lag])


@dataclass(frozen=True)
class Context:
    """Query/instance context: last week's engagement and intervention lag."""

    prev_engagement: float
    intervention_lag: int

    def __post_init__(self):
        if not 0.0 <= self.prev_engagement <= 1.0:
            raise ConfigurationError(
                f"prev_engagement {self.prev_engagement} outside [0, 1]"
            )
        if self.intervention_lag < 0:
            raise ConfigurationError("intervention_lag must be >= 0")


@dataclass
class Instance:
    """A stored observation plus every timestep it (re)occurred at."""

    context: Context
    utility: float
    occurrences: list[int]


@dataclass
class IblParams:
    """Memory parameters: decay d, mismatch mu, noise sigma, temperature tau.

    ``temperature_tau=None`` resolves to ``max(MIN_TEMPERATURE, sigma*sqrt(2))``,
    the usual coupling of temperature to activation noise.
    """

    decay_d: float = DEFAULT_DECAY
    mismatch_mu: float = DEFAULT_MISMATCH
    noise_sigma: float = DEFAULT_NOISE
    temperature_tau: float | None = None
    weights: WeightProfile = field(
        default_factory=lambda: WeightProfile(1.0, 1.0)
    )

    def __post_init__(self):
        if self.decay_d <= 0:
            raise ConfigurationError("decay_d must be > 0")
        if self.mismatch_mu < 0:
            raise ConfigurationError("mismatch_mu must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.temperature_tau is None:
            self.temperature_tau = max(
                MIN_TEMPERATURE, self.noise_sigma * math.sqrt(2.0)
            )
        if self.temperature_tau <= 0:
            raise ConfigurationError("temperature_tau must be > 0")


@dataclass
class MemoryStore:
    """One beneficiary's memory: instances, parameters, and a clock.

    Mutated single-threaded; an occurrence can never be recorded at or
    before the current clock, which keeps every retrieval gap >= 1.
    """

    params: IblParams
    instances: list[Instance] = field(default_factory=list)
    clock: int = 0
    rng: np.random.Generator | None = None
    _by_key: dict[tuple[Context, float], Instance] = field(
        default_factory=dict, init=False, repr=False
    )

    def __post_init__(self):
        for inst in self.instances:
            self._by_key[(inst.context, inst.utility)] = inst

    def __len__(self) -> int:
        return len(self.instances)


def similarity(a: float, b: float, kind: str, lag_cap: int = LAG_SIMILARITY_CAP) -> float:
    """Degree of similarity in [0, 1] between two values of one attribute.

    Engagement levels live on [0, 1], so similarity is linear in distance.
    Intervention lags are compared linearly up to ``lag_cap`` weeks, beyond
    which they are maximally dissimilar.
    """
    if kind == "engagement":
        return 1.0 - abs(a - b)
    if kind == "lag":
        return 1.0 - min(abs(a - b), lag_cap) / lag_cap
    raise ConfigurationError(f"unknown similarity kind: {kind!r}")


def context_similarity_deficits(instance_ctx: Context, query_ctx: Context) -> tuple[float, float]:
    """(Sim - 1) per attribute, the partial-matching penalties before weighting."""
    s_eng = similarity(
        instance_ctx.prev_engagement, query_ctx.prev_engagement, "engagement"
    )
    s_lag = similarity(
        instance_ctx.intervention_lag, query_ctx.intervention_lag, "lag"
    )
    return s_eng - 1.0, s_lag - 1.0


def activation(store: MemoryStore, inst: Instance, query: Context, now: int) -> float:
    """Activation of one instance at timestep ``now`` given a query context.

    Deterministic when the store's noise is zero; otherwise adds one scaled
    logistic draw per call from the store's seeded generator.
    """
    p = store.params
    if any(t >= now for t in inst.occurrences):
        raise TemporalOrderError(
            f"instance has an occurrence at or after now={now}"
        )
    base = math.log(sum((now - t) ** -p.decay_d for t in inst.occurrences))
    d_eng, d_lag = context_similarity_deficits(inst.context, query)
    mismatch = p.mismatch_mu * (
        p.weights.w_prev_engagement * d_eng
        + p.weights.w_intervention_lag * d_lag
    )
    value = base + mismatch
    if p.noise_sigma > 0:
        if store.rng is None:
            raise ConfigurationError(
                "activation noise requires a seeded generator on the store"
            )
        value += p.noise_sigma * store.rng.logistic()
    return value


def retrieval_probabilities(activations, tau: float) -> np.ndarray:
    """Boltzmann softmax P_i = exp(A_i/tau) / sum_j exp(A_j/tau).

    Computed after subtracting the max activation so large activations
    cannot overflow.
    """
    if tau <= 0:
        raise ConfigurationError("temperature tau must be > 0")
    acts = np.asarray(activations, dtype=float)
    if acts.size == 0:
        raise EmptyMemoryError("no activations to normalize")
    scaled = (acts - acts.max()) / tau
    exp = np.exp(scaled)
    return exp / exp.sum()


def blended_value(store: MemoryStore, query: Context, now: int) -> float:
    """Retrieval-probability-weighted average of stored utilities.

    Always lies between the smallest and largest stored utility.
    """
    if not store.instances:
        raise EmptyMemoryError("cannot blend over an empty memory")
    acts = [activation(store, inst, query, now) for inst in store.instances]
    probs = retrieval_probabilities(acts, store.params.temperature_tau)
    utilities = np.array([inst.utility for inst in store.instances])
    value = float(np.dot(probs, utilities))
    # Guard the convex-combination bound against float round-off.
    return min(max(value, utilities.min()), utilities.max())


def record_instance(store: MemoryStore, ctx: Context, utility: float, t: int) -> MemoryStore:
    """Record an observation at timestep ``t``, merging exact repeats.

    A repeat of an existing (context, utility) pair appends a new
    occurrence to that instance; anything else becomes a new instance.
    Advances the store clock to ``t``.
    """
    if t <= store.clock:
        raise TemporalOrderError(
            f"timestep {t} does not advance the store clock {store.clock}"
        )
    key = (ctx, utility)
    inst = store._by_key.get(key)
    if inst is None:
        inst = Instance(context=ctx, utility=utility, occurrences=[t])
        store.instances.append(inst)
        store._by_key[key] = inst
    else:
        inst.occurrences.append(t)
    store.clock = t
    return store
