"""Weight-profile clustering and cluster-guided training regimens.

Fitted (w_prev_engagement, w_intervention_lag) profiles are clustered
with Lloyd's algorithm (distance-proportional probabilistic seeding, best
of many restarts). Cluster counts are scored by mean silhouette, a
within-sum-of-squares elbow, and the gap statistic against uniform
reference draws. The regimen experiment then trains the recurrent
baseline on cluster-derived samples (entire / within / outside / random)
and compares per-beneficiary test error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError
from .forecast import forecast_test_window
from .ibl import WeightProfile
from .lstm import LstmConfig, LstmForecaster, lstm_train, make_windows, trajectory_history_pairs
from .personalize import Trajectory

KMEANS_RESTARTS = 100
KMEANS_MAX_ITER = 300
GAP_REFERENCE_DRAWS = 50

REGIMENS = ("entire", "within_cluster", "outside_cluster", "random")


@dataclass
class Clustering:
    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    inertia: float


@dataclass
class QualityScores:
    """Per-k diagnostics plus the k each measure selects."""

    ks: list[int]
    silhouette: dict[int, float]
    wss: dict[int, float]
    gap: dict[int, float]
    gap_se: dict[int, float]
    silhouette_k: int
    elbow_k: int
    gap_k: int


@dataclass
class RegimenReport:
    regimen: str
    weekly_mae: list[float]
    per_beneficiary: dict[str, float]


@dataclass
class RegimenComparison:
    regimen_a: str
    regimen_b: str
    wins_a: int
    wins_b: int
    ties: int


@dataclass
class RegimenOutcome:
    reports: dict[str, RegimenReport]
    comparisons: list[RegimenComparison]
    train_ids: list[str]
    test_ids: list[str]
    # (beneficiary, distance to own centroid, whether within beat entire)
    centroid_distance_rows: list[tuple[str, float, bool]] = field(default_factory=list)


def _profile_matrix(profiles: dict[str, WeightProfile]) -> tuple[list[str], np.ndarray]:
    ids = sorted(profiles)
    points = np.array([profiles[b].as_array() for b in ids])
    return ids, points


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy probabilistic seeding: each new centroid drawn ~ squared distance."""
    n = len(points)
    centroids = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centroids], axis=0
        )
        total = d2.sum()
        if total <= 0:
            probs = np.full(n, 1.0 / n)
        else:
            probs = d2 / total
        centroids.append(points[int(rng.choice(n, p=probs))])
    return np.array(centroids)


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator):
    centroids = _seed_centroids(points, k, rng)
    labels = np.full(len(points), -1)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for c in range(k):
            members = points[new_labels == c]
            if len(members) == 0:
                # Re-seed an empty cluster at the point farthest from its centroid.
                farthest = int(d2.min(axis=1).argmax())
                centroids[c] = points[farthest]
                new_labels[farthest] = c
            else:
                centroids[c] = members.mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return labels, centroids, inertia


def _best_of_restarts(
    points: np.ndarray, k: int, rng: np.random.Generator, restarts: int
):
    best = None
    for _ in range(restarts):
        labels, centroids, inertia = _lloyd(points, k, rng)
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia)
    return best


def kmeans_cluster(
    profiles: dict[str, WeightProfile],
    k: int,
    seed: int,
    restarts: int = KMEANS_RESTARTS,
) -> Clustering:
    """Best-of-restarts Lloyd clustering of weight profiles.

    Clusters are relabeled by ascending centroid coordinates so the
    numbering is stable across runs with the same seed.
    """
    ids, points = _profile_matrix(profiles)
    distinct = len(np.unique(points, axis=0))
    if k > distinct:
        raise ConfigurationError(
            f"k={k} exceeds the {distinct} distinct profiles"
        )
    rng = np.random.default_rng([seed, 0x63])
    labels, centroids, inertia = _best_of_restarts(points, k, rng, restarts)
    order = np.lexsort((centroids[:, 1], centroids[:, 0]))
    remap = {int(old): new for new, old in enumerate(order)}
    return Clustering(
        k=k,
        assignments={b: remap[int(label)] for b, label in zip(ids, labels)},
        centroids=centroids[order],
        inertia=inertia,
    )


def _silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    n = len(points)
    dists = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    score = 0.0
    for i in range(n):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            continue  # singleton clusters contribute 0
        a = dists[i][own].sum() / (n_own - 1)
        b = min(
            dists[i][labels == other].mean()
            for other in np.unique(labels)
            if other != labels[i]
        )
        score += (b - a) / max(a, b)
    return score / n


def _uniform_reference(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    return rng.uniform(lo, hi, size=points.shape)


def cluster_quality(
    profiles: dict[str, WeightProfile],
    k_range,
    seed: int,
    reference_draws: int = GAP_REFERENCE_DRAWS,
    restarts: int = 10,
) -> QualityScores:
    """Silhouette, within-sum-of-squares elbow, and gap statistic per k.

    The elbow is the interior k with maximum discrete curvature of the
    WSS curve; the gap choice follows the one-standard-error rule against
    ``reference_draws`` uniform samples over the data's bounding box.
    """
    ids, points = _profile_matrix(profiles)
    n = len(points)
    ks = sorted(k_range)
    if not ks or ks[0] < 2 or ks[-1] > n - 1:
        raise ConfigurationError(f"k_range must lie within [2, {n - 1}]")
    if len(np.unique(points, axis=0)) == 1:
        raise ConfigurationError(
            "cluster quality is undefined for identical profiles"
        )
    rng = np.random.default_rng([seed, 0x9A9])

    silhouette: dict[int, float] = {}
    wss: dict[int, float] = {}
    gap: dict[int, float] = {}
    gap_se: dict[int, float] = {}
    references = [_uniform_reference(points, rng) for _ in range(reference_draws)]
    for k in ks:
        labels, _, inertia = _best_of_restarts(points, k, rng, restarts)
        silhouette[k] = _silhouette(points, labels)
        wss[k] = inertia
        ref_logs = []
        for ref in references:
            _, _, ref_inertia = _best_of_restarts(ref, k, rng, restarts)
            ref_logs.append(math.log(max(ref_inertia, 1e-12)))
        gap[k] = float(np.mean(ref_logs)) - math.log(max(inertia, 1e-12))
        gap_se[k] = float(np.std(ref_logs) * math.sqrt(1.0 + 1.0 / reference_draws))

    silhouette_k = max(ks, key=lambda k: (silhouette[k], -k))
    if len(ks) >= 3:
        curvature = {
            k: wss[prev] - 2.0 * wss[k] + wss[nxt]
            for prev, k, nxt in zip(ks, ks[1:], ks[2:])
        }
        elbow_k = max(curvature, key=lambda k: (curvature[k], -k))
    else:
        elbow_k = silhouette_k
    gap_k = ks[-1]
    for k, nxt in zip(ks, ks[1:]):
        if gap[k] >= gap[nxt] - gap_se[nxt]:
            gap_k = k
            break
    return QualityScores(
        ks=ks,
        silhouette=silhouette,
        wss=wss,
        gap=gap,
        gap_se=gap_se,
        silhouette_k=silhouette_k,
        elbow_k=elbow_k,
        gap_k=gap_k,
    )


def _forecast_mae(model, traj: Trajectory, train_weeks: int, test_weeks: int):
    forecaster = LstmForecaster(model, trajectory_history_pairs(traj, train_weeks))
    forecast = forecast_test_window(forecaster, traj, train_weeks, test_weeks)
    truth = traj.engagement[train_weeks : train_weeks + test_weeks]
    errors = [abs(p - a) for p, a in zip(forecast, truth)]
    return errors


def regimen_experiment(
    trajectories: list[Trajectory],
    clustering: Clustering,
    seed: int,
    train_weeks: int = 25,
    test_weeks: int = 14,
    lstm_config: LstmConfig | None = None,
    profiles: dict[str, WeightProfile] | None = None,
) -> RegimenOutcome:
    """Train entire/within/outside/random baselines and compare test error.

    Each cluster is split in half (seeded shuffle, odd member to the
    training side). Outside-cluster error for a test beneficiary averages
    the two models trained on the foreign clusters; the random regimen
    trains on a third of the pooled training beneficiaries.
    """
    config = lstm_config if lstm_config is not None else LstmConfig()
    by_id = {t.beneficiary_id: t for t in trajectories}
    rng = np.random.default_rng([seed, 0x4E6])

    members: dict[int, list[str]] = {c: [] for c in range(clustering.k)}
    for b in sorted(clustering.assignments):
        members[clustering.assignments[b]].append(b)

    train_by_cluster: dict[int, list[str]] = {}
    test_by_cluster: dict[int, list[str]] = {}
    for c, ids in members.items():
        if len(ids) < 2:
            raise ConfigurationError(
                f"cluster {c} has {len(ids)} member(s); cannot split in half"
            )
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        half = (len(ids) + 1) // 2
        train_by_cluster[c] = sorted(shuffled[:half])
        test_by_cluster[c] = sorted(shuffled[half:])

    train_ids = sorted(b for ids in train_by_cluster.values() for b in ids)
    test_ids = sorted(b for ids in test_by_cluster.values() for b in ids)
    n_random = len(train_ids) // 3
    if n_random < 1:
        raise ConfigurationError("too few training beneficiaries for the random regimen")
    random_ids = sorted(
        train_ids[i] for i in rng.choice(len(train_ids), n_random, replace=False)
    )

    def train_on(ids: list[str], tag: int):
        windows = make_windows([by_id[b] for b in ids], train_weeks)
        return lstm_train(windows, config, seed=seed * 1000 + tag)

    entire_model = train_on(train_ids, 0)
    cluster_models = {c: train_on(train_by_cluster[c], 1 + c) for c in members}
    random_model = train_on(random_ids, 99)

    per_beneficiary: dict[str, dict[str, float]] = {r: {} for r in REGIMENS}
    weekly: dict[str, list[list[float]]] = {r: [] for r in REGIMENS}
    for b in test_ids:
        traj = by_id[b]
        own = clustering.assignments[b]
        entire_err = _forecast_mae(entire_model, traj, train_weeks, test_weeks)
        within_err = _forecast_mae(cluster_models[own], traj, train_weeks, test_weeks)
        foreign = [c for c in members if c != own]
        outside_runs = [
            _forecast_mae(cluster_models[c], traj, train_weeks, test_weeks)
            for c in foreign
        ]
        outside_err = [float(np.mean(step)) for step in zip(*outside_runs)]
        random_err = _forecast_mae(random_model, traj, train_weeks, test_weeks)
        for regimen, errors in (
            ("entire", entire_err),
            ("within_cluster", within_err),
            ("outside_cluster", outside_err),
            ("random", random_err),
        ):
            per_beneficiary[regimen][b] = float(np.mean(errors))
            weekly[regimen].append(errors)

    reports = {
        regimen: RegimenReport(
            regimen=regimen,
            weekly_mae=[float(np.mean(step)) for step in zip(*weekly[regimen])],
            per_beneficiary=per_beneficiary[regimen],
        )
        for regimen in REGIMENS
    }

    comparisons = []
    for i, a in enumerate(REGIMENS):
        for b_name in REGIMENS[i + 1 :]:
            wins_a = wins_b = ties = 0
            for b in test_ids:
                ea, eb = per_beneficiary[a][b], per_beneficiary[b_name][b]
                if ea < eb:
                    wins_a += 1
                elif eb < ea:
                    wins_b += 1
                else:
                    ties += 1
            comparisons.append(
                RegimenComparison(a, b_name, wins_a, wins_b, ties)
            )

    # Optional exploratory report: distance to own centroid vs which of
    # within/entire predicted the beneficiary better.
    centroid_rows = []
    if profiles is not None:
        for b in test_ids:
            own = clustering.assignments[b]
            dist = float(
                np.linalg.norm(profiles[b].as_array() - clustering.centroids[own])
            )
            centroid_rows.append(
                (
                    b,
                    dist,
                    per_beneficiary["within_cluster"][b] < per_beneficiary["entire"][b],
                )
            )

    return RegimenOutcome(
        reports=reports,
        comparisons=comparisons,
        train_ids=train_ids,
        test_ids=test_ids,
        centroid_distance_rows=centroid_rows,
    )


def error_report(predictions: dict[str, list[float]], truth: dict[str, list[float]]):
    """Per-week mean absolute error across beneficiaries, plus the overall mean.

    Returns (weekly_mae, overall_mae). Prediction and truth sequences
    must cover the same beneficiaries and week counts.
    """
    if set(predictions) != set(truth):
        raise UsageError("prediction and truth cover different beneficiaries")
    if not predictions:
        raise UsageError("error report needs at least one beneficiary")
    lengths = {len(v) for v in predictions.values()} | {len(v) for v in truth.values()}
    if len(lengths) != 1:
        raise UsageError("prediction/truth sequences have mismatched lengths")
    ids = sorted(predictions)
    errors = np.array(
        [[abs(p - a) for p, a in zip(predictions[b], truth[b])] for b in ids]
    )
    weekly = errors.mean(axis=0).tolist()
    return weekly, float(errors.mean())
