"""Command-line surface: synth, fit, predict, simulate, cluster, experiment, gradcheck.

Each command resolves a RunConfig (flags over config file over defaults),
creates a timestamped, seed-named run directory under the output root,
writes its artifacts there as CSV, and embeds the resolved config. All
randomness descends from the single run seed, so rerunning a command with
the same config produces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import analyze, sim
from .config import IblSettings, RunConfig, load_config, write_config
from .dataio import emit_report, parse_trajectory_csv, write_trajectory_csv
from .errors import ConfigurationError, IblcastError, IngestionError, UsageError
from .forecast import IblForecaster, forecast_test_window
from .lstm import (
    LstmForecaster,
    Window,
    gradient_check,
    init_model,
    lstm_train,
    make_windows,
    trajectory_history_pairs,
)
from .personalize import FitResult, Trajectory, fit_cohort, trace_trajectory
from .sim import CohortSpec, SimRun, default_budget, generate_cohort, run_policy_simulation
from .tari import PolicyKind

VERBS = ("synth", "fit", "predict", "simulate", "cluster", "experiment", "gradcheck")

POLICY_ORDER = (
    PolicyKind.TARI_IBL,
    PolicyKind.TARI_LSTM,
    PolicyKind.RANDOM,
    PolicyKind.ROUND_ROBIN,
    PolicyKind.NONE,
)


def _make_run_dir(config: RunConfig, verb: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    suffix = 0
    while True:
        name = f"{verb}_{stamp}_seed{config.seed}" + (f"_{suffix}" if suffix else "")
        run_dir = root / name
        try:
            run_dir.mkdir()
            return run_dir
        except FileExistsError:
            suffix += 1


def _load_cohort(config: RunConfig):
    """Trajectories plus hidden archetype laws (None for recorded CSVs)."""
    if config.input_csv:
        return parse_trajectory_csv(config.input_csv), None
    cohort = generate_cohort(config.cohort, config.seed)
    return cohort.trajectories, cohort.archetypes


def _require_test_window(config: RunConfig, trajectories: list[Trajectory]) -> None:
    needed = config.train_weeks + config.test_weeks
    shortest = min(len(t) for t in trajectories)
    if shortest < needed:
        raise ConfigurationError(
            f"command needs {needed} recorded weeks per beneficiary; "
            f"shortest trajectory has {shortest}"
        )


def _fit_all(trajectories, config: RunConfig) -> list[FitResult]:
    return fit_cohort(trajectories, config.train_weeks, config.ibl.params())


def _fit_rows(fits: list[FitResult]) -> list[dict]:
    return [
        {
            "beneficiary_id": f.beneficiary_id,
            "w_prev_engagement": f.best_profile.w_prev_engagement,
            "w_intervention_lag": f.best_profile.w_intervention_lag,
            "loss": f.best_loss,
        }
        for f in fits
    ]


def _traced_stores(trajectories, fits, config: RunConfig):
    by_id = {f.beneficiary_id: f for f in fits}
    return {
        t.beneficiary_id: trace_trajectory(
            t,
            config.train_weeks,
            config.ibl.params(by_id[t.beneficiary_id].best_profile),
        )
        for t in trajectories
    }


def _train_shared_lstm(trajectories, config: RunConfig, tag: int):
    windows = make_windows(trajectories, config.train_weeks)
    return lstm_train(windows, config.lstm, seed=config.seed * 1000 + tag)


def cmd_synth(config: RunConfig, run_dir: Path) -> None:
    cohort = generate_cohort(config.cohort, config.seed)
    write_trajectory_csv(cohort.trajectories, run_dir / "cohort.csv")
    emit_report(
        [
            {
                "beneficiary_id": b,
                "kind": arch.kind,
                "baseline": arch.baseline,
                "map_rate": arch.map_rate,
                "boost_amplitude": arch.boost_amplitude,
                "boost_decay": arch.boost_decay,
                "noise_scale": arch.noise_scale,
            }
            for b, arch in sorted(cohort.archetypes.items())
        ],
        run_dir / "archetypes.csv",
    )
    print(
        f"synth: {config.cohort.n} beneficiaries x {config.cohort.weeks} weeks "
        f"-> {run_dir / 'cohort.csv'}"
    )


def cmd_fit(config: RunConfig, run_dir: Path) -> None:
    trajectories, _ = _load_cohort(config)
    fits = _fit_all(trajectories, config)
    emit_report(
        _fit_rows(fits),
        run_dir / "fits.csv",
        fieldnames=["beneficiary_id", "w_prev_engagement", "w_intervention_lag", "loss"],
    )
    print(f"fit: {len(fits)} beneficiaries -> {run_dir / 'fits.csv'}")


def cmd_predict(config: RunConfig, run_dir: Path) -> None:
    trajectories, _ = _load_cohort(config)
    _require_test_window(config, trajectories)
    fits = _fit_all(trajectories, config)
    stores = _traced_stores(trajectories, fits, config)
    shared = _train_shared_lstm(trajectories, config, tag=501)

    predictions = {"ibl": {}, "lstm": {}}
    truth = {}
    for traj in trajectories:
        b = traj.beneficiary_id
        truth[b] = traj.engagement[config.train_weeks : config.train_weeks + config.test_weeks]
        predictions["ibl"][b] = forecast_test_window(
            IblForecaster(stores[b]), traj, config.train_weeks, config.test_weeks
        )
        lstm_fc = LstmForecaster(
            shared, trajectory_history_pairs(traj, config.train_weeks)
        )
        predictions["lstm"][b] = forecast_test_window(
            lstm_fc, traj, config.train_weeks, config.test_weeks
        )

    rows, summary = [], []
    for model in ("ibl", "lstm"):
        weekly, overall = analyze.error_report(predictions[model], truth)
        rows.extend(
            {"week": config.train_weeks + i + 1, "model": model, "mae": mae}
            for i, mae in enumerate(weekly)
        )
        summary.append({"model": model, "mae": overall})
        print(f"predict: {model} mean test MAE {overall:.4f}")
    emit_report(rows, run_dir / "errors.csv", fieldnames=["week", "model", "mae"])
    emit_report(summary, run_dir / "summary.csv", fieldnames=["model", "mae"])


def cmd_simulate(config: RunConfig, run_dir: Path) -> None:
    trajectories, archetypes = _load_cohort(config)
    _require_test_window(config, trajectories)
    if config.counterfactual_mode == "exact_synthetic" and archetypes is None:
        raise ConfigurationError(
            "exact_synthetic counterfactuals need a synthetic cohort, not a CSV"
        )
    fits = _fit_all(trajectories, config)
    stores = _traced_stores(trajectories, fits, config)
    shared = _train_shared_lstm(trajectories, config, tag=501)
    generator = None
    if config.counterfactual_mode == "lstm_generator":
        generator = _train_shared_lstm(trajectories, config, tag=502)

    budget = default_budget(len(trajectories), config.budget_fraction)
    metric_rows, trace_rows, score_rows = [], [], []
    for policy in POLICY_ORDER:
        result = run_policy_simulation(
            SimRun(
                trajectories=trajectories,
                policy=policy,
                seed=config.seed,
                budget_k=budget,
                train_weeks=config.train_weeks,
                test_weeks=config.test_weeks,
                horizon=config.horizon,
                threshold=config.threshold,
                counterfactual_mode=config.counterfactual_mode,
                archetypes=archetypes,
                generator=generator,
                ibl_stores=stores,
                lstm_model=shared,
            )
        )
        mean_engaged = float(np.mean(result.weekly_engaged))
        print(
            f"simulate: {policy.value} engaged fraction "
            f"{100 * mean_engaged:.2f}% (k={result.budget_k})"
        )
        for j, engaged in enumerate(result.weekly_engaged):
            metric_rows.append(
                {
                    "week": config.train_weeks + j + 1,
                    "policy": policy.value,
                    "engaged_fraction": engaged,
                }
            )
        for b in sorted(result.sim_engagement):
            actions = result.sim_actions[b]
            for week, engagement in enumerate(result.sim_engagement[b], start=1):
                trace_rows.append(
                    {
                        "week": week,
                        "beneficiary_id": b,
                        "engagement": engagement,
                        "intervened": week <= len(actions) and actions[week - 1],
                        "policy": policy.value,
                        "seed": config.seed,
                    }
                )
        for j, scores in enumerate(result.weekly_scores):
            selected = result.selections[j]
            for s in sorted(scores, key=lambda s: s.beneficiary_id):
                score_rows.append(
                    {
                        "week": config.train_weeks + j + 1,
                        "policy": policy.value,
                        "beneficiary_id": s.beneficiary_id,
                        "u": s.u,
                        "v": s.v,
                        "index": s.index,
                        "selected": s.beneficiary_id in selected,
                    }
                )
    emit_report(
        metric_rows,
        run_dir / "metrics.csv",
        fieldnames=["week", "policy", "engaged_fraction"],
    )
    emit_report(
        trace_rows,
        run_dir / "trace.csv",
        fieldnames=["week", "beneficiary_id", "engagement", "intervened", "policy", "seed"],
    )
    emit_report(
        score_rows,
        run_dir / "scores.csv",
        fieldnames=["week", "policy", "beneficiary_id", "u", "v", "index", "selected"],
    )


def cmd_cluster(config: RunConfig, run_dir: Path) -> None:
    trajectories, _ = _load_cohort(config)
    fits = _fit_all(trajectories, config)
    profiles = {f.beneficiary_id: f.best_profile for f in fits}
    clustering = analyze.kmeans_cluster(profiles, config.cluster_k, config.seed)
    emit_report(
        [
            {
                "beneficiary_id": b,
                "w_prev_engagement": profiles[b].w_prev_engagement,
                "w_intervention_lag": profiles[b].w_intervention_lag,
                "cluster": clustering.assignments[b],
                "dist_to_centroid": float(
                    np.linalg.norm(
                        profiles[b].as_array()
                        - clustering.centroids[clustering.assignments[b]]
                    )
                ),
            }
            for b in sorted(profiles)
        ],
        run_dir / "assignments.csv",
        fieldnames=[
            "beneficiary_id",
            "w_prev_engagement",
            "w_intervention_lag",
            "cluster",
            "dist_to_centroid",
        ],
    )
    n_distinct = len({(p.w_prev_engagement, p.w_intervention_lag) for p in profiles.values()})
    k_max = min(config.quality_k_max, len(profiles) - 1, n_distinct)
    quality = analyze.cluster_quality(
        profiles, range(config.quality_k_min, k_max + 1), config.seed
    )
    emit_report(
        [
            {
                "k": k,
                "silhouette": quality.silhouette[k],
                "wss": quality.wss[k],
                "gap": quality.gap[k],
                "gap_se": quality.gap_se[k],
            }
            for k in quality.ks
        ],
        run_dir / "quality.csv",
        fieldnames=["k", "silhouette", "wss", "gap", "gap_se"],
    )
    emit_report(
        [
            {"measure": "silhouette", "k": quality.silhouette_k},
            {"measure": "wss_elbow", "k": quality.elbow_k},
            {"measure": "gap_statistic", "k": quality.gap_k},
        ],
        run_dir / "quality_summary.csv",
        fieldnames=["measure", "k"],
    )
    print(
        f"cluster: k={config.cluster_k}, inertia {clustering.inertia:.4f}; "
        f"measure choices: silhouette {quality.silhouette_k}, "
        f"wss {quality.elbow_k}, gap {quality.gap_k}"
    )


def cmd_experiment(config: RunConfig, run_dir: Path) -> None:
    trajectories, _ = _load_cohort(config)
    _require_test_window(config, trajectories)
    fits = _fit_all(trajectories, config)
    profiles = {f.beneficiary_id: f.best_profile for f in fits}
    clustering = analyze.kmeans_cluster(profiles, config.cluster_k, config.seed)
    outcome = analyze.regimen_experiment(
        trajectories,
        clustering,
        config.seed,
        train_weeks=config.train_weeks,
        test_weeks=config.test_weeks,
        lstm_config=config.lstm,
        profiles=profiles,
    )
    weekly_rows, beneficiary_rows = [], []
    for regimen, report in outcome.reports.items():
        print(
            f"experiment: {regimen} mean test MAE "
            f"{float(np.mean(list(report.per_beneficiary.values()))):.4f}"
        )
        weekly_rows.extend(
            {"week": config.train_weeks + i + 1, "regimen": regimen, "mae": mae}
            for i, mae in enumerate(report.weekly_mae)
        )
        beneficiary_rows.extend(
            {"beneficiary_id": b, "regimen": regimen, "mae": mae}
            for b, mae in sorted(report.per_beneficiary.items())
        )
    emit_report(
        weekly_rows, run_dir / "regimen_weekly.csv", fieldnames=["week", "regimen", "mae"]
    )
    emit_report(
        beneficiary_rows,
        run_dir / "regimen_beneficiaries.csv",
        fieldnames=["beneficiary_id", "regimen", "mae"],
    )
    emit_report(
        [
            {
                "regimen_a": c.regimen_a,
                "regimen_b": c.regimen_b,
                "wins_a": c.wins_a,
                "wins_b": c.wins_b,
                "ties": c.ties,
            }
            for c in outcome.comparisons
        ],
        run_dir / "regimen_wins.csv",
        fieldnames=["regimen_a", "regimen_b", "wins_a", "wins_b", "ties"],
    )
    emit_report(
        [
            {"beneficiary_id": b, "dist_to_centroid": d, "within_beats_entire": won}
            for b, d, won in outcome.centroid_distance_rows
        ],
        run_dir / "centroid_wins.csv",
        fieldnames=["beneficiary_id", "dist_to_centroid", "within_beats_entire"],
    )


def cmd_gradcheck(config: RunConfig, run_dir: Path) -> None:
    rng = np.random.default_rng([config.seed, 0x6C])
    rows = []
    worst = 0.0
    for trial in range(10):
        model = init_model(hidden_size=4, seed=config.seed * 1000 + 503 + trial)
        inputs = np.column_stack(
            [rng.uniform(0, 1, 7), rng.integers(0, 2, 7).astype(float)]
        )
        window = Window(inputs=inputs, target=float(rng.uniform(0, 1)))
        err = gradient_check(model, window, seed=config.seed + trial)
        rows.append({"trial": trial, "max_rel_error": err})
        worst = max(worst, err)
    emit_report(rows, run_dir / "gradcheck.csv", fieldnames=["trial", "max_rel_error"])
    print(f"gradcheck: max relative error {worst:.3e} over 10 models")


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "cluster": cmd_cluster,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


def run_command(verb: str, config: RunConfig) -> Path:
    """Execute one verb; returns the run directory holding its artifacts."""
    if verb not in COMMANDS:
        raise ConfigurationError(f"unknown verb: {verb!r}")
    run_dir = _make_run_dir(config, verb)
    write_config(config, run_dir / "resolved_config.json")
    COMMANDS[verb](config, run_dir)
    print(f"run directory: {run_dir}")
    return run_dir


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output root directory")
    parser.add_argument("--input", help="trajectory CSV instead of a synthetic cohort")
    parser.add_argument("--train-weeks", type=int, dest="train_weeks")
    parser.add_argument("--test-weeks", type=int, dest="test_weeks")
    parser.add_argument("--threshold", type=float)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--budget-fraction", type=float, dest="budget_fraction")
    parser.add_argument(
        "--counterfactual",
        choices=sorted(sim.COUNTERFACTUAL_MODES),
        dest="counterfactual_mode",
    )
    parser.add_argument("--n", type=int, help="synthetic cohort size")
    parser.add_argument("--weeks", type=int, help="synthetic cohort length")
    parser.add_argument(
        "--mix", help="archetype proportions as three comma-separated numbers"
    )
    parser.add_argument("--noise", type=float, help="synthetic archetype noise scale")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iblcast",
        description=(
            "Personalized instance-based engagement forecasting, TARI ranking, "
            "and budgeted intervention policy simulation."
        ),
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        _add_common_flags(p)
        if verb in ("cluster", "experiment"):
            p.add_argument("--k", type=int, help="number of clusters")
            p.add_argument("--k-min", type=int, dest="quality_k_min")
            p.add_argument("--k-max", type=int, dest="quality_k_max")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "seed": args.seed,
        "train_weeks": args.train_weeks,
        "test_weeks": args.test_weeks,
        "threshold": args.threshold,
        "horizon": args.horizon,
        "budget_fraction": args.budget_fraction,
        "counterfactual_mode": args.counterfactual_mode,
        "input_csv": args.input,
        "output_dir": args.out,
        "cluster_k": getattr(args, "k", None),
        "quality_k_min": getattr(args, "quality_k_min", None),
        "quality_k_max": getattr(args, "quality_k_max", None),
    }
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        config = dataclasses.replace(config, **changes)
    cohort_overrides = {
        "n": args.n,
        "weeks": args.weeks,
        "noise_scale": args.noise,
    }
    if args.mix is not None:
        try:
            mix = tuple(float(p) for p in args.mix.split(","))
        except ValueError:
            raise ConfigurationError(f"--mix must be three numbers, got {args.mix!r}")
        cohort_overrides["mix"] = mix
    cohort_changes = {k: v for k, v in cohort_overrides.items() if v is not None}
    if cohort_changes:
        config = dataclasses.replace(
            config, cohort=dataclasses.replace(config.cohort, **cohort_changes)
        )
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        run_command(args.verb, config)
    except (ConfigurationError, UsageError, IngestionError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2
    except IblcastError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
