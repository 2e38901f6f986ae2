"""Trajectory CSV ingestion and report emission.

All interchange is CSV with a fixed column order, reals formatted to six
decimals, and LF line endings, so identical records always produce
identical bytes. Reports can also be mirrored to JSON.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ConfigurationError, IngestionError
from .personalize import Trajectory

TRAJECTORY_HEADER = ["beneficiary_id", "week", "engagement", "intervention"]


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def parse_trajectory_csv(path) -> list[Trajectory]:
    """Read trajectories from ``beneficiary_id,week,engagement,intervention`` rows.

    Rows must arrive grouped by beneficiary with weeks contiguous from 1.
    Errors cite the offending physical line number (header is line 1).
    """
    path = Path(path)
    order: list[str] = []
    engagement: dict[str, list[float]] = {}
    intervention: dict[str, list[bool]] = {}
    closed: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        if header != TRAJECTORY_HEADER:
            raise IngestionError(
                f"{path}: expected header {','.join(TRAJECTORY_HEADER)}, "
                f"got {','.join(header)}"
            )
        previous_id = None
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise IngestionError(f"{path} row {line_no}: expected 4 columns")
            beneficiary_id, week_s, engagement_s, intervention_s = row
            try:
                week = int(week_s)
                level = float(engagement_s)
            except ValueError:
                raise IngestionError(
                    f"{path} row {line_no}: malformed week or engagement"
                ) from None
            if not 0.0 <= level <= 1.0:
                raise IngestionError(
                    f"{path} row {line_no}: engagement {level} outside [0, 1]"
                )
            if intervention_s not in ("0", "1"):
                raise IngestionError(
                    f"{path} row {line_no}: intervention must be 0 or 1"
                )
            if beneficiary_id != previous_id:
                if beneficiary_id in closed:
                    raise IngestionError(
                        f"{path} row {line_no}: beneficiary "
                        f"{beneficiary_id!r} appears in two separate groups"
                    )
                if previous_id is not None:
                    closed.add(previous_id)
                order.append(beneficiary_id)
                engagement[beneficiary_id] = []
                intervention[beneficiary_id] = []
                previous_id = beneficiary_id
            expected_week = len(engagement[beneficiary_id]) + 1
            if week != expected_week:
                raise IngestionError(
                    f"{path} row {line_no}: expected week {expected_week} for "
                    f"{beneficiary_id!r}, got {week} (duplicate or gap)"
                )
            engagement[beneficiary_id].append(level)
            intervention[beneficiary_id].append(intervention_s == "1")
    if not order:
        raise IngestionError(f"{path}: no data rows")
    return [
        Trajectory(
            beneficiary_id=b,
            engagement=engagement[b],
            intervention=intervention[b],
        )
        for b in order
    ]


def trajectory_rows(trajectories: list[Trajectory]) -> list[dict]:
    rows = []
    for traj in trajectories:
        for week in range(1, len(traj) + 1):
            rows.append(
                {
                    "beneficiary_id": traj.beneficiary_id,
                    "week": week,
                    "engagement": traj.engagement[week - 1],
                    "intervention": traj.intervention[week - 1],
                }
            )
    return rows


def write_trajectory_csv(trajectories: list[Trajectory], path) -> None:
    emit_report(trajectory_rows(trajectories), path, fieldnames=TRAJECTORY_HEADER)


def emit_report(records: list[dict], path, fieldnames: list[str] | None = None,
                fmt: str = "csv") -> Path:
    """Write records with stable column order and fixed float formatting."""
    path = Path(path)
    if fieldnames is None:
        if not records:
            raise ConfigurationError(
                "emitting an empty report requires explicit fieldnames"
            )
        fieldnames = list(records[0])
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fieldnames)
            for record in records:
                writer.writerow([_format_value(record[f]) for f in fieldnames])
    elif fmt == "json":
        payload = [
            {
                f: (round(v, 6) if isinstance(v, float) else v)
                for f, v in ((f, record[f]) for f in fieldnames)
            }
            for record in records
        ]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ConfigurationError(f"unknown report format: {fmt!r}")
    return path
