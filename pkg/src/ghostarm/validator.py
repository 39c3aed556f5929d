"""Offline dataset auditing: kinematic replay validation of recorded
episodes against the feasibility engine, plus aggregate statistics.

Replay here means re-checking every recorded transition at its recorded
timing; nothing moves.  Reports say so explicitly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import ArmModel
from .dataset import DemoEpisode, EmptyEpisodeError
from .workspace import (FeasibilityVerdict, Scene, Status, check_config,
                        check_step)

REPORT_FORMAT_VERSION = 1

# deterministic order for outcome tables: success first, then gate order
_OUTCOME_ORDER = (Status.FEASIBLE, Status.UNREACHABLE, Status.SPEED_LIMIT,
                  Status.SINGULAR, Status.SELF_COLLISION, Status.ENV_COLLISION)


class SceneMismatch(ValueError):
    """Episode was recorded against a different scene than supplied."""


@dataclass(frozen=True)
class ReplayReport:
    episode_id: str
    scene_ref: str
    verdict_per_sample: tuple[FeasibilityVerdict, ...]
    success: bool
    failure_reason: str | None
    first_failure_index: int | None
    duration_s: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "episode_id": self.episode_id,
            "scene_ref": self.scene_ref,
            "success": self.success,
            "failure_reason": self.failure_reason,
            "first_failure_index": self.first_failure_index,
            "duration_s": self.duration_s,
            "sample_count": self.sample_count,
            "verdicts": [
                {"status": v.status.value,
                 "min_clearance": v.min_clearance,
                 "offending_link": v.offending_link,
                 "offending_joint": v.offending_joint}
                for v in self.verdict_per_sample
            ],
            "method": "kinematic replay (no hardware)",
        }


def replay_validate(episode: DemoEpisode, scene: Scene, model: ArmModel,
                    allow_scene_mismatch: bool = False) -> ReplayReport:
    """Re-run the step gate over consecutive recorded samples at recorded
    timing; the first sample gets the static-only gate (no predecessor)."""
    if episode.scene_ref != scene.scene_id and not allow_scene_mismatch:
        raise SceneMismatch(
            f"episode {episode.episode_id!r} was recorded against "
            f"{episode.scene_ref!r}, not {scene.scene_id!r}")
    if not episode.robot:
        raise EmptyEpisodeError(f"episode {episode.episode_id!r} has no samples")

    verdicts = []
    prev = None
    for record in episode.robot:
        if prev is None:
            verdict = check_config(model, record.config.q, scene.cloud,
                                   scene.params)
        else:
            dt = record.timestamp - prev.timestamp
            verdict = check_step(model, prev.config.q, record.config.q, dt,
                                 scene.cloud, scene.params)
        verdicts.append(verdict)
        prev = record

    first_bad = next((i for i, v in enumerate(verdicts) if not v.feasible), None)
    success = first_bad is None
    reason = None
    if not success:
        reason = (f"{verdicts[first_bad].status.value} "
                  f"at sample {first_bad}")
    return ReplayReport(
        episode_id=episode.episode_id,
        scene_ref=episode.scene_ref,
        verdict_per_sample=tuple(verdicts),
        success=success,
        failure_reason=reason,
        first_failure_index=first_bad,
        duration_s=episode.duration_s,
        sample_count=len(episode.robot),
    )


@dataclass(frozen=True)
class DatasetSummary:
    episode_count: int
    success_count: int
    success_rate_pct: float
    mean_duration_s: float
    min_duration_s: float
    max_duration_s: float
    outcome_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "episode_count": self.episode_count,
            "success_count": self.success_count,
            "success_rate_pct": self.success_rate_pct,
            "mean_duration_s": self.mean_duration_s,
            "min_duration_s": self.min_duration_s,
            "max_duration_s": self.max_duration_s,
            "outcome_counts": dict(self.outcome_counts),
        }


def summarize(reports) -> DatasetSummary:
    """Aggregate replay reports; outcome keyed by first-failure status
    (successes count under Feasible) so the counts sum to the episode count."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    outcomes: dict[str, int] = {}
    for status in _OUTCOME_ORDER:
        n = sum(
            1 for r in reports
            if (r.success and status is Status.FEASIBLE)
            or (not r.success
                and r.verdict_per_sample[r.first_failure_index].status is status))
        if n:
            outcomes[status.value] = n
    durations = np.array([r.duration_s for r in reports])
    successes = sum(1 for r in reports if r.success)
    return DatasetSummary(
        episode_count=len(reports),
        success_count=successes,
        success_rate_pct=100.0 * successes / len(reports),
        mean_duration_s=float(durations.mean()),
        min_duration_s=float(durations.min()),
        max_duration_s=float(durations.max()),
        outcome_counts=outcomes,
    )


def format_table(summary: DatasetSummary, reports=None) -> str:
    """Human-readable audit table; rates use :g so 96.0 prints as 96."""
    lines = [
        "replay validation (kinematic, no hardware)",
        f"  episodes        {summary.episode_count}",
        f"  replay SR       {summary.success_rate_pct:g}%"
        f"  ({summary.success_count}/{summary.episode_count})",
        f"  duration (s)    mean {summary.mean_duration_s:g}"
        f"  min {summary.min_duration_s:g}  max {summary.max_duration_s:g}",
        "  outcomes:",
    ]
    for status, count in summary.outcome_counts.items():
        lines.append(f"    {status:<14} {count}")
    if reports:
        failures = [r for r in reports if not r.success]
        if failures:
            lines.append("  failures:")
            for r in failures:
                lines.append(f"    {r.episode_id:<24} {r.failure_reason}")
    return "\n".join(lines)


def save_report(summary: DatasetSummary, reports, path) -> None:
    payload = {
        "format_version": REPORT_FORMAT_VERSION,
        "summary": summary.to_dict(),
        "reports": [r.to_dict() for r in reports],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n",
                          encoding="utf-8")
