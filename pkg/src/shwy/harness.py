"""Seeded evaluation episodes, the three aggregate metrics, and report I/O.

Evaluation over N episodes always uses seeds 0..N-1 (the seed is the episode
number).  Reports carry every per-episode row so the aggregates can be
recomputed independently; emission is byte-stable for identical reports.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field
from pathlib import Path

from .observation import extract_observation
from .policies import Policy, policy_counters
from .rewards import speed_score
from .scenario import ScenarioConfig
from .simulate import step as sim_step
from .simulate import reset

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EpisodeResult:
    seed: int
    success: bool
    lane_changes: int
    mean_speed: float
    steps_survived: int
    collided_at: int | None

    def as_dict(self) -> dict[str, object]:
        return {
            "seed": self.seed,
            "success": self.success,
            "lane_changes": self.lane_changes,
            "mean_speed": self.mean_speed,
            "steps_survived": self.steps_survived,
            "collided_at": self.collided_at,
        }


@dataclass
class MetricsReport:
    env: str
    policy: dict[str, object]
    episodes: int
    success_rate: float
    lane_change_score: float
    mean_speed: float
    speed_score: float
    v_min: float
    v_max: float
    per_episode: list[EpisodeResult] = field(default_factory=list)
    scorer_counters: dict[str, int] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION


def run_episode(policy: Policy, config: ScenarioConfig, seed: int) -> EpisodeResult:
    """One seeded episode: reset, act until collision or horizon.

    Mean speed is averaged over executed physics substeps and stops at the
    collision substep; lane changes count completed ego lane-index
    transitions.
    """
    state = reset(config, seed)
    speed_sum = 0.0
    substeps = 0
    lane_changes = 0
    collided_at: int | None = None
    while not state.collided and state.step_count < config.horizon_steps:
        obs = extract_observation(state)
        action = policy.decide(obs)
        state, info = sim_step(state, action)
        speed_sum += info.speed_sum
        substeps += info.substeps
        lane_changes += info.ego_lane_changes
        if info.collided_now:
            collided_at = state.step_count - 1
    success = collided_at is None and state.step_count == config.horizon_steps
    return EpisodeResult(
        seed=seed,
        success=success,
        lane_changes=lane_changes,
        mean_speed=speed_sum / substeps if substeps else 0.0,
        steps_survived=state.step_count,
        collided_at=collided_at,
    )


def aggregate(rows: list[EpisodeResult], v_min: float, v_max: float) -> dict[str, float]:
    """SR / LC / mean speed / Speed from per-episode rows."""
    n = len(rows)
    sr = 100.0 * sum(1 for r in rows if r.success) / n
    lc = sum(r.lane_changes for r in rows) / n
    v_bar = sum(r.mean_speed for r in rows) / n
    return {
        "success_rate": sr,
        "lane_change_score": lc,
        "mean_speed": v_bar,
        "speed_score": speed_score(v_bar, v_min, v_max),
    }


def evaluate(
    policy: Policy,
    config: ScenarioConfig,
    episodes: int = 100,
    jobs: int = 1,
    policy_meta: dict[str, object] | None = None,
) -> MetricsReport:
    """Run seeds 0..episodes-1 and assemble the metrics report.

    Episodes are independent, so ``jobs > 1`` runs them in a thread pool;
    rows are always assembled in seed order, keeping output bytes identical.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    seeds = range(episodes)
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda s: run_episode(policy, config, s), seeds))
    else:
        rows = [run_episode(policy, config, s) for s in seeds]
    rows.sort(key=lambda r: r.seed)
    agg = aggregate(rows, config.v_min, config.v_max)
    meta = policy_meta if policy_meta is not None else getattr(policy, "metadata").as_dict()
    return MetricsReport(
        env=config.kind.value,
        policy=meta,
        episodes=episodes,
        success_rate=agg["success_rate"],
        lane_change_score=agg["lane_change_score"],
        mean_speed=agg["mean_speed"],
        speed_score=agg["speed_score"],
        v_min=config.v_min,
        v_max=config.v_max,
        per_episode=rows,
        scorer_counters=policy_counters(policy),
    )


def report_to_json_bytes(report: MetricsReport) -> bytes:
    payload = {
        "schema_version": report.schema_version,
        "env": report.env,
        "policy": report.policy,
        "episodes": report.episodes,
        "aggregates": {
            "success_rate": report.success_rate,
            "lane_change_score": report.lane_change_score,
            "mean_speed": report.mean_speed,
            "speed_score": report.speed_score,
        },
        "v_min": report.v_min,
        "v_max": report.v_max,
        "per_episode": [r.as_dict() for r in report.per_episode],
        "scorer_counters": report.scorer_counters,
    }
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode()


def report_to_csv_bytes(report: MetricsReport) -> bytes:
    lines = ["seed,success,lane_changes,mean_speed"]
    for r in report.per_episode:
        lines.append(f"{r.seed},{int(r.success)},{r.lane_changes},{r.mean_speed!r}")
    lines.append("")
    lines.append("aggregate,value")
    lines.append(f"episodes,{report.episodes}")
    lines.append(f"success_rate,{report.success_rate!r}")
    lines.append(f"lane_change_score,{report.lane_change_score!r}")
    lines.append(f"mean_speed,{report.mean_speed!r}")
    lines.append(f"speed_score,{report.speed_score!r}")
    return ("\n".join(lines) + "\n").encode()


def emit_report(report: MetricsReport, fmt: str, base_path: str | Path) -> list[Path]:
    """Write the report as JSON, CSV, or both next to ``base_path``.

    ``base_path`` is used without its suffix; emission is byte-stable given
    the same report.
    """
    base = Path(base_path)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    written: list[Path] = []
    try:
        if fmt in ("json", "both"):
            path = base.with_suffix(".json")
            path.write_bytes(report_to_json_bytes(report))
            written.append(path)
        if fmt in ("csv", "both"):
            path = base.with_suffix(".csv")
            path.write_bytes(report_to_csv_bytes(report))
            written.append(path)
    except OSError as exc:
        raise OSError(f"failed writing report near {base}: {exc}") from exc
    if not written:
        raise ValueError(f"unknown report format {fmt!r}; expected json, csv, or both")
    return written


def load_report(path: str | Path) -> MetricsReport:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ValueError(f"unreadable report {path}: {exc}") from exc
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: report schema version {version} != {SCHEMA_VERSION}")
    rows = [
        EpisodeResult(
            seed=r["seed"],
            success=bool(r["success"]),
            lane_changes=int(r["lane_changes"]),
            mean_speed=float(r["mean_speed"]),
            steps_survived=int(r["steps_survived"]),
            collided_at=r["collided_at"],
        )
        for r in payload["per_episode"]
    ]
    agg = payload["aggregates"]
    return MetricsReport(
        env=payload["env"],
        policy=payload["policy"],
        episodes=payload["episodes"],
        success_rate=agg["success_rate"],
        lane_change_score=agg["lane_change_score"],
        mean_speed=agg["mean_speed"],
        speed_score=agg["speed_score"],
        v_min=payload["v_min"],
        v_max=payload["v_max"],
        per_episode=rows,
        scorer_counters=payload.get("scorer_counters", {}),
    )


def _policy_label(meta: dict[str, object]) -> str:
    parts = [str(meta.get("regime", "?"))]
    shaping = str(meta.get("shaping", "none"))
    if shaping != "none":
        parts.append(shaping)
    scorer = str(meta.get("scorer", ""))
    if scorer:
        parts.append(scorer)
    return "/".join(parts)


def compare(reports: list[MetricsReport]) -> tuple[str, bytes]:
    """Tabulate reports side by side; returns (text table, CSV bytes).

    Rows are keyed by (environment, training steps, policy label) and sorted
    by that key; columns are SR, Avg LC, Speed.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least 2 reports")
    versions = {r.schema_version for r in reports}
    if versions != {SCHEMA_VERSION}:
        raise ValueError(f"mismatched report schema versions: {sorted(versions)}")
    rows = []
    for r in reports:
        steps = int(r.policy.get("train_steps", 0) or 0)
        rows.append((r.env, steps, _policy_label(r.policy), r))
    rows.sort(key=lambda item: (item[0], item[1], item[2]))

    header = f"{'environment':<14}{'steps':>7}  {'policy':<34}{'SR (%)':>8}{'Avg LC':>9}{'Speed':>8}"
    text_lines = [header, "-" * len(header)]
    csv_lines = ["env,steps,policy,sr_percent,avg_lane_changes,speed_score"]
    for env, steps, label, r in rows:
        text_lines.append(
            f"{env:<14}{steps:>7}  {label:<34}{r.success_rate:>8.1f}{r.lane_change_score:>9.2f}{r.speed_score:>8.2f}"
        )
        csv_lines.append(
            f"{env},{steps},{label},{r.success_rate!r},{r.lane_change_score!r},{r.speed_score!r}"
        )
    return "\n".join(text_lines) + "\n", ("\n".join(csv_lines) + "\n").encode()
