"""Command-line entry point: train, eval, compare, record-fixtures.

Configuration precedence is flags > config file > defaults; every run writes
a manifest capturing the fused result next to its outputs, and
``--from-manifest`` replays a manifest's resolved configuration so
deterministic runs reproduce byte-identically.  Diagnostics go to stderr;
data goes to files.

The ``SHWY_ENDPOINT`` environment variable overrides any configured endpoint
URL so CI can redirect runs at a stub server without touching scripts.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .dqn import (
    EpsilonSchedule,
    QNetwork,
    TrainConfig,
    train,
    train_config_from_dict,
    train_config_to_dict,
)
from .harness import compare, emit_report, evaluate, load_report
from .llm import (
    EndpointConfig,
    LlmParseError,
    LlmTransportError,
    MOCK_PROFILES,
    ScoreCache,
    make_http_scorer,
    make_mock_scorer,
    parse_action_response,
    parse_score_response,
    query_chat,
    render_action_prompt,
    render_score_prompt,
)
from .observation import Observation
from .policies import HybridPolicy, LlmOnlyPolicy, PolicyMetadata, RlGreedyPolicy
from .rewards import ShapingScheme
from .scenario import (
    ConfigError,
    apply_scenario_overrides,
    load_config_file,
    scenario_from_dict,
    scenario_preset,
    scenario_to_dict,
)
from .simulate import MetaAction

ENDPOINT_ENV_VAR = "SHWY_ENDPOINT"
SCORER_CHOICES = ("mock-balanced", "mock-conservative", "http")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_manifest(path: Path, command: str, resolved: dict, artifacts: dict[str, str],
                    started: float) -> None:
    payload = {
        "tool": "shwy",
        "tool_version": __version__,
        "command": command,
        "created_utc": _utc_now(),
        "duration_s": round(time.monotonic() - started, 3),
        "resolved": resolved,
        "artifacts": artifacts,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_manifest(path: str, expect_command: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"unreadable manifest {path}: {exc}") from exc
    if payload.get("command") != expect_command:
        raise ConfigError(
            f"manifest {path} was written by the {payload.get('command')!r} command, "
            f"not {expect_command!r}"
        )
    return payload["resolved"]


def _resolve_endpoint(args, sections: dict, parser: argparse.ArgumentParser) -> EndpointConfig | None:
    llm_sec = sections.get("llm", {})
    url = args.endpoint or llm_sec.get("endpoint")
    url = os.environ.get(ENDPOINT_ENV_VAR) or url
    if url is None:
        return None
    model = args.model or llm_sec.get("model") or "local-model"
    kwargs = {}
    if "temperature" in llm_sec:
        kwargs["temperature"] = float(llm_sec["temperature"])
    if "max_tokens" in llm_sec:
        kwargs["max_tokens"] = int(llm_sec["max_tokens"])
    if "timeout_ms" in llm_sec:
        kwargs["timeout_ms"] = int(llm_sec["timeout_ms"])
    if "max_retries" in llm_sec:
        kwargs["max_retries"] = int(llm_sec["max_retries"])
    if "fallback_action" in llm_sec:
        kwargs["fallback_action"] = MetaAction(int(llm_sec["fallback_action"]))
    if "fallback_score" in llm_sec:
        kwargs["fallback_score"] = float(llm_sec["fallback_score"])
    return EndpointConfig(base_url=url, model_name=model, **kwargs)


def _endpoint_to_dict(config: EndpointConfig) -> dict:
    return {
        "base_url": config.base_url,
        "model_name": config.model_name,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "timeout_ms": config.timeout_ms,
        "max_retries": config.max_retries,
        "fallback_action": int(config.fallback_action),
        "fallback_score": config.fallback_score,
    }


def _endpoint_from_dict(data: dict) -> EndpointConfig:
    data = dict(data)
    data["fallback_action"] = MetaAction(data["fallback_action"])
    return EndpointConfig(**data)


def _make_scorer(name: str, endpoint: EndpointConfig | None, use_cache: bool,
                 parser: argparse.ArgumentParser):
    cache = ScoreCache() if use_cache else None
    if name in ("mock-balanced", "mock-conservative"):
        return make_mock_scorer(name.removeprefix("mock-"), cache=cache)
    if name == "http":
        if endpoint is None:
            parser.error("--scorer http requires --endpoint (or [llm] endpoint / SHWY_ENDPOINT)")
        return make_http_scorer(endpoint, cache=cache)
    parser.error(f"unknown scorer {name!r}")
    return None  # unreachable


def _resolved_scenario(args, sections: dict) -> dict:
    config = scenario_preset(args.scenario)
    overrides = sections.get("scenario", {})
    overrides = {k: v for k, v in overrides.items() if k != "name"}
    if overrides:
        config = apply_scenario_overrides(config, overrides)
    return scenario_to_dict(config)


# ---------------------------------------------------------------- train ----


def cmd_train(args, parser: argparse.ArgumentParser) -> int:
    started = time.monotonic()
    if args.from_manifest:
        resolved = _load_manifest(args.from_manifest, "train")
        if args.out:
            resolved["out"] = args.out
    else:
        sections = load_config_file(args.config) if args.config else {}
        dqn_sec = sections.get("dqn", {})
        shaping_sec = sections.get("shaping", {})
        reward_sec = sections.get("reward", {})

        shaping_name = args.shaping or shaping_sec.get("scheme", "none")
        lam = args.lam if args.lam is not None else float(shaping_sec.get("lambda", 1.0))
        try:
            shaping = ShapingScheme.parse(shaping_name, lam)
        except ValueError as exc:
            parser.error(str(exc))

        def dqn_val(key: str, cast, default):
            return cast(dqn_sec[key]) if key in dqn_sec else default

        epsilon = EpsilonSchedule(
            start=dqn_val("epsilon_start", float, 1.0),
            end=dqn_val("epsilon_end", float, 0.05),
            fraction=dqn_val("epsilon_fraction", float, 0.1),
        )
        train_config = TrainConfig(
            total_steps=args.steps if args.steps is not None else dqn_val("total_steps", int, 20_000),
            learning_rate=dqn_val("learning_rate", float, 1e-4),
            gamma=dqn_val("gamma", float, 0.98),
            batch_size=dqn_val("batch_size", int, 64),
            buffer_capacity=dqn_val("buffer_capacity", int, 50_000),
            learning_starts=dqn_val("learning_starts", int, 1_000),
            train_freq=dqn_val("train_freq", int, 4),
            gradient_steps=dqn_val("gradient_steps", int, 4),
            target_update_interval=dqn_val("target_update_interval", int, 1_000),
            epsilon=epsilon,
            seed=args.seed if args.seed is not None else dqn_val("seed", int, 42),
            optimizer=args.optimizer or dqn_sec.get("optimizer", "adam"),
            loss=dqn_sec.get("loss", "mse"),
            shaping=shaping,
            reward_a=float(reward_sec.get("a", 0.4)),
            reward_b=float(reward_sec.get("b", 1.0)),
        )
        scorer_name = args.scorer or sections.get("llm", {}).get("scorer", "")
        if shaping.uses_scores and not scorer_name:
            parser.error(f"--shaping {shaping.kind.value} requires --scorer")
        endpoint = _resolve_endpoint(args, sections, parser)
        resolved = {
            "scenario": _resolved_scenario(args, sections),
            "scenario_name": args.scenario,
            "train": train_config_to_dict(train_config),
            "scorer": scorer_name,
            "endpoint": None if endpoint is None else _endpoint_to_dict(endpoint),
            "score_cache": not args.no_score_cache,
            "out": args.out or f"runs/train-{args.scenario}-{train_config.seed}",
        }

    scenario = scenario_from_dict(resolved["scenario"])
    train_config = train_config_from_dict(resolved["train"])
    endpoint = None if resolved["endpoint"] is None else _endpoint_from_dict(resolved["endpoint"])
    scorer = None
    if train_config.shaping.uses_scores:
        scorer = _make_scorer(resolved["scorer"], endpoint, resolved["score_cache"], parser)

    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _log(f"training {resolved['scenario_name']} for {train_config.total_steps} steps "
         f"(shaping={train_config.shaping.kind.value}, seed={train_config.seed})")
    net, log = train(train_config, scenario, scorer)

    model_path = out_dir / "model.shwy"
    log_path = out_dir / "trainlog.csv"
    manifest_path = out_dir / "manifest.json"
    net.save(model_path)
    log_path.write_bytes(log.to_csv_bytes())
    _write_manifest(
        manifest_path, "train", resolved,
        {"model": str(model_path), "train_log": str(log_path)},
        started,
    )
    _log(f"wrote {model_path}, {log_path}, {manifest_path}")
    return 0


# ----------------------------------------------------------------- eval ----


def _train_metadata_near(model_file: str) -> dict:
    manifest = Path(model_file).parent / "manifest.json"
    if not manifest.exists():
        return {}
    try:
        resolved = json.loads(manifest.read_text()).get("resolved", {})
        return {
            "train_steps": resolved.get("train", {}).get("total_steps", 0),
            "shaping": resolved.get("train", {}).get("shaping", {}).get("kind", "none"),
            "scorer": resolved.get("scorer", ""),
        }
    except (OSError, ValueError):
        return {}


def cmd_eval(args, parser: argparse.ArgumentParser) -> int:
    started = time.monotonic()
    if args.from_manifest:
        resolved = _load_manifest(args.from_manifest, "eval")
        if args.report:
            resolved["report"] = args.report
    else:
        if args.episodes is not None and args.episodes < 1:
            parser.error("--episodes must be >= 1")
        sections = load_config_file(args.config) if args.config else {}
        eval_sec = sections.get("eval", {})
        endpoint = _resolve_endpoint(args, sections, parser)
        if args.policy in ("rl", "hybrid") and not args.model_file:
            parser.error(f"--policy {args.policy} requires --model-file")
        if args.policy == "llm":
            scorer_name = args.scorer or ""
            if scorer_name == "http" or (not scorer_name and endpoint is not None):
                if endpoint is None:
                    parser.error("--policy llm requires --endpoint or a mock --scorer")
            elif scorer_name not in ("mock-balanced", "mock-conservative"):
                parser.error("--policy llm requires --endpoint or --scorer mock-*")
        resolved = {
            "policy": args.policy,
            "model_file": args.model_file,
            "scenario": _resolved_scenario(args, sections),
            "scenario_name": args.scenario,
            "episodes": args.episodes if args.episodes is not None else int(eval_sec.get("episodes", 100)),
            "jobs": args.jobs if args.jobs is not None else int(eval_sec.get("jobs", 1)),
            "format": args.format or eval_sec.get("format", "json"),
            "scorer": args.scorer or "",
            "endpoint": None if endpoint is None else _endpoint_to_dict(endpoint),
            "report": args.report or f"runs/eval-{args.policy}-{args.scenario}",
            "train_meta": _train_metadata_near(args.model_file) if args.model_file else {},
        }

    scenario = scenario_from_dict(resolved["scenario"])
    endpoint = None if resolved["endpoint"] is None else _endpoint_from_dict(resolved["endpoint"])
    meta = resolved.get("train_meta") or {}
    if resolved["policy"] in ("rl", "hybrid"):
        net = QNetwork.load(resolved["model_file"])
        metadata = PolicyMetadata(
            regime=resolved["policy"],
            shaping=str(meta.get("shaping", "none")),
            scorer=str(meta.get("scorer", "")),
            train_steps=int(meta.get("train_steps", 0)),
            model_path=str(resolved["model_file"]),
        )
        policy = (RlGreedyPolicy if resolved["policy"] == "rl" else HybridPolicy)(net, metadata)
    else:
        scorer_name = resolved["scorer"]
        if scorer_name.startswith("mock-"):
            policy = LlmOnlyPolicy(mock_profile=scorer_name.removeprefix("mock-"))
        else:
            policy = LlmOnlyPolicy(endpoint=endpoint)

    _log(f"evaluating {resolved['policy']} on {resolved['scenario_name']} "
         f"({resolved['episodes']} episodes, jobs={resolved['jobs']})")
    report = evaluate(policy, scenario, episodes=resolved["episodes"], jobs=resolved["jobs"])
    report_base = Path(resolved["report"])
    report_base.parent.mkdir(parents=True, exist_ok=True)
    written = emit_report(report, resolved["format"], report_base)
    manifest_path = report_base.parent / (report_base.stem + ".manifest.json")
    _write_manifest(
        manifest_path, "eval", resolved,
        {f"report_{p.suffix.lstrip('.')}": str(p) for p in written},
        started,
    )
    _log(f"SR={report.success_rate:.1f}% LC={report.lane_change_score:.2f} "
         f"Speed={report.speed_score:.2f}; wrote {', '.join(str(p) for p in written)}")
    return 0


# -------------------------------------------------------------- compare ----


def cmd_compare(args, parser: argparse.ArgumentParser) -> int:
    if len(args.reports) < 2:
        parser.error("compare needs at least 2 report files")
    reports = [load_report(p) for p in args.reports]
    text, csv_bytes = compare(reports)
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    txt_path = out_prefix.with_suffix(".txt")
    csv_path = out_prefix.with_suffix(".csv")
    txt_path.write_text(text)
    csv_path.write_bytes(csv_bytes)
    _log(text.rstrip("\n"))
    _log(f"wrote {txt_path}, {csv_path}")
    return 0


# ------------------------------------------------------ record-fixtures ----


def _fixture_inputs() -> list[dict]:
    """Bundled observations/transitions replayed through the endpoint."""
    obs_grid = [
        Observation(25.0, 10.0, 6.2, 10.0),
        Observation(28.0, 5.0, 8.0, 6.0),
        Observation(22.0, 1.0, 1.0, 4.0),
        Observation(30.0, 0.0, 2.5, 3.5),
        Observation(20.0, 10.0, 10.0, 10.0),
        Observation(26.0, 2.0, 1.5, 0.0),
    ]
    items: list[dict] = []
    for i, obs in enumerate(obs_grid):
        items.append({"id": f"action-{i:02d}", "kind": "action", "obs": obs})
    transitions = [
        (Observation(25.0, 10.0, 4.0, 10.0), MetaAction.FASTER, Observation(27.0, 10.0, 3.1, 10.0)),
        (Observation(28.0, 10.0, 1.8, 10.0), MetaAction.SLOWER, Observation(26.0, 10.0, 2.6, 10.0)),
        (Observation(24.0, 10.0, 8.0, 10.0), MetaAction.IDLE, Observation(24.0, 10.0, 8.0, 10.0)),
        (Observation(22.0, 10.0, 1.2, 10.0), MetaAction.LANE_LEFT, Observation(22.0, 10.0, 6.0, 10.0)),
        (Observation(29.0, 10.0, 9.0, 10.0), MetaAction.FASTER, Observation(30.0, 10.0, 7.5, 10.0)),
        (Observation(21.0, 10.0, 2.2, 10.0), MetaAction.LANE_RIGHT, Observation(21.0, 10.0, 1.0, 10.0)),
    ]
    for i, (prev, act, nxt) in enumerate(transitions):
        items.append({"id": f"score-{i:02d}", "kind": "score", "prev": prev, "action": act, "next": nxt})
    return items


def cmd_record_fixtures(args, parser: argparse.ArgumentParser) -> int:
    started = time.monotonic()
    endpoint = _resolve_endpoint(args, {}, parser)
    if endpoint is None:
        parser.error("record-fixtures requires --endpoint (or SHWY_ENDPOINT)")
    base = Path(args.out)
    base.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    corpus_dir = base / f"fixtures-{stamp}"
    n = 2
    while corpus_dir.exists():
        corpus_dir = base / f"fixtures-{stamp}-{n}"
        n += 1
    corpus_dir.mkdir()

    records = []
    failures = 0
    for item in _fixture_inputs():
        if item["kind"] == "action":
            prompt = render_action_prompt(item["obs"])
        else:
            prompt = render_score_prompt(item["prev"], item["action"], item["next"])
        record = {"id": item["id"], "kind": item["kind"], "prompt": prompt}
        try:
            reply = query_chat(endpoint, prompt)
            record["reply"] = reply
            try:
                if item["kind"] == "action":
                    record["parsed"] = {"status": "ok", "value": int(parse_action_response(reply))}
                else:
                    record["parsed"] = {"status": "ok", "value": parse_score_response(reply)}
            except LlmParseError as exc:
                record["parsed"] = {"status": "parse_error", "detail": str(exc)}
                failures += 1
        except LlmTransportError as exc:
            record["reply"] = None
            record["parsed"] = {"status": "transport_error", "detail": str(exc)}
            failures += 1
        records.append(record)

    corpus_path = corpus_dir / "corpus.json"
    corpus_path.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    _write_manifest(
        corpus_dir / "manifest.json", "record-fixtures",
        {"endpoint": _endpoint_to_dict(endpoint), "out": str(base)},
        {"corpus": str(corpus_path)},
        started,
    )
    _log(f"recorded {len(records)} fixtures ({failures} parse/transport failures) in {corpus_dir}")
    return 0


# ----------------------------------------------------------------- main ----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shwy", description=__doc__)
    parser.add_argument("--version", action="version", version=f"shwy {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a DQN agent (optionally LLM-shaped)")
    p_train.add_argument("--scenario", choices=("highway", "highway-fast", "merge"), default="highway-fast")
    p_train.add_argument("--steps", type=int, default=None)
    p_train.add_argument("--shaping", choices=("none", "dense", "averaged", "centered"), default=None)
    p_train.add_argument("--lambda", dest="lam", type=float, default=None)
    p_train.add_argument("--scorer", choices=SCORER_CHOICES, default=None)
    p_train.add_argument("--endpoint", default=None)
    p_train.add_argument("--model", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    p_train.add_argument("--no-score-cache", action="store_true")
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--from-manifest", default=None)

    p_eval = sub.add_parser("eval", help="evaluate a policy over seeded episodes")
    p_eval.add_argument("--policy", choices=("rl", "llm", "hybrid"), default="rl")
    p_eval.add_argument("--model-file", default=None)
    p_eval.add_argument("--scenario", choices=("highway", "highway-fast", "merge"), default="highway")
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--jobs", type=int, default=None)
    p_eval.add_argument("--report", default=None)
    p_eval.add_argument("--format", choices=("json", "csv", "both"), default=None)
    p_eval.add_argument("--scorer", choices=SCORER_CHOICES, default=None)
    p_eval.add_argument("--endpoint", default=None)
    p_eval.add_argument("--model", default=None)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--from-manifest", default=None)

    p_cmp = sub.add_parser("compare", help="tabulate several evaluation reports")
    p_cmp.add_argument("reports", nargs="*")
    p_cmp.add_argument("--out", default="runs/comparison")

    p_fix = sub.add_parser("record-fixtures", help="capture raw endpoint replies for parser tests")
    p_fix.add_argument("--endpoint", default=None)
    p_fix.add_argument("--model", default=None)
    p_fix.add_argument("--out", default="fixtures")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "compare": cmd_compare,
        "record-fixtures": cmd_record_fixtures,
    }
    try:
        return handlers[args.command](args, parser)
    except (ConfigError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
