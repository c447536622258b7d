"""LLM integration: prompt templates, chat endpoint client, reply parsers,
deterministic mock backends, and the transition-score cache.

The only wire protocol is an OpenAI-compatible ``/v1/chat/completions`` POST;
any local runtime exposing it (vLLM, Ollama's compat layer, llama.cpp, a test
stub) works unchanged.  Every parse or transport failure is absorbed into a
documented fallback and counted, so conservative bias introduced by fallbacks
is measurable rather than silent.
"""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass, field
from typing import Callable

import requests

from .observation import Observation
from .simulate import MetaAction


class LlmParseError(ValueError):
    """Reply text did not contain a usable action/score."""


class LlmTransportError(RuntimeError):
    """Endpoint unreachable or persistently misbehaving."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 8
    timeout_ms: int = 30_000
    max_retries: int = 2
    fallback_action: MetaAction = MetaAction.SLOWER
    fallback_score: float = 5.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be > 0, got {self.timeout_ms}")
        if not 0 <= self.fallback_score <= 10:
            raise ValueError(f"fallback_score must be in [0, 10], got {self.fallback_score}")


ACTION_PROMPT_TEMPLATE = """You are controlling an autonomous vehicle. Prioritize safety first, then consider efficiency and human-like behavior.

Guidelines:
1. Avoid any action that risks a collision.
2. Treat any Time-To-Collision (TTC) below 2 seconds as dangerous.
3. Speed up only if the current lane TTC (center lane) is clearly safe (above 3 seconds).
4. If the current lane TTC is low (below 2 seconds), and either left or right lane TTC is high (above 3 seconds), prefer changing to the safest lane.
5. Maintain a target speed around 30 m/s if safe, but slowing down is acceptable when unsure.
6. Change lanes only if it clearly improves safety or avoids slower traffic.

Available actions:
0 = Turn Left
1 = Idle
2 = Turn Right
3 = Go Faster
4 = Slow Down

Current observations:
- Speed: {speed:.1f} m/s
- Left lane TTC: {left:.1f} s
- Center lane TTC: {center:.1f} s
- Right lane TTC: {right:.1f} s

What is the safest and most reasonable driving action to take now? Respond with only the action number (0-4)."""


SCORE_PROMPT_TEMPLATE = """You are evaluating the behavior of an autonomous vehicle in its current lane.

TTC = Time To Collision - higher is safer.

--- BEFORE ACTION ---
- Ego speed: {prev_speed:g} m/s
- Current lane TTC: {prev_ttc:g} s

--- ACTION TAKEN ---
- {action}

--- AFTER ACTION ---
- Ego speed: {next_speed:g} m/s
- Current lane TTC: {next_ttc:g} s

Score this action from 0 (very unsafe or inefficient) to 10 (excellent decision). Prioritize avoiding collisions, maintaining approximately 30 m/s if safe, and smooth, human-like driving. Respond with only the numeric score."""


def render_action_prompt(obs: Observation) -> str:
    return ACTION_PROMPT_TEMPLATE.format(
        speed=obs.ego_speed, left=obs.ttc_left, center=obs.ttc_center, right=obs.ttc_right
    )


def render_score_prompt(prev: Observation, action: MetaAction, next_obs: Observation) -> str:
    """Transition-quality prompt; deliberately restricted to ego speed and
    center-lane TTC before/after the action."""
    return SCORE_PROMPT_TEMPLATE.format(
        prev_speed=prev.ego_speed,
        prev_ttc=prev.ttc_center,
        action=MetaAction(action).name,
        next_speed=next_obs.ego_speed,
        next_ttc=next_obs.ttc_center,
    )


def query_chat(config: EndpointConfig, prompt: str) -> str:
    """POST one chat completion and return the first choice's content.

    Retries up to ``max_retries`` extra times on transport errors, non-2xx
    statuses, or malformed response bodies, then raises
    :class:`LlmTransportError`.
    """
    url = config.base_url.rstrip("/") + "/v1/chat/completions"
    body = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    timeout_s = config.timeout_ms / 1000.0
    last_error = "no attempt made"
    for _ in range(config.max_retries + 1):
        try:
            resp = requests.post(url, json=body, timeout=timeout_s)
        except requests.RequestException as exc:
            last_error = f"transport failure: {exc}"
            continue
        if resp.status_code // 100 != 2:
            last_error = f"HTTP {resp.status_code}"
            continue
        try:
            return str(resp.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            last_error = f"malformed response body: {exc}"
            continue
    raise LlmTransportError(f"{url}: giving up after {config.max_retries + 1} attempts ({last_error})")


_REASONING_BLOCK = re.compile(
    r"<(think|thinking|reasoning)>.*?</\1>", re.IGNORECASE | re.DOTALL
)
_ACTION_CODE = re.compile(r"(?<![\w.])([0-4])(?![\d.])")
_NUMBER = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?")


def _strip_markup(text: str) -> str:
    text = _REASONING_BLOCK.sub(" ", text)
    return text.replace("`", " ")


def parse_action_response(text: str) -> MetaAction:
    """First standalone digit 0-4 after stripping reasoning blocks."""
    match = _ACTION_CODE.search(_strip_markup(text))
    if match is None:
        raise LlmParseError(f"no action code 0-4 in reply: {text!r}")
    return MetaAction(int(match.group(1)))


def parse_score_response(text: str) -> float:
    """First number in [0, 10] after stripping reasoning blocks.

    Values in (10, 10.5] are treated as formatting noise and clamped to 10;
    anything else out of range is a parse error.
    """
    match = _NUMBER.search(_strip_markup(text))
    if match is None:
        raise LlmParseError(f"no numeric score in reply: {text!r}")
    value = float(match.group(0))
    if 0.0 <= value <= 10.0:
        return value
    if 10.0 < value <= 10.5:
        return 10.0
    raise LlmParseError(f"score {value} outside [0, 10] in reply: {text!r}")


MOCK_PROFILES = ("balanced", "conservative")


def mock_score(
    prev: Observation, action: MetaAction, next_obs: Observation, profile: str
) -> float:
    """Deterministic rule-based transition score standing in for an LLM.

    ``balanced`` rewards safe headways and high speed; ``conservative``
    models the observed small-LLM bias toward slowing down or idling.
    """
    action = MetaAction(action)
    score = 5.0
    if profile == "balanced":
        if next_obs.ttc_center >= 3.0:
            score += 2.0
        if next_obs.ttc_center < 2.0:
            score -= 4.0
        if next_obs.ego_speed >= 28.0:
            score += 2.0
        if action is MetaAction.SLOWER and prev.ttc_center >= 3.0:
            score -= 1.0
    elif profile == "conservative":
        if action in (MetaAction.SLOWER, MetaAction.IDLE):
            score += 3.0
        if action is MetaAction.FASTER:
            score -= 3.0
        if next_obs.ttc_center >= 3.0:
            score += 2.0
        if next_obs.ttc_center < 2.0:
            score -= 4.0
    else:
        raise ValueError(f"unknown mock profile {profile!r}; expected one of {MOCK_PROFILES}")
    return min(10.0, max(0.0, score))


def mock_action(obs: Observation, profile: str) -> MetaAction:
    """Deterministic rule-based action policy standing in for an LLM driver.

    ``conservative`` slows down below a 3 s headway and otherwise idles,
    never changing lanes.  ``balanced`` follows the action-prompt guidelines
    literally: escape a dangerous lane when a clearly safe one exists,
    accelerate only with a clearly safe headway.
    """
    if profile == "conservative":
        if obs.ttc_center < 3.0:
            return MetaAction.SLOWER
        return MetaAction.IDLE
    if profile == "balanced":
        if obs.ttc_center < 2.0:
            side = max((obs.ttc_left, MetaAction.LANE_LEFT), (obs.ttc_right, MetaAction.LANE_RIGHT))
            if side[0] > 3.0:
                return side[1]
            return MetaAction.SLOWER
        if obs.ttc_center > 3.0 and obs.ego_speed < 29.0:
            return MetaAction.FASTER
        return MetaAction.IDLE
    raise ValueError(f"unknown mock profile {profile!r}; expected one of {MOCK_PROFILES}")


ScoreCacheKey = tuple[int, int, int, int, int]


def score_cache_key(
    prev: Observation,
    action: MetaAction,
    next_obs: Observation,
    speed_resolution: float = 0.5,
    ttc_resolution: float = 0.5,
) -> ScoreCacheKey:
    """Quantized (prev speed, prev TTC, action, next speed, next TTC) key.

    Only the features that enter the score prompt participate, floored to
    the resolution grid so nearby transitions share one LLM call.
    """
    return (
        int(math.floor(prev.ego_speed / speed_resolution)),
        int(math.floor(prev.ttc_center / ttc_resolution)),
        int(MetaAction(action)),
        int(math.floor(next_obs.ego_speed / speed_resolution)),
        int(math.floor(next_obs.ttc_center / ttc_resolution)),
    )


class ScoreCache:
    """Thread-safe score memo with hit/miss counters."""

    def __init__(self) -> None:
        self._data: dict[ScoreCacheKey, float] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._data)

    def lookup(self, key: ScoreCacheKey) -> float | None:
        with self._lock:
            value = self._data.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def store(self, key: ScoreCacheKey, value: float) -> None:
        with self._lock:
            self._data[key] = value


def cached_score(cache: ScoreCache, key: ScoreCacheKey, compute: Callable[[], float]) -> float:
    """Return the cached score for ``key`` or compute-and-store it.

    Errors raised by ``compute`` propagate and nothing is cached for the key.
    """
    value = cache.lookup(key)
    if value is not None:
        return value
    value = compute()
    cache.store(key, value)
    return value


@dataclass
class ScorerCounters:
    requests: int = 0
    backend_calls: int = 0
    parse_fallbacks: int = 0
    transport_fallbacks: int = 0
    cache_hits: int = 0
    cache_misses: int = 0

    @property
    def fallbacks(self) -> int:
        return self.parse_fallbacks + self.transport_fallbacks

    def as_dict(self) -> dict[str, int]:
        return {
            "requests": self.requests,
            "backend_calls": self.backend_calls,
            "parse_fallbacks": self.parse_fallbacks,
            "transport_fallbacks": self.transport_fallbacks,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
        }


class TransitionScorer:
    """Scores transitions through an optional cache with fallback accounting.

    ``backend`` maps ``(prev, action, next)`` to a raw 0-10 score and may
    raise the typed parse/transport errors; failures resolve to
    ``fallback_score`` (never cached) and bump the matching counter.
    """

    def __init__(
        self,
        backend: Callable[[Observation, MetaAction, Observation], float],
        identity: str,
        fallback_score: float = 5.0,
        cache: ScoreCache | None = None,
    ) -> None:
        self.backend = backend
        self.identity = identity
        self.fallback_score = fallback_score
        self.cache = cache
        self.counters = ScorerCounters()

    def score(self, prev: Observation, action: MetaAction, next_obs: Observation) -> float:
        self.counters.requests += 1
        try:
            if self.cache is None:
                value = self._compute(prev, action, next_obs)
            else:
                key = score_cache_key(prev, action, next_obs)
                value = cached_score(
                    self.cache, key, lambda: self._compute(prev, action, next_obs)
                )
                self.counters.cache_hits = self.cache.hits
                self.counters.cache_misses = self.cache.misses
        except LlmParseError:
            self.counters.parse_fallbacks += 1
            return self.fallback_score
        except LlmTransportError:
            self.counters.transport_fallbacks += 1
            return self.fallback_score
        return value

    def _compute(self, prev: Observation, action: MetaAction, next_obs: Observation) -> float:
        self.counters.backend_calls += 1
        return self.backend(prev, action, next_obs)


def make_mock_scorer(profile: str, cache: ScoreCache | None = None) -> TransitionScorer:
    def backend(prev: Observation, action: MetaAction, next_obs: Observation) -> float:
        return mock_score(prev, action, next_obs, profile)

    return TransitionScorer(backend, identity=f"mock-{profile}", cache=cache)


def make_http_scorer(config: EndpointConfig, cache: ScoreCache | None = None) -> TransitionScorer:
    def backend(prev: Observation, action: MetaAction, next_obs: Observation) -> float:
        reply = query_chat(config, render_score_prompt(prev, action, next_obs))
        return parse_score_response(reply)

    return TransitionScorer(
        backend,
        identity=f"http:{config.model_name}",
        fallback_score=config.fallback_score,
        cache=cache,
    )
