"""The three policy regimes behind one ``decide(policy, obs)`` interface.

RL-only and hybrid policies are trained networks evaluated greedily; they
make zero network or LLM calls at decision time.  The LLM-only policy turns
each observation into the action prompt and asks a chat backend (a real
endpoint or a deterministic mock profile) to pick the meta-action.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .dqn import QNetwork
from .llm import (
    EndpointConfig,
    LlmParseError,
    LlmTransportError,
    mock_action,
    parse_action_response,
    query_chat,
    render_action_prompt,
)
from .observation import Observation
from .simulate import MetaAction


@dataclass(frozen=True)
class PolicyMetadata:
    regime: str
    shaping: str = "none"
    scorer: str = ""
    train_steps: int = 0
    model_path: str = ""

    def as_dict(self) -> dict[str, object]:
        return {
            "regime": self.regime,
            "shaping": self.shaping,
            "scorer": self.scorer,
            "train_steps": self.train_steps,
            "model_path": self.model_path,
        }


@dataclass
class ActionCounters:
    requests: int = 0
    parse_fallbacks: int = 0
    transport_fallbacks: int = 0

    @property
    def fallbacks(self) -> int:
        return self.parse_fallbacks + self.transport_fallbacks

    def as_dict(self) -> dict[str, int]:
        return {
            "requests": self.requests,
            "parse_fallbacks": self.parse_fallbacks,
            "transport_fallbacks": self.transport_fallbacks,
        }


@dataclass(frozen=True)
class RlGreedyPolicy:
    """Greedy argmax over a trained Q-network; pure function of (weights, obs)."""

    net: QNetwork
    metadata: PolicyMetadata = field(default_factory=lambda: PolicyMetadata(regime="rl"))

    def decide(self, obs: Observation) -> MetaAction:
        return MetaAction(int(np.argmax(self.net.forward(obs.as_vector()))))


@dataclass(frozen=True)
class HybridPolicy:
    """A network trained under LLM shaping, deployed with no LLM anywhere.

    Structurally identical to :class:`RlGreedyPolicy` on purpose: the type
    carries no endpoint field, so attaching one is impossible.
    """

    net: QNetwork
    metadata: PolicyMetadata = field(default_factory=lambda: PolicyMetadata(regime="hybrid"))

    def decide(self, obs: Observation) -> MetaAction:
        return MetaAction(int(np.argmax(self.net.forward(obs.as_vector()))))


class LlmOnlyPolicy:
    """Prompt -> chat backend -> parsed meta-action, with counted fallbacks."""

    def __init__(
        self,
        endpoint: EndpointConfig | None = None,
        mock_profile: str | None = None,
        metadata: PolicyMetadata | None = None,
    ) -> None:
        if (endpoint is None) == (mock_profile is None):
            raise ValueError("provide exactly one of endpoint or mock_profile")
        self.endpoint = endpoint
        self.mock_profile = mock_profile
        self.counters = ActionCounters()
        self._lock = threading.Lock()  # parallel evaluation episodes share counters
        scorer_id = f"mock-{mock_profile}" if mock_profile else f"http:{endpoint.model_name}"
        self.metadata = metadata or PolicyMetadata(regime="llm", scorer=scorer_id)

    def _bump(self, counter: str) -> None:
        with self._lock:
            setattr(self.counters, counter, getattr(self.counters, counter) + 1)

    def decide(self, obs: Observation) -> MetaAction:
        self._bump("requests")
        if self.mock_profile is not None:
            return mock_action(obs, self.mock_profile)
        assert self.endpoint is not None
        try:
            reply = query_chat(self.endpoint, render_action_prompt(obs))
            return parse_action_response(reply)
        except LlmParseError:
            self._bump("parse_fallbacks")
            return self.endpoint.fallback_action
        except LlmTransportError:
            self._bump("transport_fallbacks")
            return self.endpoint.fallback_action


Policy = RlGreedyPolicy | HybridPolicy | LlmOnlyPolicy


def decide(policy: Policy, obs: Observation) -> MetaAction:
    """Map an observation to a meta-action under any policy regime."""
    return policy.decide(obs)


def policy_counters(policy: Policy) -> dict[str, int]:
    if isinstance(policy, LlmOnlyPolicy):
        return policy.counters.as_dict()
    return {}
