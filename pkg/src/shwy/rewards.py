"""Environment reward and the three LLM-score shaping schemes.

The environment reward rescales ``a * speed_fraction - b * collision`` from
its raw range ``[-b, a]`` into ``[0, 1]``.  Shaping composes that reward
with a normalized score in one of three ways:

* dense:    ``r + lambda * s``            (range ``[0, 1 + lambda]``)
* averaged: ``0.5 * r + 0.5 * s``         (range ``[0, 1]``)
* centered: ``(r + (s - 0.5) + 0.5) / 2`` (range ``[0, 1]``)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class ShapingKind(enum.Enum):
    NONE = "none"
    DENSE = "dense"
    AVERAGED = "averaged"
    CENTERED = "centered"


@dataclass(frozen=True)
class ShapingScheme:
    kind: ShapingKind = ShapingKind.NONE
    lam: float = 1.0  # dense-scheme weight

    def __post_init__(self) -> None:
        if self.kind is ShapingKind.DENSE and self.lam <= 0:
            raise ValueError(f"dense shaping requires lambda > 0, got {self.lam}")

    @classmethod
    def parse(cls, name: str, lam: float = 1.0) -> "ShapingScheme":
        return cls(kind=ShapingKind(name.strip().lower()), lam=lam)

    @property
    def uses_scores(self) -> bool:
        return self.kind is not ShapingKind.NONE


@dataclass(frozen=True)
class RewardBreakdown:
    env_reward: float
    llm_score_norm: float | None
    total: float


def env_reward(
    ego_speed: float,
    collided: bool,
    a: float = 0.4,
    b: float = 1.0,
    v_min: float = 20.0,
    v_max: float = 30.0,
) -> float:
    """Normalized environment reward in [0, 1].

    Raw reward is ``a * clip((v - v_min)/(v_max - v_min), 0, 1)`` minus ``b``
    on collision; the raw range ``[-b, a]`` is mapped linearly onto [0, 1].
    """
    if a <= 0 or b <= 0:
        raise ValueError(f"reward weights must be positive, got a={a}, b={b}")
    frac = (ego_speed - v_min) / (v_max - v_min)
    if frac < 0.0:
        frac = 0.0
    elif frac > 1.0:
        frac = 1.0
    raw = a * frac - (b if collided else 0.0)
    return (raw + b) / (a + b)


def normalize_score(raw: float) -> float:
    """Map a raw 0-10 score onto [0, 1] by scaling with 0.1."""
    if not 0.0 <= raw <= 10.0:
        raise ValueError(f"raw score must be in [0, 10], got {raw}")
    return 0.1 * raw


def shape_dense(r: float, s: float, lam: float = 1.0) -> float:
    """Additive shaping ``r + lambda * s``; bounded by [0, 1 + lambda]."""
    return r + lam * s


def shape_averaged(r: float, s: float) -> float:
    """Equal-weight fusion ``0.5 r + 0.5 s``; stays in [0, 1]."""
    return 0.5 * r + 0.5 * s


def shape_centered(r: float, s: float) -> float:
    """Mean-zero shaping: center the score at 0.5, then rescale onto [0, 1].

    ``r + (s - 0.5)`` spans [-0.5, 1.5]; the unique affine map back onto
    [0, 1] is ``(x + 0.5) / 2``.
    """
    raw = r + (s - 0.5)
    return (raw + 0.5) / 2.0


def compose(scheme: ShapingScheme, r: float, s: float | None) -> RewardBreakdown:
    """Total training reward for one transition under ``scheme``."""
    if scheme.kind is ShapingKind.NONE:
        return RewardBreakdown(env_reward=r, llm_score_norm=None, total=r)
    if s is None:
        raise ValueError(f"{scheme.kind.value} shaping requires a normalized score")
    if scheme.kind is ShapingKind.DENSE:
        total = shape_dense(r, s, scheme.lam)
    elif scheme.kind is ShapingKind.AVERAGED:
        total = shape_averaged(r, s)
    else:
        total = shape_centered(r, s)
    return RewardBreakdown(env_reward=r, llm_score_norm=s, total=total)


def speed_score(mean_speed: float, v_min: float = 20.0, v_max: float = 30.0) -> float:
    """Evaluation speed metric: ``clip((v - v_min)/(v_max - v_min), 0, 1)``."""
    frac = (mean_speed - v_min) / (v_max - v_min)
    if frac < 0.0:
        return 0.0
    if frac > 1.0:
        return 1.0
    return frac
