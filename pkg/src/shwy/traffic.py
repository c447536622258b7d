"""Scripted-traffic behavior: IDM car following and MOBIL lane changing.

These scalar functions are the reference definition of the traffic model; the
simulation kernels (compiled and pure-Python) reproduce exactly the same
arithmetic on packed arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .scenario import IdmParams, MobilParams

INF_GAP = math.inf


def idm_acceleration(
    v: float,
    v_lead: float,
    gap: float,
    params: IdmParams,
    v0: float,
    b_hard: float = 8.0,
) -> float:
    """Longitudinal acceleration of a follower at speed ``v`` toward ``v0``.

    ``gap`` is the bumper-to-bumper distance to the leader (``math.inf`` when
    there is no leader, in which case ``v_lead`` is ignored).  The output is
    clamped to ``[-b_hard, a_max]``.

    Raises ``ValueError`` for a non-positive finite gap: that geometry is a
    collision and must be handled by collision detection, not car following.
    """
    if gap != INF_GAP and gap <= 0.0:
        raise ValueError(f"idm_acceleration requires gap > 0 or inf, got {gap}")
    free = params.a_max * (1.0 - (v / v0) ** params.delta)
    if gap == INF_GAP:
        accel = free
    else:
        dv = v - v_lead
        s_star = params.s0 + v * params.T + v * dv / (2.0 * math.sqrt(params.a_max * params.b_comf))
        accel = free - params.a_max * (s_star / gap) ** 2
    if accel > params.a_max:
        return params.a_max
    if accel < -b_hard:
        return -b_hard
    return accel


@dataclass(frozen=True)
class Neighbor:
    """A neighbor as seen from a lane-change candidate: speed plus bumper gap."""

    speed: float = 0.0
    gap: float = INF_GAP
    v0: float = 30.0  # desired speed; only meaningful for followers

    @property
    def absent(self) -> bool:
        return self.gap == INF_GAP


NO_NEIGHBOR = Neighbor()


def mobil_gain(
    v: float,
    v0: float,
    length: float,
    cur_leader: Neighbor,
    new_leader: Neighbor,
    new_follower: Neighbor,
    old_follower: Neighbor,
    idm: IdmParams,
    mobil: MobilParams,
    b_hard: float = 8.0,
) -> tuple[float, bool]:
    """Evaluate one candidate lane for the MOBIL criterion.

    All gaps inside the ``Neighbor`` views are bumper gaps measured from the
    changing vehicle (``length`` long) at its current position.

    Returns ``(incentive, safe)`` where ``incentive`` is
    ``a_new - a_old + politeness * (follower gains)`` and ``safe`` is the new
    follower's imposed-deceleration check (plus non-overlap feasibility).
    """
    for nb in (cur_leader, new_leader, new_follower, old_follower):
        if not nb.absent and nb.gap <= 0.0:
            return -INF_GAP, False

    a_old = idm_acceleration(v, cur_leader.speed, cur_leader.gap, idm, v0, b_hard)
    a_new = idm_acceleration(v, new_leader.speed, new_leader.gap, idm, v0, b_hard)

    gain_followers = 0.0
    safe = True
    if not new_follower.absent:
        if new_leader.absent:
            nf_gap_before = INF_GAP
        else:
            nf_gap_before = new_follower.gap + length + new_leader.gap
        nf_before = idm_acceleration(
            new_follower.speed, new_leader.speed, nf_gap_before, idm, new_follower.v0, b_hard
        )
        nf_after = idm_acceleration(
            new_follower.speed, v, new_follower.gap, idm, new_follower.v0, b_hard
        )
        safe = nf_after >= -mobil.b_safe
        gain_followers += nf_after - nf_before
    if not old_follower.absent:
        if cur_leader.absent:
            of_gap_after = INF_GAP
        else:
            of_gap_after = old_follower.gap + length + cur_leader.gap
        of_before = idm_acceleration(
            old_follower.speed, v, old_follower.gap, idm, old_follower.v0, b_hard
        )
        of_after = idm_acceleration(
            old_follower.speed, cur_leader.speed, of_gap_after, idm, old_follower.v0, b_hard
        )
        gain_followers += of_after - of_before

    incentive = a_new - a_old + mobil.politeness * gain_followers
    return incentive, safe


def mobil_decision(
    v: float,
    v0: float,
    length: float,
    cur_leader: Neighbor,
    old_follower: Neighbor,
    candidates: dict[int, tuple[Neighbor, Neighbor]],
    idm: IdmParams,
    mobil: MobilParams,
    b_hard: float = 8.0,
) -> int | None:
    """Pick the best passing candidate lane, or ``None`` to stay.

    ``candidates`` maps lane index to ``(new_leader, new_follower)`` views.
    Among candidates that pass both MOBIL inequalities the largest incentive
    wins; an exact tie prefers the higher lane index (keep right).
    """
    best_lane: int | None = None
    best_incentive = 0.0
    for lane in sorted(candidates):
        new_leader, new_follower = candidates[lane]
        incentive, safe = mobil_gain(
            v, v0, length, cur_leader, new_leader, new_follower, old_follower,
            idm, mobil, b_hard,
        )
        if safe and incentive > mobil.a_threshold and incentive >= best_incentive:
            best_lane = lane
            best_incentive = incentive
    return best_lane
