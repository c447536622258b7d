"""Pure-Python simulation kernel.

Reference implementation of the per-policy-step physics advance.  The
compiled kernel (``_native.pyx``) mirrors this module operation for
operation so that both backends produce bit-identical trajectories; changes
here must be replicated there.

Index 0 of every array is the ego vehicle.  Traffic follows IDM
longitudinally and MOBIL for lane changes; the ego tracks its commanded
target speed/lane with proportional speed control and first-order lateral
convergence.  The ego never brakes automatically: collision avoidance is the
policy's job.

Lane semantics: ``lane_idx`` is the attribution (nearest lane center), while
a vehicle whose ``tgt_lane`` differs is mid-change and *occupies both lanes*
for every neighbor search.  That makes committed lane changes visible to
followers and to other deciders immediately, which is what keeps scripted
traffic from merging into the same gap.
"""

from __future__ import annotations

BACKEND_NAME = "python"

SETTLED_TOL = 0.5  # max |lat - lane center| for a vehicle to start a lane change


def _idm(v, v_lead, gap, v0, a_max, s0, T, delta, two_sqrt_ab, b_hard):
    # gap > 0 guaranteed by the leader search; gap <= 0 never reaches here.
    free = a_max * (1.0 - (v / v0) ** delta)
    dv = v - v_lead
    s_star = s0 + v * T + v * dv / two_sqrt_ab
    ratio = s_star / gap
    accel = free - a_max * (ratio * ratio)
    if accel > a_max:
        return a_max
    if accel < -b_hard:
        return -b_hard
    return accel


def _idm_free(v, v0, a_max, delta, b_hard):
    accel = a_max * (1.0 - (v / v0) ** delta)
    if accel > a_max:
        return a_max
    if accel < -b_hard:
        return -b_hard
    return accel


def advance(
    pos_a, lat_a, speed_a, tgt_speed_a, tgt_lane_a, lane_idx_a, length_a, width_a,
    n_sub, dt, lane_count, lane_width,
    has_ramp, junction_pos, merge_zone_start,
    idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard,
    mobil_p, mobil_athr, mobil_bsafe,
    ego_kp, ego_amax, lat_alpha,
):
    """Advance one policy step (``n_sub`` physics substeps) in place.

    Returns ``(collided_substep, substeps_done, ego_speed_sum,
    ego_lane_changes, traffic_contacts)`` where ``collided_substep`` is -1
    when the ego survives the whole step.
    """
    n = len(pos_a)
    pos = pos_a.tolist()
    lat = lat_a.tolist()
    speed = speed_a.tolist()
    tgt_speed = tgt_speed_a.tolist()
    tgt_lane = tgt_lane_a.tolist()
    lane_idx = lane_idx_a.tolist()
    length = length_a.tolist()
    width = width_a.tolist()

    ramp_index = lane_count
    accel = [0.0] * n
    collided_substep = -1
    substeps_done = 0
    ego_speed_sum = 0.0
    ego_lane_changes = 0
    traffic_contacts = 0
    max_len = max(length) if n else 0.0

    def leader_in_lane(i, lane):
        """Nearest vehicle ahead of i occupying ``lane``: (index, bumper gap)."""
        best_j = -1
        best_gap = 0.0
        front_i = pos[i] + 0.5 * length[i]
        for j in range(n):
            if j == i or (lane_idx[j] != lane and tgt_lane[j] != lane):
                continue
            gap = (pos[j] - 0.5 * length[j]) - front_i
            if gap > 0.0 and (best_j < 0 or gap < best_gap):
                best_j = j
                best_gap = gap
        return best_j, best_gap

    def follower_in_lane(i, lane):
        """Nearest vehicle behind i occupying ``lane``: (index, bumper gap)."""
        best_j = -1
        best_gap = 0.0
        rear_i = pos[i] - 0.5 * length[i]
        for j in range(n):
            if j == i or (lane_idx[j] != lane and tgt_lane[j] != lane):
                continue
            gap = rear_i - (pos[j] + 0.5 * length[j])
            if gap > 0.0 and (best_j < 0 or gap < best_gap):
                best_j = j
                best_gap = gap
        return best_j, best_gap

    def alongside_in_lane(i, lane):
        """True when some occupant of ``lane`` longitudinally overlaps i.

        Such a vehicle is neither leader nor follower, so it is invisible to
        the car-following math; a lane change into it must be vetoed.
        """
        front_i = pos[i] + 0.5 * length[i]
        rear_i = pos[i] - 0.5 * length[i]
        for j in range(n):
            if j == i or (lane_idx[j] != lane and tgt_lane[j] != lane):
                continue
            if (pos[j] - 0.5 * length[j]) - front_i <= 0.0 and rear_i - (pos[j] + 0.5 * length[j]) <= 0.0:
                return True
        return False

    def idm_vs(i, lead_j, gap):
        if lead_j < 0:
            return _idm_free(speed[i], tgt_speed[i], idm_a_max, idm_delta, b_hard)
        return _idm(
            speed[i], speed[lead_j], gap, tgt_speed[i],
            idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard,
        )

    for k in range(n_sub):
        # Traffic lane-change decisions: once per policy step, main lanes
        # only, settled vehicles only.  Decisions are sequential in vehicle
        # order, and a committed target immediately counts as occupancy, so
        # two vehicles cannot claim the same gap within one decision pass.
        if k == 0:
            for i in range(1, n):
                li = lane_idx[i]
                if li == ramp_index or tgt_lane[i] != li:
                    continue
                center = (li + 0.5) * lane_width
                d = lat[i] - center
                if d < 0.0:
                    d = -d
                if d > SETTLED_TOL:
                    continue
                cl_j, cl_gap = leader_in_lane(i, li)
                of_j, of_gap = follower_in_lane(i, li)
                a_old = idm_vs(i, cl_j, cl_gap)
                best_lane = -1
                best_incentive = 0.0
                for cand in (li - 1, li + 1):
                    if cand < 0 or cand >= lane_count:
                        continue
                    if alongside_in_lane(i, cand):
                        continue
                    nl_j, nl_gap = leader_in_lane(i, cand)
                    nf_j, nf_gap = follower_in_lane(i, cand)
                    a_new = idm_vs(i, nl_j, nl_gap)
                    gain_followers = 0.0
                    safe = True
                    if nf_j >= 0:
                        if nl_j < 0:
                            nf_before = _idm_free(
                                speed[nf_j], tgt_speed[nf_j], idm_a_max, idm_delta, b_hard
                            )
                        else:
                            nf_before = _idm(
                                speed[nf_j], speed[nl_j], nf_gap + length[i] + nl_gap,
                                tgt_speed[nf_j], idm_a_max, idm_s0, idm_T, idm_delta,
                                two_sqrt_ab, b_hard,
                            )
                        nf_after = _idm(
                            speed[nf_j], speed[i], nf_gap, tgt_speed[nf_j],
                            idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard,
                        )
                        safe = nf_after >= -mobil_bsafe
                        gain_followers += nf_after - nf_before
                    if of_j >= 0:
                        of_before = _idm(
                            speed[of_j], speed[i], of_gap, tgt_speed[of_j],
                            idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard,
                        )
                        if cl_j < 0:
                            of_after = _idm_free(
                                speed[of_j], tgt_speed[of_j], idm_a_max, idm_delta, b_hard
                            )
                        else:
                            of_after = _idm(
                                speed[of_j], speed[cl_j], of_gap + length[i] + cl_gap,
                                tgt_speed[of_j], idm_a_max, idm_s0, idm_T, idm_delta,
                                two_sqrt_ab, b_hard,
                            )
                        gain_followers += of_after - of_before
                    incentive = a_new - a_old + mobil_p * gain_followers
                    if safe and incentive > mobil_athr and incentive >= best_incentive:
                        best_lane = cand
                        best_incentive = incentive
                if best_lane >= 0:
                    tgt_lane[i] = best_lane

        # Ramp vehicles: commit to the rightmost main lane once inside the
        # merge zone and the new follower's imposed deceleration is tolerable.
        if has_ramp:
            main_target = lane_count - 1
            for i in range(1, n):
                if lane_idx[i] != ramp_index or tgt_lane[i] != ramp_index:
                    continue
                if pos[i] < merge_zone_start:
                    continue
                if alongside_in_lane(i, main_target):
                    continue
                nf_j, nf_gap = follower_in_lane(i, main_target)
                safe = True
                if nf_j >= 0:
                    nf_after = _idm(
                        speed[nf_j], speed[i], nf_gap, tgt_speed[nf_j],
                        idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard,
                    )
                    safe = nf_after >= -mobil_bsafe
                if safe:
                    tgt_lane[i] = main_target

        # Longitudinal accelerations from the pre-update state (synchronous).
        # Everyone follows the nearest leader across the lanes they occupy;
        # a vehicle held on the ramp additionally brakes against the ramp end.
        accel[0] = ego_kp * (tgt_speed[0] - speed[0])
        if accel[0] > ego_amax:
            accel[0] = ego_amax
        elif accel[0] < -ego_amax:
            accel[0] = -ego_amax
        for i in range(1, n):
            li = lane_idx[i]
            lead_j, lead_gap = leader_in_lane(i, li)
            if tgt_lane[i] != li:
                ml_j, ml_gap = leader_in_lane(i, tgt_lane[i])
                if ml_j >= 0 and (lead_j < 0 or ml_gap < lead_gap):
                    lead_j, lead_gap = ml_j, ml_gap
            if li == ramp_index and tgt_lane[i] == ramp_index:
                wall_gap = junction_pos - (pos[i] + 0.5 * length[i])
                if lead_j < 0 or wall_gap < lead_gap:
                    if wall_gap < 1e-6:
                        accel[i] = -b_hard
                    else:
                        accel[i] = _idm(
                            speed[i], 0.0, wall_gap, tgt_speed[i],
                            idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard,
                        )
                else:
                    accel[i] = idm_vs(i, lead_j, lead_gap)
            else:
                accel[i] = idm_vs(i, lead_j, lead_gap)

        # Integrate speeds, then positions (semi-implicit Euler).
        for i in range(n):
            s = speed[i] + accel[i] * dt
            if s < 0.0:
                s = 0.0
            speed[i] = s
            pos[i] = pos[i] + s * dt

        # First-order lateral convergence toward the target lane center.
        for i in range(n):
            center = (tgt_lane[i] + 0.5) * lane_width
            lat[i] = lat[i] + (center - lat[i]) * lat_alpha

        # Lane attribution: nearest lane center; the ramp index only exists
        # before the junction.
        ego_prev_lane = lane_idx[0]
        for i in range(n):
            top = lane_count
            if has_ramp and pos[i] <= junction_pos:
                top = lane_count + 1
            best_l = 0
            best_d = -1.0
            for L in range(top):
                d = lat[i] - (L + 0.5) * lane_width
                if d < 0.0:
                    d = -d
                if best_d < 0.0 or d < best_d:
                    best_d = d
                    best_l = L
            lane_idx[i] = best_l
        if lane_idx[0] != ego_prev_lane:
            ego_lane_changes += 1

        # Collision detection (strict rectangle overlap in road coordinates).
        ego_hit = False
        for j in range(1, n):
            dp = pos[j] - pos[0]
            if dp < 0.0:
                dp = -dp
            dl = lat[j] - lat[0]
            if dl < 0.0:
                dl = -dl
            if dp < 0.5 * (length[j] + length[0]) and dl < 0.5 * (width[j] + width[0]):
                ego_hit = True
                break
        order = sorted(range(1, n), key=lambda j: (pos[j], j))
        for a in range(len(order)):
            i = order[a]
            for b in range(a + 1, len(order)):
                j = order[b]
                dp = pos[j] - pos[i]
                if dp >= max_len:
                    break
                if dp < 0.0:
                    dp = -dp
                dl = lat[j] - lat[i]
                if dl < 0.0:
                    dl = -dl
                if dp < 0.5 * (length[j] + length[i]) and dl < 0.5 * (width[j] + width[i]):
                    traffic_contacts += 1

        ego_speed_sum += speed[0]
        substeps_done += 1
        if ego_hit:
            collided_substep = k
            break

    pos_a[:] = pos
    lat_a[:] = lat
    speed_a[:] = speed
    tgt_lane_a[:] = tgt_lane
    lane_idx_a[:] = lane_idx
    return collided_substep, substeps_done, ego_speed_sum, ego_lane_changes, traffic_contacts
