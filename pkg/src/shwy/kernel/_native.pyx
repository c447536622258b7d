# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernel.

Mirrors ``_pyref.py`` operation for operation (same arithmetic, same
evaluation order) so both backends produce bit-identical trajectories; keep
the two files in sync.
"""

import numpy as np

from libc.math cimport pow

BACKEND_NAME = "native"

cdef double SETTLED_TOL = 0.5


cdef inline double _idm(double v, double v_lead, double gap, double v0,
                        double a_max, double s0, double T, double delta,
                        double two_sqrt_ab, double b_hard) noexcept nogil:
    cdef double free_a = a_max * (1.0 - pow(v / v0, delta))
    cdef double dv = v - v_lead
    cdef double s_star = s0 + v * T + v * dv / two_sqrt_ab
    cdef double ratio = s_star / gap
    cdef double accel = free_a - a_max * (ratio * ratio)
    if accel > a_max:
        return a_max
    if accel < -b_hard:
        return -b_hard
    return accel


cdef inline double _idm_free(double v, double v0, double a_max, double delta,
                             double b_hard) noexcept nogil:
    cdef double accel = a_max * (1.0 - pow(v / v0, delta))
    if accel > a_max:
        return a_max
    if accel < -b_hard:
        return -b_hard
    return accel


cdef inline long _leader_in_lane(double[::1] pos, double[::1] length, long[::1] lane_idx,
                                 long[::1] tgt_lane, long n, long i, long lane,
                                 double* out_gap) noexcept nogil:
    # "Occupying" a lane means being attributed to it or changing into it.
    cdef long best_j = -1
    cdef double best_gap = 0.0
    cdef double front_i = pos[i] + 0.5 * length[i]
    cdef long j
    cdef double gap
    for j in range(n):
        if j == i or (lane_idx[j] != lane and tgt_lane[j] != lane):
            continue
        gap = (pos[j] - 0.5 * length[j]) - front_i
        if gap > 0.0 and (best_j < 0 or gap < best_gap):
            best_j = j
            best_gap = gap
    out_gap[0] = best_gap
    return best_j


cdef inline long _follower_in_lane(double[::1] pos, double[::1] length, long[::1] lane_idx,
                                   long[::1] tgt_lane, long n, long i, long lane,
                                   double* out_gap) noexcept nogil:
    cdef long best_j = -1
    cdef double best_gap = 0.0
    cdef double rear_i = pos[i] - 0.5 * length[i]
    cdef long j
    cdef double gap
    for j in range(n):
        if j == i or (lane_idx[j] != lane and tgt_lane[j] != lane):
            continue
        gap = rear_i - (pos[j] + 0.5 * length[j])
        if gap > 0.0 and (best_j < 0 or gap < best_gap):
            best_j = j
            best_gap = gap
    out_gap[0] = best_gap
    return best_j


cdef inline bint _alongside_in_lane(double[::1] pos, double[::1] length, long[::1] lane_idx,
                                    long[::1] tgt_lane, long n, long i, long lane) noexcept nogil:
    # A longitudinally overlapping occupant is neither leader nor follower,
    # so it is invisible to the car-following math; veto changes into it.
    cdef double front_i = pos[i] + 0.5 * length[i]
    cdef double rear_i = pos[i] - 0.5 * length[i]
    cdef long j
    for j in range(n):
        if j == i or (lane_idx[j] != lane and tgt_lane[j] != lane):
            continue
        if (pos[j] - 0.5 * length[j]) - front_i <= 0.0 and rear_i - (pos[j] + 0.5 * length[j]) <= 0.0:
            return True
    return False


def advance(
    pos_a, lat_a, speed_a, tgt_speed_a, tgt_lane_a, lane_idx_a, length_a, width_a,
    long n_sub, double dt, long lane_count, double lane_width,
    long has_ramp, double junction_pos, double merge_zone_start,
    double idm_a_max, double idm_s0, double idm_T, double idm_delta,
    double two_sqrt_ab, double b_hard,
    double mobil_p, double mobil_athr, double mobil_bsafe,
    double ego_kp, double ego_amax, double lat_alpha,
):
    """Advance one policy step (``n_sub`` physics substeps) in place."""
    cdef double[::1] pos = pos_a
    cdef double[::1] lat = lat_a
    cdef double[::1] speed = speed_a
    cdef double[::1] tgt_speed = tgt_speed_a
    cdef long[::1] tgt_lane = tgt_lane_a
    cdef long[::1] lane_idx = lane_idx_a
    cdef double[::1] length = length_a
    cdef double[::1] width = width_a

    cdef long n = pos.shape[0]
    cdef double[::1] accel = np.empty(n)
    cdef long ramp_index = lane_count
    cdef long collided_substep = -1
    cdef long substeps_done = 0
    cdef double ego_speed_sum = 0.0
    cdef long ego_lane_changes = 0
    cdef long traffic_contacts = 0

    cdef double max_len = 0.0
    cdef long k, i, j, li, cand, best_lane, nl_j, nf_j, cl_j, of_j, lead_j, ml_j
    cdef long main_target, top, best_l, L, ego_prev_lane
    cdef double center, d, cl_gap, of_gap, nl_gap, nf_gap, lead_gap, ml_gap
    cdef double a_old, a_new, gain_followers, nf_before, nf_after, of_before, of_after
    cdef double incentive, best_incentive, wall_gap, s, dp, dl, best_d
    cdef bint safe, ego_hit

    for i in range(n):
        if length[i] > max_len:
            max_len = length[i]

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
                cl_j = _leader_in_lane(pos, length, lane_idx, tgt_lane, n, i, li, &cl_gap)
                of_j = _follower_in_lane(pos, length, lane_idx, tgt_lane, n, i, li, &of_gap)
                if cl_j < 0:
                    a_old = _idm_free(speed[i], tgt_speed[i], idm_a_max, idm_delta, b_hard)
                else:
                    a_old = _idm(speed[i], speed[cl_j], cl_gap, tgt_speed[i],
                                 idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
                best_lane = -1
                best_incentive = 0.0
                for cand in range(li - 1, li + 2, 2):
                    if cand < 0 or cand >= lane_count:
                        continue
                    if _alongside_in_lane(pos, length, lane_idx, tgt_lane, n, i, cand):
                        continue
                    nl_j = _leader_in_lane(pos, length, lane_idx, tgt_lane, n, i, cand, &nl_gap)
                    nf_j = _follower_in_lane(pos, length, lane_idx, tgt_lane, n, i, cand, &nf_gap)
                    if nl_j < 0:
                        a_new = _idm_free(speed[i], tgt_speed[i], idm_a_max, idm_delta, b_hard)
                    else:
                        a_new = _idm(speed[i], speed[nl_j], nl_gap, tgt_speed[i],
                                     idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
                    gain_followers = 0.0
                    safe = True
                    if nf_j >= 0:
                        if nl_j < 0:
                            nf_before = _idm_free(speed[nf_j], tgt_speed[nf_j],
                                                  idm_a_max, idm_delta, b_hard)
                        else:
                            nf_before = _idm(speed[nf_j], speed[nl_j],
                                             nf_gap + length[i] + nl_gap,
                                             tgt_speed[nf_j], idm_a_max, idm_s0, idm_T,
                                             idm_delta, two_sqrt_ab, b_hard)
                        nf_after = _idm(speed[nf_j], speed[i], nf_gap, tgt_speed[nf_j],
                                        idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
                        safe = nf_after >= -mobil_bsafe
                        gain_followers += nf_after - nf_before
                    if of_j >= 0:
                        of_before = _idm(speed[of_j], speed[i], of_gap, tgt_speed[of_j],
                                         idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
                        if cl_j < 0:
                            of_after = _idm_free(speed[of_j], tgt_speed[of_j],
                                                 idm_a_max, idm_delta, b_hard)
                        else:
                            of_after = _idm(speed[of_j], speed[cl_j],
                                            of_gap + length[i] + cl_gap,
                                            tgt_speed[of_j], idm_a_max, idm_s0, idm_T,
                                            idm_delta, two_sqrt_ab, b_hard)
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
                if _alongside_in_lane(pos, length, lane_idx, tgt_lane, n, i, main_target):
                    continue
                nf_j = _follower_in_lane(pos, length, lane_idx, tgt_lane, n, i, main_target, &nf_gap)
                safe = True
                if nf_j >= 0:
                    nf_after = _idm(speed[nf_j], speed[i], nf_gap, tgt_speed[nf_j],
                                    idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
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
            lead_j = _leader_in_lane(pos, length, lane_idx, tgt_lane, n, i, li, &lead_gap)
            if tgt_lane[i] != li:
                ml_j = _leader_in_lane(pos, length, lane_idx, tgt_lane, n, i, tgt_lane[i], &ml_gap)
                if ml_j >= 0 and (lead_j < 0 or ml_gap < lead_gap):
                    lead_j = ml_j
                    lead_gap = ml_gap
            if li == ramp_index and tgt_lane[i] == ramp_index:
                wall_gap = junction_pos - (pos[i] + 0.5 * length[i])
                if lead_j < 0 or wall_gap < lead_gap:
                    if wall_gap < 1e-6:
                        accel[i] = -b_hard
                    else:
                        accel[i] = _idm(speed[i], 0.0, wall_gap, tgt_speed[i],
                                        idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
                else:
                    if lead_j < 0:
                        accel[i] = _idm_free(speed[i], tgt_speed[i], idm_a_max, idm_delta, b_hard)
                    else:
                        accel[i] = _idm(speed[i], speed[lead_j], lead_gap, tgt_speed[i],
                                        idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)
            else:
                if lead_j < 0:
                    accel[i] = _idm_free(speed[i], tgt_speed[i], idm_a_max, idm_delta, b_hard)
                else:
                    accel[i] = _idm(speed[i], speed[lead_j], lead_gap, tgt_speed[i],
                                    idm_a_max, idm_s0, idm_T, idm_delta, two_sqrt_ab, b_hard)

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
        for i in range(1, n):
            for j in range(i + 1, n):
                dp = pos[j] - pos[i]
                if dp < 0.0:
                    dp = -dp
                if dp >= max_len:
                    continue
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

    return collided_substep, substeps_done, ego_speed_sum, ego_lane_changes, traffic_contacts
