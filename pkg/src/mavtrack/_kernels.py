"""Compiled inner loops for bulk ray casting and frame transforms."""

from __future__ import annotations

import math

import numba
import numpy as np

NO_HIT = -1
HIT_GROUND = 0
# obstacle j is reported as HIT_OBSTACLE0 + j
HIT_OBSTACLE0 = 10


@numba.njit(cache=True, inline="always")
def _slab(ox, oy, oz, dx, dy, dz, lo, hi):
    """Entry distance of the ray into the box, or inf. A ray starting inside hits the exit face."""
    tn = -np.inf
    tf = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return np.inf
            continue
        t1 = (lo[a] - o[a]) / d[a]
        t2 = (hi[a] - o[a]) / d[a]
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tn:
            tn = t1
        if t2 < tf:
            tf = t2
    if tn > tf or tf <= 0.0:
        return np.inf
    return tn if tn > 0.0 else tf


@numba.njit(cache=True)
def cast_pattern(k0, n, rate, amp_h, amp_v, freq_a, freq_b, phase,
                 t_ref, x0, y0, yaw0, vx, vy, wz, height,
                 ground_z, has_ground, box_lo, box_hi,
                 sphere_c, sphere_r, has_sphere,
                 t_out, dir_out, range_out, hit_out, cand_out):
    """Generate ``n`` pattern rays starting at global sample ``k0`` and cast them.

    Directions are written in the sensor frame at each ray's own time; the
    ray itself is traced in the world frame using the UGV pose integrated at
    constant velocity from ``t_ref``. ``cand_out`` flags rays passing within
    ``sphere_r`` of ``sphere_c`` (the MAV's swept bounding sphere).
    """
    two_pi = 2.0 * math.pi
    n_box = box_lo.shape[0]
    for i in range(n):
        t = (k0 + i) / rate
        u = amp_h * math.sin(two_pi * freq_a * t)
        v = amp_v * math.sin(two_pi * freq_b * t + phase)
        cv = math.cos(v)
        sx = cv * math.cos(u)
        sy = cv * math.sin(u)
        sz = math.sin(v)
        t_out[i] = t
        dir_out[i, 0] = sx
        dir_out[i, 1] = sy
        dir_out[i, 2] = sz
        dt = t - t_ref
        yaw = yaw0 + wz * dt
        cy = math.cos(yaw)
        syw = math.sin(yaw)
        dx = cy * sx - syw * sy
        dy = syw * sx + cy * sy
        dz = sz
        ox = x0 + vx * dt
        oy = y0 + vy * dt
        oz = height
        best = np.inf
        hit = NO_HIT
        if has_ground and dz < 0.0:
            tg = (ground_z - oz) / dz
            if tg > 0.0:
                best = tg
                hit = HIT_GROUND
        for b in range(n_box):
            tb = _slab(ox, oy, oz, dx, dy, dz, box_lo[b], box_hi[b])
            if tb < best:
                best = tb
                hit = HIT_OBSTACLE0 + b
        range_out[i] = best
        hit_out[i] = hit
        cand = False
        if has_sphere:
            px = sphere_c[0] - ox
            py = sphere_c[1] - oy
            pz = sphere_c[2] - oz
            along = px * dx + py * dy + pz * dz
            if along > -sphere_r:
                if along < 0.0:
                    along = 0.0
                qx = px - along * dx
                qy = py - along * dy
                qz = pz - along * dz
                cand = qx * qx + qy * qy + qz * qz <= sphere_r * sphere_r
        cand_out[i] = cand


@numba.njit(cache=True)
def pattern_hits_boxes(k0, n, rate, amp_h, amp_v, freq_a, freq_b, phase,
                       az_lo, az_hi, el_lo, el_hi, out_idx, out_box):
    """Indices of pattern samples whose (azimuth, elevation) fall inside any angular box.

    Used by calibration to cull rays that cannot reach the target. Returns
    the number of (sample, box) pairs written.
    """
    two_pi = 2.0 * math.pi
    m = 0
    n_box = az_lo.shape[0]
    cap = out_idx.shape[0]
    el_min = np.inf
    el_max = -np.inf
    for b in range(n_box):
        el_min = min(el_min, el_lo[b])
        el_max = max(el_max, el_hi[b])
    for i in range(n):
        t = (k0 + i) / rate
        v = amp_v * math.sin(two_pi * freq_b * t + phase)
        if v < el_min or v > el_max:
            continue
        u = amp_h * math.sin(two_pi * freq_a * t)
        for b in range(n_box):
            if az_lo[b] <= u <= az_hi[b] and el_lo[b] <= v <= el_hi[b]:
                if m < cap:
                    out_idx[m] = i
                    out_box[m] = b
                m += 1
    return m


@numba.njit(cache=True)
def deskew_to_world(points, t, seg_t, seg_q, seg_qd, height, out):
    """Sensor-frame points to world frame using each point's own odometry pose."""
    n_seg = seg_t.shape[0]
    j = 0
    for i in range(points.shape[0]):
        ti = t[i]
        # timestamps are nearly sorted; walk the segment index
        while j + 1 < n_seg and seg_t[j + 1] <= ti:
            j += 1
        while j > 0 and seg_t[j] > ti:
            j -= 1
        dt = ti - seg_t[j]
        x = seg_q[j, 0] + seg_qd[j, 0] * dt
        y = seg_q[j, 1] + seg_qd[j, 1] * dt
        yaw = seg_q[j, 2] + seg_qd[j, 2] * dt
        c = math.cos(yaw)
        s = math.sin(yaw)
        px = points[i, 0]
        py = points[i, 1]
        out[i, 0] = c * px - s * py + x
        out[i, 1] = s * px + c * py + y
        out[i, 2] = points[i, 2] + height


@numba.njit(cache=True)
def box_mask(points, lo, hi, out):
    for i in range(points.shape[0]):
        out[i] = (lo[0] <= points[i, 0] <= hi[0] and lo[1] <= points[i, 1] <= hi[1]
                  and lo[2] <= points[i, 2] <= hi[2])
