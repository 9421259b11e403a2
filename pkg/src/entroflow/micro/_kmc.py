"""Numba kernels for rejection-free kinetic Monte Carlo on lattice gases.

Event selection walks a binary sum tree over per-site rates, so an update
costs O(log n_sites) even though every jump changes two site rates.  The
random stream is an explicit xoshiro256** state per replica, which makes
event sequences bit-reproducible for a given seed independent of threading.
Site occupancies are time-integrated lazily: a site's accumulator is settled
only when its occupancy changes or an observation time is crossed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
ERR_TABLE_CAP = 1
ERR_EVENT_CAP = 2


@njit(cache=True, inline="always")
def _splitmix64(z):
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def seed_rng(seed):
    state = np.empty(4, dtype=np.uint64)
    z = np.uint64(seed)
    for i in range(4):
        z = (z + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
        state[i] = _splitmix64(z)
    return state


@njit(cache=True, inline="always")
def _rotl(x, k):
    return ((x << np.uint64(k)) | (x >> np.uint64(64 - k))) & np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, inline="always")
def next_u64(state):
    result = (_rotl((state[1] * np.uint64(5)) & np.uint64(0xFFFFFFFFFFFFFFFF), 7) * np.uint64(9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    t = (state[1] << np.uint64(17)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@njit(cache=True, inline="always")
def next_f64(state):
    # 53 random bits mapped to the open interval (0, 1): log() and
    # cumulative-rate selection are both safe at the endpoints
    return (np.float64(next_u64(state) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def tree_update(tree, offset, leaf, value):
    i = offset + leaf
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(cache=True, inline="always")
def tree_select(tree, offset, target):
    """Leaf index whose cumulative-rate interval contains ``target``."""
    i = 1
    while i < offset:
        left = tree[2 * i]
        if target < left:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - offset


@njit(cache=True, nogil=True)
def run_zrp(eta, g_table, site_base, inject_rate, neighbor, dir_cum, dir_total,
            t_end, obs_times, max_events, rng_state,
            snap_out, integ_out, acc, last_t):
    """Single-species zero range event loop.

    neighbor[i, d] >= 0 is a lattice target, -1 removes the particle
    (reservoir exit), -2 is a blocked direction (never drawn: zero weight).
    dir_cum[i, d] are cumulative direction weights, dir_total[i] their sum;
    site firing rate is g(eta_i) * site_base_i and site_base absorbs the
    squared-lattice clock together with the direction-weight total.
    inject_from[i] = injection rate (already clock-scaled) adding a particle.

    Returns (status, n_events, t_reached).
    """
    n_sites = eta.shape[0]
    n_obs = obs_times.shape[0]
    k_cap = g_table.shape[0] - 1
    offset = 1
    while offset < n_sites:
        offset *= 2
    tree = np.zeros(2 * offset, dtype=np.float64)
    for i in range(n_sites):
        tree_update(tree, offset, i, g_table[eta[i]] * site_base[i] + inject_rate[i])

    t = 0.0
    obs_ptr = 0
    events = 0
    while True:
        total = tree[1]
        if total <= 0.0:
            t_next = t_end + 1.0  # frozen configuration: fast-forward
        else:
            t_next = t - np.log(next_f64(rng_state)) / total
        # settle observation times crossed before the next event fires
        while obs_ptr < n_obs and obs_times[obs_ptr] <= t_next:
            t_obs = obs_times[obs_ptr]
            for i in range(n_sites):
                acc[i] += eta[i] * (t_obs - last_t[i])
                last_t[i] = t_obs
                snap_out[obs_ptr, i] = eta[i]
                integ_out[obs_ptr, i] = acc[i]
            obs_ptr += 1
        if obs_ptr >= n_obs or t_next > t_end:
            return OK, events, min(t_next, t_end)
        if events >= max_events:
            return ERR_EVENT_CAP, events, t
        t = t_next
        events += 1

        site = tree_select(tree, offset, next_f64(rng_state) * total)
        if site >= n_sites:
            continue  # ulp-level descent into padding; statistically null
        fire = g_table[eta[site]] * site_base[site]
        inj = inject_rate[site]
        if fire + inj <= 0.0:
            continue
        u = next_f64(rng_state) * (fire + inj)
        if u < inj:
            # reservoir inserts a particle at this site
            if eta[site] + 1 > k_cap:
                return ERR_TABLE_CAP, events, t
            acc[site] += eta[site] * (t - last_t[site])
            last_t[site] = t
            eta[site] += 1
            tree_update(tree, offset, site,
                        g_table[eta[site]] * site_base[site] + inject_rate[site])
        else:
            # one particle leaves this site toward a drawn direction
            v = next_f64(rng_state) * dir_total[site]
            d = 0
            while dir_cum[site, d] <= v:
                d += 1
            target = neighbor[site, d]
            acc[site] += eta[site] * (t - last_t[site])
            last_t[site] = t
            eta[site] -= 1
            tree_update(tree, offset, site,
                        g_table[eta[site]] * site_base[site] + inject_rate[site])
            if target >= 0:
                if eta[target] + 1 > k_cap:
                    return ERR_TABLE_CAP, events, t
                acc[target] += eta[target] * (t - last_t[target])
                last_t[target] = t
                eta[target] += 1
                tree_update(tree, offset, target,
                            g_table[eta[target]] * site_base[target] + inject_rate[target])


@njit(cache=True, nogil=True)
def run_zrp_two_species(eta_a, eta_b, u_table, v_table, site_base,
                        inject_a, inject_b, neighbor, dir_cum, dir_total,
                        t_end, obs_times, max_events, rng_state,
                        snap_a, snap_b, integ_a, integ_b, acc_a, acc_b, last_t):
    """Two-species zero range loop; per-site rates u(n_a, n_b) and v(n_a, n_b)."""
    n_sites = eta_a.shape[0]
    n_obs = obs_times.shape[0]
    cap_a = u_table.shape[0] - 1
    cap_b = u_table.shape[1] - 1
    offset = 1
    while offset < n_sites:
        offset *= 2
    tree = np.zeros(2 * offset, dtype=np.float64)

    for i in range(n_sites):
        rate = (u_table[eta_a[i], eta_b[i]] + v_table[eta_a[i], eta_b[i]]) * site_base[i]
        tree_update(tree, offset, i, rate + inject_a[i] + inject_b[i])

    def settle(i, t_now):
        acc_a[i] += eta_a[i] * (t_now - last_t[i])
        acc_b[i] += eta_b[i] * (t_now - last_t[i])
        last_t[i] = t_now

    def refresh(i):
        rate = (u_table[eta_a[i], eta_b[i]] + v_table[eta_a[i], eta_b[i]]) * site_base[i]
        tree_update(tree, offset, i, rate + inject_a[i] + inject_b[i])

    t = 0.0
    obs_ptr = 0
    events = 0
    while True:
        total = tree[1]
        if total <= 0.0:
            t_next = t_end + 1.0
        else:
            t_next = t - np.log(next_f64(rng_state)) / total
        while obs_ptr < n_obs and obs_times[obs_ptr] <= t_next:
            t_obs = obs_times[obs_ptr]
            for i in range(n_sites):
                settle(i, t_obs)
                snap_a[obs_ptr, i] = eta_a[i]
                snap_b[obs_ptr, i] = eta_b[i]
                integ_a[obs_ptr, i] = acc_a[i]
                integ_b[obs_ptr, i] = acc_b[i]
            obs_ptr += 1
        if obs_ptr >= n_obs or t_next > t_end:
            return OK, events, min(t_next, t_end)
        if events >= max_events:
            return ERR_EVENT_CAP, events, t
        t = t_next
        events += 1

        site = tree_select(tree, offset, next_f64(rng_state) * total)
        if site >= n_sites:
            continue
        na, nb = eta_a[site], eta_b[site]
        fire_a = u_table[na, nb] * site_base[site]
        fire_b = v_table[na, nb] * site_base[site]
        if fire_a + fire_b + inject_a[site] + inject_b[site] <= 0.0:
            continue
        u = next_f64(rng_state) * (fire_a + fire_b + inject_a[site] + inject_b[site])
        if u < inject_a[site]:
            if na + 1 > cap_a:
                return ERR_TABLE_CAP, events, t
            settle(site, t)
            eta_a[site] += 1
            refresh(site)
            continue
        u -= inject_a[site]
        if u < inject_b[site]:
            if nb + 1 > cap_b:
                return ERR_TABLE_CAP, events, t
            settle(site, t)
            eta_b[site] += 1
            refresh(site)
            continue
        u -= inject_b[site]
        species_a = u < fire_a

        v = next_f64(rng_state) * dir_total[site]
        d = 0
        while dir_cum[site, d] <= v:
            d += 1
        target = neighbor[site, d]
        settle(site, t)
        if species_a:
            eta_a[site] -= 1
        else:
            eta_b[site] -= 1
        refresh(site)
        if target >= 0:
            if species_a and eta_a[target] + 1 > cap_a:
                return ERR_TABLE_CAP, events, t
            if (not species_a) and eta_b[target] + 1 > cap_b:
                return ERR_TABLE_CAP, events, t
            settle(target, t)
            if species_a:
                eta_a[target] += 1
            else:
                eta_b[target] += 1
            refresh(target)
