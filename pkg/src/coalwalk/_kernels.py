"""Hot event loops, compiled with numba.

The coalescing run consumes exactly three uniforms per jump event (holding
time, mover, destination) so replays are bitwise reproducible for a given
generator state regardless of outcomes.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_DONE = 0
STATUS_EVENT_BUDGET = 1


@njit(cache=True)
def coalescing_run(
    indptr,
    indices,
    row_cum,
    exit_rates,
    uniform_exit,
    positions,
    n_states,
    stop_at,
    max_events,
    record_jumps,
    jump_times,
    jump_walkers,
    jump_dests,
    rng,
):
    k = positions.shape[0]
    pos = positions.copy()
    occupant = np.full(n_states, -1, dtype=np.int64)
    alive = np.ones(k, dtype=np.bool_)
    alive_list = np.empty(k, dtype=np.int64)
    slot_of = np.full(k, -1, dtype=np.int64)
    kill_times = np.full(k, np.inf)
    killers = np.full(k, -1, dtype=np.int64)
    c_times = np.full(k + 1, np.nan)
    meet_times = np.empty(k, dtype=np.float64)
    meet_low = np.empty(k, dtype=np.int64)
    meet_high = np.empty(k, dtype=np.int64)
    n_meet = 0
    c_times[k] = 0.0

    # walkers placed in index order; duplicates die instantly, killed by the
    # smallest-index occupant of their vertex
    alive_count = 0
    for j in range(k):
        v = pos[j]
        if occupant[v] >= 0:
            alive[j] = False
            kill_times[j] = 0.0
            killers[j] = occupant[v]
            meet_times[n_meet] = 0.0
            meet_low[n_meet] = occupant[v]
            meet_high[n_meet] = j
            n_meet += 1
        else:
            occupant[v] = j
            alive_list[alive_count] = j
            slot_of[j] = alive_count
            alive_count += 1
    for p in range(k - 1, alive_count - 1, -1):
        c_times[p] = 0.0

    e0 = exit_rates[pos[alive_list[0]]] if alive_count > 0 else 0.0
    t = 0.0
    n_events = 0
    while alive_count > stop_at:
        if n_events >= max_events:
            return (
                pos, kill_times, killers, c_times,
                meet_times, meet_low, meet_high, n_meet,
                n_events, t, STATUS_EVENT_BUDGET,
            )
        # total exit rate of the alive set
        if uniform_exit:
            total = e0 * alive_count
        else:
            total = 0.0
            for idx in range(alive_count):
                total += exit_rates[pos[alive_list[idx]]]
        u = rng.random()
        t += -np.log1p(-u) / total
        # mover proportional to its exit rate
        um = rng.random() * total
        if uniform_exit:
            mi = int(um / e0)
            if mi >= alive_count:
                mi = alive_count - 1
            mover = alive_list[mi]
        else:
            mover = alive_list[alive_count - 1]
            acc = 0.0
            for idx in range(alive_count):
                acc += exit_rates[pos[alive_list[idx]]]
                if um < acc:
                    mover = alive_list[idx]
                    break
        # destination by binary search in the row's cumulative jump law
        x = pos[mover]
        lo = indptr[x]
        hi = indptr[x + 1]
        ud = rng.random()
        left = lo
        right = hi - 1
        while left < right:
            mid = (left + right) // 2
            if row_cum[mid] <= ud:
                left = mid + 1
            else:
                right = mid
        dest = indices[left]
        n_events += 1
        if record_jumps:
            jump_times[n_events - 1] = t
            jump_walkers[n_events - 1] = mover
            jump_dests[n_events - 1] = dest
        occupant[x] = -1
        pos[mover] = dest
        other = occupant[dest]
        if other < 0:
            occupant[dest] = mover
        else:
            # meeting: the larger index dies, the smaller one keeps walking
            if mover < other:
                low, high = mover, other
            else:
                low, high = other, mover
            occupant[dest] = low
            alive[high] = False
            kill_times[high] = t
            killers[high] = low
            meet_times[n_meet] = t
            meet_low[n_meet] = low
            meet_high[n_meet] = high
            n_meet += 1
            # swap-pop the dead walker out of the alive list
            s = slot_of[high]
            last = alive_list[alive_count - 1]
            alive_list[s] = last
            slot_of[last] = s
            slot_of[high] = -1
            alive_count -= 1
            c_times[alive_count] = t
    return (
        pos, kill_times, killers, c_times,
        meet_times, meet_low, meet_high, n_meet,
        n_events, t, STATUS_DONE,
    )
