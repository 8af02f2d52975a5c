"""Event-driven simulation of coalescing random walks and the voter model.

Walkers jump with competing exponential clocks; when a jump lands on an
occupied vertex the higher-indexed walker of the pair dies and records its
killer (the killed-process view of coalescence).  Each replica gets its own
counter-based RNG stream derived from the base seed and the replica index, so
replication is reproducible under any scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chain import RateGenerator, check_distribution, stationary_distribution
from .errors import BudgetExceededError
from .meanfield import LeadingRunLaw

DEFAULT_MAX_EVENTS = 50_000_000


def replica_rng(base_seed, replica):
    """Philox stream for one replica; streams are independent across replicas."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(replica),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class RunConfig:
    """How to start, stop and replicate coalescing runs.

    ``start`` is ``"all_vertices"``, ``"stationary_iid"`` (requires ``k``) or
    an explicit tuple of vertices.  ``stop_at`` is the surviving-walker count
    at which a run ends (1 = full coalescence).
    """

    start: object = "all_vertices"
    k: int | None = None
    replications: int = 1
    seed: int = 0
    stop_at: int = 1
    max_events: int = DEFAULT_MAX_EVENTS
    keep_levels: tuple = ()

    def n_walkers(self, n_states):
        if isinstance(self.start, str):
            if self.start == "all_vertices":
                return n_states
            if self.start == "stationary_iid":
                if self.k is None or self.k < 1:
                    raise ValueError("stationary_iid needs k >= 1")
                return self.k
            raise ValueError(f"unknown start mode {self.start!r}")
        return len(self.start)


@dataclass(frozen=True)
class CoalescenceRecord:
    """Per-run event record.

    ``coalescence_times[p]`` is the first time at most ``p`` walkers survive
    (NaN below the stop level); ``kill_times[j]``/``killers[j]`` give when and
    by whom walker ``j`` was absorbed.  Every drop of the alive count happens
    at a recorded meeting.
    """

    k: int
    start_positions: np.ndarray
    final_positions: np.ndarray
    kill_times: np.ndarray
    killers: np.ndarray
    coalescence_times: np.ndarray
    meetings: np.ndarray  # structured rows (time, low, high)
    n_events: int
    final_time: float
    stop_at: int
    jumps: tuple | None = None  # (times, walkers, destinations) when recorded

    def coalescence_time(self, p):
        return float(self.coalescence_times[p])

    @property
    def full_coalescence_time(self):
        return float(self.coalescence_times[self.stop_at])

    @property
    def survivors(self):
        return np.nonzero(np.isinf(self.kill_times))[0]


def _sim_tables(chain: RateGenerator):
    cached = getattr(chain, "_sim_cache", None)
    if cached is None:
        R = chain.rate_matrix
        row_cum = np.empty_like(R.data)
        for x in range(chain.n):
            lo, hi = R.indptr[x], R.indptr[x + 1]
            if hi == lo:
                continue
            row = R.data[lo:hi]
            c = np.cumsum(row)
            row_cum[lo:hi] = c / c[-1]
        uniform = bool(
            np.allclose(chain.exit_rates, chain.exit_rates[0], rtol=1e-14, atol=0.0)
        )
        cached = (
            R.indptr.astype(np.int64),
            R.indices.astype(np.int64),
            row_cum,
            chain.exit_rates.astype(np.float64),
            uniform,
        )
        chain._sim_cache = cached
    return cached


def _resolve_start(chain, cfg: RunConfig, rng, pi=None):
    if isinstance(cfg.start, str):
        if cfg.start == "all_vertices":
            return np.arange(chain.n, dtype=np.int64)
        if cfg.start == "stationary_iid":
            if pi is None:
                pi = stationary_distribution(chain)
            return rng.choice(chain.n, size=cfg.k, p=pi).astype(np.int64)
        raise ValueError(f"unknown start mode {cfg.start!r}")
    pos = np.asarray(cfg.start, dtype=np.int64)
    if pos.ndim != 1 or pos.size < 1:
        raise ValueError("explicit start must be a vector of vertices")
    if pos.min() < 0 or pos.max() >= chain.n:
        raise ValueError("start vertex out of range")
    return pos


def simulate_coalescing(chain: RateGenerator, cfg: RunConfig, replica=0,
                        rng=None, pi=None, record_jumps=False):
    """One coalescing run; deterministic given ``(cfg.seed, replica)``."""
    if rng is None:
        rng = replica_rng(cfg.seed, replica)
    pos0 = _resolve_start(chain, cfg, rng, pi)
    k = pos0.size
    stop_at = int(min(max(cfg.stop_at, 1), k))
    indptr, indices, row_cum, exit_rates, uniform = _sim_tables(chain)
    if record_jumps:
        jt = np.empty(cfg.max_events, dtype=np.float64)
        jw = np.empty(cfg.max_events, dtype=np.int64)
        jd = np.empty(cfg.max_events, dtype=np.int64)
    else:
        jt = np.empty(0, dtype=np.float64)
        jw = np.empty(0, dtype=np.int64)
        jd = np.empty(0, dtype=np.int64)
    (pos, kill_times, killers, c_times, mt, ml, mh, n_meet,
     n_events, t_final, status) = _kernels.coalescing_run(
        indptr, indices, row_cum, exit_rates, uniform,
        pos0, chain.n, stop_at, cfg.max_events,
        record_jumps, jt, jw, jd, rng,
    )
    if status == _kernels.STATUS_EVENT_BUDGET:
        raise BudgetExceededError(
            f"coalescing run exceeded {cfg.max_events} events at t={t_final:.6g} "
            f"with {int(np.isinf(kill_times).sum())} walkers alive"
        )
    meetings = np.zeros(n_meet, dtype=[("time", float), ("low", int), ("high", int)])
    meetings["time"] = mt[:n_meet]
    meetings["low"] = ml[:n_meet]
    meetings["high"] = mh[:n_meet]
    jumps = None
    if record_jumps:
        jumps = (jt[:n_events].copy(), jw[:n_events].copy(), jd[:n_events].copy())
    return CoalescenceRecord(
        k=k, start_positions=pos0, final_positions=pos,
        kill_times=kill_times, killers=killers, coalescence_times=c_times,
        meetings=meetings, n_events=int(n_events), final_time=float(t_final),
        stop_at=stop_at, jumps=jumps,
    )


def first_meeting(chain: RateGenerator, positions, seed=0, rng=None, pi=None,
                  max_events=DEFAULT_MAX_EVENTS):
    """First time any two of the walkers share a vertex (0 for duplicates)."""
    positions = np.asarray(positions, dtype=np.int64)
    k = positions.size
    cfg = RunConfig(start=tuple(int(p) for p in positions), seed=seed,
                    stop_at=k - 1, max_events=max_events)
    rec = simulate_coalescing(chain, cfg, rng=rng, pi=pi)
    return rec.coalescence_time(k - 1)


@dataclass(frozen=True)
class ReplicationResult:
    """Columns of coalescence times across replicas, plus provenance."""

    base_seed: int
    k: int
    stop_at: int
    levels: dict
    walltimes: np.ndarray

    @property
    def replications(self):
        return len(self.walltimes)

    def values(self, p=None):
        p = self.stop_at if p is None else p
        return self.levels[p]

    def sample(self, p=None, extra_provenance=None):
        from .wasserstein import EmpiricalSample

        p = self.stop_at if p is None else p
        prov = {"base_seed": self.base_seed, "level": p, "replications": self.replications}
        prov.update(extra_provenance or {})
        return EmpiricalSample.from_values(self.levels[p], prov)


def _replicate_range(chain, cfg: RunConfig, lo, hi, pi, levels):
    out = {p: np.empty(hi - lo) for p in levels}
    walltimes = np.empty(hi - lo)
    for i, replica in enumerate(range(lo, hi)):
        tic = time.perf_counter()
        rec = simulate_coalescing(chain, cfg, replica=replica, pi=pi)
        for p in levels:
            out[p][i] = rec.coalescence_times[p]
        walltimes[i] = time.perf_counter() - tic
    return out, walltimes


def sample_full_coalescence(chain: RateGenerator, cfg: RunConfig, workers=1) -> ReplicationResult:
    """Replicated coalescence times; identical output for any worker count."""
    reps = cfg.replications
    if reps < 1:
        raise ValueError("need at least one replication")
    pi = None
    if isinstance(cfg.start, str) and cfg.start == "stationary_iid":
        pi = stationary_distribution(chain)
    k = cfg.n_walkers(chain.n)
    stop_at = int(min(max(cfg.stop_at, 1), k))
    levels = sorted(set(cfg.keep_levels) | {stop_at})
    if any(p < stop_at or p > k for p in levels):
        raise ValueError("keep_levels must lie between stop_at and k")
    if workers <= 1 or reps < 4:
        chunks = [(0, reps)]
        results = [_replicate_range(chain, cfg, 0, reps, pi, levels)]
    else:
        bounds = np.linspace(0, reps, workers * 4 + 1).astype(int)
        chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(_replicate_range,
                         *zip(*[(chain, cfg, a, b, pi, levels) for a, b in chunks]))
            )
    out = {p: np.concatenate([r[0][p] for r in results]) for p in levels}
    walltimes = np.concatenate([r[1] for r in results])
    return ReplicationResult(cfg.seed, k, stop_at, out, walltimes)


# ---------------------------------------------------------------------------
# voter model


def simulate_voter_dual(chain: RateGenerator, mu, seed=0, replica=0,
                        max_events=DEFAULT_MAX_EVENTS):
    """Consensus-time draw through coalescing walks started from every vertex.

    Draws the leading agreement run ``K`` of iid opinions, then runs the
    all-vertices coalescence down to ``min(K, n)`` surviving walkers.
    """
    rng = replica_rng(seed, replica)
    law = mu if isinstance(mu, LeadingRunLaw) else LeadingRunLaw(mu)
    k_run = law.sample(rng)
    stop = int(min(k_run, chain.n))
    if stop >= chain.n:
        return 0.0
    cfg = RunConfig(start="all_vertices", stop_at=stop, max_events=max_events)
    rec = simulate_coalescing(chain, cfg, rng=rng)
    return rec.coalescence_time(stop)


def simulate_voter_forward(chain: RateGenerator, mu, seed=0, replica=0,
                           max_events=1_000_000):
    """Direct opinion dynamics: at rate q(x, y), vertex x copies y's opinion."""
    rng = replica_rng(seed, replica)
    law = mu if isinstance(mu, LeadingRunLaw) else LeadingRunLaw(mu)
    n = chain.n
    opinions = rng.choice(len(law.probs), size=n, p=law.probs)
    counts = np.bincount(opinions, minlength=len(law.probs))
    if counts.max() == n:
        return 0.0
    R = chain.rate_matrix
    exit_rates = chain.exit_rates
    cum_exit = np.cumsum(exit_rates)
    total = cum_exit[-1]
    row_cum = [None] * n
    t = 0.0
    for _ in range(max_events):
        u = rng.random()
        t += -np.log1p(-u) / total
        x = int(np.searchsorted(cum_exit, rng.random() * total, side="right"))
        x = min(x, n - 1)
        if row_cum[x] is None:
            row = R.data[R.indptr[x] : R.indptr[x + 1]]
            c = np.cumsum(row)
            row_cum[x] = c / c[-1]
        di = int(np.searchsorted(row_cum[x], rng.random()))
        y = int(R.indices[R.indptr[x] + di])
        if opinions[x] != opinions[y]:
            counts[opinions[x]] -= 1
            opinions[x] = opinions[y]
            counts[opinions[y]] += 1
            if counts[opinions[y]] == n:
                return t
    raise BudgetExceededError(f"voter consensus not reached in {max_events} events")


def _voter_chunk(chain, mu_probs, seed, lo, hi, mode, max_events):
    law = LeadingRunLaw(mu_probs)
    out = np.empty(hi - lo)
    for i, replica in enumerate(range(lo, hi)):
        if mode == "dual":
            out[i] = simulate_voter_dual(chain, law, seed=seed, replica=replica,
                                         max_events=max_events)
        else:
            out[i] = simulate_voter_forward(chain, law, seed=seed, replica=replica,
                                            max_events=max_events)
    return out


def sample_voter(chain: RateGenerator, mu, replications, seed=0, mode="dual",
                 workers=1, max_events=DEFAULT_MAX_EVENTS):
    """Replicated consensus-time draws via duality or forward dynamics."""
    if mode not in ("dual", "forward"):
        raise ValueError("mode must be 'dual' or 'forward'")
    probs = mu.probs if isinstance(mu, LeadingRunLaw) else np.asarray(mu, dtype=float)
    if workers <= 1 or replications < 4:
        return _voter_chunk(chain, probs, seed, 0, replications, mode, max_events)
    bounds = np.linspace(0, replications, workers * 4 + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(_voter_chunk,
                     *zip(*[(chain, probs, seed, a, b, mode, max_events) for a, b in chunks]))
        )
    return np.concatenate(parts)
