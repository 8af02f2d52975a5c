import numpy as np
import pytest

from coalwalk import (
    BudgetExceededError,
    LeadingRunLaw,
    RunConfig,
    first_meeting,
    meeting_mean,
    replica_rng,
    sample_full_coalescence,
    sample_voter,
    simulate_coalescing,
    simulate_voter_dual,
    simulate_voter_forward,
)
from conftest import k_walk


def merged_positions(record, chain_n):
    """Replay the jump log through the merged-trajectory representation.

    Walker j follows its own jumps until its kill time, then its killer's
    trajectory.  Yields (time, alive-position set, merged-position set) after
    every jump so the killed-process equivalence can be checked directly.
    """
    times, walkers, dests = record.jumps
    k = record.k
    pos = record.start_positions.copy()
    kills = {}  # walker -> (time, killer)
    for t, lo, hi in record.meetings:
        kills[int(hi)] = (float(t), int(lo))

    def root(j, t):
        while j in kills and kills[j][0] <= t:
            j = kills[j][1]
        return j

    out = []
    for t, w, d in zip(times, walkers, dests):
        pos[w] = d
        alive_set = {int(pos[j]) for j in range(k) if not (j in kills and kills[j][0] <= t)}
        merged_set = {int(pos[root(j, t)]) for j in range(k)}
        out.append((t, alive_set, merged_set))
    return out


class TestSingleRuns:
    def test_k2_exponential_mean(self):
        chain = k_walk(2)
        cfg = RunConfig(start="all_vertices", replications=100_000, seed=101)
        res = sample_full_coalescence(chain, cfg)
        v = res.values()
        se = v.std(ddof=1) / np.sqrt(v.size)
        assert v.mean() == pytest.approx(0.5, abs=3 * se)

    def test_all_same_start_instant(self):
        chain = k_walk(5)
        rec = simulate_coalescing(chain, RunConfig(start=(2, 2, 2), seed=0))
        assert rec.full_coalescence_time == 0.0
        np.testing.assert_array_equal(rec.kill_times, [np.inf, 0.0, 0.0])
        np.testing.assert_array_equal(rec.killers, [-1, 0, 0])

    def test_stationary_iid_single_walker(self):
        chain = k_walk(6)
        rec = simulate_coalescing(chain, RunConfig(start="stationary_iid", k=1, seed=3))
        assert rec.full_coalescence_time == 0.0

    def test_seed_determinism(self):
        chain = k_walk(8)
        cfg = RunConfig(start="all_vertices", seed=17)
        a = simulate_coalescing(chain, cfg, replica=4)
        b = simulate_coalescing(chain, cfg, replica=4)
        np.testing.assert_array_equal(a.coalescence_times, b.coalescence_times)
        np.testing.assert_array_equal(a.kill_times, b.kill_times)
        c = simulate_coalescing(chain, cfg, replica=5)
        assert not np.array_equal(a.coalescence_times, c.coalescence_times)

    def test_event_budget_guard(self):
        chain = k_walk(12)
        with pytest.raises(BudgetExceededError):
            simulate_coalescing(chain, RunConfig(start="all_vertices", seed=1, max_events=3))


class TestRecordStructure:
    @pytest.mark.parametrize("seed", range(25))
    def test_structural_invariants(self, seed):
        chain = k_walk(4)
        rec = simulate_coalescing(
            chain, RunConfig(start=(0, 1, 2), seed=seed), record_jumps=True
        )
        k = rec.k
        # strictly ordered coalescence levels from distinct starts
        times = rec.coalescence_times[1:k + 1]
        assert times[-1] == 0.0
        assert np.all(np.diff(times[::-1]) > 0)
        # walker 0 never dies; killers have smaller indices and outlive victims
        assert rec.kill_times[0] == np.inf
        for j in range(1, k):
            if np.isfinite(rec.kill_times[j]):
                killer = rec.killers[j]
                assert 0 <= killer < j
                assert rec.kill_times[killer] > rec.kill_times[j]
        # every drop of the alive count coincides with a recorded meeting
        meet_times = set(rec.meetings["time"].tolist())
        for p in range(1, k):
            t = rec.coalescence_times[p]
            if np.isfinite(t) and t > 0:
                assert t in meet_times

    @pytest.mark.parametrize("seed", range(10))
    def test_increment_is_min_pairwise_meeting(self, seed):
        # C_2 among three walkers is the first of the three pairwise meetings
        chain = k_walk(4)
        rec = simulate_coalescing(chain, RunConfig(start=(0, 1, 2), seed=seed, stop_at=2))
        assert rec.coalescence_times[2] == rec.meetings["time"].min()

    @pytest.mark.parametrize("seed", range(12))
    def test_killed_process_equivalence(self, seed):
        chain = k_walk(5)
        rec = simulate_coalescing(
            chain, RunConfig(start=(0, 1, 2, 3), seed=seed), record_jumps=True
        )
        for t, alive_set, merged_set in merged_positions(rec, chain.n):
            assert alive_set == merged_set

    def test_duplicates_coalesce_at_zero(self):
        chain = k_walk(6)
        rec = simulate_coalescing(chain, RunConfig(start=(3, 3, 1, 3), seed=9))
        assert rec.kill_times[1] == 0.0 and rec.kill_times[3] == 0.0
        assert rec.killers[1] == 0 and rec.killers[3] == 0
        assert rec.kill_times[2] > 0


class TestFirstMeeting:
    def test_matches_coalescence_level_same_seed(self):
        chain = k_walk(5)
        for seed in range(10):
            rec = simulate_coalescing(
                chain, RunConfig(start=(0, 2, 4), seed=seed, stop_at=2)
            )
            assert first_meeting(chain, [0, 2, 4], seed=seed) == rec.coalescence_times[2]

    def test_duplicate_start_zero(self):
        assert first_meeting(k_walk(7), [1, 5, 1], seed=0) == 0.0

    def test_pair_empirical_mean_matches_exact(self):
        chain = k_walk(4)
        m = meeting_mean(chain)  # includes the instant-meeting atom
        rng_draws = np.empty(30_000)
        pi = np.full(4, 0.25)
        for i in range(rng_draws.size):
            rng = replica_rng(500, i)
            x, y = rng.choice(4, size=2, p=pi)
            rng_draws[i] = first_meeting(chain, [x, y], rng=rng)
        se = rng_draws.std(ddof=1) / np.sqrt(rng_draws.size)
        assert rng_draws.mean() == pytest.approx(m, abs=3 * se)


class TestReplication:
    def test_worker_count_independence(self):
        chain = k_walk(6)
        cfg = RunConfig(start="all_vertices", replications=40, seed=11)
        seq = sample_full_coalescence(chain, cfg, workers=1)
        par = sample_full_coalescence(chain, cfg, workers=3)
        np.testing.assert_array_equal(seq.values(), par.values())

    def test_keep_levels_columns(self):
        chain = k_walk(5)
        cfg = RunConfig(start="all_vertices", replications=16, seed=2, keep_levels=(1, 2, 3))
        res = sample_full_coalescence(chain, cfg)
        assert set(res.levels) == {1, 2, 3}
        assert np.all(res.levels[3] <= res.levels[2])
        assert np.all(res.levels[2] <= res.levels[1])

    def test_sample_provenance(self):
        chain = k_walk(3)
        res = sample_full_coalescence(chain, RunConfig(start="all_vertices", replications=8, seed=5))
        s = res.sample()
        assert s.provenance["base_seed"] == 5
        assert s.n == 8


class TestVoter:
    def test_point_mass_zero_both_ways(self):
        chain = k_walk(4)
        assert simulate_voter_dual(chain, [1.0], seed=0) == 0.0
        assert simulate_voter_forward(chain, [1.0], seed=0) == 0.0

    def test_k2_fair_coin_dual_mean(self):
        chain = k_walk(2)
        draws = sample_voter(chain, [0.5, 0.5], 30_000, seed=21, mode="dual")
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert draws.mean() == pytest.approx(0.25, abs=3 * se)
        # half the runs reach consensus immediately
        assert (draws == 0).mean() == pytest.approx(0.5, abs=0.01)

    def test_k2_fair_coin_forward_mean(self):
        chain = k_walk(2)
        draws = sample_voter(chain, [0.5, 0.5], 30_000, seed=22, mode="forward")
        se = max(draws.std(ddof=1) / np.sqrt(draws.size), 1e-9)
        assert draws.mean() == pytest.approx(0.25, abs=3 * se)

    def test_forward_consensus_absorbing_from_start(self):
        # an initial consensus configuration never leaves consensus
        chain = k_walk(3)
        draws = sample_voter(chain, [1.0], 50, seed=4, mode="forward")
        assert np.all(draws == 0.0)

    def test_forward_budget_guard(self):
        chain = k_walk(3)
        with pytest.raises(BudgetExceededError):
            simulate_voter_forward(chain, [0.5, 0.5], seed=1, replica=3, max_events=1)
