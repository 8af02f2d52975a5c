"""Exact linear-algebra oracles for hitting and meeting times.

Means come from the restricted linear system ``Q_CC u = -1``; survival curves
from killed-chain uniformization (stable for non-reversible chains, unlike
eigendecompositions).  Joint early-hitting probabilities of two target sets
are obtained by inclusion-exclusion with the survival of the union, which is
equivalent to tracking per-target hit flags but stays on the original state
space.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from ._uniformize import StepSurvival
from .chain import (
    DEFAULT_DENSE_THRESHOLD,
    RateGenerator,
    check_distribution,
    product_chain,
    stationary_distribution,
)
from .errors import BudgetExceededError, NumericalError

# ---------------------------------------------------------------------------
# target sets


@dataclass(frozen=True)
class TargetSet:
    """Nonempty set of states of a chain, kept as sorted indices plus a mask."""

    chain: RateGenerator
    states: np.ndarray
    mask: np.ndarray
    label: str = ""

    @classmethod
    def from_states(cls, chain, states, label=""):
        states = np.unique(np.asarray(states, dtype=np.int64))
        if states.size == 0:
            raise ValueError("target set is empty")
        if states[0] < 0 or states[-1] >= chain.n:
            raise ValueError("target state out of range")
        mask = np.zeros(chain.n, dtype=bool)
        mask[states] = True
        states.flags.writeable = False
        mask.flags.writeable = False
        return cls(chain, states, mask, label)

    @classmethod
    def from_predicate(cls, chain, predicate, label=""):
        states = np.array([x for x in range(chain.n) if predicate(x)], dtype=np.int64)
        return cls.from_states(chain, states, label)

    @property
    def size(self):
        return int(self.states.size)


def _coord_grid(n, k):
    idx = np.arange(n**k)
    return np.unravel_index(idx, (n,) * k)


def pair_diagonal(product, n, k, i, j, label=None):
    """States of the k-fold product where coordinates ``i`` and ``j`` agree."""
    if not (0 <= i < k and 0 <= j < k and i != j):
        raise ValueError("need two distinct coordinates in range")
    coords = _coord_grid(n, k)
    mask = coords[i] == coords[j]
    return TargetSet.from_states(
        product, np.nonzero(mask)[0], label or f"diag({i},{j})"
    )


def meeting_diagonal(product, n, k, label=None):
    """States of the k-fold product where some two coordinates agree."""
    coords = _coord_grid(n, k)
    mask = np.zeros(n**k, dtype=bool)
    for i in range(k):
        for j in range(i + 1, k):
            mask |= coords[i] == coords[j]
    return TargetSet.from_states(product, np.nonzero(mask)[0], label or f"diag^{k}")


def union_target(a: TargetSet, b: TargetSet, label=""):
    if a.chain is not b.chain:
        raise ValueError("targets live on different chains")
    return TargetSet.from_states(a.chain, np.union1d(a.states, b.states), label)


# ---------------------------------------------------------------------------
# means and survival curves


def _solve_restricted(Qcc, rhs, weights):
    """Large sparse solve of the killed-generator system.

    With reversibility weights (stationary masses on the complement) the
    system is similar to a symmetric positive-definite one and conjugate
    gradients converge in about sqrt(q_max * mean) iterations, which beats
    direct factorization by orders of magnitude on hub-shaped chains.
    """
    if weights is not None:
        d = np.sqrt(weights)
        A = sp.diags(d) @ (-Qcc) @ sp.diags(1.0 / d)
        skew = abs(A - A.T)
        if skew.nnz == 0 or skew.max() <= 1e-9 * abs(A).max():
            A = (A + A.T) * 0.5
            M = sp.diags(1.0 / A.diagonal())
            y, info = spla.cg(A, -d * rhs, M=M, rtol=1e-14, atol=0.0,
                              maxiter=200_000)
            if info == 0:
                return y / d
    return spla.spsolve(Qcc.tocsc(), rhs)


def expected_hitting_times(chain: RateGenerator, target: TargetSet,
                           dense_threshold=DEFAULT_DENSE_THRESHOLD,
                           residual_tol=1e-10, reversible_weights=None):
    """Vector of ``E_x[time to hit target]``; zero on the target itself.

    ``reversible_weights`` is an optional stationary vector certifying
    detailed balance; large reversible systems then use conjugate gradients.
    """
    if target.chain is not chain:
        raise ValueError("target belongs to a different chain")
    comp = np.nonzero(~target.mask)[0]
    u = np.zeros(chain.n)
    if comp.size == 0:
        return u
    Q = chain.generator_matrix()
    Qcc = Q[comp][:, comp]
    rhs = -np.ones(comp.size)
    if comp.size <= dense_threshold:
        sol = np.linalg.solve(Qcc.toarray(), rhs)
    else:
        w = None if reversible_weights is None else np.asarray(reversible_weights)[comp]
        sol = _solve_restricted(Qcc, rhs, w)
    residual = float(np.abs(Qcc @ sol - rhs).max())
    scale = max(1.0, chain.q_max * float(np.abs(sol).max()))
    if residual > residual_tol * scale:
        raise NumericalError("hitting-time solve failed residual target", residual)
    if sol.min() < -1e-9 * max(1.0, float(np.abs(sol).max())):
        raise NumericalError("hitting-time solution is not nonnegative", float(sol.min()))
    u[comp] = np.clip(sol, 0.0, None)
    return u


def mean_hitting_time(chain: RateGenerator, target: TargetSet, start):
    """Expected hitting time of ``target`` from the start distribution."""
    start = check_distribution(start, chain.n)
    u = expected_hitting_times(chain, target)
    return float(start @ u)


class SurvivalCurve:
    """Exact evaluator of ``t -> P(hitting time of target > t)``.

    Built once per (chain, target, start); evaluations at new times extend a
    cached sequence of killed-chain step survivals.
    """

    def __init__(self, chain: RateGenerator, target: TargetSet, start, tail=1e-12,
                 reversible_weights=None):
        start = check_distribution(start, chain.n)
        self.chain = chain
        self.target = target
        self.start = start
        self.tail = tail
        kernel = chain.uniformized()
        comp = np.nonzero(~target.mask)[0]
        P_sub = kernel.matrix[comp][:, comp].tocsr()
        self.q_max = kernel.q_max
        self._steps = StepSurvival(P_sub, start[comp])
        self.initial = float(start[comp].sum())  # survival at time zero
        u = expected_hitting_times(chain, target, reversible_weights=reversible_weights)
        self.mean = float(start @ u)

    def __call__(self, t):
        return self._steps.survival(self.q_max, t, self.tail)

    def cdf(self, t):
        return 1.0 - self(t)

    def integral(self, rel_tol=1e-9):
        """Integral of the survival over [0, inf); should match ``mean``."""
        return self._steps.integral(self.q_max, rel_tol=rel_tol)


def survival(chain: RateGenerator, target: TargetSet, start, tail=1e-12) -> SurvivalCurve:
    return SurvivalCurve(chain, target, start, tail)


# ---------------------------------------------------------------------------
# quantiles and exponential envelopes


@dataclass(frozen=True)
class QuantileResult:
    """Time at which the hitting CDF reaches ``epsilon``, plus the deviation
    of ``epsilon * mean / t_eps`` from one."""

    epsilon: float
    time: float
    mean_quantile_deviation: float
    cdf_error: float


def quantile(curve: SurvivalCurve, epsilon, cdf_tol=1e-8) -> QuantileResult:
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    atom = curve.cdf(0.0)
    if atom >= epsilon:
        raise ValueError(
            f"epsilon={epsilon} is not above the initial atom {atom:.3g}; "
            "the quantile would not be a positive time"
        )
    hi = max(curve.mean, 1.0 / curve.q_max)
    while curve.cdf(hi) < epsilon:
        hi *= 2.0
        if hi > 1e9 * max(curve.mean, 1e-300):
            raise NumericalError("quantile bracket not found")
    t_eps = brentq(lambda t: curve.cdf(t) - epsilon, 0.0, hi, xtol=1e-15 * hi, rtol=8.9e-16)
    err = abs(curve.cdf(t_eps) - epsilon)
    if err > cdf_tol:
        raise NumericalError("quantile root did not meet the CDF tolerance", err)
    deviation = abs(epsilon * curve.mean / t_eps - 1.0)
    return QuantileResult(float(epsilon), float(t_eps), float(deviation), float(err))


@dataclass(frozen=True)
class ExponentialEnvelope:
    """Two-sided nearly-exponential envelope with mean scale ``m``.

    Membership means ``(1-alpha) e^{-t/((1-beta) m)} <= S(t) <=
    (1+alpha) e^{-t/((1+beta) m)}`` for all probed ``t``.
    """

    m: float
    alpha: float
    beta: float

    def __post_init__(self):
        if self.m <= 0 or self.alpha < 0 or not 0 <= self.beta < 1:
            raise ValueError("need m > 0, alpha >= 0 and beta in [0, 1)")

    def bounds(self, t):
        t = np.asarray(t, dtype=float)
        upper = (1.0 + self.alpha) * np.exp(-t / ((1.0 + self.beta) * self.m))
        lower = (1.0 - self.alpha) * np.exp(-t / ((1.0 - self.beta) * self.m))
        return np.clip(lower, 0.0, None), upper

    def w1_bound(self):
        """Distance to the exact exponential of mean ``m``: ``2(alpha+beta)m``."""
        return 2.0 * (self.alpha + self.beta) * self.m


def envelope_w1_bound(envelope: ExponentialEnvelope) -> float:
    return envelope.w1_bound()


@dataclass(frozen=True)
class EnvelopeFitReport:
    envelope: ExponentialEnvelope | None
    grid: np.ndarray
    worst_upper_violation: float
    worst_lower_violation: float
    early_hit_probability: float | None
    applicable: bool

    @property
    def alpha(self):
        return self.envelope.alpha if self.envelope else float("nan")

    @property
    def beta(self):
        return self.envelope.beta if self.envelope else float("nan")


def default_envelope_grid(m):
    """t = 0 plus 200 log-spaced points spanning the head and the tail."""
    return np.concatenate([[0.0], np.geomspace(1e-3 * m, 10.0 * m, 200)])


def _envelope_alpha(surv, grid, m, beta):
    # smallest alpha making the two-sided bound hold on the grid, given beta
    with np.errstate(over="ignore"):
        up = np.clip(grid / ((1.0 + beta) * m), None, 700.0)
        alpha_up = np.max(surv * np.exp(up) - 1.0)
        lo = np.clip(grid / ((1.0 - beta) * m), None, 700.0)
        alpha_lo = np.max(1.0 - surv * np.exp(lo))
    return max(0.0, float(alpha_up), float(alpha_lo))


def envelope_fit(curve, m, grid=None, r_threshold=None, beta_max=0.999,
                 beta_tol=1e-6, slack_tol=1e-9) -> EnvelopeFitReport:
    """Minimal nearly-exponential envelope containing the survival curve.

    For each tail slack ``beta`` the smallest feasible amplitude slack is
    ``alpha(beta)``, a non-increasing function; the reported pair minimizes
    the distance bound ``2 (alpha + beta) m``, breaking ties toward the
    smallest ``beta`` (the tail slack is the scientifically meaningful one).
    """
    if m <= 0:
        raise ValueError("mean scale must be positive")
    if grid is None:
        grid = default_envelope_grid(m)
    grid = np.asarray(grid, dtype=float)
    surv = np.asarray(curve(grid), dtype=float)
    r = None
    if r_threshold is not None:
        r = float(1.0 - curve(r_threshold))
    if surv[0] <= 0.0:
        # start mass entirely on the target: no envelope can sit below zero
        return EnvelopeFitReport(None, grid, np.inf, np.inf, 1.0 if r is None else r, False)

    def objective(beta):
        return _envelope_alpha(surv, grid, m, beta) + beta

    # coarse scan then golden-section refinement of the quasi-convex objective
    betas = np.linspace(0.0, beta_max, 257)
    values = np.array([objective(b) for b in betas])
    i = int(np.argmin(values))
    lo = betas[max(i - 1, 0)]
    hi = betas[min(i + 1, len(betas) - 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = objective(x1), objective(x2)
    while b - a > beta_tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = objective(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = objective(x2)
    beta = 0.5 * (a + b)
    best = objective(beta)
    # prefer a strictly smaller beta when it costs nothing
    for candidate in (0.0, a):
        if objective(candidate) <= best + slack_tol * (1.0 + best):
            beta = candidate
            break
    alpha = _envelope_alpha(surv, grid, m, beta)
    env = ExponentialEnvelope(m, alpha, beta)
    lower, upper = env.bounds(grid)
    worst_up = float(np.max(surv - upper))
    worst_lo = float(np.max(lower - surv))
    return EnvelopeFitReport(env, grid, worst_up, worst_lo, r, True)


# ---------------------------------------------------------------------------
# meeting means and correlation reports


def _stationary_pair_start(chain, pi=None, conditioned_off_diagonal=False):
    if pi is None:
        pi = stationary_distribution(chain)
    start = np.outer(pi, pi).ravel()
    if conditioned_off_diagonal:
        n = chain.n
        diag = np.arange(n) * n + np.arange(n)
        start[diag] = 0.0
        start = start / start.sum()
    return start


def pair_meeting_times(chain: RateGenerator, pi=None, state_budget=200_000):
    """Expected pairwise meeting time from every joint start state.

    Returns ``(product2, diagonal, u)`` with ``u`` indexed by product states;
    dotted with a pair start it gives that start's expected meeting time.
    """
    from .chain import is_reversible

    if pi is None:
        pi = stationary_distribution(chain)
    prod = product_chain(chain, 2, state_budget=state_budget)
    target = pair_diagonal(prod, chain.n, 2, 0, 1)
    weights = np.outer(pi, pi).ravel() if is_reversible(chain, pi) else None
    u = expected_hitting_times(prod, target, reversible_weights=weights)
    return prod, target, u


def meeting_mean(chain: RateGenerator, conditioned_off_diagonal=False,
                 state_budget=200_000, pi=None):
    """Expected pairwise meeting time from independent stationary starts.

    With ``conditioned_off_diagonal`` the two walkers condition on starting
    apart, which removes the instant-meeting atom.
    """
    if pi is None:
        pi = stationary_distribution(chain)
    _, _, u = pair_meeting_times(chain, pi=pi, state_budget=state_budget)
    start = _stationary_pair_start(chain, pi, conditioned_off_diagonal)
    return float(start @ u)


@dataclass(frozen=True)
class PairMeetingBoundReport:
    """Exact early-meeting probability against its uniform upper bound."""

    horizon: float
    exact_probability: float
    bound: float
    violation: float
    satisfied: bool
    mc_estimate: float | None = None
    mc_se: float | None = None


def pair_meeting_bound_check(chain: RateGenerator, lam, horizon, tol=1e-9,
                             n_samples=0, seed=0, pi=None,
                             state_budget=200_000) -> PairMeetingBoundReport:
    """Check ``P(meet by T) <= (1 + 2 T q_max) pi_max`` for start ``lam x pi``."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    lam = check_distribution(lam, chain.n)
    if pi is None:
        pi = stationary_distribution(chain)
    prod = product_chain(chain, 2, state_budget=state_budget)
    target = pair_diagonal(prod, chain.n, 2, 0, 1)
    start = np.outer(lam, pi).ravel()
    curve = SurvivalCurve(prod, target, start)
    prob = float(curve.cdf(horizon))
    bound = (1.0 + 2.0 * horizon * chain.q_max) * float(pi.max())
    violation = max(0.0, prob - bound)
    mc_est = mc_se = None
    if n_samples > 0:
        from .coalescing import first_meeting, replica_rng

        hits = 0
        for i in range(n_samples):
            rng = replica_rng(seed, i)
            x0 = rng.choice(chain.n, p=lam)
            y0 = rng.choice(chain.n, p=pi)
            hits += first_meeting(chain, [x0, y0], rng=rng) <= horizon
        mc_est = hits / n_samples
        mc_se = float(np.sqrt(mc_est * (1 - mc_est) / n_samples))
    return PairMeetingBoundReport(
        float(horizon), prob, float(bound), float(violation),
        violation <= tol, mc_est, mc_se,
    )


@dataclass(frozen=True)
class JointHitProbability:
    """Joint probability that two target sets are both hit by the horizon."""

    index_a: int
    index_b: int
    label_a: str
    label_b: str
    overlap: str  # "disjoint", "shared" or "generic"
    probability: float
    se: float | None = None


@dataclass(frozen=True)
class CorrelationReport:
    """Joint early-hitting probabilities over pairs of target sets.

    ``correlation_index`` is the sum of the joint probabilities divided by
    ``n_targets * epsilon``; small values certify that the union's hitting
    time behaves like a minimum of independent exponentials.
    """

    epsilon: float
    mean: float
    n_targets: int
    marginals: np.ndarray
    joints: tuple[JointHitProbability, ...]
    correlation_index: float
    mode: str

    @property
    def max_joint(self):
        return max(j.probability for j in self.joints)

    def pairwise_product_bound_slack(self):
        """Worst excess of any joint over twice the product of its marginals."""
        return max(
            j.probability - 2.0 * float(self.marginals[j.index_a] * self.marginals[j.index_b])
            for j in self.joints
        )

    def joints_below_marginals(self):
        """Every joint is at most the smaller of its two marginals (sanity)."""
        return all(
            j.probability
            <= min(self.marginals[j.index_a], self.marginals[j.index_b]) + 1e-12
            for j in self.joints
        )


def correlation_report_for_targets(chain: RateGenerator, targets, epsilon,
                                   start=None, mean_spread_tol=1e-8):
    """Exact correlation report for arbitrary equal-mean target sets."""
    if len(targets) < 2:
        raise ValueError("need at least two target sets")
    if start is None:
        start = stationary_distribution(chain)
    start = check_distribution(start, chain.n)
    means = np.array([mean_hitting_time(chain, t, start) for t in targets])
    m = float(means.mean())
    spread = float((means.max() - means.min()) / max(m, 1e-300))
    if spread > mean_spread_tol:
        raise ValueError(f"target means are not equal (relative spread {spread:.3g})")
    s = epsilon * m
    marg = np.array([float(SurvivalCurve(chain, t, start).cdf(s)) for t in targets])
    joints = []
    total = 0.0
    for i, j in itertools.combinations(range(len(targets)), 2):
        uni = union_target(targets[i], targets[j])
        s_union = float(SurvivalCurve(chain, uni, start)(s))
        p_joint = max(0.0, marg[i] + marg[j] - (1.0 - s_union))
        joints.append(
            JointHitProbability(i, j, targets[i].label, targets[j].label, "generic", p_joint)
        )
        total += p_joint
    ell = len(targets)
    xi = total / (ell * epsilon)
    return CorrelationReport(float(epsilon), m, ell, marg, tuple(joints), float(xi), "exact")


def correlation_xi(chain: RateGenerator, k, epsilon, state_budget=200_000,
                   mc_samples=100_000, seed=0, pi=None) -> CorrelationReport:
    """Correlation report for the pairwise meeting times of ``k`` walkers.

    Exact mode needs the triple product chain in budget; the marginal lives on
    the pair chain and joints follow by inclusion-exclusion (walker pairs with
    disjoint index sets are independent, and exchangeability reduces every
    overlapping pair to one three-walker computation).  Over budget, falls
    back to Monte Carlo on ``k`` independent walkers with standard errors.
    """
    if k < 3:
        raise ValueError("need at least three walkers for distinct pairs")
    if pi is None:
        pi = stationary_distribution(chain)
    n = chain.n
    m = meeting_mean(chain, pi=pi, state_budget=max(state_budget, n * n + 1))
    s = epsilon * m
    pairs = list(itertools.combinations(range(k), 2))
    ell = len(pairs)
    labels = [f"M{p}" for p in pairs]
    if n**3 <= state_budget:
        prod2 = product_chain(chain, 2, state_budget=state_budget)
        d2 = pair_diagonal(prod2, n, 2, 0, 1)
        start2 = np.outer(pi, pi).ravel()
        p_marginal = float(SurvivalCurve(prod2, d2, start2).cdf(s))
        prod3 = product_chain(chain, 3, state_budget=state_budget)
        start3 = np.einsum("i,j,k->ijk", pi, pi, pi).ravel()
        d01 = pair_diagonal(prod3, n, 3, 0, 1)
        d02 = pair_diagonal(prod3, n, 3, 0, 2)
        uni = union_target(d01, d02)
        s_union = float(SurvivalCurve(prod3, uni, start3)(s))
        p_shared = max(0.0, 2.0 * p_marginal - (1.0 - s_union))
        joints = []
        total = 0.0
        for a, b in itertools.combinations(range(ell), 2):
            shared = len(set(pairs[a]) & set(pairs[b])) == 1
            p = p_shared if shared else p_marginal**2
            joints.append(
                JointHitProbability(
                    a, b, labels[a], labels[b], "shared" if shared else "disjoint", p
                )
            )
            total += p
        xi = total / (ell * epsilon)
        return CorrelationReport(
            float(epsilon), m, ell, np.full(ell, p_marginal), tuple(joints), float(xi), "exact"
        )
    return _correlation_xi_mc(chain, k, epsilon, m, pairs, labels, mc_samples, seed, pi)


def _correlation_xi_mc(chain, k, epsilon, m, pairs, labels, n_samples, seed, pi):
    from .coalescing import replica_rng

    s = epsilon * m
    R = chain.rate_matrix
    row_cum = [None] * chain.n
    exit_rates = chain.exit_rates
    ell = len(pairs)
    hit_counts = np.zeros(ell)
    joint_counts = np.zeros((ell, ell))
    for rep in range(n_samples):
        rng = replica_rng(seed, rep)
        pos = rng.choice(chain.n, size=k, p=pi)
        t = 0.0
        met = np.zeros((k, k), dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                met[a, b] = pos[a] == pos[b]
        while True:
            rates = exit_rates[pos]
            total = rates.sum()
            t += rng.exponential(1.0 / total)
            if t >= s:
                break
            mover = int(np.searchsorted(np.cumsum(rates), rng.random() * total))
            mover = min(mover, k - 1)
            x = pos[mover]
            if row_cum[x] is None:
                row = R.data[R.indptr[x] : R.indptr[x + 1]]
                row_cum[x] = np.cumsum(row) / row.sum()
            di = int(np.searchsorted(row_cum[x], rng.random()))
            pos[mover] = R.indices[R.indptr[x] + di]
            for other in range(k):
                if other != mover and pos[other] == pos[mover]:
                    a, b = min(mover, other), max(mover, other)
                    met[a, b] = True
        flags = np.array([met[a, b] for a, b in pairs], dtype=float)
        hit_counts += flags
        joint_counts += np.outer(flags, flags)
    marg = hit_counts / n_samples
    joints = []
    total = 0.0
    for a, b in itertools.combinations(range(ell), 2):
        p = joint_counts[a, b] / n_samples
        se = float(np.sqrt(max(p * (1 - p), 1e-300) / n_samples))
        shared = len(set(pairs[a]) & set(pairs[b])) == 1
        joints.append(
            JointHitProbability(
                a, b, labels[a], labels[b], "shared" if shared else "disjoint", float(p), se
            )
        )
        total += p
    xi = total / (ell * epsilon)
    return CorrelationReport(float(epsilon), m, ell, marg, tuple(joints), float(xi), "mc")
