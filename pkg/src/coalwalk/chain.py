"""Finite-state continuous-time Markov chains.

A chain is given by its off-diagonal jump rates ``q(x, y)``.  Everything
downstream (hitting-time oracles, simulation, mixing profiles) consumes the
:class:`RateGenerator` built here.  Numerical evaluation of the semigroup is
done by uniformization: jumps of the embedded kernel ``P = I + Q/q_max`` at
the epochs of a rate-``q_max`` Poisson process, truncated when the remaining
Poisson mass drops below a tail tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .errors import BudgetExceededError, InvalidChainError, NumericalError

DIST_ATOL = 1e-12
DEFAULT_POISSON_TAIL = 1e-12
DEFAULT_DENSE_THRESHOLD = 2000


def check_distribution(p, n=None, atol=DIST_ATOL):
    """Validate and return a probability vector as a float ndarray."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"distribution must be a vector, got shape {p.shape}")
    if n is not None and p.shape[0] != n:
        raise ValueError(f"distribution has length {p.shape[0]}, expected {n}")
    if np.any(p < -atol):
        raise ValueError("distribution has negative entries")
    s = p.sum()
    # accumulated rounding grows with the vector length
    if abs(s - 1.0) > max(atol, 4e-16 * p.shape[0]):
        raise ValueError(f"distribution sums to {s!r}, not 1")
    return np.clip(p, 0.0, None)


def total_variation(p, q):
    """Total-variation distance ``(1/2) sum |p - q|`` between two distributions."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass(frozen=True)
class UniformizedKernel:
    """Row-stochastic kernel ``P = I + Q/q_max`` of the uniformized chain."""

    q_max: float
    matrix: sp.csr_matrix

    def row_sum_defect(self):
        return float(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel() - 1.0).max())


@dataclass(frozen=True)
class MixingProfile:
    """Worst-case-start mixing time for one total-variation target."""

    alpha: float
    time: float
    tv_at_time: float
    rel_tol: float


@dataclass(frozen=True)
class ChainDiagnostics:
    """Scalar summaries controlling how 'mean field' a chain can be.

    ``mixing_collision_bound`` is ``(1 + q_max * t_mix) * pi_max``; it bounds
    the chance that a stationary pair collides within one mixing time.  The
    error scales are ``c0 * sqrt(r log 1/r)`` with ``r`` the ratio of mixing
    time to meeting time (transitive case) and the analogous expression in
    the collision bound (general case).
    """

    q_max: float
    max_single_rate: float
    pi_max: float
    mixing_time: float
    mixing_collision_bound: float
    meeting_mean: float | None = None
    mixing_ratio: float | None = None
    error_scale_transitive: float | None = None
    error_scale_general: float = 0.0
    transitive: bool = False

    @property
    def error_scale(self):
        if self.transitive:
            if self.error_scale_transitive is None:
                raise ValueError("transitive error scale needs a meeting mean")
            return self.error_scale_transitive
        return self.error_scale_general


class RateGenerator:
    """Irreducible CTMC generator stored as a sparse off-diagonal rate matrix.

    Immutable after construction.  ``rate_matrix[x, y] = q(x, y) >= 0`` for
    ``x != y``; the diagonal is implicit (minus the exit rate).  Construction
    rejects negative rates, explicit diagonal entries and chains that are not
    strongly connected.
    """

    def __init__(self, n, triplets):
        n = int(n)
        if n < 1:
            raise InvalidChainError("state count must be >= 1")
        rows, cols, vals = [], [], []
        for x, y, r in triplets:
            x, y, r = int(x), int(y), float(r)
            if not (0 <= x < n and 0 <= y < n):
                raise InvalidChainError(f"state index out of range: ({x}, {y})")
            if x == y:
                raise InvalidChainError("explicit diagonal entries are not allowed")
            if r < 0:
                raise InvalidChainError(f"negative rate q({x},{y}) = {r}")
            if r > 0:
                rows.append(x)
                cols.append(y)
                vals.append(r)
        mat = sp.csr_matrix(
            (np.asarray(vals, dtype=float), (rows, cols)), shape=(n, n)
        )
        mat.sum_duplicates()
        mat.data.flags.writeable = False
        self.n = n
        self.rate_matrix = mat
        exit_rates = np.asarray(mat.sum(axis=1)).ravel()
        exit_rates.flags.writeable = False
        self.exit_rates = exit_rates
        self.q_max = float(exit_rates.max()) if n > 0 else 0.0
        self.max_single_rate = float(mat.data.max()) if mat.nnz else 0.0
        if self.q_max <= 0:
            raise InvalidChainError("chain has no transitions")
        ncomp, _ = connected_components(mat, directed=True, connection="strong")
        if ncomp != 1:
            raise InvalidChainError(
                f"chain is not irreducible ({ncomp} strongly connected components)"
            )
        self._kernel = None

    @classmethod
    def from_dense(cls, rates):
        rates = np.asarray(rates, dtype=float)
        n = rates.shape[0]
        xs, ys = np.nonzero(rates)
        trip = [(x, y, rates[x, y]) for x, y in zip(xs, ys) if x != y]
        if np.any(np.diag(rates) != 0):
            raise InvalidChainError("explicit diagonal entries are not allowed")
        return cls(n, trip)

    def uniformized(self) -> UniformizedKernel:
        """Kernel ``P = I + Q/q_max`` (cached)."""
        if self._kernel is None:
            P = self.rate_matrix / self.q_max
            diag = 1.0 - self.exit_rates / self.q_max
            P = (P + sp.diags(diag)).tocsr()
            self._kernel = UniformizedKernel(self.q_max, P)
        return self._kernel

    def generator_matrix(self, dense=False):
        """Full generator ``Q`` including the diagonal."""
        Q = (self.rate_matrix - sp.diags(self.exit_rates)).tocsr()
        return Q.toarray() if dense else Q

    def rate(self, x, y):
        return float(self.rate_matrix[x, y])

    def to_json_dict(self):
        coo = self.rate_matrix.tocoo()
        trips = sorted(
            (int(x), int(y), float(v)) for x, y, v in zip(coo.row, coo.col, coo.data)
        )
        return {"n": self.n, "triplets": [list(t) for t in trips]}

    @classmethod
    def from_json_dict(cls, doc):
        return cls(doc["n"], doc["triplets"])

    def __repr__(self):
        return f"RateGenerator(n={self.n}, nnz={self.rate_matrix.nnz}, q_max={self.q_max:g})"


def _poisson_weights(mu, tail=DEFAULT_POISSON_TAIL):
    """Poisson(mu) pmf on 0..J where the truncated tail mass is below ``tail``."""
    if mu <= 0:
        return np.array([1.0])
    j_hi = int(poisson.ppf(1.0 - tail, mu)) + 1
    w = poisson.pmf(np.arange(j_hi + 1), mu)
    return w


def _propagate(kernel: UniformizedKernel, starts, t, tail=DEFAULT_POISSON_TAIL):
    """Distributions at time ``t`` for each row of ``starts`` (uniformization)."""
    w = _poisson_weights(kernel.q_max * t, tail)
    v = np.array(starts, dtype=float)
    out = w[0] * v
    for j in range(1, len(w)):
        v = v @ kernel.matrix
        if w[j] > 0:
            out += w[j] * v
    return out


def transition_distribution(chain: RateGenerator, start, t, tail=DEFAULT_POISSON_TAIL):
    """Law of the state at time ``t`` when the chain starts from ``start``."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    start = check_distribution(start, chain.n)
    if t == 0:
        return start
    out = _propagate(chain.uniformized(), start[None, :], t, tail)[0]
    out = np.clip(out, 0.0, None)
    return out / out.sum()


def stationary_distribution(
    chain: RateGenerator,
    dense_threshold=DEFAULT_DENSE_THRESHOLD,
    residual_tol=1e-10,
):
    """Unique stationary distribution, solving ``pi Q = 0``, ``sum(pi) = 1``.

    Dense LU below ``dense_threshold`` states; above it, an ILU-preconditioned
    iterative solve with a direct sparse fallback.  The returned vector always
    satisfies ``max|pi Q| <= residual_tol * q_max``.
    """
    n = chain.n
    Q = chain.generator_matrix()
    if n <= dense_threshold:
        A = Q.toarray().T
        A[0, :] = 1.0
        b = np.zeros(n)
        b[0] = 1.0
        pi = np.linalg.solve(A, b)
    else:
        A = sp.lil_matrix(Q.T)
        A[0, :] = 1.0
        A = A.tocsc()
        b = np.zeros(n)
        b[0] = 1.0
        pi = None
        try:
            ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
            M = spla.LinearOperator((n, n), ilu.solve)
            x0 = np.full(n, 1.0 / n)
            pi, info = spla.lgmres(A, b, x0=x0, M=M, rtol=1e-13, atol=0.0, maxiter=2000)
            if info != 0:
                pi = None
        except RuntimeError:
            pi = None
        if pi is None:
            pi = spla.spsolve(A, b)
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    residual = float(np.abs(pi @ Q).max())
    if residual > residual_tol * chain.q_max:
        raise NumericalError("stationary solve failed residual target", residual)
    return pi


def tv_from_stationarity(chain: RateGenerator, t, pi=None, tail=DEFAULT_POISSON_TAIL):
    """Worst-case-over-starts total variation to stationarity at time ``t``."""
    if pi is None:
        pi = stationary_distribution(chain)
    dists = _propagate(chain.uniformized(), np.eye(chain.n), t, tail)
    return 0.5 * float(np.abs(dists - pi[None, :]).sum(axis=1).max())


def mixing_time(
    chain: RateGenerator,
    alpha=0.25,
    rel_tol=1e-6,
    max_horizon=None,
    pi=None,
) -> MixingProfile:
    """Smallest ``t`` with worst-case TV distance to stationarity <= ``alpha``.

    Bisection on ``t`` (the TV profile is non-increasing), bracket found by
    doubling from ``1/q_max``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if pi is None:
        pi = stationary_distribution(chain)
    if max_horizon is None:
        max_horizon = 1e7 / chain.q_max

    def d(t):
        return tv_from_stationarity(chain, t, pi=pi)

    if d(0.0) <= alpha:
        return MixingProfile(alpha, 0.0, d(0.0), rel_tol)
    t0 = 1.0 / chain.q_max
    if d(t0) > alpha:
        lo, hi = t0, 2.0 * t0
        while d(hi) > alpha:
            lo = hi
            hi *= 2.0
            if hi > max_horizon:
                raise NumericalError(
                    f"mixing bracket not found below horizon {max_horizon:g}"
                )
    else:
        hi, lo = t0, t0 / 2.0
        while d(lo) <= alpha:
            hi = lo
            lo /= 2.0
            if lo < 1e-12 / chain.q_max:
                return MixingProfile(alpha, hi, d(hi), rel_tol)
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if d(mid) <= alpha:
            hi = mid
        else:
            lo = mid
    return MixingProfile(alpha, hi, d(hi), rel_tol)


def product_chain(chain: RateGenerator, k, state_budget=200_000) -> RateGenerator:
    """Generator of ``k`` independent copies; rates move exactly one coordinate.

    States are indexed in C order: coordinate 0 varies slowest, matching
    ``np.ravel_multi_index`` on the tuple of per-walker states.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    n = chain.n
    if n**k > state_budget:
        raise BudgetExceededError(
            f"product chain needs {n**k} states, budget is {state_budget}"
        )
    R = chain.rate_matrix
    total = None
    for j in range(k):
        left = sp.identity(n**j, format="csr")
        right = sp.identity(n ** (k - j - 1), format="csr")
        term = sp.kron(sp.kron(left, R, format="csr"), right, format="csr")
        total = term if total is None else total + term
    total = total.tocoo()
    out = RateGenerator.__new__(RateGenerator)
    mat = total.tocsr()
    mat.sum_duplicates()
    out.n = n**k
    out.rate_matrix = mat
    exit_rates = np.asarray(mat.sum(axis=1)).ravel()
    out.exit_rates = exit_rates
    out.q_max = float(exit_rates.max())
    out.max_single_rate = float(mat.data.max())
    out._kernel = None
    return out


def is_reversible(chain: RateGenerator, pi=None, tol=1e-10):
    """Whether detailed balance ``pi_x q(x,y) = pi_y q(y,x)`` holds."""
    if pi is None:
        pi = stationary_distribution(chain)
    flow = sp.diags(pi) @ chain.rate_matrix
    skew = abs(flow - flow.T)
    if skew.nnz == 0:
        return True
    return bool(skew.max() <= tol * chain.q_max)


def product_state_index(n, coords):
    """Index of the product-chain state with the given per-walker coordinates."""
    return int(np.ravel_multi_index(tuple(int(c) for c in coords), (n,) * len(coords)))


def product_state_coords(n, k, index):
    return tuple(int(c) for c in np.unravel_index(index, (n,) * k))


def chain_diagnostics(
    chain: RateGenerator,
    mixing: MixingProfile | None = None,
    pi=None,
    meeting_mean=None,
    transitive=False,
    c0=1.0,
    c1=1.0,
) -> ChainDiagnostics:
    """Assemble the scalar diagnostics; ``mixing`` defaults to the 1/4 profile."""
    if pi is None:
        pi = stationary_distribution(chain)
    if mixing is None:
        mixing = mixing_time(chain, 0.25, pi=pi)
    pi_max = float(pi.max())
    bound = (1.0 + chain.q_max * mixing.time) * pi_max
    ratio = None
    err_trans = None
    if meeting_mean is not None:
        ratio = mixing.time / meeting_mean
        if 0 < ratio < 1:
            err_trans = c0 * float(np.sqrt(ratio * np.log(1.0 / ratio)))
        else:
            err_trans = c0 * float(np.sqrt(max(ratio, 0.0)))
    if 0 < bound < 1:
        err_gen = c1 * float(np.sqrt(bound * np.log(1.0 / bound)))
    else:
        err_gen = c1 * float(np.sqrt(max(bound, 0.0)))
    return ChainDiagnostics(
        q_max=chain.q_max,
        max_single_rate=chain.max_single_rate,
        pi_max=pi_max,
        mixing_time=mixing.time,
        mixing_collision_bound=bound,
        meeting_mean=meeting_mean,
        mixing_ratio=ratio,
        error_scale_transitive=err_trans,
        error_scale_general=err_gen,
        transitive=transitive,
    )
