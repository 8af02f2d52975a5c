"""Mean-field reference law for full-coalescence times, and the voter K-law.

The reference is the truncated sum of independent exponential stages with
rates ``binom(i, 2)`` for ``i = 2..n_ref`` (a hypoexponential / phase-type
law).  Its survival function is evaluated by uniformizing the bidiagonal
pure-death sub-generator; the closed-form partial-fraction expansion is
avoided because its alternating weights cancel catastrophically once
``n_ref`` grows past a few dozen.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from ._uniformize import StepSurvival


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(rng)))


class MeanFieldReference:
    """Truncated reference law: sum of Exp(1/binom(i,2)) stages, i = 2..n_ref."""

    def __init__(self, n_ref):
        n_ref = int(n_ref)
        if n_ref < 2:
            raise ValueError("n_ref must be >= 2")
        self.n_ref = n_ref
        i = np.arange(2, n_ref + 1)
        self.stage_rates = i * (i - 1) / 2.0
        self.mean = 2.0 * (1.0 - 1.0 / n_ref)
        self._q = float(self.stage_rates.max())
        lam = self.stage_rates / self._q
        m = len(lam)
        # pure-death uniformized kernel on stage indices 0..m-1: stage j stays
        # with 1 - lam[j] and advances to j-1 with lam[j]; stage 0 exits
        stay = sp.diags(1.0 - lam)
        if m > 1:
            advance = sp.diags(lam[1:], -1)
            kernel = (stay + advance).tocsr()
        else:
            kernel = stay.tocsr()
        start = np.zeros(m)
        start[m - 1] = 1.0  # enter at the fastest stage, exit after the rate-1 stage
        self._steps = StepSurvival(kernel, start)
        self._table = None

    def survival(self, t):
        """P(reference > t); exact up to Poisson tail truncation 1e-12."""
        return self._steps.survival(self._q, t)

    def cdf(self, t):
        return 1.0 - self.survival(t)

    def survival_integral_total(self, rel_tol=1e-9):
        """Numerical check value for the mean (integral of the survival)."""
        return self._steps.integral(self._q, rel_tol=rel_tol)

    def sample(self, rng, size=None):
        """Sum of the stage exponentials; stages drawn in increasing i."""
        rng = _as_generator(rng)
        shape = () if size is None else (size,)
        total = np.zeros(shape)
        for rate in self.stage_rates:
            total = total + rng.exponential(1.0 / rate, size=size)
        return float(total) if size is None else total

    # --- reference-law protocol used by the Wasserstein integrator ---

    def _tabulated(self):
        if self._table is None:
            from .wasserstein import TabulatedRefLaw

            self._table = TabulatedRefLaw(
                self.survival, mean=self.mean, scale_hint=self.mean
            )
        return self._table

    def survival_integral(self, t):
        """Integral of the survival over [0, t] (vectorized)."""
        return self._tabulated().survival_integral(t)

    def quantile_survival(self, levels):
        """Times where the survival equals the given levels."""
        return self._tabulated().quantile_survival(levels)

    def export_table(self, ts):
        """(t, survival) pairs suitable for a CSV dump."""
        ts = np.asarray(ts, dtype=float)
        return np.column_stack([ts, self.survival(ts)])


class LeadingRunLaw:
    """Law of the number of leading iid opinions equal to the very first draw.

    For opinion probabilities ``mu``, ``P(K = k) = sum_o mu(o)^k (1 - mu(o))``
    for ``k >= 1``.  A point mass makes the run infinite; sampling then
    returns ``math.inf``.
    """

    def __init__(self, probs):
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("opinion distribution must be a probability vector")
        self.probs = p / p.sum()

    @property
    def is_point_mass(self):
        return bool(np.max(self.probs) >= 1.0 - 1e-15)

    def pmf(self, k):
        k = np.asarray(k)
        if np.any(k < 1):
            raise ValueError("the run length is at least 1")
        p = self.probs
        out = (p[None, :] ** np.atleast_1d(k)[:, None] * (1.0 - p[None, :])).sum(axis=1)
        return out if k.ndim else float(out[0])

    def sample(self, rng, size=None):
        rng = _as_generator(rng)
        n = 1 if size is None else size
        first = rng.choice(len(self.probs), size=n, p=self.probs)
        out = np.empty(n)
        for idx, o in enumerate(first):
            p = self.probs[o]
            out[idx] = math.inf if p >= 1.0 else rng.geometric(1.0 - p)
        if size is None:
            return float(out[0])
        return out


def voter_reference_sample(run_law: LeadingRunLaw, n, ref: MeanFieldReference, rng, size=None):
    """Reference consensus draw: stage sum above the agreement run ``K``.

    Draws ``K``, caps it at ``n``, and returns the sum of the reference
    stages ``i = K+1 .. n_ref`` (zero when the run covers the truncation).
    """
    rng = _as_generator(rng)
    m = 1 if size is None else size
    ks = run_law.sample(rng, size=m)
    out = np.zeros(m)
    rates = ref.stage_rates  # stage i = 2..n_ref at indices 0..n_ref-2
    for idx in range(m):
        k = min(ks[idx], float(n))
        lo = int(k) + 1  # first stage index i to include
        if lo > ref.n_ref:
            continue
        sel = rates[lo - 2 :]
        out[idx] = rng.exponential(1.0, size=len(sel)) @ (1.0 / sel)
    if size is None:
        return float(out[0])
    return out
