"""Shared machinery for evaluating uniformized (sub)stochastic semigroups.

A killed or phase-type chain is summarized by the scalar sequence
``s_j = start @ P_sub^j @ 1`` (probability of surviving ``j`` uniformized
steps).  Survival at continuous time ``t`` is the Poisson(q*t) average of
``s_j``; the sequence is cached and grown on demand.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import poisson

DEFAULT_TAIL = 1e-12


def poisson_window(mu, tail=DEFAULT_TAIL):
    """Index range and pmf covering all but ``tail`` of Poisson(mu) mass."""
    if mu <= 0:
        return 0, np.array([1.0])
    j_lo = int(poisson.ppf(tail / 2, mu))
    j_hi = int(poisson.ppf(1.0 - tail / 2, mu)) + 1
    w = poisson.pmf(np.arange(j_lo, j_hi + 1), mu)
    return j_lo, w


class StepSurvival:
    """Growable cache of per-step survival masses of a substochastic kernel."""

    def __init__(self, kernel, start):
        self._kernel = kernel
        self._v = np.asarray(start, dtype=float).copy()
        self._values = [float(self._v.sum())]
        self._array = None

    def ensure(self, j):
        if j < len(self._values):
            return
        while len(self._values) <= j:
            self._v = self._v @ self._kernel
            self._values.append(float(self._v.sum()))
        self._array = None

    def values(self, j_hi):
        """Array of ``s_0 .. s_{j_hi}``."""
        self.ensure(j_hi)
        if self._array is None or len(self._array) != len(self._values):
            self._array = np.asarray(self._values)
        return self._array[: j_hi + 1]

    def survival(self, q, t, tail=DEFAULT_TAIL):
        """Continuous-time survival(s) at ``t`` (scalar or array)."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(ts < 0):
            raise ValueError("time must be nonnegative")
        out = np.empty(ts.shape)
        if ts.size <= 16:
            for idx, ti in enumerate(ts):
                j_lo, w = poisson_window(q * ti, tail)
                s = self.values(j_lo + len(w) - 1)
                out[idx] = float(w @ s[j_lo:])
        else:
            self._survival_batch(q, ts, out, tail)
        out = np.clip(out, 0.0, 1.0)
        return out if np.ndim(t) else float(out[0])

    def _survival_batch(self, q, ts, out, tail, max_chunk=4096):
        # evaluate many times at once: sort by Poisson mean and share a pmf
        # window across neighbouring means; a chunk spans at most a few
        # standard deviations so the multiplicative pmf recurrence below
        # stays within float range for every row
        order = np.argsort(ts)
        mus = q * ts[order]
        j_hi_all = int(poisson.ppf(1.0 - tail / 2, max(mus.max(), 1e-300))) + 1
        self.ensure(j_hi_all)
        s_all = self.values(j_hi_all)
        lo = 0
        while lo < mus.size:
            width = max(8.0 * np.sqrt(mus[lo] + 1.0), 4.0)
            hi = int(np.searchsorted(mus, mus[lo] + width, side="right"))
            hi = min(max(hi, lo + 1), lo + max_chunk, mus.size)
            sub = mus[lo:hi]
            j0 = int(poisson.ppf(tail / 2, max(sub[0], 1e-300)))
            j1 = int(poisson.ppf(1.0 - tail / 2, max(sub[-1], 1e-300))) + 1
            ks = np.arange(j0, j1 + 1)
            pmf0 = poisson.pmf(j0, sub)
            if j1 > j0:
                ratios = sub[:, None] / ks[None, 1:]
                pmf = np.empty((sub.size, ks.size))
                pmf[:, 0] = pmf0
                np.cumprod(ratios, axis=1, out=ratios)
                pmf[:, 1:] = pmf0[:, None] * ratios
            else:
                pmf = pmf0[:, None]
            out[order[lo:hi]] = pmf @ s_all[j0 : j1 + 1]
            lo = hi

    def integral(self, q, rel_tol=1e-9, max_steps=50_000_000):
        """Integral of the survival function over [0, inf).

        Equals ``sum_j s_j / q``; the geometric tail beyond the computed
        range is extrapolated from the last decay ratio.
        """
        j = len(self._values) - 1
        block = 256
        while True:
            self.ensure(j + block)
            j += block
            s = self.values(j)
            last, prev = s[-1], s[-2]
            if last <= 0:
                return float(s.sum() / q)
            ratio = last / prev if prev > 0 else 0.0
            if ratio < 1.0:
                tail = last * ratio / (1.0 - ratio)
                total = s.sum()
                if tail <= rel_tol * max(total, 1e-300):
                    return float((total + tail) / q)
            if j > max_steps:
                raise RuntimeError("survival integral did not converge")
            block = min(2 * block, 65536)
