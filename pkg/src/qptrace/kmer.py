"""Frequency-domain k-mer estimation from traces.

For a marker ``w`` of length ``k`` and a frequency ``alpha`` the target is

    K(x, w, zeta) = sum_l zeta**l * 1[x[l:l+k] == w],   zeta = exp(i alpha),

with zero-based start positions ``l``.  The estimator lifts the marker
indicator through the channel inverse, averages it over every suffix of every
trace (suffix means ``mu_s``) and maps the frequency through the inverse of
the per-bit length generating function ``G``, ``z = G^{-1}(zeta)``.

Combination rule.  With ``U = sum_s mu_s z**s``, ``c0 = G(0)`` (probability
that one input bit leaves no output) and ``a = (1 - zeta) / ((1 - z)(1 - c0))``
(``G'(1) / (1 - c0)`` at ``alpha = 0``)

    E = (zeta * U / a - c0 * mu_0) / (zeta - c0).

A suffix that starts inside the output of input bit ``l`` is the output of
``x[l:]`` with a shortened first block; the factor ``a`` and the ``c0`` term
correct for that first block.  For the noiseless channel (``G(z) = z``) the
rule reduces to ``E = U``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .channels import (BitString, CompositeChannel, as_bitstring, as_channel, composite_gf, gf_eval,
                       inverse_gf_eval, split_channel)
from .qp_oracle import OracleFn, QPOracle, SuffixSums, lift_composite, suffix_sums

__all__ = [
    "KmerQuery",
    "KmerEstimate",
    "KmerSuffixStats",
    "marker_indicator",
    "exact_kmer_value",
    "combination_weights",
    "kmer_suffix_stats",
    "estimate_kmer",
    "estimate_all_markers",
    "kmer_stderr",
]


def marker_indicator(w: "BitString | str") -> OracleFn:
    """Oracle returning 1 when the first ``|w|`` input bits equal ``w``.

    Inputs shorter than ``|w|`` give 0.
    """
    w = as_bitstring(w)
    k = len(w)
    if k == 0:
        raise ValueError("marker must be nonempty")
    table = np.zeros(2 ** k)
    table[w.to_int()] = 1.0
    return OracleFn(k, 1.0, table)


def exact_kmer_value(x: "BitString | str", w: "BitString | str", zeta: complex) -> complex:
    """``sum_l zeta**l 1[x[l:l+k] == w]`` over zero-based starts ``l``."""
    xs, ws = str(as_bitstring(x)), str(as_bitstring(w))
    k = len(ws)
    total = 0j
    p = 1 + 0j
    for l in range(len(xs) - k + 1):
        if xs[l:l + k] == ws:
            total += p
        p *= zeta
    return complex(total)


@dataclass(frozen=True)
class KmerQuery:
    """Marker ``w``, frequency ``alpha`` in ``[-pi, pi]`` and bias budget ``eps``."""

    w: BitString
    alpha: float
    eps: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "w", as_bitstring(self.w))
        if len(self.w) < 1:
            raise ValueError("marker must be nonempty")
        if not (-math.pi <= self.alpha <= math.pi):
            raise ValueError(f"alpha must lie in [-pi, pi], got {self.alpha}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def k(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class KmerEstimate:
    """Result of :func:`estimate_kmer`.

    ``weights`` are the complex coefficients with ``value = sum_s weights[s] *
    per_suffix_means[s]``; ``per_suffix_sd`` are the per-suffix sample
    standard deviations.
    """

    value: complex
    n_traces: int
    per_suffix_means: np.ndarray
    stderr_proxy: float
    z_used: complex
    gamma_total: float
    k_prime: int
    alpha: float = 0.0
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    per_suffix_sd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias_budget: float = 0.0


def combination_weights(chan: "CompositeChannel | str", alpha: float, n_suffix: int) -> tuple[np.ndarray, complex]:
    """Complex weights ``c_s`` with ``E = sum_s c_s mu_s``, and ``z``.

    Raises
    ------
    PoleError
        If the frequency hits a pole of ``G^{-1}``.
    """
    chan = as_channel(chan)
    g = composite_gf(chan)
    zeta = cmath.exp(1j * alpha) if alpha != 0.0 else 1 + 0j
    z = inverse_gf_eval(chan, alpha)
    c0 = complex(gf_eval(g, 0.0))
    if abs(1.0 - z) < 1e-12:
        deriv = (g.a * g.d - g.b * g.c) / (g.c + g.d) ** 2
        a = deriv / (1.0 - c0)
    else:
        a = (1.0 - zeta) / ((1.0 - z) * (1.0 - c0))
    scale = zeta / (a * (zeta - c0))
    pw = np.empty(max(n_suffix, 1), dtype=complex)
    cur = 1 + 0j
    for s in range(pw.size):
        pw[s] = cur
        cur *= z
    w = scale * pw
    w[0] -= c0 / (zeta - c0)
    return w[:n_suffix], complex(z)


@dataclass(frozen=True)
class KmerSuffixStats:
    """Suffix means and spreads of all ``2**k`` marker indicators.

    ``means[s, c]`` and ``sds[s, c]`` refer to suffix ``s`` (zero-based start)
    and marker code ``c``.  Built from a single set of QP draws.
    """

    chan: CompositeChannel
    k: int
    eps: float
    means: np.ndarray
    sds: np.ndarray
    n_traces: int
    gamma_total: float
    k_prime: int

    def estimate(self, code: int, alpha: float) -> KmerEstimate:
        """Estimate for marker ``code`` at frequency ``alpha``."""
        w, z = combination_weights(self.chan, alpha, self.means.shape[0])
        mu = self.means[:, code]
        sd = self.sds[:, code]
        value = complex(np.sum(w * mu))
        aw = np.abs(w)
        stderr = float(np.sum(aw * sd) / math.sqrt(self.n_traces))
        return KmerEstimate(value, self.n_traces, mu.copy(), stderr, z, self.gamma_total, self.k_prime,
                            alpha, w, sd.copy(), float(self.eps * aw.sum()))

    def estimate_all(self, alpha: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Values, stderr proxies and bias budgets for every marker code."""
        w, _ = combination_weights(self.chan, alpha, self.means.shape[0])
        vals = w @ self.means
        aw = np.abs(w)
        se = (aw @ self.sds) / math.sqrt(self.n_traces)
        bias = np.full(vals.shape, self.eps * aw.sum())
        return vals, se, bias


def kmer_suffix_stats(traces, chan: "CompositeChannel | str", k: int, eps: float = 0.01,
                      rng=None, workers: int = 1) -> KmerSuffixStats:
    """Lift the length-``k`` markers and average them over every suffix.

    High deletion stages are split first (``delta < 1/3`` per stage).
    """
    chan = as_channel(chan)
    oracle = lift_composite(marker_indicator("0" * k), split_channel(chan), eps)
    sums = suffix_sums(oracle, traces, seed=rng, workers=workers)
    return _stats_from_sums(chan, k, eps, sums, oracle)


def _stats_from_sums(chan: CompositeChannel, k: int, eps: float, sums: SuffixSums,
                     oracle: QPOracle) -> KmerSuffixStats:
    eye = np.eye(2 ** k)
    means = sums.means(eye)
    sds = sums.stds(eye)
    return KmerSuffixStats(chan, k, eps, means, sds, sums.n_traces, oracle.total_gamma, oracle.k_prime)


def estimate_kmer(traces, chan: "CompositeChannel | str", query: KmerQuery, rng=None,
                  workers: int = 1) -> KmerEstimate:
    """Estimate ``K(x, w, e^{i alpha})`` from traces of ``x``.

    Raises
    ------
    ValueError
        If ``traces`` is empty.
    PoleError
        If the frequency hits a pole of the inverse length GF.
    """
    stats = kmer_suffix_stats(traces, chan, query.k, query.eps, rng, workers)
    return stats.estimate(as_bitstring(query.w).to_int(), query.alpha)


def estimate_all_markers(traces, chan: "CompositeChannel | str", k: int, alpha: float, eps: float = 0.01,
                         rng=None, workers: int = 1) -> dict[str, KmerEstimate]:
    """Estimates for every marker of length ``k`` from one set of QP draws."""
    stats = kmer_suffix_stats(traces, chan, k, eps, rng, workers)
    return {str(BitString.from_int(c, k)): stats.estimate(c, alpha) for c in range(2 ** k)}


def kmer_stderr(estimate: KmerEstimate) -> float:
    """Standard-error proxy ``sum_s |c_s| sd_s / sqrt(N)``.

    Raises
    ------
    ValueError
        With fewer than two traces.
    """
    if estimate.n_traces < 2:
        raise ValueError("standard error needs at least two traces")
    return float(np.sum(np.abs(estimate.weights) * estimate.per_suffix_sd) / math.sqrt(estimate.n_traces))
