"""Signed prefix estimators that undo a channel (QP oracles).

A base oracle ``f`` reads the first ``k`` bits of a string.  Lifting ``f``
through a channel ``C`` yields ``g`` reading ``k' >= k`` bits such that
``E[g(C(x))] ≈ f(x)`` for every input ``x``.  Each layer draws one signed
error operation per output position:

* deletion: ``j ~ Geom((1-2δ)/(1-δ))`` extra bits are deleted at the current
  position; the layer reads at most ``k'`` bits and returns 0 when the total
  number of extra deletions exceeds ``k' - k``;
* insertion: with probability ``η/(1+η)`` a uniform bit is inserted before
  the current position (only while the position lies inside the string);
* symmetry: with probability ``σ`` the current bit is flipped.

The signed weight is ``γ^k`` times ``(-1)`` to the number of nonzero
(odd, for deletion) draws.  For a composite channel the last-applied stage is
undone first, i.e. its layer is outermost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from ._random import PURPOSE, block_seed, draw_seed, run_blocks
from .channels import (BitString, ChannelSpec, CompositeChannel, Deletion, Insertion, as_bitstring,
                       as_channel, as_traceset)
from .quasiprob import closed_form_gamma

__all__ = [
    "OracleFn",
    "QPLayer",
    "QPOracle",
    "buffer_width",
    "lift_single",
    "lift_composite",
    "geometric_tail_bound",
    "eval_qp",
    "table_oracle",
    "SuffixSums",
    "suffix_sums",
]

DELTA_SPLIT = 1.0 / 3.0


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleFn:
    """Bounded function of the first ``k`` bits of a string.

    Parameters
    ----------
    k : int
        Number of bits read.
    C : float
        Bound on ``|f|``.
    table : ndarray, optional
        Values on all ``2**k`` prefixes indexed by :meth:`BitString.to_int`.
        Table oracles are deterministic and usable in compiled kernels.
    evaluator : callable, optional
        ``evaluator(bits, rng) -> float`` for randomized oracles.
    """

    k: int
    C: float
    table: Optional[np.ndarray] = None
    evaluator: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("input width must be nonnegative")
        if self.table is None and self.evaluator is None:
            raise ValueError("an oracle needs a value table or an evaluator")
        if self.table is not None:
            t = np.array(self.table, dtype=float)
            if t.shape != (2 ** self.k,):
                raise ValueError(f"table must have 2**k = {2 ** self.k} entries")
            if np.any(np.abs(t) > self.C * (1 + 1e-12)):
                raise ValueError("table values exceed the bound C")
            t.flags.writeable = False
            object.__setattr__(self, "table", t)

    @property
    def deterministic(self) -> bool:
        return self.table is not None

    def __call__(self, x: "BitString | str", rng=None) -> float:
        """Evaluate on a string; inputs shorter than ``k`` give 0."""
        bits = as_bitstring(x).bits
        if bits.size < self.k:
            return 0.0
        if self.table is not None:
            return float(self.table[_code(bits[: self.k])])
        v = float(self.evaluator(bits[: self.k], rng))
        if abs(v) > self.C * (1 + 1e-12):
            raise ValueError("oracle evaluator exceeded its bound")
        return v


def _code(bits: np.ndarray) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def table_oracle(table: Sequence[float], C: float | None = None) -> OracleFn:
    """Deterministic oracle from its value table over ``{0,1}^k``."""
    t = np.asarray(table, dtype=float)
    k = int(round(math.log2(t.size)))
    return OracleFn(k, float(np.abs(t).max()) if C is None else C, t)


# ---------------------------------------------------------------------------
# Widths and tails
# ---------------------------------------------------------------------------


def buffer_width(spec: ChannelSpec, k: int, eps: float) -> int:
    """Number of input bits the lifted oracle may read.

    Deletion: ``ceil(k + 4δ/(1-2δ) k + 4δ/(1-δ) (ln(1/(1-2δ)) k + ln(1/ε)))``;
    insertion and symmetry: ``k``.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not isinstance(spec, Deletion):
        return int(k)
    d = spec.delta
    if d >= 0.5:
        raise ValueError(f"deletion probability {d} >= 1/2; split the channel first")
    if d == 0.0:
        return int(k)
    val = k + 4 * d / (1 - 2 * d) * k + 4 * d / (1 - d) * (math.log(1 / (1 - 2 * d)) * k + math.log(1 / eps))
    return int(math.ceil(val - 1e-12))


def geometric_tail_bound(p: float, k: int, delta_cap: float) -> float:
    """Bound ``e^{-cΔ}``, ``c = min(1, p/(4(1-p)))``, on the geometric-sum tail.

    Bounds ``P[sum of k Geom(p) > 4 (1-p)/p k + Δ]``.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if k < 1 or delta_cap < 0:
        raise ValueError("need k >= 1 and delta_cap >= 0")
    c = min(1.0, p / (4.0 * (1.0 - p)))
    return math.exp(-c * delta_cap)


# ---------------------------------------------------------------------------
# Layered oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QPLayer:
    """One channel-inverting layer.

    ``inner_width`` is the width of the oracle it wraps and ``outer_width``
    the number of bits it reads.
    """

    spec: ChannelSpec
    inner_width: int
    outer_width: int
    gamma_layer: float
    eps_layer: float

    @property
    def kind(self) -> int:
        return self.spec.kind

    @property
    def cap(self) -> int:
        """Maximum total number of extra deletions (deletion layers)."""
        return self.outer_width - self.inner_width

    @property
    def draw_param(self) -> float:
        """Parameter of the normalized draw used by the kernels.

        Deletion: ratio ``ρ = δ/(1-δ)`` of ``P[j] = ρ^j (1-ρ)``; insertion:
        ``η/(1+η)``; symmetry: ``σ``.
        """
        s = self.spec
        if isinstance(s, Deletion):
            return s.delta / (1.0 - s.delta)
        if isinstance(s, Insertion):
            return s.eta / (1.0 + s.eta)
        return s.sigma


@dataclass(frozen=True)
class QPOracle:
    """Base oracle wrapped by layers, stored outermost first.

    The outermost layer acts first on the trace.  ``k_prime`` is its outer
    width; ``total_gamma`` is the product over layers of
    ``gamma_layer ** inner_width`` and ``bound = base.C * total_gamma``.
    """

    layers: tuple
    base: OracleFn
    total_gamma: float
    k_prime: int
    bound: float

    # OracleFn-like interface so lifted oracles can be lifted again.
    @property
    def k(self) -> int:
        return self.k_prime

    @property
    def C(self) -> float:
        return self.bound

    @property
    def eps_total(self) -> float:
        return float(sum(l.eps_layer for l in self.layers))

    def layer_arrays(self) -> tuple[np.ndarray, ...]:
        kinds = np.array([l.kind for l in self.layers], dtype=np.int64)
        params = np.array([l.draw_param for l in self.layers], dtype=np.float64)
        inner = np.array([l.inner_width for l in self.layers], dtype=np.int64)
        outer = np.array([l.outer_width for l in self.layers], dtype=np.int64)
        return kinds, params, inner, outer

    def __call__(self, x: "BitString | str", rng=None) -> float:
        return eval_qp(self, x, rng)


def _wrap(inner: "OracleFn | QPOracle", spec: ChannelSpec, eps: float) -> QPOracle:
    if isinstance(inner, QPOracle):
        base, layers, tg = inner.base, inner.layers, inner.total_gamma
    else:
        base, layers, tg = inner, (), 1.0
    k = inner.k
    if spec.param == 0.0:
        # zero-noise stages are identity layers
        return QPOracle(layers, base, tg, k, base.C * tg)
    width = buffer_width(spec, k, eps)
    g = closed_form_gamma(spec)
    layer = QPLayer(spec, k, width, g, eps)
    tg = tg * g ** k
    return QPOracle((layer,) + tuple(layers), base, tg, width, base.C * tg)


def lift_single(f: "OracleFn | QPOracle", spec: ChannelSpec, eps: float) -> QPOracle:
    """Wrap ``f`` with one channel-inverting layer (Algorithm-1 style).

    Raises
    ------
    ValueError
        If ``spec`` is a deletion with ``δ >= 1/2``.
    """
    if isinstance(spec, Deletion) and spec.delta >= 0.5:
        raise ValueError(f"deletion probability {spec.delta} >= 1/2; split the channel first")
    return _wrap(f, spec, eps)


def lift_composite(f: "OracleFn | QPOracle", chan: "CompositeChannel | str",
                   eps_total: float) -> QPOracle:
    """Lift ``f`` through every stage of ``chan``.

    The first-applied stage becomes the innermost layer, so the last-applied
    stage is undone first on the trace.  The budget is split equally.
    """
    chan = as_channel(chan)
    for s in chan.stages:
        if isinstance(s, Deletion) and s.delta >= DELTA_SPLIT:
            raise ValueError(f"deletion stage {s.delta} >= 1/3 must be split first (split_channel)")
    eps_layer = eps_total / len(chan.stages)
    g = f
    for s in chan.stages:
        g = _wrap(g, s, eps_layer)
    if isinstance(g, OracleFn):
        g = QPOracle((), g, 1.0, g.k, g.C)
    return g


# ---------------------------------------------------------------------------
# Compiled evaluation
# ---------------------------------------------------------------------------


@njit(cache=True)
def _geom(rho: float) -> int:
    if rho <= 0.0:
        return 0
    u = 1.0 - np.random.random()
    return int(math.floor(math.log(u) / math.log(rho)))


@njit(cache=True)
def _transform(src, start, n, read, kinds, params, inner, outer, a, b):
    """Run all layers (outermost first) on ``src[start:start+n]``.

    At most ``read`` bits are read; ``a`` and ``b`` hold ``read + 1`` bytes.

    The final string is left in ``a``.  Returns ``(length, parity)``;
    ``length == -1`` signals an overflow (the estimator returns 0).
    """
    m = min(n, read)
    for i in range(m):
        a[i] = src[start + i]
    parity = 0
    for l in range(kinds.shape[0]):
        kind = kinds[l]
        p = params[l]
        k = inner[l]
        if kind == 0:
            cap = outer[l] - k
            c = 0
            out = 0
            for i in range(k):
                j = _geom(p)
                c += j
                parity ^= j & 1
                if c > cap:
                    return -1, 0
                idx = i + c
                if idx < m:
                    b[out] = a[idx]
                    out += 1
        elif kind == 1:
            ins = 0
            out = 0
            for i in range(k):
                j = 1 if np.random.random() < p else 0
                parity ^= j
                if i - ins < m:
                    if j == 1:
                        b[out] = 1 if np.random.random() < 0.5 else 0
                        ins += 1
                    else:
                        b[out] = a[i - ins]
                    out += 1
        else:
            out = 0
            for i in range(k):
                j = 1 if np.random.random() < p else 0
                parity ^= j
                if i < m:
                    b[out] = a[i] ^ j
                    out += 1
        m = out
        for i in range(m):
            a[i] = b[i]
    return m, parity


@njit(cache=True, nogil=True)
def _suffix_block(data, offsets, t0, t1, n_suffix, k, kinds, params, inner, outer, seed, width):
    """Signed counts of transformed ``k``-bit prefixes for every suffix.

    ``pos[s, c]`` and ``neg[s, c]`` count evaluations on suffix ``s`` whose
    output prefix has code ``c`` with sign +1 and -1 respectively.
    """
    np.random.seed(seed)
    ncode = 1 << k
    pos = np.zeros((n_suffix, ncode), dtype=np.int64)
    neg = np.zeros((n_suffix, ncode), dtype=np.int64)
    a = np.empty(width + 1, dtype=np.uint8)
    b = np.empty(width + 1, dtype=np.uint8)
    for t in range(t0, t1):
        s0 = offsets[t]
        ln = offsets[t + 1] - s0
        top = min(ln, n_suffix)
        for s in range(top):
            m, parity = _transform(data, s0 + s, ln - s, width, kinds, params, inner, outer, a, b)
            if m < k:
                continue
            c = 0
            for i in range(k):
                c = (c << 1) | a[i]
            if parity == 0:
                pos[s, c] += 1
            else:
                neg[s, c] += 1
    return pos, neg


@njit(cache=True)
def _single(bits, kinds, params, inner, outer, seed, width):
    np.random.seed(seed)
    a = np.empty(width + 1, dtype=np.uint8)
    b = np.empty(width + 1, dtype=np.uint8)
    m, parity = _transform(bits, 0, bits.shape[0], width, kinds, params, inner, outer, a, b)
    return a[:max(m, 0)].copy(), m, parity


def eval_qp(oracle: QPOracle, trace: "BitString | str", rng=None) -> float:
    """One randomized evaluation of the lifted oracle on ``trace``.

    Returns ``f(modified prefix) * total_gamma * (±1)``, or 0 on overflow or
    when the modified string is shorter than ``f.k``.
    """
    bits = np.ascontiguousarray(as_bitstring(trace).bits)
    kinds, params, inner, outer = oracle.layer_arrays()
    seed = block_seed(draw_seed(rng), PURPOSE["single"], 0)
    width = max(int(oracle.k_prime), 1)
    out, m, parity = _single(bits, kinds, params, inner, outer, seed, width)
    base = oracle.base
    if m < base.k:
        return 0.0
    val = base(BitString(out[: base.k]), rng) if base.table is None else float(base.table[_code(out[: base.k])])
    return val * oracle.total_gamma * (-1.0 if parity else 1.0)


# ---------------------------------------------------------------------------
# Batched suffix sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuffixSums:
    """Signed evaluation counts over a trace set.

    For suffix ``s`` (zero-based start) and prefix code ``c``,
    ``pos[s, c] - neg[s, c]`` is the number of signed hits.  The suffix mean
    of any table oracle ``f`` is
    ``total_gamma * sum_c f[c] (pos - neg)[s, c] / n_traces``.
    """

    pos: np.ndarray
    neg: np.ndarray
    n_traces: int
    total_gamma: float
    k: int

    def means(self, table: np.ndarray) -> np.ndarray:
        t = np.asarray(table, dtype=float)
        return self.total_gamma * ((self.pos - self.neg) @ t) / self.n_traces

    def second_moments(self, table: np.ndarray) -> np.ndarray:
        t = np.asarray(table, dtype=float) ** 2
        return self.total_gamma ** 2 * ((self.pos + self.neg) @ t) / self.n_traces

    def stds(self, table: np.ndarray) -> np.ndarray:
        """Per-suffix sample standard deviation (divisor ``N - 1``)."""
        n = self.n_traces
        m1 = self.means(table)
        m2 = self.second_moments(table)
        var = np.maximum(m2 - m1 ** 2, 0.0) * n / max(n - 1, 1)
        return np.sqrt(var)


def suffix_sums(oracle: QPOracle, traces, seed: int | None = None, prefix_only: bool = False,
                workers: int = 1, purpose: str = "qp") -> SuffixSums:
    """Evaluate the layers of ``oracle`` on every suffix of every trace.

    One set of draws serves every table oracle sharing the same layers, so
    all markers of one length are estimated from the same evaluations.
    """
    ts = as_traceset(traces)
    if len(ts) == 0:
        raise ValueError("empty trace set")
    seed = draw_seed(seed)
    kinds, params, inner, outer = oracle.layer_arrays()
    k = oracle.base.k
    n_suffix = 1 if prefix_only else max(ts.max_length(), 1)
    width = max(int(oracle.k_prime), k, 1)
    pcode = PURPOSE[purpose]

    def block(bi, start, stop):
        return _suffix_block(ts.data, ts.offsets, start, stop, n_suffix, k, kinds, params, inner,
                             outer, block_seed(seed, pcode, bi), width)

    parts = run_blocks(block, len(ts), workers)
    pos = sum((p for p, _ in parts[1:]), parts[0][0].copy())
    neg = sum((q for _, q in parts[1:]), parts[0][1].copy())
    return SuffixSums(pos, neg, len(ts), oracle.total_gamma, k)
