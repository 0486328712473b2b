"""Exact finite-sum ground truth for channels and QP oracles.

Two independent engines are provided.

* Forward enumeration (:func:`channel_output_distribution`) lists every
  output string of a channel with its probability.  Insertion stages are
  enumerated up to a cap on the number of inserted bits and the missing
  probability is reported as ``tail_mass``.
* A lazy pull engine (:func:`exact_qp_expectation`) computes the exact
  expectation of a layered QP oracle over all channel randomness and all QP
  randomness.  Every stage is a pull transducer: the consumer asks for the
  next bit and the stage returns a weighted list of outcomes.  Bits are
  tracked by origin (input index or "random"), not by value, so the state
  space stays small; bit values are folded in at the end through a per-bit
  flip bias.  Random runs created by insertion channels give cycles in the
  deletion-channel loop, which are solved as a linear system.  QP deletion
  layers carry no skip counters when an insertion channel is present: their
  weights are kept as values on a grid of roots of unity and the truncation
  to the buffer width is applied once at the end, with the grid sized so the
  aliasing error stays below :data:`ALIAS_TOL`.  Insertion stages are capped
  at ``max_extra`` inserted bits when requested, with the dropped mass
  reported by :func:`insertion_tail`.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Sequence

import mpmath
import numpy as np
from scipy.stats import binom, nbinom

from .channels import (BitString, ChannelSpec, CompositeChannel, Deletion, Insertion, Symmetry,
                       as_bitstring, as_channel)
from .qp_oracle import OracleFn, QPLayer, QPOracle
from .quasiprob import StochasticMatrixChannel

__all__ = [
    "ExactDistribution",
    "channel_output_distribution",
    "exact_expectation",
    "exact_qp_expectation",
    "exact_qp_table",
    "exact_suffix_means",
    "insertion_tail",
    "matrix_form",
    "GuardError",
    "MAX_ENUM_LEN",
]

MAX_ENUM_LEN = 12
MAX_MATRIX_LEN = 8

RANDOM = -1
END = -2


class GuardError(ValueError):
    """A size guard of the exact oracle was exceeded."""


# ---------------------------------------------------------------------------
# Forward enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactDistribution:
    """Output distribution of a channel on one input.

    ``probs`` maps output strings (as ``str``) to probabilities;
    ``tail_mass`` is the probability not enumerated (insertion truncation).
    """

    probs: Dict[str, float]
    tail_mass: float = 0.0

    def __getitem__(self, s: "BitString | str") -> float:
        return self.probs.get(str(s), 0.0)

    def items(self):
        return self.probs.items()

    def total(self) -> float:
        return float(sum(self.probs.values()))


def _enum_stage(spec: ChannelSpec, dist: Dict[tuple, float], budget: int) -> Dict[tuple, float]:
    """Apply one stage; keys are ``(string, inserted_so_far)``."""
    out: Dict[tuple, float] = defaultdict(float)
    for (s, used), p in dist.items():
        n = len(s)
        if isinstance(spec, Symmetry):
            sg = spec.sigma
            for mask in itertools.product((0, 1), repeat=n):
                k = sum(mask)
                q = p * sg ** k * (1 - sg) ** (n - k)
                if q == 0.0:
                    continue
                t = "".join(str(int(c) ^ m) for c, m in zip(s, mask))
                out[(t, used)] += q
        elif isinstance(spec, Deletion):
            d = spec.delta
            for mask in itertools.product((0, 1), repeat=n):
                k = sum(mask)
                q = p * d ** k * (1 - d) ** (n - k)
                if q == 0.0:
                    continue
                t = "".join(c for c, m in zip(s, mask) if not m)
                out[(t, used)] += q
        else:
            eta = spec.eta
            partial: Dict[tuple, float] = {("", used): p}
            for c in s:
                nxt: Dict[tuple, float] = defaultdict(float)
                for (t, u), q in partial.items():
                    for m in range(0, budget - u + 1):
                        qm = q * eta ** m * (1 - eta) / 2 ** m
                        if qm == 0.0:
                            break
                        for bits in itertools.product("01", repeat=m):
                            nxt[(t + "".join(bits) + c, u + m)] += qm
                partial = nxt
            for key, q in partial.items():
                out[key] += q
    return out


def channel_output_distribution(chan: "CompositeChannel | str", x: "BitString | str",
                                max_extra: int = 6) -> ExactDistribution:
    """Exact output distribution by enumeration.

    Deletion and symmetry stages are enumerated completely; insertion stages
    together insert at most ``max_extra`` bits and the rest of the
    probability is reported as ``tail_mass``.
    """
    chan = as_channel(chan)
    x = as_bitstring(x)
    if len(x) > MAX_ENUM_LEN:
        raise GuardError(f"input length {len(x)} exceeds the enumeration guard {MAX_ENUM_LEN}")
    dist: Dict[tuple, float] = {(str(x), 0): 1.0}
    for spec in chan.stages:
        if max(len(s) for s, _ in dist) > MAX_ENUM_LEN + max_extra:
            raise GuardError("intermediate strings exceed the enumeration guard")
        dist = _enum_stage(spec, dist, max_extra)
    probs: Dict[str, float] = defaultdict(float)
    for (s, _), p in dist.items():
        probs[s] += p
    total = math.fsum(probs.values())
    return ExactDistribution(dict(probs), max(0.0, 1.0 - total))


# ---------------------------------------------------------------------------
# Deletion-layer tail weights
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _partial_sums(delta: float, m: int, bmax: int) -> np.ndarray:
    """``R[b] = sum_{j<=b} [z^j] Q(z)^m`` for ``b = 0..bmax``, ``Q = 1/((1-δ)+δz)``.

    ``R[b]`` is the total signed weight of ``m`` deletion draws whose sum is
    at most ``b``.  The coefficients alternate in sign and reach size
    ``γ^m``, so they are accumulated in extended precision.
    """
    if m == 0:
        return np.ones(bmax + 1)
    gamma = 1.0 / (1.0 - 2.0 * delta)
    dps = int(m * math.log10(gamma)) + 30
    with mpmath.workdps(dps):
        d = mpmath.mpf(delta)
        rho = d / (1 - d)
        c = (1 / (1 - d)) ** m
        acc = mpmath.mpf(0)
        out = np.empty(bmax + 1)
        for j in range(bmax + 1):
            if j > 0:
                c = c * (m + j - 1) / j * (-rho)
            acc += c
            out[j] = float(acc)
    return out


@lru_cache(maxsize=None)
def _end_weights(delta: float, m: int, budget: int) -> np.ndarray:
    """``S[t] = sum_{j=t}^{budget} q_j R_m(budget - j)`` for ``t = 0..budget``.

    Weight of the current draw being at least ``t`` and the remaining ``m``
    draws fitting the leftover budget.
    """
    gamma = 1.0 / (1.0 - 2.0 * delta)
    dps = int((m + 1) * math.log10(gamma)) + 30
    with mpmath.workdps(dps):
        d = mpmath.mpf(delta)
        rho = d / (1 - d)
        # R_m in extended precision
        if m == 0:
            R = [mpmath.mpf(1)] * (budget + 1)
        else:
            R = []
            c = (1 / (1 - d)) ** m
            acc = mpmath.mpf(0)
            for j in range(budget + 1):
                if j > 0:
                    c = c * (m + j - 1) / j * (-rho)
                acc += c
                R.append(acc)
        q = [(1 / (1 - d)) * (-rho) ** j for j in range(budget + 1)]
        S = [mpmath.mpf(0)] * (budget + 2)
        for t in range(budget, -1, -1):
            S[t] = S[t + 1] + q[t] * R[budget - t]
        return np.array([float(v) for v in S[: budget + 1]])


def _q_del(delta: float, j: int) -> float:
    return (1.0 / (1.0 - delta)) * (-delta / (1.0 - delta)) ** j


# ---------------------------------------------------------------------------
# Pull engine
# ---------------------------------------------------------------------------


ALIAS_TOL = 1e-13
MAX_GRID = 1 << 14


def _grid(delta: float, width: int, cap: int, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation points for a deletion layer whose skip total is a power series in ``z``.

    Returns ``(z, phi)``: the points ``exp(2πij/N)`` for ``j = 0..N/2`` and
    weights with ``Re(phi @ w(z)) = sum_{d<=cap} [z^d] w`` for any series
    ``w`` with real coefficients whose mass at degrees ``>= N`` is
    negligible.  ``N`` is chosen from a majorant of the layer's weights,
    ``scale * (sum_t |q_t| R^t / |Q(R)|)^width``, evaluated at radii ``R``
    inside the convergence disc, so that aliased mass stays below
    :data:`ALIAS_TOL`.
    """
    rho = delta / (1.0 - delta)
    need = 2 * (cap + 1)
    if rho > 0:
        best = math.inf
        for R in 1.0 + (1.0 / rho - 1.0) * np.linspace(0.05, 0.95, 19):
            per = ((1.0 - delta) + delta * R) / ((1.0 - delta) * (1.0 - rho * R))
            log_mass = math.log(scale) + width * math.log(per) - math.log(ALIAS_TOL)
            best = min(best, log_mass / math.log(R))
        need = max(need, best)
    N = 1 << max(6, math.ceil(math.log2(need)))
    if N > MAX_GRID:
        raise GuardError(f"evaluation grid of size {N} exceeds the guard {MAX_GRID}")
    j = np.arange(N // 2 + 1)
    z = np.exp(2j * np.pi * j / N)
    phi = np.exp(-2j * np.pi * np.outer(j, np.arange(cap + 1)) / N).sum(axis=1) / N
    phi[1:N // 2] *= 2.0
    return z, phi


class _Engine:
    """Lazy pull transducer chain: source, channel stages, optional skip, QP layers.

    ``pull(c, st)`` returns ``{(origin, new_state_prefix): weight}`` for the
    next bit emitted by component ``c`` given the states of components
    ``0..c``.

    When an insertion channel feeds the layers, the deletion layer nearest
    the channel is vectorized.  Its running skip total ``D`` leaves the state
    and every weight downstream becomes a power series in ``z`` graded by
    ``D``.  Overflow only depends on the final total, so truncation at the
    cap is deferred to a single linear functional at the end, and series are
    carried as values on roots of unity (see :func:`_grid`), which turns
    products into pointwise products.  Unconsumed draws are accounted for by
    starting from ``Q(z)^width``, the full series of every draw, and
    dividing by ``Q(z)`` whenever a draw is consumed, so the layer needs no
    position counter either.  Random runs of arbitrary length then leave the
    state space unchanged.
    """

    def __init__(self, L: int, stages: Sequence[ChannelSpec], layers: Sequence[QPLayer], skip: int = 0,
                 max_extra: int | None = None):
        self.L = L
        self.max_extra = max_extra
        self.comps: list[tuple] = [("src", None)]
        for s in stages:
            if s.param == 0.0:
                continue
            self.comps.append(("ch", s))
        if skip:
            self.comps.append(("skip", skip))
        for l in layers:
            self.comps.append(("qp", l))
        self.memo: list[dict] = [dict() for _ in self.comps]
        self.steps: dict = {}
        self.vec = None
        if any(kind == "ch" and isinstance(o, Insertion) for kind, o in self.comps):
            for c, (kind, o) in enumerate(self.comps):
                if kind == "qp" and isinstance(o.spec, Deletion) and o.cap > 0:
                    self.vec = c
                    break
        if self.vec is not None:
            lay = self.comps[self.vec][1]
            d, cap = lay.spec.delta, lay.cap
            scale = 1.0
            for kind, o in self.comps:
                if kind == "qp" and o is not lay:
                    scale *= o.gamma_layer ** o.inner_width
            z, self.phi = _grid(d, lay.inner_width, cap, scale)
            rho = d / (1.0 - d)
            inv_q = (1.0 - d) + d * z
            powers = (-rho * z)[None, :] ** np.arange(cap + 1)[:, None] / (1.0 - d)
            self.emit_w = powers * inv_q
            self.end_w = powers * (inv_q / (1.0 + rho * z))
            self.start = inv_q ** (-lay.inner_width)
            self.one = np.ones(len(z), dtype=complex)
        else:
            self.start = 1.0
            self.one = 1.0

    def unit(self, c: int):
        return self.one if self.vec is not None and c >= self.vec else 1.0

    @staticmethod
    def mul(a, b):
        return a * b

    def initial(self) -> tuple:
        st = []
        for c, (kind, obj) in enumerate(self.comps):
            if kind == "src":
                st.append(0)
            elif kind == "ch":
                st.append((None, 0) if isinstance(obj, Insertion) else None)
            elif kind == "skip":
                st.append(obj)
            elif c == self.vec:
                st.append(None)
            else:
                st.append((0, 0) if isinstance(obj.spec, Deletion) else None)
        return tuple(st)

    def pull(self, c: int, st: tuple) -> dict:
        memo = self.memo[c]
        r = memo.get(st)
        if r is None:
            r = self._pull(c, st)
            memo[st] = r
        return r

    def _pull(self, c: int, st: tuple) -> dict:
        kind, obj = self.comps[c]
        me = st[-1]
        up = st[:-1]
        out: dict = defaultdict(float)
        if kind == "src":
            if me < self.L:
                out[(me, (me + 1,))] = 1.0
            else:
                out[(END, (me,))] = 1.0
            return out
        if kind == "skip":
            if me == 0:
                for (o, u2), w in self.pull(c - 1, up).items():
                    out[(o, u2 + (0,))] += w
                return out
            frontier = {up: 1.0}
            for _ in range(me):
                nxt: dict = defaultdict(float)
                for u, w in frontier.items():
                    for (o, u2), w2 in self.pull(c - 1, u).items():
                        if o == END:
                            out[(END, u2 + (0,))] += w * w2
                        else:
                            nxt[u2] += w * w2
                frontier = nxt
            for u, w in frontier.items():
                for (o, u2), w2 in self.pull(c - 1, u).items():
                    out[(o, u2 + (0,))] += w * w2
            return out
        if kind == "ch":
            if isinstance(obj, Symmetry):
                for (o, u2), w in self.pull(c - 1, up).items():
                    out[(o, u2 + (None,))] += w
                return out
            if isinstance(obj, Insertion):
                eta = obj.eta
                pend, used = me
                more = self.max_extra is None or used < self.max_extra
                nused = used + 1 if self.max_extra is not None else 0
                if pend is None:
                    for (o, u2), w in self.pull(c - 1, up).items():
                        if o == END:
                            out[(END, u2 + ((None, used),))] += w
                        else:
                            if more:
                                out[(RANDOM, u2 + ((o, nused),))] += w * eta
                            out[(o, u2 + ((None, used),))] += w * (1 - eta)
                else:
                    if more:
                        out[(RANDOM, up + ((pend, nused),))] += eta
                    out[(pend, up + ((None, used),))] += 1 - eta
                return out
            return self._pull_deletion_channel(c, up, obj.delta)
        if c == self.vec:
            return self._pull_vector_layer(c, up, me, obj)
        return self._pull_layer(c, up, me, obj)

    def _pull_deletion_channel(self, c: int, up: tuple, delta: float) -> dict:
        """Keep pulling until a bit survives; cycles are solved exactly."""
        index = {up: 0}
        nodes = [up]
        terms: list[dict] = []
        edges: list[dict] = []
        i = 0
        while i < len(nodes):
            u = nodes[i]
            t: dict = defaultdict(float)
            e: dict = defaultdict(float)
            for (o, u2), w in self.pull(c - 1, u).items():
                if o == END:
                    t[(END, u2 + (None,))] += w
                else:
                    t[(o, u2 + (None,))] += w * (1 - delta)
                    if u2 not in index:
                        index[u2] = len(nodes)
                        nodes.append(u2)
                    e[index[u2]] += w * delta
            terms.append(t)
            edges.append(e)
            i += 1
        n = len(nodes)
        acyclic = all(j > a for a in range(n) for j in edges[a])
        if acyclic:
            sol: list[dict] = [None] * n
            for a in range(n - 1, -1, -1):
                acc = defaultdict(float, terms[a])
                for j, w in edges[a].items():
                    for key, v in sol[j].items():
                        acc[key] += w * v
                sol[a] = acc
            return sol[0]
        keys = sorted({key for t in terms for key in t}, key=repr)
        kidx = {key: j for j, key in enumerate(keys)}
        A = np.eye(n)
        B = np.zeros((n, len(keys)))
        for a in range(n):
            for j, w in edges[a].items():
                A[a, j] -= w
            for key, w in terms[a].items():
                B[a, kidx[key]] += w
        X = np.linalg.solve(A, B)
        return {key: X[0, j] for j, key in enumerate(keys) if X[0, j] != 0.0}

    def _pull_vector_layer(self, c: int, up: tuple, me, layer: QPLayer) -> dict:
        """Deletion layer whose skip total is carried by the series variable."""
        out: dict = {}
        if me == "E":
            out[(END, up + ("E",))] = self.one
            return out
        cap = layer.cap
        coef: dict = {}
        frontier = {up: 1.0}
        for t in range(cap + 1):
            nxt: dict = defaultdict(float)
            for u, w in frontier.items():
                for (o, u2), w2 in self.pull(c - 1, u).items():
                    ww = w * w2
                    key = (END, u2 + ("E",)) if o == END else (o, u2 + (None,))
                    row = coef.get(key)
                    if row is None:
                        row = coef[key] = np.zeros(cap + 1)
                    row[t] += ww
                    if o != END and t < cap:
                        nxt[u2] += ww
            frontier = nxt
            if not frontier:
                break
        for key, row in coef.items():
            out[key] = row @ (self.end_w if key[0] == END else self.emit_w)
        return out

    def _pull_layer(self, c: int, up: tuple, me, layer: QPLayer) -> dict:
        out: dict = defaultdict(float)
        spec = layer.spec
        one = self.unit(c)
        if me == "E":
            out[(END, up + ("E",))] = one
            return out
        # Symmetry and insertion layers act on every position their consumer
        # reads, which never exceeds their inner width, so they keep no
        # position counter.  An insertion layer remembers a pending bit.
        if isinstance(spec, Symmetry):
            for (o, u2), w in self.pull(c - 1, up).items():
                if o == END:
                    out[(END, u2 + ("E",))] += w
                else:
                    out[(o, u2 + (None,))] += w
            return out
        if isinstance(spec, Insertion):
            eta = spec.eta
            q0, q1 = 1.0 / (1.0 - eta), -eta / (1.0 - eta)
            if me is None:
                for (o, u2), w in self.pull(c - 1, up).items():
                    if o == END:
                        out[(END, u2 + ("E",))] += w
                    else:
                        out[(RANDOM, u2 + (o,))] += w * q1
                        out[(o, u2 + (None,))] += w * q0
            else:
                out[(RANDOM, up + (me,))] += one * q1
                out[(me, up + (None,))] += one * q0
            return out
        # deletion layer
        delta = spec.delta
        i, D = me
        cap = layer.cap
        budget = cap - D
        S = _end_weights(delta, layer.inner_width - i - 1, budget)
        for t, (emitted, ended) in enumerate(self._steps(c, up, cap)[: budget + 1]):
            qt = _q_del(delta, t)
            for (o, u2), w in emitted.items():
                out[(o, u2 + ((i + 1, D + t),))] += w * qt
            for u2, w in ended.items():
                out[(END, u2 + ("E",))] += w * S[t]
        return out

    def _steps(self, c: int, up: tuple, cap: int) -> list:
        """Per skip count ``t``: bits emitted after skipping ``t`` bits, and runs that end.

        Independent of the layer's own counters, so it is shared by every
        state of the layer with the same upstream state.
        """
        key = (c, up)
        got = self.steps.get(key)
        if got is not None:
            return got
        res = []
        frontier = {up: self.unit(c)}
        for t in range(cap + 1):
            emitted: dict = defaultdict(float)
            ended: dict = defaultdict(float)
            nxt: dict = defaultdict(float)
            for u, w in frontier.items():
                for (o, u2), w2 in self.pull(c - 1, u).items():
                    ww = self.mul(w, w2)
                    if o == END:
                        ended[u2] += ww
                    else:
                        emitted[(o, u2)] += ww
                        if t < cap:
                            nxt[u2] += ww
            res.append((emitted, ended))
            frontier = nxt
            if not frontier:
                break
        self.steps[key] = res
        return res

    def closing(self, st: tuple, w) -> float:
        """Apply the weight of deletion-layer draws that were never consumed."""
        f = 1.0
        for c, ((kind, obj), s) in enumerate(zip(self.comps, st)):
            if kind != "qp" or not isinstance(obj.spec, Deletion) or c == self.vec or s == "E":
                continue
            i, D = s
            m = obj.inner_width - i
            if m > 0:
                f *= _partial_sums(obj.spec.delta, m, obj.cap)[obj.cap - D]
        if self.vec is not None:
            return f * float(np.real(np.dot(self.phi, w)))
        return f * w


def insertion_tail(chan: "CompositeChannel | str", L: int, max_extra: int | None) -> float:
    """Upper bound on the probability that some insertion stage inserts more than ``max_extra`` bits.

    Union bound over insertion stages; each term is exact given the length
    distribution of the stage input, which is tracked up to a cutoff whose
    overflow counts as a failure.
    """
    chan = as_channel(chan)
    if max_extra is None:
        return 0.0
    cutoff = 4 * (L + 1) * (len(chan) + 1) + 4 * max_extra + 64
    dist = np.zeros(cutoff + 1)
    dist[L] = 1.0
    lost = 0.0
    tail = 0.0
    for s in chan.stages:
        if s.param == 0.0 or isinstance(s, Symmetry):
            continue
        nxt = np.zeros(cutoff + 1)
        if isinstance(s, Deletion):
            for n in np.nonzero(dist)[0]:
                nxt[: n + 1] += dist[n] * binom.pmf(np.arange(n + 1), n, 1.0 - s.delta)
        else:
            for n in np.nonzero(dist)[0]:
                if n == 0:
                    nxt[0] += dist[0]
                    continue
                extra = np.arange(cutoff - n + 1)
                pm = nbinom.pmf(extra, n, 1.0 - s.eta)
                nxt[n:] += dist[n] * pm
                lost += dist[n] * max(0.0, 1.0 - pm.sum())
                tail += dist[n] * float(nbinom.sf(max_extra, n, 1.0 - s.eta))
        dist = nxt
    return min(1.0, tail + lost)


def _origin_weights(L: int, chan: CompositeChannel, layers: Sequence[QPLayer], k: int,
                    skip: int = 0, max_extra: int | None = None) -> dict:
    """Signed weight of every tuple of origins for the first ``k`` output bits."""
    eng = _Engine(L, chan.stages, layers, skip, max_extra)
    top = len(eng.comps) - 1
    dist: dict = {((), eng.initial()): eng.start}
    for _ in range(k):
        nxt: dict = defaultdict(float)
        for (orig, st), w in dist.items():
            for (o, st2), w2 in eng.pull(top, st).items():
                if o == END:
                    continue
                nxt[(orig + (o,), st2)] += eng.mul(w, w2)
        dist = nxt
    res: dict = defaultdict(float)
    for (orig, st), w in dist.items():
        res[orig] += eng.closing(st, w)
    return res


def _flip_bias(chan: CompositeChannel, layers: Sequence[QPLayer]) -> float:
    """Correlation between an input bit and its copy at the base."""
    b = 1.0
    for s in chan.stages:
        if isinstance(s, Symmetry):
            b *= 1.0 - 2.0 * s.sigma
    for l in layers:
        if isinstance(l.spec, Symmetry):
            b /= 1.0 - 2.0 * l.spec.sigma
    return b


def _expectation_matrix(weights: dict, L: int, k: int, beta: float, xs: np.ndarray) -> np.ndarray:
    """``P[x, v]``: signed weight that the base sees prefix code ``v`` on input ``x``.

    ``xs`` has shape ``(n_inputs, L)``.
    """
    n = xs.shape[0]
    P = np.zeros((n, 2 ** k))
    vbits = np.array([[(v >> (k - 1 - i)) & 1 for i in range(k)] for v in range(2 ** k)], dtype=np.int64)
    for orig, w in weights.items():
        prob = np.full((n, 2 ** k), w)
        for i, o in enumerate(orig):
            if o == RANDOM:
                prob *= 0.5
            else:
                sgn = 1 - 2 * (xs[:, o][:, None] ^ vbits[None, :, i])
                prob *= 0.5 * (1.0 + beta * sgn)
        P += prob
    return P


def _all_strings(L: int) -> np.ndarray:
    if L == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product((0, 1), repeat=L)), dtype=np.int64)


def _split_oracle(oracle: "QPOracle | OracleFn") -> tuple[tuple, OracleFn]:
    if isinstance(oracle, QPOracle):
        return oracle.layers, oracle.base
    return (), oracle


def _oracle_bound(oracle: "QPOracle | OracleFn") -> float:
    return float(oracle.bound) if isinstance(oracle, QPOracle) else float(oracle.C)


def exact_qp_table(oracle: "QPOracle | OracleFn", chan: "CompositeChannel | str", L: int,
                   max_extra: int | None = None) -> np.ndarray:
    """Exact expectations for every input of length ``L`` and every base prefix.

    Returns ``T`` with ``T[x_code, v]`` the exact expectation of the lifted
    estimator when the base oracle is the indicator of prefix ``v``.  The
    expectation for a general table ``f`` is ``T @ f``.  With an integer
    ``max_extra`` every insertion channel stage inserts at most that many
    bits; see :func:`insertion_tail` for the dropped probability.
    """
    chan = as_channel(chan)
    layers, base = _split_oracle(oracle)
    if L > MAX_ENUM_LEN:
        raise GuardError(f"input length {L} exceeds the guard {MAX_ENUM_LEN}")
    k = base.k
    w = _origin_weights(L, chan, layers, k, max_extra=max_extra)
    return _expectation_matrix(w, L, k, _flip_bias(chan, layers), _all_strings(L))


def exact_qp_expectation(oracle: "QPOracle | OracleFn", chan: "CompositeChannel | str",
                         x: "BitString | str", max_extra: int | None = None) -> tuple[float, float]:
    """Exact expectation of a lifted oracle over channel and QP randomness.

    With ``max_extra=None`` nothing is truncated and the error bound is zero.
    With an integer, each insertion channel stage inserts at most
    ``max_extra`` bits and the error bound is the oracle bound ``C'`` times
    the dropped probability.  The base oracle must be a table oracle.
    """
    chan = as_channel(chan)
    x = as_bitstring(x)
    layers, base = _split_oracle(oracle)
    if base.table is None:
        raise ValueError("exact evaluation needs a table oracle")
    if len(x) > MAX_ENUM_LEN:
        raise GuardError(f"input length {len(x)} exceeds the guard {MAX_ENUM_LEN}")
    w = _origin_weights(len(x), chan, layers, base.k, max_extra=max_extra)
    P = _expectation_matrix(w, len(x), base.k, _flip_bias(chan, layers), x.bits.astype(np.int64)[None, :])
    bound = _oracle_bound(oracle) * insertion_tail(chan, len(x), max_extra)
    return float(P[0] @ base.table), bound


def exact_expectation(f: OracleFn, chan: "CompositeChannel | str", x: "BitString | str",
                      max_extra: int | None = None) -> tuple[float, float]:
    """Exact ``E[f(trace prefix)]``.

    With ``max_extra=None`` the pull engine computes the value exactly.  With
    an integer the forward enumeration is used and the error bound is
    ``C * tail_mass``.
    """
    if f.table is None:
        raise ValueError("exact evaluation needs a deterministic oracle")
    if max_extra is None:
        return exact_qp_expectation(f, chan, x)
    dist = channel_output_distribution(chan, x, max_extra)
    val = math.fsum(p * f(s) for s, p in dist.items())
    return val, f.C * dist.tail_mass


def exact_suffix_means(oracle: "QPOracle | OracleFn", chan: "CompositeChannel | str",
                       x: "BitString | str", n_suffix: int, max_extra: int | None = None) -> np.ndarray:
    """Exact ``E[g(trace[s:])]`` for ``s = 0..n_suffix-1``."""
    chan = as_channel(chan)
    x = as_bitstring(x)
    layers, base = _split_oracle(oracle)
    beta = _flip_bias(chan, layers)
    out = np.zeros(n_suffix)
    xs = x.bits.astype(np.int64)[None, :]
    for s in range(n_suffix):
        w = _origin_weights(len(x), chan, layers, base.k, skip=s, max_extra=max_extra)
        out[s] = float(_expectation_matrix(w, len(x), base.k, beta, xs)[0] @ base.table)
    return out


# ---------------------------------------------------------------------------
# Matrix forms
# ---------------------------------------------------------------------------


def _space(max_len: int) -> list[str]:
    return [""] + ["".join(b) for n in range(1, max_len + 1) for b in itertools.product("01", repeat=n)]


def matrix_form(spec: ChannelSpec, max_len: int, min_len: int = 0) -> StochasticMatrixChannel:
    """Transition matrix on strings of length ``min_len..max_len``.

    Columns are inputs.  Insertion outputs longer than ``max_len`` are
    folded into an extra absorbing "oversize" state (last index), which
    residual norms exclude.
    """
    if max_len > MAX_MATRIX_LEN:
        raise GuardError(f"max_len {max_len} exceeds the matrix guard {MAX_MATRIX_LEN}")
    labels = [s for s in _space(max_len) if len(s) >= min_len]
    idx = {s: i for i, s in enumerate(labels)}
    oversize = isinstance(spec, Insertion) and spec.eta > 0
    dim = len(labels) + (1 if oversize else 0)
    M = np.zeros((dim, dim))
    chan = CompositeChannel([spec])
    for s in labels:
        j = idx[s]
        extra = max_len - len(s)
        dist = channel_output_distribution(chan, s, max_extra=max(extra, 0)) if oversize else \
            channel_output_distribution(chan, s, max_extra=0)
        for t, p in dist.items():
            if t in idx:
                M[idx[t], j] += p
            elif oversize:
                M[dim - 1, j] += p
            else:
                raise GuardError(f"output {t!r} outside the state space")
        if oversize:
            M[dim - 1, j] += 1.0 - M[:, j].sum()
    if oversize:
        M[dim - 1, dim - 1] = 1.0
        return StochasticMatrixChannel(M, tuple(labels) + ("oversize",), (dim - 1,))
    return StochasticMatrixChannel(M, tuple(labels))
