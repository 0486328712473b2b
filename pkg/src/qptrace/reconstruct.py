"""Desk-scale trace reconstruction from frequency-domain k-mer estimates.

Two modes share one set of k-mer estimates over a frequency net:

``lp``
    Bits are recovered left to right.  At each step the two candidate next
    bits give two length-``k`` markers (the last ``k`` bits of the extended
    prefix).  Hypothesis ``b`` asserts that the marker ending in ``b`` occurs
    at the current window and the other one does not.  Each assertion becomes
    a linear feasibility problem over the occurrence vector ``v_j in [0, 1]``
    of that marker: frequency rows tie ``sum_j v_j zeta_m**j`` to the
    estimates, sparsity rows forbid two occurrences closer than the marker's
    period, and windows inside the recovered prefix are fixed.
``exhaustive``
    Every string of length ``n`` is scored by the squared distance of its
    exact k-mer values to the estimates; the minimizer is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.optimize import linprog

from .channels import BitString, CompositeChannel, as_bitstring, as_channel
from .kmer import KmerSuffixStats, kmer_suffix_stats

__all__ = [
    "period",
    "choose_marker",
    "frequency_net",
    "NetEntry",
    "MarkerConstraintSet",
    "FeasibilityProblem",
    "FeasibilityVerdict",
    "build_feasibility",
    "solve_feasibility",
    "KmerNet",
    "kmer_net",
    "ReconstructParams",
    "ReconstructionResult",
    "ReconstructionError",
    "default_k",
    "reconstruct",
    "reconstruct_detailed",
    "exhaustive_scores",
    "MAX_EXHAUSTIVE_N",
]

MAX_EXHAUSTIVE_N = 22


class ReconstructionError(RuntimeError):
    """Both hypotheses of a step were infeasible in strict mode."""


# ---------------------------------------------------------------------------
# Markers
# ---------------------------------------------------------------------------


def period(w: "BitString | str") -> int:
    """Smallest ``p >= 1`` with ``w[:k-p] == w[p:]``.

    Raises
    ------
    ValueError
        If ``w`` is empty.
    """
    s = str(as_bitstring(w))
    k = len(s)
    if k == 0:
        raise ValueError("period of an empty string is undefined")
    for p in range(1, k + 1):
        if s[:k - p] == s[p:]:
            return p
    return k


def choose_marker(prefix: "BitString | str", k: int) -> list[tuple[int, BitString, int]]:
    """Candidate markers for the bit following ``prefix``.

    Returns ``[(b, w_b, period(w_b)) for b in (0, 1)]`` where ``w_b`` is the
    length-``k`` suffix of ``prefix + b``.  At least one candidate has period
    at least ``k / 2``.

    Raises
    ------
    ValueError
        If ``prefix`` is shorter than ``k - 1``.
    """
    s = str(as_bitstring(prefix))
    if k < 1 or len(s) < k - 1:
        raise ValueError(f"prefix needs at least k-1 = {k - 1} bits")
    out = []
    for b in (0, 1):
        w = BitString((s + str(b))[len(s) + 1 - k:])
        out.append((b, w, period(w)))
    assert max(p for _, _, p in out) >= k / 2, "no candidate marker with period >= k/2"
    return out


def frequency_net(alpha_max: float, M: int) -> np.ndarray:
    """``M`` equally spaced frequencies spanning ``[-alpha_max, alpha_max]``.

    ``M = 1`` gives the midpoint ``[0.0]``.
    """
    if M < 1:
        raise ValueError("net size must be at least 1")
    if not 0 <= alpha_max <= math.pi:
        raise ValueError("alpha_max must lie in [0, pi]")
    if M == 1:
        return np.zeros(1)
    return np.linspace(-alpha_max, alpha_max, M)


# ---------------------------------------------------------------------------
# Feasibility problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetEntry:
    alpha: float
    estimate: complex
    tol: float


@dataclass(frozen=True)
class MarkerConstraintSet:
    """Constraints on the occurrence vector of one marker.

    ``n_positions`` windows ``0..n-k``; ``net`` entries constrain
    ``sum_j v_j e^{i j alpha}`` to a box of half-width ``tol`` around the
    estimate; ``window`` consecutive positions hold at most one occurrence;
    ``fixed`` pins positions to 0 or 1.
    """

    marker: BitString
    n_positions: int
    net: tuple = ()
    window: int = 1
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "marker", as_bitstring(self.marker))
        object.__setattr__(self, "net", tuple(self.net))
        if self.n_positions < 1:
            raise ValueError("need at least one position")
        alphas = [e.alpha for e in self.net]
        if any(not e.tol > 0 for e in self.net):
            raise ValueError("tolerances must be positive")
        if alphas != sorted(alphas):
            raise ValueError("net frequencies must be sorted")
        for j, v in self.fixed.items():
            if not 0 <= j < self.n_positions or v not in (0, 1):
                raise ValueError(f"bad fixed entry {j}: {v}")


@dataclass(frozen=True)
class FeasibilityProblem:
    """``A v <= b`` with ``lb <= v <= ub``; verdict tolerance ``eps_feas``."""

    n_vars: int
    lb: np.ndarray
    ub: np.ndarray
    A: np.ndarray
    b: np.ndarray
    eps_feas: float = 1e-7

    def __post_init__(self):
        if self.A.shape != (self.b.size, self.n_vars):
            raise ValueError("row matrix shape does not match")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("rows must be finite")
        if np.any(self.lb > self.ub):
            raise ValueError("inconsistent bounds")

    def violation(self, v: np.ndarray) -> float:
        """Summed row violation ``sum_i max(0, A_i v - b_i)``."""
        if self.b.size == 0:
            return 0.0
        return float(np.maximum(self.A @ v - self.b, 0.0).sum())


@dataclass(frozen=True)
class FeasibilityVerdict:
    """``status`` is ``feasible``, ``infeasible`` or ``undecided``.

    ``witness`` minimizes the summed violation, which is ``violation``.
    Undecided outcomes count as feasible.
    """

    status: str
    witness: np.ndarray
    violation: float

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


def build_feasibility(cs: MarkerConstraintSet, tol_scale: float = 1.0,
                      eps_feas: float = 1e-7) -> FeasibilityProblem:
    """Linear rows of a constraint set.

    Each net entry gives four rows bounding the real and imaginary parts of
    the deviation, divided by ``tol`` so violations are in units of the
    tolerance.  ``tol_scale = 0`` asks for an exact fit, which turns the
    minimal violation into an L1 residual.
    """
    n = cs.n_positions
    rows, bounds = [], []
    j = np.arange(n)
    for e in cs.net:
        ph = np.exp(1j * e.alpha * j)
        for part, target in ((ph.real, e.estimate.real), (ph.imag, e.estimate.imag)):
            rows.append(part / e.tol)
            bounds.append(target / e.tol + tol_scale)
            rows.append(-part / e.tol)
            bounds.append(-target / e.tol + tol_scale)
    if cs.window > 1:
        for s in range(0, n - 1):
            r = np.zeros(n)
            r[s:s + cs.window] = 1.0
            rows.append(r)
            bounds.append(1.0)
    lb, ub = np.zeros(n), np.ones(n)
    for pos, val in cs.fixed.items():
        lb[pos] = ub[pos] = float(val)
    A = np.array(rows) if rows else np.zeros((0, n))
    return FeasibilityProblem(n, lb, ub, A, np.array(bounds, dtype=float), eps_feas)


def solve_feasibility(p: FeasibilityProblem, max_iter: int = 100_000) -> FeasibilityVerdict:
    """Minimize the summed violation with one elastic variable per row.

    The problem is feasible when the optimum is at most ``eps_feas``.  An
    iteration cap or solver failure gives ``undecided`` with the box-clipped
    zero vector as witness.
    """
    n, m = p.n_vars, p.b.size
    if m == 0:
        w = np.clip(np.zeros(n), p.lb, p.ub)
        return FeasibilityVerdict("feasible", w, 0.0)
    c = np.concatenate([np.zeros(n), np.ones(m)])
    A = np.hstack([p.A, -np.eye(m)])
    bounds = list(zip(p.lb, p.ub)) + [(0.0, None)] * m
    res = linprog(c, A_ub=A, b_ub=p.b, bounds=bounds, method="highs", options={"maxiter": max_iter})
    if res.status != 0:
        w = np.clip(np.zeros(n), p.lb, p.ub)
        return FeasibilityVerdict("undecided", w, p.violation(w))
    w = np.clip(res.x[:n], p.lb, p.ub)
    viol = p.violation(w)
    return FeasibilityVerdict("feasible" if viol <= p.eps_feas else "infeasible", w, viol)


# ---------------------------------------------------------------------------
# Estimates over the net
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KmerNet:
    """Estimates ``values[m, c]`` and tolerances ``tols[m, c]`` for every
    marker code ``c`` of length ``k`` at frequency ``alphas[m]``."""

    k: int
    alphas: np.ndarray
    values: np.ndarray
    tols: np.ndarray

    def entries(self, code: int) -> tuple[NetEntry, ...]:
        return tuple(NetEntry(float(a), complex(v), float(t))
                     for a, v, t in zip(self.alphas, self.values[:, code], self.tols[:, code]))


def kmer_net(stats: KmerSuffixStats, alphas: Sequence[float], c1: float = 3.0, c2: float = 1.0) -> KmerNet:
    """Estimates for all markers on the net; ``tol = c1 * stderr + c2 * bias``."""
    alphas = np.asarray(alphas, dtype=float)
    vals, tols = [], []
    for a in alphas:
        v, se, bias = stats.estimate_all(float(a))
        vals.append(v)
        tols.append(np.maximum(c1 * se + c2 * bias, 1e-12))
    return KmerNet(stats.k, alphas, np.array(vals), np.array(tols))


def exact_net(x: "BitString | str", k: int, alphas: Sequence[float], tol: float = 1e-6) -> KmerNet:
    """Noiseless net built from the exact k-mer values of ``x``."""
    s = str(as_bitstring(x))
    alphas = np.asarray(alphas, dtype=float)
    vals = np.zeros((alphas.size, 2 ** k), dtype=complex)
    for l in range(len(s) - k + 1):
        vals[:, int(s[l:l + k], 2)] += np.exp(1j * alphas * l)
    return KmerNet(k, alphas, vals, np.full(vals.shape, float(tol)))


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


def default_k(n: int) -> int:
    """Smallest ``k`` with ``2**k >= 4 n``."""
    return max(1, math.ceil(math.log2(4 * n)))


@dataclass(frozen=True)
class ReconstructParams:
    """Mode and tuning knobs.

    ``strict`` raises :class:`ReconstructionError` when both hypotheses of a
    step are infeasible; otherwise the smaller violation wins and the step is
    flagged in the diagnostics.
    """

    mode: str = "lp"
    k: int | None = None
    alpha_max: float = math.pi / 4
    net_size: int = 64
    c1: float = 3.0
    c2: float = 1.0
    eps: float = 0.01
    eps_feas: float = 1e-7
    strict: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.mode not in ("lp", "exhaustive"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class ReconstructionResult:
    string: BitString
    mode: str
    k: int
    steps: list

    def diagnostics(self) -> dict:
        return {"mode": self.mode, "k": self.k, "string": str(self.string), "steps": self.steps}


def _marker_problem(net: KmerNet, w: BitString, n: int, prefix: str, pos: int, val: int,
                    tol_scale: float, eps_feas: float) -> FeasibilityProblem:
    k = len(w)
    ws = str(w)
    fixed = {j: int(prefix[j:j + k] == ws) for j in range(pos)}
    fixed[pos] = val
    cs = MarkerConstraintSet(w, n - k + 1, net.entries(w.to_int()), period(w), fixed)
    return build_feasibility(cs, tol_scale, eps_feas)


def _hypothesis(net: KmerNet, claims, n: int, prefix: str, pos: int, eps_feas: float) -> dict:
    """Feasibility and residual of a conjunction of ``(marker, value)`` claims."""
    feas, viol, resid = True, 0.0, 0.0
    for w, val in claims:
        v = solve_feasibility(_marker_problem(net, w, n, prefix, pos, val, 1.0, eps_feas))
        r = solve_feasibility(_marker_problem(net, w, n, prefix, pos, val, 0.0, eps_feas))
        feas = feas and v.feasible
        viol += v.violation
        resid += r.violation
    return {"feasible": feas, "violation": viol, "residual": resid}


def _pick(hyps: list[dict]) -> tuple[int, str]:
    ok = [i for i, h in enumerate(hyps) if h["feasible"]]
    if len(ok) == 1:
        return ok[0], "unique"
    if not ok:
        key = [(h["violation"], h["residual"], i) for i, h in enumerate(hyps)]
        return min(key)[2], "none-feasible"
    key = [(hyps[i]["residual"], i) for i in ok]
    return min(key)[1], "residual"


def _lp_mode(net: KmerNet, n: int, params: ReconstructParams) -> tuple[str, list]:
    k = net.k
    steps = []
    # First window: each marker claims an occurrence at position 0.
    hyps = [_hypothesis(net, [(BitString.from_int(c, k), 1)], n, "", 0, params.eps_feas)
            for c in range(2 ** k)]
    best, how = _pick(hyps)
    if how == "none-feasible" and params.strict:
        raise ReconstructionError("no first window is feasible")
    prefix = str(BitString.from_int(best, k))
    steps.append({"pos": 0, "choice": prefix, "rule": how,
                  "n_feasible": sum(h["feasible"] for h in hyps), "best": hyps[best]})
    while len(prefix) < n:
        pos = len(prefix) + 1 - k
        cands = choose_marker(prefix, k)
        hyps = []
        for b, w, _ in cands:
            other = cands[1 - b][1]
            hyps.append(_hypothesis(net, [(w, 1), (other, 0)], n, prefix, pos, params.eps_feas))
        b, how = _pick(hyps)
        if how == "none-feasible" and params.strict:
            raise ReconstructionError(f"both hypotheses infeasible at bit {len(prefix)}: {hyps}")
        steps.append({"pos": len(prefix), "choice": b, "rule": how,
                      "periods": [p for _, _, p in cands], "hypotheses": hyps})
        prefix += str(b)
    return prefix, steps


@numba.njit(cache=True)
def _scores(n, k, phases, values, out):
    M, W = values.shape
    L = n - k + 1
    mask = (1 << k) - 1
    base = 0.0
    for m in range(M):
        for c in range(W):
            base += values[m, c].real ** 2 + values[m, c].imag ** 2
    acc = np.zeros((M, W), dtype=np.complex128)
    codes = np.zeros(L, dtype=np.int64)
    for x in range(out.size):
        for l in range(L):
            codes[l] = (x >> (n - k - l)) & mask
        for m in range(M):
            for l in range(L):
                acc[m, codes[l]] += phases[m, l]
        s = base
        for m in range(M):
            for l in range(L):
                c = codes[l]
                a = acc[m, c]
                if a.real != 0.0 or a.imag != 0.0:
                    d = a - values[m, c]
                    e = values[m, c]
                    s += d.real ** 2 + d.imag ** 2 - e.real ** 2 - e.imag ** 2
                    acc[m, c] = 0.0
        out[x] = s


def exhaustive_scores(net: KmerNet, n: int) -> np.ndarray:
    """Squared distance of every length-``n`` string's k-mer values to the net.

    Entry ``c`` scores the string whose big-endian code is ``c``.

    Raises
    ------
    ValueError
        If ``n`` exceeds :data:`MAX_EXHAUSTIVE_N` or is shorter than ``k``.
    """
    if n > MAX_EXHAUSTIVE_N:
        raise ValueError(f"exhaustive mode is limited to n <= {MAX_EXHAUSTIVE_N}")
    if n < net.k:
        raise ValueError("n must be at least k")
    phases = np.exp(1j * np.outer(net.alphas, np.arange(n - net.k + 1)))
    out = np.empty(2 ** n)
    _scores(n, net.k, phases, np.ascontiguousarray(net.values, dtype=np.complex128), out)
    return out


def reconstruct_from_net(net: KmerNet, n: int, params: ReconstructParams = ReconstructParams()
                         ) -> ReconstructionResult:
    """Reconstruct from precomputed estimates."""
    if n < net.k:
        raise ValueError("n must be at least k")
    if params.mode == "exhaustive":
        scores = exhaustive_scores(net, n)
        best = int(np.argmin(scores))
        order = np.argsort(scores)[:2]
        gap = float(scores[order[1]] - scores[order[0]]) if scores.size > 1 else math.inf
        steps = [{"best_score": float(scores[best]), "gap_to_second": gap}]
        return ReconstructionResult(BitString.from_int(best, n), "exhaustive", net.k, steps)
    s, steps = _lp_mode(net, n, params)
    return ReconstructionResult(BitString(s), "lp", net.k, steps)


def reconstruct_detailed(traces, chan: "CompositeChannel | str", n: int,
                         params: ReconstructParams = ReconstructParams(), rng=None,
                         stats: KmerSuffixStats | None = None) -> ReconstructionResult:
    """Estimate the k-mer net from ``traces`` and reconstruct a length-``n`` string.

    ``stats`` may carry precomputed suffix statistics to share between modes.
    """
    chan = as_channel(chan)
    k = params.k if params.k is not None else default_k(n)
    if stats is None:
        stats = kmer_suffix_stats(traces, chan, k, params.eps, rng, params.workers)
    elif stats.k != k:
        raise ValueError("precomputed statistics use a different k")
    net = kmer_net(stats, frequency_net(params.alpha_max, params.net_size), params.c1, params.c2)
    return reconstruct_from_net(net, n, params)


def reconstruct(traces, chan: "CompositeChannel | str", n: int, k: int | None = None,
                params: ReconstructParams | None = None, rng=None) -> BitString:
    """Recovered length-``n`` string; see :func:`reconstruct_detailed`."""
    params = params or ReconstructParams()
    if k is not None:
        params = ReconstructParams(**{**params.__dict__, "k": k})
    return reconstruct_detailed(traces, chan, n, params, rng).string
