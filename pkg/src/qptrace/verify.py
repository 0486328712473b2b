"""Property suites shared by the command line and the test suite.

Every suite returns a :class:`SuiteResult` whose ``rows`` are
``(label, passed, detail)`` triples.
"""

from __future__ import annotations

import itertools
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .channels import (BitString, Deletion, Insertion, Symmetry, as_channel, composite_gf, gf_eval,
                       inverse_gf_eval, split_channel, split_deletion)
from .exact_oracle import _oracle_bound, channel_output_distribution, exact_qp_table, insertion_tail
from .kmer import marker_indicator
from .qp_oracle import geometric_tail_bound, lift_composite
from .quasiprob import closed_form_gamma, qp_for
from .reconstruct import (MarkerConstraintSet, build_feasibility, choose_marker, exact_net,
                          frequency_net, period, solve_feasibility)

__all__ = [
    "SuiteResult",
    "SUITES",
    "run_suite",
    "grid_channels",
    "unbiasedness_case",
    "suite_norms",
    "suite_unbiasedness",
    "suite_tail",
    "suite_gf",
    "suite_robson",
    "suite_feasibility",
    "suite_merge",
]

GRID_STAGES = ("del:0.1", "del:0.25", "del:0.3", "ins:0.2", "ins:0.5", "sym:0.1", "sym:0.25")


@dataclass
class SuiteResult:
    name: str
    rows: list = field(default_factory=list)

    def add(self, label: str, passed: bool, detail: str = "") -> None:
        self.rows.append((label, bool(passed), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.rows)

    def report(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'} {self.name}: {label} {detail}".rstrip()
                 for label, ok, detail in self.rows]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} suite {self.name} ({len(self.rows)} checks)")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# QP norms
# ---------------------------------------------------------------------------


def suite_norms(points: int = 20, tol: float = 1e-9) -> SuiteResult:
    """QP norms against ``1/(1-2d)``, ``(1+e)/(1-e)``, ``1/(1-2s)`` and unit sums."""
    res = SuiteResult("norms")
    formulas = {
        Deletion: lambda p: 1.0 / (1.0 - 2.0 * p),
        Insertion: lambda p: (1.0 + p) / (1.0 - p),
        Symmetry: lambda p: 1.0 / (1.0 - 2.0 * p),
    }
    tops = {Deletion: 0.45, Insertion: 0.9, Symmetry: 0.45}
    for cls, f in formulas.items():
        worst_g = worst_s = 0.0
        for p in np.linspace(0.0, tops[cls], points):
            q = qp_for(cls(float(p)))
            worst_g = max(worst_g, max(0.0, abs(q.gamma() - f(p)) - 2 * q.truncated_tail))
            worst_s = max(worst_s, abs(q.weights.sum() - 1.0))
            worst_g = max(worst_g, abs(closed_form_gamma(cls(float(p))) - f(p)))
        name = cls.__name__.lower()
        res.add(f"{name} gamma", worst_g <= tol, f"max|gamma - formula| = {worst_g:.3g}")
        res.add(f"{name} sum", worst_s <= tol, f"max|sum q - 1| = {worst_s:.3g}")
    return res


# ---------------------------------------------------------------------------
# Exact unbiasedness
# ---------------------------------------------------------------------------


def grid_channels(stages: Sequence[str] = GRID_STAGES, max_stages: int = 3) -> list[str]:
    """Every composite of at most ``max_stages`` stages drawn from ``stages``."""
    return [",".join(c) for r in range(1, max_stages + 1) for c in itertools.product(stages, repeat=r)]


def unbiasedness_case(chan: str, k: int, max_n: int, eps: float = 0.01,
                      max_extra: int | None = None) -> tuple[float, float]:
    """Largest ``|exact QP expectation - f(x prefix)|`` over all ``|x| <= max_n``.

    Covers every marker of length ``k`` at once.  Returns the error and the
    truncation bound (zero when ``max_extra`` is None).
    """
    chan_s = split_channel(as_channel(chan))
    oracle = lift_composite(marker_indicator("0" * k), chan_s, eps)
    worst = 0.0
    bound = 0.0
    for L in range(max_n + 1):
        T = exact_qp_table(oracle, chan_s, L, max_extra=max_extra)
        truth = np.zeros_like(T)
        if L >= k:
            truth[np.arange(2 ** L), np.arange(2 ** L) >> (L - k)] = 1.0
        worst = max(worst, float(np.abs(T - truth).max()))
        bound = max(bound, _oracle_bound(oracle) * insertion_tail(chan_s, L, max_extra))
    return worst, bound


def _child(conn, fn, args):
    try:
        conn.send(("ok", fn(*args)))
    except BaseException as exc:  # reported to the parent
        conn.send(("error", f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


def run_with_timeout(fn: Callable, args: tuple, timeout: float | None):
    """Run ``fn(*args)`` in a forked process; ``("timeout", None)`` when it overruns."""
    if timeout is None:
        try:
            return "ok", fn(*args)
        except Exception as exc:
            return "error", f"{type(exc).__name__}: {exc}"
    ctx = mp.get_context("fork")
    parent, child = ctx.Pipe(duplex=False)
    p = ctx.Process(target=_child, args=(child, fn, args))
    p.start()
    child.close()
    if parent.poll(timeout):
        try:
            out = parent.recv()
        except EOFError:
            out = ("error", "worker exited")
        p.join()
        return out
    p.kill()
    p.join()
    return "timeout", None


def suite_unbiasedness(max_n: int = 8, max_k: int = 3, channels: Iterable[str] | None = None,
                       eps: float = 0.01, timeout: float | None = None,
                       max_extra: int | None = None) -> SuiteResult:
    """Exact QP expectation within ``eps`` plus truncation bound of the truth.

    ``timeout`` limits each (channel, k) case in seconds; an overrun fails
    the case.
    """
    res = SuiteResult("unbiasedness")
    for chan in (channels if channels is not None else grid_channels()):
        for k in range(1, max_k + 1):
            t0 = time.perf_counter()
            status, out = run_with_timeout(unbiasedness_case, (chan, k, max_n, eps, max_extra), timeout)
            dt = time.perf_counter() - t0
            if status == "ok":
                err, bound = out
                res.add(f"{chan} k={k}", err <= eps + bound,
                        f"err={err:.3g} bound={eps + bound:.3g} time={dt:.2f}s")
            else:
                res.add(f"{chan} k={k}", False, f"{status} {out or ''} after {dt:.1f}s".strip())
    return res


# ---------------------------------------------------------------------------
# Deletion merge
# ---------------------------------------------------------------------------


def suite_merge(max_n: int = 8, tol: float = 1e-10) -> SuiteResult:
    """Del 0.36 against Del 0.2 then Del 0.2, pointwise on every ``|x| <= max_n``."""
    res = SuiteResult("merge")
    worst = 0.0
    for L in range(max_n + 1):
        for bits in itertools.product("01", repeat=L):
            x = "".join(bits)
            a = channel_output_distribution("del:0.36", x)
            b = channel_output_distribution("del:0.2,del:0.2", x)
            for s in set(a.probs) | set(b.probs):
                worst = max(worst, abs(a[s] - b[s]))
    res.add("del:0.36 vs del:0.2,del:0.2", worst <= tol, f"max diff {worst:.3g}")
    d, m = split_deletion(0.75, 1 / 3)
    res.add("split 0.75", m == 4 and d < 1 / 3, f"stages={m} delta={d:.6f}")
    return res


# ---------------------------------------------------------------------------
# Geometric tail
# ---------------------------------------------------------------------------


def suite_tail(trials: int = 100_000, seed: int = 0) -> SuiteResult:
    """Empirical tail of sums of ``k`` geometric variables against ``e^{-c Delta}``."""
    res = SuiteResult("tail")
    rng = np.random.default_rng(seed)
    for p, k, d in itertools.product((0.5, 0.8), (10,), (5.0, 10.0)):
        # numpy's geometric counts trials, so subtract one to count failures
        s = (rng.geometric(p, size=(trials, k)) - 1).sum(axis=1)
        emp = float(np.mean(s > 4 * (1 - p) / p * k + d))
        bound = geometric_tail_bound(p, k, d)
        res.add(f"p={p} k={k} Delta={d}", emp <= bound, f"empirical={emp:.3g} bound={bound:.3g}")
    return res


# ---------------------------------------------------------------------------
# Generating functions
# ---------------------------------------------------------------------------

GF_CHANNELS = ("del:0.2", "ins:0.3", "sym:0.1", "del:0.2,sym:0.05", "ins:0.2,del:0.2")


def gf_curvature(chan: str, alphas: np.ndarray) -> np.ndarray:
    """``(|G^{-1}(e^{i alpha})| - 1) / alpha**2`` on a grid of frequencies."""
    return np.array([(abs(inverse_gf_eval(as_channel(chan), float(a))) - 1.0) / a ** 2 for a in alphas])


def suite_gf(alphas: Sequence[float] | None = None, spread: float = 1.25) -> SuiteResult:
    """Soundness of ``G^{-1}`` and a stable quadratic bound on ``|z| - 1``.

    The fitted constant ``K`` is the largest ratio on the grid; the bound is
    called stable when the ratios vary by at most the factor ``spread``.
    """
    res = SuiteResult("gf")
    a = np.geomspace(1e-3, 0.2, 25) if alphas is None else np.asarray(alphas, dtype=float)
    for chan in GF_CHANNELS:
        ch = as_channel(chan)
        g = composite_gf(ch)
        back = max(abs(gf_eval(g, inverse_gf_eval(ch, float(x))) - complex(math.cos(x), math.sin(x)))
                   for x in a)
        r = gf_curvature(chan, a)
        K = float(r.max())
        if K <= 1e-9:
            stable = bool(np.all(np.abs(r) <= 1e-6))
        else:
            stable = bool(r.min() > 0 and K / r.min() <= spread)
        at0 = inverse_gf_eval(ch, 0.0) == 1.0
        res.add(chan, back <= 1e-9 and stable and at0,
                f"K={K:.4g} ratio spread={K / r.min() if r.min() > 0 else float('nan'):.3g} "
                f"roundtrip={back:.2g} alpha0={'exact' if at0 else 'inexact'}")
    return res


# ---------------------------------------------------------------------------
# Robson property
# ---------------------------------------------------------------------------


def suite_robson(max_len: int = 12, ks: Sequence[int] = (4, 6, 8)) -> SuiteResult:
    """Some candidate marker has period at least ``k/2`` for every prefix."""
    res = SuiteResult("robson")
    for k in ks:
        bad = 0
        count = 0
        for L in range(k - 1, max_len + 1):
            for bits in itertools.product("01", repeat=L):
                count += 1
                try:
                    cands = choose_marker("".join(bits), k)
                except AssertionError:
                    bad += 1
                    continue
                if max(p for _, _, p in cands) < k / 2:
                    bad += 1
        res.add(f"k={k}", bad == 0, f"{count} prefixes, {bad} violations")
    return res


# ---------------------------------------------------------------------------
# Feasibility soundness
# ---------------------------------------------------------------------------


def suite_feasibility(n: int = 10, k: int = 4, seed: int = 0, trials: int = 20) -> SuiteResult:
    """Plug-in instances are feasible, contradicted ones are not, witnesses re-check."""
    res = SuiteResult("feasibility")
    rng = np.random.default_rng(seed)
    alphas = frequency_net(math.pi / 4, 16)
    ok_true = ok_contra = ok_witness = ok_sparse = True
    for _ in range(trials):
        x = "".join(rng.choice(["0", "1"], size=n))
        net = exact_net(x, k, alphas)
        w = x[:k]
        code = int(w, 2)
        occ = np.array([float(x[j:j + k] == w) for j in range(n - k + 1)])
        cs = MarkerConstraintSet(BitString(w), n - k + 1, net.entries(code), period(w), {})
        prob = build_feasibility(cs)
        ok_sparse &= prob.violation(occ) <= prob.eps_feas
        v = solve_feasibility(prob)
        ok_true &= v.feasible
        ok_witness &= prob.violation(v.witness) <= prob.eps_feas if v.feasible else True
        j = int(rng.integers(0, n - k + 1))
        cs2 = MarkerConstraintSet(BitString(w), n - k + 1, net.entries(code), period(w),
                                  {j: 1 - int(occ[j])})
        v2 = solve_feasibility(build_feasibility(cs2))
        ok_contra &= not v2.feasible and abs(build_feasibility(cs2).violation(v2.witness) - v2.violation) < 1e-9
    res.add("true occurrence vector satisfies rows", ok_sparse)
    res.add("plug-in instance feasible", ok_true)
    res.add("witnesses re-check", ok_witness)
    res.add("contradicted instance infeasible", ok_contra)
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "norms": suite_norms,
    "unbiasedness": suite_unbiasedness,
    "tail": suite_tail,
    "gf": suite_gf,
    "robson": suite_robson,
    "feasibility": suite_feasibility,
    "merge": suite_merge,
}


def run_suite(name: str, **kwargs) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name](**kwargs)
