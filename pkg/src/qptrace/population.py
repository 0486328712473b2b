"""Recovery of a distribution over fixed-length strings from its traces.

Each ``y`` in ``{0,1}^k`` gets the indicator oracle ``1[x == y]`` lifted
through the channel inverse.  Its mean over traces is an unbiased estimate
(up to the lift's bias budget) of ``P[x = y]``.  All ``2**k`` estimators share
one set of quasi-probability draws, which keeps each of them individually
unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .channels import BitString, CompositeChannel, as_bitstring, as_channel, split_channel
from .kmer import marker_indicator
from .qp_oracle import lift_composite, suffix_sums

__all__ = ["PopulationEstimate", "recover_population", "tvd", "MAX_POPULATION_K"]

MAX_POPULATION_K = 16


@dataclass(frozen=True)
class PopulationEstimate:
    """Raw and clipped probability estimates for every string of length ``k``.

    ``probs`` holds the raw (possibly negative) estimates; ``clipped`` is the
    legal distribution obtained by clipping to ``[0, 1]`` and renormalizing.
    """

    length: int
    probs: dict
    clipped: dict

    @classmethod
    def from_raw(cls, k: int, raw: np.ndarray) -> "PopulationEstimate":
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (2 ** k,) or not np.all(np.isfinite(raw)):
            raise ValueError("raw estimates must be 2**k finite values")
        c = np.clip(raw, 0.0, 1.0)
        tot = c.sum()
        c = c / tot if tot > 0 else np.full(c.shape, 1.0 / c.size)
        keys = [BitString.from_int(i, k) for i in range(2 ** k)]
        return cls(k, dict(zip(keys, raw.tolist())), dict(zip(keys, c.tolist())))

    def raw_array(self) -> np.ndarray:
        return np.array([self.probs[BitString.from_int(i, self.length)] for i in range(2 ** self.length)])

    def clipped_array(self) -> np.ndarray:
        return np.array([self.clipped[BitString.from_int(i, self.length)] for i in range(2 ** self.length)])

    def as_json(self) -> dict:
        return {str(y): p for y, p in self.clipped.items()}


def recover_population(traces, chan: "CompositeChannel | str", k: int, eps: float = 0.1,
                       rng=None, workers: int = 1) -> PopulationEstimate:
    """Estimate ``P[x = y]`` for every ``y`` of length ``k``.

    Each per-string estimator is lifted with bias budget ``2**-k * eps / 2``,
    so the raw estimates are within ``2**-k * eps`` of the truth once enough
    traces are used, and the clipped distribution is within ``eps`` in TVD.

    Raises
    ------
    ValueError
        If ``k`` is outside ``[1, 16]`` or ``traces`` is empty.
    """
    if not 1 <= k <= MAX_POPULATION_K:
        raise ValueError(f"k must lie in [1, {MAX_POPULATION_K}], got {k}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    chan = as_channel(chan)
    eps_prime = eps * 2.0 ** -k
    oracle = lift_composite(marker_indicator("0" * k), split_channel(chan), eps_prime / 2)
    sums = suffix_sums(oracle, traces, seed=rng, prefix_only=True, workers=workers, purpose="population")
    raw = sums.means(np.eye(2 ** k))[0]
    return PopulationEstimate.from_raw(k, raw)


def _as_vector(p, k: int | None = None) -> tuple[int, np.ndarray]:
    if isinstance(p, PopulationEstimate):
        return p.length, p.clipped_array()
    if not isinstance(p, Mapping) or not p:
        raise ValueError("expected a PopulationEstimate or a nonempty mapping")
    items = [(as_bitstring(y), float(v)) for y, v in p.items()]
    lens = {len(y) for y, _ in items}
    if len(lens) != 1:
        raise ValueError("all strings must have the same length")
    n = lens.pop()
    vec = np.zeros(2 ** n)
    for y, v in items:
        vec[y.to_int()] += v
    return n, vec


def tvd(p, q) -> float:
    """Total variation distance ``sum_y |p_y - q_y| / 2`` over clipped values.

    Either argument may be a :class:`PopulationEstimate` or a mapping from
    strings to probabilities (missing strings count as 0).

    Raises
    ------
    ValueError
        If the two distributions live on different lengths.
    """
    kp, vp = _as_vector(p)
    kq, vq = _as_vector(q)
    if kp != kq:
        raise ValueError(f"length mismatch: {kp} vs {kq}")
    return 0.5 * float(np.abs(vp - vq).sum())
