"""Quasi-probability (QP) distributions and decompositions of channel inverses.

A QP distribution assigns signed weights ``q_j`` (summing to one) to a family
of realizable operations ``Lambda_j`` so that ``sum_j q_j Lambda_j`` equals an
inverse channel.  Sampling ``j`` with probability ``|q_j| / gamma`` and
weighting by ``sign(q_j) * gamma`` gives an unbiased estimator of any linear
functional of the inverse.

Matrix orientation: distributions are column vectors and channels act by
left multiplication, so every column of a stochastic matrix sums to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import ChannelSpec, Deletion, Insertion, Symmetry

__all__ = [
    "QPDistribution",
    "StochasticMatrixChannel",
    "qp_deletion",
    "qp_insertion",
    "qp_symmetry",
    "qp_for",
    "qp_sample",
    "sampling_probabilities",
    "decomposition_residual",
    "qp_solve",
    "QPSolveResult",
    "SingularChannelError",
    "norm_1inf",
]

DEFAULT_EPS_TAIL = 1e-12
MAX_SOLVE_DIM = 256


class SingularChannelError(np.linalg.LinAlgError):
    """The channel matrix has no inverse."""


@dataclass(frozen=True)
class QPDistribution:
    """Signed weights over integer-indexed operations.

    Attributes
    ----------
    weights : ndarray
        ``weights[j]`` is ``q_j``; entries past the end are zero.
    exact_finite : bool
        True when the support is finite by construction; False when an
        infinite series was truncated.
    truncated_tail : float
        Absolute mass of the discarded tail (zero for finite support).
    """

    weights: np.ndarray
    exact_finite: bool = True
    truncated_tail: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"QP weights must sum to one, got {w.sum()}")

    @property
    def truncation(self) -> int:
        """Largest index with a stored weight."""
        return int(self.weights.size - 1)

    def gamma(self) -> float:
        """QP norm ``sum_j |q_j|``."""
        return float(np.abs(self.weights).sum())

    def negativity(self) -> float:
        return float(-self.weights[self.weights < 0].sum())

    def __getitem__(self, j: int) -> float:
        return float(self.weights[j]) if 0 <= j < self.weights.size else 0.0

    def __len__(self) -> int:
        return int(self.weights.size)


def qp_deletion(delta: float, eps_tail: float = DEFAULT_EPS_TAIL) -> QPDistribution:
    """QP decomposition of the inverse deletion channel.

    ``q_j = (1/(1-delta)) * (-delta/(1-delta))**j``, truncated at the first
    index whose remaining absolute tail is below ``eps_tail``; the discarded
    signed tail is added to ``q_0`` so the weights sum to one exactly.
    """
    if not (0.0 <= delta < 0.5):
        raise ValueError(f"deletion QP needs delta in [0, 1/2), got {delta}; split the channel first")
    if delta == 0.0:
        return QPDistribution(np.array([1.0]))
    rho = delta / (1.0 - delta)
    # absolute tail beyond J is (1/(1-delta)) * rho**(J+1) / (1 - rho)
    J = 0
    scale = 1.0 / ((1.0 - delta) * (1.0 - rho))
    while scale * rho ** (J + 1) >= eps_tail:
        J += 1
    j = np.arange(J + 1)
    w = (1.0 / (1.0 - delta)) * (-rho) ** j
    tail_abs = scale * rho ** (J + 1)
    w[0] += 1.0 - w.sum()
    return QPDistribution(w, exact_finite=False, truncated_tail=float(tail_abs))


def qp_insertion(eta: float) -> QPDistribution:
    """Two-point decomposition ``(1/(1-eta), -eta/(1-eta))`` of the inverse insertion channel."""
    if not (0.0 <= eta < 1.0):
        raise ValueError(f"insertion QP needs eta in [0, 1), got {eta}")
    if eta == 0.0:
        return QPDistribution(np.array([1.0]))
    return QPDistribution(np.array([1.0 / (1.0 - eta), -eta / (1.0 - eta)]))


def qp_symmetry(sigma: float) -> QPDistribution:
    """``Lambda^{-1} = (1-sigma)/(1-2sigma) I - sigma/(1-2sigma) X``; index 1 is a flip."""
    if not (0.0 <= sigma < 0.5):
        raise ValueError(f"symmetry QP needs sigma in [0, 1/2), got {sigma}")
    if sigma == 0.0:
        return QPDistribution(np.array([1.0]))
    d = 1.0 - 2.0 * sigma
    return QPDistribution(np.array([(1.0 - sigma) / d, -sigma / d]))


def qp_for(spec: ChannelSpec, eps_tail: float = DEFAULT_EPS_TAIL) -> QPDistribution:
    if isinstance(spec, Deletion):
        return qp_deletion(spec.delta, eps_tail)
    if isinstance(spec, Insertion):
        return qp_insertion(spec.eta)
    if isinstance(spec, Symmetry):
        return qp_symmetry(spec.sigma)
    raise TypeError(f"unknown channel spec {spec!r}")


def closed_form_gamma(spec: ChannelSpec) -> float:
    """Exact QP norm of the untruncated decomposition."""
    if isinstance(spec, Deletion):
        return 1.0 / (1.0 - 2.0 * spec.delta)
    if isinstance(spec, Insertion):
        return (1.0 + spec.eta) / (1.0 - spec.eta)
    return 1.0 / (1.0 - 2.0 * spec.sigma)


def sampling_probabilities(spec: ChannelSpec) -> float:
    """Parameter of the normalized draw ``|q_j| / gamma``.

    Deletion: success probability of ``Geom((1-2 delta)/(1-delta))``.
    Insertion: ``P[j=1] = eta/(1+eta)``.  Symmetry: ``P[j=1] = sigma``.
    """
    if isinstance(spec, Deletion):
        return (1.0 - 2.0 * spec.delta) / (1.0 - spec.delta)
    if isinstance(spec, Insertion):
        return spec.eta / (1.0 + spec.eta)
    return spec.sigma


def qp_sample(q: QPDistribution, rng: np.random.Generator) -> tuple[int, float]:
    """Draw ``j`` with probability ``|q_j|/gamma``; weight is ``sign(q_j) * gamma``."""
    g = q.gamma()
    p = np.abs(q.weights) / g
    j = int(rng.choice(p.size, p=p))
    return j, float(math.copysign(g, q.weights[j]))


# ---------------------------------------------------------------------------
# Matrix level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StochasticMatrixChannel:
    """Column-stochastic matrix ``M[out, in]`` on a finite state space.

    ``labels`` names the states; optional ``excluded`` marks absorbing
    bookkeeping states (for example an oversize sink) that residual norms
    ignore.
    """

    matrix: np.ndarray
    labels: tuple = ()
    excluded: tuple = field(default_factory=tuple)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("channel matrix must be square")
        if np.any(m < -1e-15):
            raise ValueError("channel matrix has negative entries")
        if np.any(np.abs(m.sum(axis=0) - 1.0) > 1e-12):
            raise ValueError("channel matrix columns must sum to one")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[0])

    @classmethod
    def identity(cls, dim: int) -> "StochasticMatrixChannel":
        return cls(np.eye(dim))

    def keep_mask(self) -> np.ndarray:
        mask = np.ones(self.dimension, dtype=bool)
        for i in self.excluded:
            mask[i] = False
        return mask


def norm_1inf(a: np.ndarray) -> float:
    """Maximum over rows of the row l1 norm."""
    return float(np.abs(a).sum(axis=1).max()) if a.size else 0.0


def _inverse(lam: StochasticMatrixChannel) -> np.ndarray:
    m = lam.matrix
    if np.linalg.cond(m) > 1e13:
        raise SingularChannelError("channel matrix is singular")
    return np.linalg.inv(m)


def decomposition_residual(lam: StochasticMatrixChannel, q: QPDistribution | Sequence[float],
                           ops: Sequence[StochasticMatrixChannel]) -> float:
    """``|| Lambda^{-1} - sum_j q_j Lambda_j ||_{1,inf}`` over non-excluded states."""
    w = q.weights if isinstance(q, QPDistribution) else np.asarray(q, dtype=float)
    if len(w) > len(ops):
        raise ValueError("more weights than operations")
    dim = lam.dimension
    for op in ops:
        if op.dimension != dim:
            raise ValueError("all matrices must share one dimension")
    diff = _inverse(lam).copy()
    for wj, op in zip(w, ops):
        diff -= wj * op.matrix
    mask = lam.keep_mask()
    return norm_1inf(diff[np.ix_(mask, mask)])


@dataclass(frozen=True)
class QPSolveResult:
    distribution: QPDistribution
    residual: float
    rank: int
    exact: bool


def qp_solve(lam: StochasticMatrixChannel, ops: Sequence[StochasticMatrixChannel],
             tol: float = 1e-9) -> QPSolveResult:
    """Least-squares QP decomposition of ``Lambda^{-1}`` subject to ``sum q = 1``.

    The constrained problem is solved through its KKT system.  When the
    inverse is outside the span of ``ops`` the best weights are returned
    together with the achieved residual and ``exact=False``.
    """
    dim = lam.dimension
    if dim > MAX_SOLVE_DIM:
        raise ValueError(f"dimension {dim} exceeds the solver bound {MAX_SOLVE_DIM}")
    target = _inverse(lam).ravel()
    A = np.stack([op.matrix.ravel() for op in ops], axis=1)
    n = A.shape[1]
    rank = int(np.linalg.matrix_rank(A))
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = A.T @ A
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.concatenate([A.T @ target, [1.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    w = sol[:n]
    w = w + (1.0 - w.sum()) / n
    dist = QPDistribution(w)
    res = decomposition_residual(lam, dist, ops)
    return QPSolveResult(dist, res, rank, res <= tol)
