"""Bit strings, synchronization channels and their length generating functions.

Three elementary channels act on binary strings:

* ``Deletion(delta)`` removes each bit independently with probability delta.
* ``Insertion(eta)`` inserts ``Geom(1 - eta)`` uniform bits before each input
  bit, where ``P[j] = eta**j * (1 - eta)``.
* ``Symmetry(sigma)`` flips each bit independently with probability sigma.

A :class:`CompositeChannel` stores its stages in application order: the first
stage acts on the input first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np
from numba import njit

from ._random import PURPOSE, block_generator, block_seed, draw_seed, run_blocks

__all__ = [
    "BitString",
    "as_bitstring",
    "Deletion",
    "Insertion",
    "Symmetry",
    "ChannelSpec",
    "CompositeChannel",
    "MobiusGF",
    "TraceSet",
    "apply_channel",
    "sample_trace",
    "sample_traces",
    "merge_deletions",
    "split_deletion",
    "length_gf",
    "gf_compose",
    "gf_invert",
    "gf_eval",
    "composite_gf",
    "inverse_gf_eval",
    "read_traces",
    "write_traces",
    "PoleError",
    "split_channel",
    "sample_population_traces",
    "as_channel",
]

POLE_TOL = 1e-12


class PoleError(ZeroDivisionError):
    """Raised when a Möbius transform is evaluated at (or near) its pole."""


# ---------------------------------------------------------------------------
# Bit strings
# ---------------------------------------------------------------------------


class BitString:
    """Immutable finite sequence of bits backed by a read-only uint8 array.

    Parameters
    ----------
    bits : str, sequence of int, ndarray or BitString
        ``"0110"``, ``[0, 1, 1, 0]`` and ``np.array([0, 1, 1, 0])`` are all
        accepted.
    """

    __slots__ = ("_bits",)

    def __init__(self, bits: Union[str, Sequence[int], np.ndarray, "BitString"] = ""):
        if isinstance(bits, BitString):
            self._bits = bits._bits
            return
        if isinstance(bits, str):
            s = bits.strip()
            if s and set(s) - {"0", "1"}:
                raise ValueError(f"bit string may contain only 0/1, got {bits!r}")
            arr = np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(bits)
            if arr.ndim != 1 and arr.size:
                raise ValueError("bit string must be one-dimensional")
            arr = arr.reshape(-1)
            if arr.size and not np.all((arr == 0) | (arr == 1)):
                raise ValueError("bit string entries must be 0 or 1")
        arr = np.array(arr, dtype=np.uint8)
        arr.flags.writeable = False
        self._bits = arr

    @property
    def bits(self) -> np.ndarray:
        """Read-only uint8 view of the bits."""
        return self._bits

    @property
    def length(self) -> int:
        return int(self._bits.size)

    def __len__(self) -> int:
        return int(self._bits.size)

    def __str__(self) -> str:
        return (self._bits + ord("0")).tobytes().decode("ascii")

    def __repr__(self) -> str:
        return f"BitString('{self}')"

    def __eq__(self, other: object) -> bool:
        if isinstance(other, str):
            other = BitString(other)
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self) -> int:
        return hash(self._bits.tobytes())

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return BitString(self._bits[idx])
        return int(self._bits[idx])

    def __iter__(self) -> Iterator[int]:
        return (int(b) for b in self._bits)

    def __add__(self, other: "BitString | str") -> "BitString":
        return BitString(np.concatenate([self._bits, as_bitstring(other)._bits]))

    def to_int(self) -> int:
        """Big-endian integer code of the bits (first bit most significant)."""
        v = 0
        for b in self._bits:
            v = (v << 1) | int(b)
        return v

    @classmethod
    def from_int(cls, value: int, length: int) -> "BitString":
        """Inverse of :meth:`to_int` for a fixed length."""
        return cls([(value >> (length - 1 - i)) & 1 for i in range(length)])


def as_bitstring(x: "BitString | str | Sequence[int] | np.ndarray") -> BitString:
    return x if isinstance(x, BitString) else BitString(x)


# ---------------------------------------------------------------------------
# Channel specifications
# ---------------------------------------------------------------------------

KIND_DEL, KIND_INS, KIND_SYM = 0, 1, 2


@dataclass(frozen=True)
class Deletion:
    """Deletion channel; each bit is removed with probability ``delta``."""

    delta: float

    def __post_init__(self):
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"deletion probability must lie in [0, 1), got {self.delta}")

    kind = KIND_DEL
    name = "del"

    @property
    def param(self) -> float:
        return self.delta


@dataclass(frozen=True)
class Insertion:
    """Insertion channel; ``Geom(1 - eta)`` uniform bits precede each bit."""

    eta: float

    def __post_init__(self):
        if not (0.0 <= self.eta < 1.0):
            raise ValueError(f"insertion parameter must lie in [0, 1), got {self.eta}")

    kind = KIND_INS
    name = "ins"

    @property
    def param(self) -> float:
        return self.eta


@dataclass(frozen=True)
class Symmetry:
    """Binary symmetric channel; each bit is flipped with probability ``sigma``."""

    sigma: float

    def __post_init__(self):
        if not (0.0 <= self.sigma < 0.5):
            raise ValueError(f"flip probability must lie in [0, 1/2), got {self.sigma}")

    kind = KIND_SYM
    name = "sym"

    @property
    def param(self) -> float:
        return self.sigma


ChannelSpec = Union[Deletion, Insertion, Symmetry]
_BY_NAME = {"del": Deletion, "ins": Insertion, "sym": Symmetry}


def spec_text(spec: ChannelSpec) -> str:
    return f"{spec.name}:{spec.param!r}"


@dataclass(frozen=True)
class CompositeChannel:
    """Ordered channel stages in application order.

    ``CompositeChannel([Deletion(0.2), Symmetry(0.05)])`` first deletes, then
    flips.  In right-to-left composition notation this is
    ``Symmetry(0.05) ∘ Deletion(0.2)``, i.e. the list reversed.
    """

    stages: tuple

    def __init__(self, stages: Iterable[ChannelSpec] | ChannelSpec):
        if isinstance(stages, (Deletion, Insertion, Symmetry)):
            stages = (stages,)
        stages = tuple(stages)
        if not stages:
            raise ValueError("a composite channel needs at least one stage")
        for s in stages:
            if not isinstance(s, (Deletion, Insertion, Symmetry)):
                raise TypeError(f"not a channel spec: {s!r}")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def parse(cls, text: str) -> "CompositeChannel":
        """Parse ``"del:0.25,sym:0.05"`` (stages in application order)."""
        stages = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            name, sep, val = item.partition(":")
            name = name.strip().lower()
            if not sep or name not in _BY_NAME:
                raise ValueError(f"bad channel stage {item!r}; expected del:/ins:/sym:<float>")
            try:
                p = float(val)
            except ValueError as exc:
                raise ValueError(f"bad channel parameter in {item!r}") from exc
            stages.append(_BY_NAME[name](p))
        return cls(stages)

    def to_text(self) -> str:
        return ",".join(spec_text(s) for s in self.stages)

    def __iter__(self):
        return iter(self.stages)

    def __len__(self) -> int:
        return len(self.stages)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stage kinds and parameters as arrays for compiled kernels."""
        kinds = np.array([s.kind for s in self.stages], dtype=np.int64)
        params = np.array([s.param for s in self.stages], dtype=np.float64)
        return kinds, params


def as_channel(chan: "CompositeChannel | ChannelSpec | str") -> CompositeChannel:
    if isinstance(chan, CompositeChannel):
        return chan
    if isinstance(chan, str):
        return CompositeChannel.parse(chan)
    return CompositeChannel([chan])


# ---------------------------------------------------------------------------
# Deletion merge / split
# ---------------------------------------------------------------------------


def merge_deletions(d1: float, d2: float) -> float:
    """Deletion probability of two deletion channels in sequence."""
    for d in (d1, d2):
        if not (0.0 <= d < 1.0):
            raise ValueError(f"deletion probability must lie in [0, 1), got {d}")
    return 1.0 - (1.0 - d1) * (1.0 - d2)


def split_deletion(delta: float, delta_max: float) -> tuple[float, int]:
    """Write ``Deletion(delta)`` as ``L`` copies of ``Deletion(delta_prime)``.

    Returns the minimal ``L`` with ``1 - (1 - delta)**(1/L) < delta_max``.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not (0.0 < delta_max <= 0.5):
        raise ValueError(f"delta_max must lie in (0, 1/2], got {delta_max}")
    keep = 1.0 - delta
    L = 1
    while 1.0 - keep ** (1.0 / L) >= delta_max:
        L += 1
    if L == 1:
        return float(delta), 1
    return 1.0 - keep ** (1.0 / L), L


def split_channel(chan: "CompositeChannel | str", delta_max: float = 1 / 3) -> CompositeChannel:
    """Replace every deletion stage at or above ``delta_max`` by equal splits."""
    out: list[ChannelSpec] = []
    for s in as_channel(chan).stages:
        if isinstance(s, Deletion) and s.delta >= delta_max:
            dp, L = split_deletion(s.delta, delta_max)
            out.extend([Deletion(dp)] * L)
        else:
            out.append(s)
    return CompositeChannel(out)


# ---------------------------------------------------------------------------
# Möbius generating functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MobiusGF:
    """``G(z) = (a z + b) / (c z + d)``; coefficients are kept unnormalized."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if abs(self.a * self.d - self.b * self.c) < 1e-300:
            raise ValueError("Möbius transform is singular (ad - bc = 0)")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    def __call__(self, z: complex) -> complex:
        return gf_eval(self, z)

    def equivalent(self, other: "MobiusGF", tol: float = 1e-12) -> bool:
        """Equality up to a common scalar factor."""
        u, v = self.matrix.ravel(), other.matrix.ravel()
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        u, v = u / nu, v / nv
        return bool(min(np.max(np.abs(u - v)), np.max(np.abs(u + v))) <= tol)


IDENTITY_GF = MobiusGF(1.0, 0.0, 0.0, 1.0)


def length_gf(spec: ChannelSpec) -> MobiusGF:
    """Generating function of the number of output bits produced per input bit."""
    if isinstance(spec, Deletion):
        return MobiusGF(1.0 - spec.delta, spec.delta, 0.0, 1.0)
    if isinstance(spec, Insertion):
        return MobiusGF(1.0 - spec.eta, 0.0, -spec.eta, 1.0)
    return IDENTITY_GF


def gf_compose(outer: MobiusGF, inner: MobiusGF) -> MobiusGF:
    """``outer ∘ inner`` as a coefficient-matrix product."""
    m = outer.matrix @ inner.matrix
    return MobiusGF(*m.ravel())


def gf_invert(g: MobiusGF) -> MobiusGF:
    """Inverse transform (adjugate of the coefficient matrix)."""
    return MobiusGF(g.d, -g.b, -g.c, g.a)


def gf_eval(g: MobiusGF, z: complex) -> complex:
    den = g.c * z + g.d
    if abs(den) < POLE_TOL:
        raise PoleError(f"pole of Möbius transform at z={z}")
    return (g.a * z + g.b) / den


def composite_gf(chan: CompositeChannel) -> MobiusGF:
    """Per-bit length GF of a composite.

    One input bit becomes ``N_1`` bits after the first stage and each of
    those passes the later stages independently, so the PGF of the final
    count is ``G_1(G_2(...G_L(z)))``: the first-applied stage is outermost.
    """
    g = IDENTITY_GF
    for s in as_channel(chan).stages:
        g = gf_compose(g, length_gf(s))
    return g


def inverse_gf_eval(chan: CompositeChannel, alpha: float) -> complex:
    """``z = G^{-1}(e^{i alpha})`` for the composite length GF."""
    if not (-math.pi <= alpha <= math.pi):
        raise ValueError(f"alpha must lie in [-pi, pi], got {alpha}")
    if alpha == 0.0:
        return 1.0 + 0.0j
    return complex(gf_eval(gf_invert(composite_gf(chan)), complex(math.cos(alpha), math.sin(alpha))))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@njit(cache=True)
def _geom_failures(q: float) -> int:
    """Failures before first success with P[j] = q**j (1 - q)."""
    if q <= 0.0:
        return 0
    u = 1.0 - np.random.random()
    return int(math.floor(math.log(u) / math.log(q)))


@njit(cache=True)
def _grow(buf: np.ndarray, used: int, need: int) -> np.ndarray:
    if need <= buf.shape[0]:
        return buf
    new = np.empty(max(2 * buf.shape[0], need), dtype=buf.dtype)
    new[:used] = buf[:used]
    return new


@njit(cache=True)
def _reverse(buf: np.ndarray, m: int) -> None:
    for i in range(m // 2):
        t = buf[i]
        buf[i] = buf[m - 1 - i]
        buf[m - 1 - i] = t


@njit(cache=True)
def _apply_stage(kind, p, src, n, dst):
    """Apply one stage to ``src[:n]`` writing into ``dst``.

    Returns ``(dst, length)``; ``dst`` is reallocated when it is too small.
    Deletion and insertion walk the input from its last bit to its first.
    """
    dst = _grow(dst, 0, n)
    if kind == 2:
        for i in range(n):
            b = src[i]
            if np.random.random() < p:
                b = 1 - b
            dst[i] = b
        return dst, n
    m = 0
    if kind == 0:
        for i in range(n - 1, -1, -1):
            if np.random.random() >= p:
                dst[m] = src[i]
                m += 1
    else:
        for i in range(n - 1, -1, -1):
            dst = _grow(dst, m, m + 1)
            dst[m] = src[i]
            m += 1
            g = _geom_failures(p)
            dst = _grow(dst, m, m + g)
            for _ in range(g):
                dst[m] = 1 if np.random.random() < 0.5 else 0
                m += 1
    _reverse(dst, m)
    return dst, m


@njit(cache=True, nogil=True)
def _simulate_block(x_data, x_off, x_idx, kinds, params, seed):
    """Simulate one trace per entry of ``x_idx`` (indices into a CSR input set)."""
    np.random.seed(seed)
    n_tr = x_idx.shape[0]
    out_len = np.zeros(n_tr, dtype=np.int64)
    out = np.empty(64 + 2 * n_tr, dtype=np.uint8)
    used = 0
    a = np.empty(64, dtype=np.uint8)
    b = np.empty(64, dtype=np.uint8)
    for t in range(n_tr):
        xi = x_idx[t]
        s0 = x_off[xi]
        n = x_off[xi + 1] - s0
        a = _grow(a, 0, n)
        for i in range(n):
            a[i] = x_data[s0 + i]
        m = n
        for s in range(kinds.shape[0]):
            b, m = _apply_stage(kinds[s], params[s], a, m, b)
            a, b = b, a
        out = _grow(out, used, used + m)
        out[used:used + m] = a[:m]
        used += m
        out_len[t] = m
    return out[:used].copy(), out_len


@dataclass(frozen=True)
class TraceSet:
    """A batch of traces in compressed-row form.

    Trace ``t`` is ``data[offsets[t]:offsets[t + 1]]``.
    """

    data: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_strings(cls, traces: Iterable["BitString | str"]) -> "TraceSet":
        arrs = [as_bitstring(t).bits for t in traces]
        lens = np.array([a.size for a in arrs], dtype=np.int64)
        offsets = np.zeros(lens.size + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        data = np.concatenate(arrs).astype(np.uint8) if arrs else np.zeros(0, np.uint8)
        return cls(data, offsets)

    @classmethod
    def concat(cls, parts: Sequence["TraceSet"]) -> "TraceSet":
        data = np.concatenate([p.data for p in parts]) if parts else np.zeros(0, np.uint8)
        lens = np.concatenate([np.diff(p.offsets) for p in parts]) if parts else np.zeros(0, np.int64)
        offsets = np.zeros(lens.size + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        return cls(data, offsets)

    def __len__(self) -> int:
        return int(self.offsets.size - 1)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __getitem__(self, t: int) -> BitString:
        return BitString(self.data[self.offsets[t]:self.offsets[t + 1]])

    def __iter__(self) -> Iterator[BitString]:
        return (self[t] for t in range(len(self)))

    def max_length(self) -> int:
        return int(self.lengths.max()) if len(self) else 0


def as_traceset(traces) -> TraceSet:
    if isinstance(traces, TraceSet):
        return traces
    return TraceSet.from_strings(traces)


def _run_simulation(chan: CompositeChannel, inputs: TraceSet, which: np.ndarray, seed: int,
                    workers: int) -> TraceSet:
    kinds, params = chan.arrays()
    purpose = PURPOSE["simulate"]

    def block(b, start, stop):
        data, lens = _simulate_block(inputs.data, inputs.offsets, which[start:stop], kinds,
                                     params, block_seed(seed, purpose, b))
        offsets = np.zeros(lens.size + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        return TraceSet(data, offsets)

    parts = run_blocks(block, which.size, workers)
    return TraceSet.concat(parts) if parts else TraceSet(np.zeros(0, np.uint8), np.zeros(1, np.int64))


def sample_traces(chan: "CompositeChannel | str", x: "BitString | str", n: int,
                  seed: int | np.random.Generator | None = None, workers: int = 1) -> TraceSet:
    """Draw ``n`` independent traces of ``x``.

    Trace ``t`` lives in block ``t // BLOCK_SIZE`` whose stream depends only on
    ``(seed, block)``, so the output does not depend on ``workers``.
    """
    chan = as_channel(chan)
    inputs = TraceSet.from_strings([as_bitstring(x)])
    return _run_simulation(chan, inputs, np.zeros(int(n), dtype=np.int64), draw_seed(seed), workers)


def sample_population_traces(chan: "CompositeChannel | str", strings: Sequence["BitString | str"],
                             probs: Sequence[float], n: int, seed: int | None = None,
                             workers: int = 1) -> TraceSet:
    """Traces of inputs drawn independently from a finite population."""
    chan = as_channel(chan)
    seed = draw_seed(seed)
    inputs = TraceSet.from_strings(strings)
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()

    def pick(b, start, stop):
        g = block_generator(seed, PURPOSE["input"], b)
        return g.choice(p.size, size=stop - start, p=p).astype(np.int64)

    which = np.concatenate(run_blocks(pick, int(n), 1)) if n else np.zeros(0, np.int64)
    return _run_simulation(chan, inputs, which, seed, workers)


def apply_channel(spec: ChannelSpec, x: "BitString | str", rng=None) -> BitString:
    """One pass of a single channel over ``x``."""
    return sample_trace(CompositeChannel([spec]), x, rng)


def sample_trace(chan: "CompositeChannel | str", x: "BitString | str", rng=None) -> BitString:
    """One trace of ``x``; identical seed and stage list give identical output."""
    seed = draw_seed(rng)
    return sample_traces(chan, x, 1, seed)[0]


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------


def write_traces(path, traces, header: Sequence[str] = ()) -> None:
    """One trace per line; header lines are written as ``#`` comments."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        ts = as_traceset(traces)
        chars = ts.data + ord("0")
        for t in range(len(ts)):
            fh.write(chars[ts.offsets[t]:ts.offsets[t + 1]].tobytes().decode("ascii"))
            fh.write("\n")


def read_traces(path) -> TraceSet:
    """Inverse of :func:`write_traces`; an empty line is an empty trace."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line.startswith("#"):
                continue
            rows.append(BitString(line))
    return TraceSet.from_strings(rows)
