"""Command-line entry point.

Subcommands: ``simulate``, ``kmer``, ``poprec``, ``reconstruct``, ``verify``
and ``bench``.  Exit codes: 0 on success, 1 when a verification fails, 2 on
usage errors (bad flags, unparsable channels, unreadable files).

Every random quantity derives from ``--seed`` through per-block streams, so
outputs do not depend on ``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from typing import Sequence

import numpy as np

from .channels import (BitString, PoleError, as_channel, read_traces,
                       sample_traces, write_traces)
from .kmer import KmerQuery, estimate_kmer, exact_kmer_value
from .population import recover_population, tvd
from .reconstruct import ReconstructParams, reconstruct_detailed
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bits(text: str) -> BitString:
    if any(c not in "01" for c in text):
        raise argparse.ArgumentTypeError(f"not a bit string: {text!r}")
    return BitString(text)


def _input_string(args) -> BitString:
    given = [a for a in (args.input, args.input_file, args.random_length) if a is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --input, --input-file, --random-length")
    if args.input is not None:
        return args.input
    if args.input_file is not None:
        with open(args.input_file, encoding="ascii") as fh:
            return _bits(fh.read().strip())
    rng = np.random.default_rng([args.seed, 0x1D])
    return BitString(rng.integers(0, 2, size=args.random_length).astype(np.uint8))


def _load_traces(path: str):
    try:
        return read_traces(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read traces from {path}: {exc}") from exc


def _emit_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    chan = as_channel(args.chan)
    x = _input_string(args)
    traces = sample_traces(chan, x, args.n_traces, seed=args.seed, workers=args.workers)
    digest = hashlib.sha256(str(x).encode("ascii")).hexdigest()[:16]
    header = [f"channel {chan.to_text()}", f"seed {args.seed}", f"input_sha256 {digest}",
              f"input_length {len(x)}", f"n_traces {args.n_traces}"]
    try:
        write_traces(args.out, traces, header)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def cmd_kmer(args) -> int:
    chan = as_channel(args.chan)
    traces = _load_traces(args.traces)
    if len(traces) == 0:
        raise UsageError("trace file is empty")
    q = KmerQuery(args.marker, args.alpha, args.eps)
    est = estimate_kmer(traces, chan, q, rng=args.seed, workers=args.workers)
    out = {
        "value_re": est.value.real, "value_im": est.value.imag, "alpha": est.alpha,
        "z_re": est.z_used.real, "z_im": est.z_used.imag, "n_traces": est.n_traces,
        "gamma_total": est.gamma_total, "k_prime": est.k_prime, "stderr": est.stderr_proxy,
        "bias_budget": est.bias_budget, "marker": str(q.w), "channel": chan.to_text(),
    }
    if args.exact:
        if args.input is None:
            raise UsageError("--exact needs --input")
        ex = exact_kmer_value(args.input, q.w, complex(math.cos(q.alpha), math.sin(q.alpha)))
        out.update(exact_re=ex.real, exact_im=ex.imag, error=abs(est.value - ex))
    _emit_json(out, args.out)
    return EXIT_OK


def _truth(text: str | None) -> dict | None:
    if text is None:
        return None
    try:
        if text.lstrip().startswith("{"):
            return json.loads(text)
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read ground truth {text!r}: {exc}") from exc


def cmd_poprec(args) -> int:
    chan = as_channel(args.chan)
    traces = _load_traces(args.traces)
    est = recover_population(traces, chan, args.k, args.eps, rng=args.seed, workers=args.workers)
    out = {"k": args.k, "channel": chan.to_text(), "n_traces": len(traces), "clipped": est.as_json()}
    truth = _truth(args.truth)
    if truth is not None:
        full = {str(y): 0.0 for y in est.probs}
        for y, p in truth.items():
            if len(y) != args.k or y not in full:
                raise UsageError(f"ground truth key {y!r} is not a length-{args.k} bit string")
            full[y] = float(p)
        out["max_raw_deviation"] = max(abs(est.probs[BitString(y)] - p) for y, p in full.items())
        out["tvd"] = tvd(est, full)
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    chan = as_channel(args.chan)
    traces = _load_traces(args.traces)
    params = ReconstructParams(mode=args.mode, k=args.k, alpha_max=args.alpha_max, net_size=args.net_size,
                               c1=args.c1, c2=args.c2, eps=args.eps, strict=args.strict,
                               workers=args.workers)
    res = reconstruct_detailed(traces, chan, args.n, params, rng=args.seed)
    print(res.string)
    diag = res.diagnostics()
    diag["n_traces"] = len(traces)
    if args.diagnostics:
        _emit_json(diag, args.diagnostics)
    else:
        print(json.dumps(diag, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    kwargs = {}
    if args.suite == "unbiasedness":
        kwargs = {"max_n": args.max_n, "max_k": args.max_k, "timeout": args.timeout}
        if args.channels:
            kwargs["channels"] = args.channels.split(";")
    elif args.suite in ("tail",):
        kwargs = {"seed": args.seed}
    res = run_suite(args.suite, **kwargs)
    print(res.report())
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_bench(args) -> int:
    if args.input is None and args.input_file is None and args.random_length is None:
        args.random_length = 30
    x = _input_string(args)
    params = [float(p) for p in args.params.split(",")]
    rows = []
    zeta = complex(math.cos(args.alpha), math.sin(args.alpha))
    exact = exact_kmer_value(x, args.marker, zeta)
    for i, p in enumerate(params):
        chan = as_channel(f"{args.family}:{p}")
        t0 = time.perf_counter()
        tr = sample_traces(chan, x, args.n_traces, seed=[args.seed, i], workers=args.workers)
        est = estimate_kmer(tr, chan, KmerQuery(args.marker, args.alpha, args.eps),
                            rng=[args.seed, i, 1], workers=args.workers)
        dt = time.perf_counter() - t0
        rows.append({"channel": chan.to_text(), "param": p, "n_traces": args.n_traces, "alpha": args.alpha,
                     "marker": args.marker, "error": abs(est.value - exact), "stderr": est.stderr_proxy,
                     "bias_budget": est.bias_budget, "wall_s": round(dt, 4)})
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p, traces: bool = True) -> None:
    p.add_argument("--chan", required=True, help="channel, e.g. del:0.2,sym:0.05")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--workers", type=int, default=1, help="worker threads")
    if traces:
        p.add_argument("--traces", required=True, help="trace file")


def _add_input(p) -> None:
    p.add_argument("--input", type=_bits, help="input bit string")
    p.add_argument("--input-file", help="file holding the input bit string")
    p.add_argument("--random-length", type=int, help="draw a random input of this length from the seed")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qptrace", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write traces of an input string")
    _add_common(p, traces=False)
    _add_input(p)
    p.add_argument("--n-traces", "-N", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kmer", help="estimate one k-mer value")
    _add_common(p)
    p.add_argument("--marker", type=_bits, required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--exact", action="store_true", help="also report the exact value of --input")
    p.add_argument("--input", type=_bits)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kmer)

    p = sub.add_parser("poprec", help="recover a population of length-k strings")
    _add_common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--truth", help="ground truth as a JSON object or a JSON file path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_poprec)

    p = sub.add_parser("reconstruct", help="reconstruct an input string from its traces")
    _add_common(p)
    p.add_argument("--mode", choices=("lp", "exhaustive"), default="lp")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha-max", type=float, default=math.pi / 4)
    p.add_argument("--net-size", type=int, default=64)
    p.add_argument("--c1", type=float, default=3.0)
    p.add_argument("--c2", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--strict", action="store_true", help="fail when both hypotheses are infeasible")
    p.add_argument("--diagnostics", help="write the diagnostics JSON here instead of stdout")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--max-n", type=int, default=8)
    p.add_argument("--max-k", type=int, default=3)
    p.add_argument("--channels", help="semicolon-separated channels for the unbiasedness suite")
    p.add_argument("--timeout", type=float, help="seconds allowed per unbiasedness case")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="k-mer error over a parameter sweep, as CSV")
    p.add_argument("--family", choices=("del", "ins", "sym"), default="del")
    p.add_argument("--params", default="0.1,0.2,0.3")
    p.add_argument("--marker", default="101")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--n-traces", "-N", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    _add_input(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, PoleError) as exc:
        print(f"qptrace {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
