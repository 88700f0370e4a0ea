"""Command-line interface: ``qpolar <subcommand> ...``.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error, 3 decode failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import channel as ch
from . import code as cd
from .decoder import FingerprintMismatch, ScDecoder
from .polarize import (
    DEFAULT_MAX_OUTPUTS,
    SynthesisResourceError,
    histogram_csv,
    polarization_histogram,
    synthesize_all,
    validate_bhatta_order,
    validate_stats,
    validate_transform_identities,
)
from .sim import polarization_rate_curve, rate_curve_csv, simulate_fer

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_DECODE = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_channel_args(p):
    g = p.add_argument_group("channel source (builder parameters or a channel file)")
    g.add_argument("--builder", choices=["ordered-erasure", "ordered-symmetric", "file"],
                   help="channel family; 'file' reads --channel")
    g.add_argument("--r", type=int, help="bits per input symbol for builders (q = 2^r)")
    g.add_argument("--eps", type=_float_list, help="comma list of r+1 probabilities eps_0..eps_r")
    g.add_argument("--channel", metavar="PATH", help="channel JSON file (implies --builder file)")


def _add_synthesis_args(p, need_n=True):
    p.add_argument("--n", type=int, required=need_n, help="recursion depth; block length N = 2^n")
    p.add_argument("--max-outputs", type=int, default=DEFAULT_MAX_OUTPUTS,
                   help=f"output-alphabet cap before quantization (default {DEFAULT_MAX_OUTPUTS})")


def _add_construction_choice(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--epsilon", type=float, help="threshold construction: freeze levels with Z_i >= epsilon")
    g.add_argument("--target-bits", type=int, help="rate construction: exact number of data bits")
    g.add_argument("--rate", type=float, help="rate construction in bits per symbol (target = round(rate*N))")
    p.add_argument("--frozen-fill", choices=["zeros", "random"], default="zeros",
                   help="frozen bit values (default zeros; random uses --seed)")


def _add_common(p):
    p.add_argument("-o", "--output", metavar="PATH", help="output file (default stdout)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="cap on worker threads (default: available cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpolar", description="q-ary polar code toolkit (q = 2^r, H2 kernel)")
    parser.add_argument("--version", action="version", version=f"qpolar {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("channel-info", help="capacity, Bhattacharyya statistics and capacity bounds (JSON)")
    _add_channel_args(p)
    _add_common(p)

    p = sub.add_parser("polarize", help="synthesize all virtual channels; CSV table and histogram")
    _add_channel_args(p)
    _add_synthesis_args(p)
    p.add_argument("--epsilon", type=float, default=0.1, help="Z-region threshold for class_k (default 0.1)")
    p.add_argument("--delta", type=float, default=0.1, help="capacity window for the histogram (default 0.1)")
    p.add_argument("--histogram", metavar="PATH", help="write the polarization histogram CSV here")
    _add_common(p)

    p = sub.add_parser("construct", help="build a frozen-prefix construction file (JSON)")
    _add_channel_args(p)
    _add_synthesis_args(p)
    _add_construction_choice(p)
    p.add_argument("--seed", type=int, default=0, help="seed for --frozen-fill random (default 0)")
    _add_common(p)

    p = sub.add_parser("encode", help="encode data bits into a codeword of symbols")
    p.add_argument("--construction", required=True, metavar="PATH", help="construction JSON file")
    p.add_argument("--input", required=True, metavar="PATH", help="data bits, whitespace-separated 0/1")
    p.add_argument("--binary", action="store_true", help="write codeword as one byte per symbol")
    _add_common(p)

    p = sub.add_parser("decode", help="SC-decode received outputs into data bits")
    _add_channel_args(p)
    p.add_argument("--construction", required=True, metavar="PATH", help="construction JSON file")
    p.add_argument("--input", required=True, metavar="PATH",
                   help="received output labels, whitespace-separated (or bytes of output indices with --binary)")
    p.add_argument("--binary", action="store_true", help="input holds one byte per output index")
    p.add_argument("--status", metavar="PATH", help="write a JSON status record (failure flag, counts) here")
    _add_common(p)

    p = sub.add_parser("simulate", help="Monte Carlo frame error rate (JSON or CSV)")
    _add_channel_args(p)
    p.add_argument("--construction", metavar="PATH", help="construction JSON file (else built from --n and a rule)")
    _add_synthesis_args(p, need_n=False)
    _add_construction_choice(p)
    p.add_argument("--trials", type=int, default=1000, help="number of frames (default 1000)")
    p.add_argument("--seed", type=int, default=0, help="master seed; trial i uses stream (seed, i)")
    p.add_argument("--max-frame-errors", type=int, help="stop once this many frame errors occurred")
    p.add_argument("--genie", action="store_true", help="feed back true symbols; record per-index errors")
    p.add_argument("--format", choices=["json", "csv"], default="json", help="report format (default json)")
    p.add_argument("--no-time", action="store_true", help="omit wall time for byte-stable output")
    _add_common(p)

    p = sub.add_parser("validate", help="check transform identities and inequalities")
    _add_channel_args(p)
    p.add_argument("--random", type=int, metavar="K", help="validate K random channels instead of one")
    p.add_argument("--max-m", type=int, default=8, help="largest output alphabet for random channels (default 8)")
    p.add_argument("--seed", type=int, default=0, help="seed for random channels (default 0)")
    p.add_argument("--tol", type=float, default=1e-9, help="tolerance for identities (default 1e-9)")
    p.add_argument("--delta-prime", type=float, default=0.5, help="delta' for the ordering check (default 0.5)")
    _add_common(p)

    p = sub.add_parser("rate-curve", help="fraction of sampled paths with Z_max^(r) < 2^(-2^(alpha n)) (CSV)")
    _add_channel_args(p)
    p.add_argument("--n-list", type=_int_list, required=True, help="comma list of depths, e.g. 6,8,10,12")
    p.add_argument("--alpha", type=float, required=True, help="exponent alpha")
    p.add_argument("--paths", type=int, default=1000, help="sampled trajectories per depth (default 1000)")
    p.add_argument("--seed", type=int, default=0, help="path seed (default 0)")
    p.add_argument("--max-outputs", type=int, default=DEFAULT_MAX_OUTPUTS, help="output-alphabet cap")
    _add_common(p)
    return parser


# ---------------------------------------------------------------- helpers


def _channel(args) -> ch.Dmc:
    builder = args.builder
    if args.channel is not None:
        if builder not in (None, "file"):
            raise UsageError("--channel cannot be combined with --builder " + builder)
        return ch.load(args.channel)
    if builder is None:
        raise UsageError("a channel source is required: --builder NAME --r R --eps ... or --channel PATH")
    if builder == "file":
        raise UsageError("--builder file needs --channel PATH")
    if args.r is None or args.eps is None:
        raise UsageError(f"--builder {builder} needs --r and --eps")
    if builder == "ordered-erasure":
        return ch.build_ordered_erasure(args.r, args.eps)
    return ch.build_ordered_symmetric(args.r, args.eps)


def _provenance(args) -> str:
    params = {k: v for k, v in sorted(vars(args).items()) if k != "threads"}
    return "qpolar " + json.dumps(params, sort_keys=True, separators=(",", ":"))


def _emit(text: str, path=None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _json_floats(a) -> list:
    return [float(v) for v in np.asarray(a).ravel()]


def _construction_from_args(args, W, table):
    if args.epsilon is not None:
        return cd.construct_by_threshold(table, args.epsilon, args.frozen_fill, args.seed)
    if args.target_bits is not None:
        return cd.construct_by_rate(table, args.target_bits, args.frozen_fill, args.seed)
    if args.rate is not None:
        return cd.construct_by_rate(table, int(round(args.rate * table.N)), args.frozen_fill, args.seed)
    raise UsageError("choose one of --epsilon, --target-bits, --rate")


# ---------------------------------------------------------------- subcommands


def cmd_channel_info(args) -> int:
    W = _channel(args)
    s = ch.channel_stats(W)
    lo, hi = ch.iwzw_bounds(s)
    info = {
        "r": W.r,
        "q": W.q,
        "outputs": W.num_outputs,
        "capacity": s.capacity,
        "z_v": _json_floats(s.z_v),
        "z_level": _json_floats(s.z_level),
        "z_avg": s.z_avg,
        "z_max_level": _json_floats(s.z_max_level),
        "capacity_lower_bound": lo,
        "capacity_upper_bound": hi,
    }
    if args.builder == "ordered-erasure":
        info["closed_form_capacity"] = ch.capacity_ordered_erasure(args.r, args.eps)
    elif args.builder == "ordered-symmetric":
        info["closed_form_capacity"] = ch.capacity_ordered_symmetric_closed_form(args.r, args.eps)
    _emit(json.dumps(info, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_polarize(args) -> int:
    W = _channel(args)
    table = synthesize_all(W, args.n, args.max_outputs)
    prov = _provenance(args)
    _emit(table.to_csv(args.epsilon, comment=prov), args.output)
    if args.histogram:
        hist = polarization_histogram(table, args.delta, args.epsilon)
        _emit(histogram_csv(hist, comment=prov), args.histogram)
    return EXIT_OK


def cmd_construct(args) -> int:
    W = _channel(args)
    table = synthesize_all(W, args.n, args.max_outputs)
    c = _construction_from_args(args, W, table)
    _emit(json.dumps(c.to_json()) + "\n", args.output)
    return EXIT_OK


def cmd_encode(args) -> int:
    c = cd.load(args.construction)
    bits = cd.read_symbols(args.input)
    _, x = cd.encode(c, bits)
    if args.output is None and args.binary:
        sys.stdout.buffer.write(x.astype(np.uint8).tobytes())
    elif args.output is None:
        sys.stdout.write(" ".join(str(int(v)) for v in x) + "\n")
    else:
        cd.write_symbols(x, args.output, binary=args.binary)
    return EXIT_OK


def cmd_decode(args) -> int:
    W = _channel(args)
    c = cd.load(args.construction)
    dec = ScDecoder(c, W)
    if args.binary:
        idx = cd.read_symbols(args.input, binary=True)
        if idx.size and idx.max() >= W.num_outputs:
            raise ch.ChannelError(f"output index {int(idx.max())} outside the channel's {W.num_outputs} outputs")
        labels = [W.labels[i] for i in idx]
    else:
        labels = cd.read_tokens(args.input)
    if len(labels) != c.N:
        raise cd.CodeError(f"expected {c.N} received symbols, got {len(labels)}")
    res = dec.decode(labels)
    _emit(" ".join(str(int(b)) for b in res.data_bits) + "\n", args.output)
    status = {"failure": res.failure, "data_bits": int(res.data_bits.size), "N": c.N}
    if args.status:
        _emit(json.dumps(status) + "\n", args.status)
    if res.failure:
        sys.stderr.write("qpolar: decode failure (contradictory evidence); best-effort bits written\n")
        return EXIT_DECODE
    return EXIT_OK


def cmd_simulate(args) -> int:
    W = _channel(args)
    if args.construction:
        c = cd.load(args.construction)
        if args.n is not None and args.n != c.n:
            raise UsageError(f"--n {args.n} disagrees with the construction's n={c.n}")
        table = synthesize_all(W, c.n, args.max_outputs)
    else:
        if args.n is None:
            raise UsageError("simulate needs --construction or --n with a construction rule")
        table = synthesize_all(W, args.n, args.max_outputs)
        c = _construction_from_args(args, W, table)
    rep = simulate_fer(W, c, args.trials, args.seed, genie=args.genie, table=table,
                       max_frame_errors=args.max_frame_errors, workers=max(1, args.threads))
    if args.format == "json":
        text = rep.to_json(include_time=not args.no_time) + "\n"
    else:
        text = rep.csv_header() + rep.csv_row(include_time=not args.no_time)
    _emit(text, args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.random is not None:
        if args.r is None:
            raise UsageError("--random needs --r")
        if args.channel is not None or args.builder is not None:
            raise UsageError("--random cannot be combined with a channel source")
        g = np.random.default_rng(args.seed)
        channels = [ch.random_channel(args.r, int(g.integers(2, args.max_m + 1)), g) for _ in range(args.random)]
    else:
        channels = [_channel(args)]
    failures = []
    checked = 0
    for i, W in enumerate(channels):
        for rep in (validate_stats(W), validate_transform_identities(W, args.tol),
                    validate_bhatta_order(W, args.delta_prime)):
            checked += len(rep.checks)
            failures.extend({"channel": i, "check": c.name, "residual": c.residual} for c in rep.failures())
    summary = {"channels": len(channels), "checks": checked, "failures": failures, "passed": not failures}
    _emit(json.dumps(summary, indent=2) + "\n", args.output)
    return EXIT_OK if not failures else EXIT_DOMAIN


def cmd_rate_curve(args) -> int:
    W = _channel(args)
    rows = polarization_rate_curve(W, args.n_list, args.alpha, args.paths, args.seed, args.max_outputs)
    _emit(rate_curve_csv(rows, comment=_provenance(args)), args.output)
    return EXIT_OK


COMMANDS = {
    "channel-info": cmd_channel_info,
    "polarize": cmd_polarize,
    "construct": cmd_construct,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "rate-curve": cmd_rate_curve,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"qpolar {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except FingerprintMismatch as exc:
        sys.stderr.write(f"qpolar: {exc}; rebuild the construction for this channel\n")
        return EXIT_DOMAIN
    except (ch.ChannelError, cd.CodeError, SynthesisResourceError, ValueError) as exc:
        sys.stderr.write(f"qpolar: {exc}\n")
        return EXIT_DOMAIN
    except OSError as exc:
        sys.stderr.write(f"qpolar: cannot access {exc.filename or ''}: {exc.strerror or exc}\n")
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
