"""Command-line interface.

Subcommands: run, plan, factorize, compare-packings, verify, report.
Exit codes: 0 success, 1 usage or input errors, 2 verification failure.

Reports are written as a human-readable table at the --output path plus
machine-readable records (one JSON object per row) at <output>.jsonl.
Output files are written atomically; nothing is left behind on error.
Raw image inputs are unsigned 8-bit bytes in dense layout order
(channel-major, row by row, width fastest), with the length validated
against the network's input shape.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import costmodel
from .factorize import (
    matrix_to_weights,
    quantize_factors,
    rank_search,
    reconstruction_error,
    truncated_svd,
    weights_to_matrix,
)
from .netspec import LayerSpec, NetworkError, NetworkSpec, load_network, save_network
from .planner import STRATEGIES, build_plan
from .presets import PRESET_NAMES, preset_network
from .runner import ModulusTooSmallError, run_encrypted, verify
from .weights import (
    WeightFileError,
    WeightSet,
    WeightTensor,
    load_weights,
    random_weights,
    save_weights,
)


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".cipherpack-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_net(args) -> NetworkSpec:
    if args.preset and args.net:
        raise CliError("give either --net or --preset, not both")
    if args.preset:
        try:
            net = preset_network(args.preset)
        except KeyError as exc:
            raise CliError(str(exc)) from exc
    elif args.net:
        try:
            net = load_network(args.net)
        except FileNotFoundError:
            raise CliError(f"network file not found: {args.net}") from None
        except NetworkError as exc:
            raise CliError(f"invalid network file: {exc}") from exc
    else:
        raise CliError("a network is required (--net PATH or --preset NAME)")
    if args.rotation_weight is not None:
        scheme = net.scheme
        scheme = type(scheme)(n_slots=scheme.n_slots, t=scheme.t,
                              rotation_weight=args.rotation_weight,
                              noise_budget_bits=scheme.noise_budget_bits,
                              security_bits=scheme.security_bits)
        net = NetworkSpec(scheme=scheme, input_shape=net.input_shape,
                          layers=net.layers, version=net.version)
    return net


def _apply_pattern_override(net: NetworkSpec, pattern: str | None) -> NetworkSpec:
    if pattern is None:
        return net
    layers = tuple(
        LayerSpec(kind=l.kind, d=l.d, stride=l.stride, out_channels=l.out_channels,
                  rank=l.rank, packing_hint=pattern.lower())
        if l.kind == "ffconv" else l
        for l in net.layers)
    return NetworkSpec(scheme=net.scheme, input_shape=net.input_shape,
                       layers=layers, version=net.version)


def _load_weights_or_random(args, net: NetworkSpec) -> WeightSet:
    if args.weights:
        try:
            return load_weights(args.weights)
        except FileNotFoundError:
            raise CliError(f"weight file not found: {args.weights}") from None
        except WeightFileError as exc:
            raise CliError(f"invalid weight file: {exc}") from exc
    rng = np.random.default_rng(args.seed)
    print(f"# no --weights given; synthesizing random quantized weights (seed {args.seed})")
    return random_weights(net, rng, bound=3)


def _load_input(args, net: NetworkSpec) -> np.ndarray:
    shape = net.input_shape
    expected = shape.size
    if not args.input:
        raise CliError("--input is required unless --count-only is set")
    try:
        with open(args.input, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CliError(f"input file not found: {args.input}") from None
    if len(raw) != expected:
        raise CliError(f"input file holds {len(raw)} bytes, expected "
                       f"{expected} for {shape.w}x{shape.h}x{shape.c}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64).reshape(
        shape.c, shape.h, shape.w)


def _emit_report(report, args) -> None:
    print(report.table())
    if args.output:
        _write_atomic(args.output, report.table() + "\n")
        records = "\n".join(json.dumps(r, sort_keys=True) for r in report.records())
        _write_atomic(args.output + ".jsonl", records + "\n")
        print(f"# report written to {args.output} and {args.output}.jsonl")


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def cmd_run(args) -> int:
    net = _apply_pattern_override(_load_net(args), args.pattern)
    weights = _load_weights_or_random(args, net)
    plan = build_plan(net, args.strategy)
    if args.count_only:
        result = run_encrypted(net, plan, weights, None, track_values=False)
    else:
        x = _load_input(args, net)
        try:
            result = run_encrypted(net, plan, weights, x)
        except (ModulusTooSmallError, ValueError, WeightFileError) as exc:
            raise CliError(str(exc)) from exc
        print("logits:", " ".join(str(int(v)) for v in result.logits))
        if result.logits.tolist() != result.reference_logits.tolist():
            raise CliError("encrypted logits diverge from the reference oracle", code=2)
    print(f"depth: {result.depth} (+{result.assembly_depth} assembly)")
    if result.ledger is not None:
        for warning in result.ledger.warnings():
            print(f"# warning: {warning}")
    _emit_report(result.report, args)
    return 0


def cmd_plan(args) -> int:
    net = _apply_pattern_override(_load_net(args), args.pattern)
    plan = build_plan(net, args.strategy)
    print(f"strategy: {plan.strategy}")
    for step in plan.steps:
        print(f"  {step.label():42s} {step.in_form or '-':8s} -> {step.out_form or '-':8s}"
              + (f"  [{step.pattern}]" if step.pattern else ""))
    report = costmodel.predict_network(net, plan)
    _emit_report(report, args)
    return 0


def cmd_report(args) -> int:
    return cmd_plan(args)


def cmd_factorize(args) -> int:
    net = _load_net(args)
    if not args.weights:
        raise CliError("--weights is required for factorize")
    weights = _load_weights_or_random(args, net)
    i = args.layer
    if i is None or not 0 <= i < len(net.layers):
        raise CliError(f"--layer must be in [0, {len(net.layers) - 1}]")
    layer = net.layers[i]
    if layer.kind != "conv":
        raise CliError(f"layer {i} is {layer.kind}, not a convolution")
    tensor = weights[f"layer{i}.weight"]
    w_real = weights_to_matrix(tensor.values.astype(np.float64)) * tensor.scale
    if args.rank is not None and args.budget is not None:
        raise CliError("give either --rank or --budget, not both")
    if args.rank is not None:
        rank = args.rank
    elif args.budget is not None:
        rank = rank_search(w_real, args.budget)
    else:
        raise CliError("factorize needs --rank or --budget")
    try:
        pair = quantize_factors(truncated_svd(w_real, rank), tensor.bits)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    rel_err = reconstruction_error(w_real, truncated_svd(w_real, rank)) / max(
        float(np.linalg.norm(w_real)), 1e-300)
    print(f"layer {i}: rank {rank}, relative reconstruction error {rel_err:.6f}")

    in_c = tensor.values.shape[2]
    out_ws = WeightSet()
    for name in weights.names():
        if name == f"layer{i}.weight":
            out_ws.add(WeightTensor(
                name=f"layer{i}.w1",
                values=matrix_to_weights(pair.w1, d=layer.d, in_channels=in_c),
                bits=tensor.bits, scale=pair.scale1))
            out_ws.add(WeightTensor(
                name=f"layer{i}.w2",
                values=matrix_to_weights(pair.w2, d=1, in_channels=rank),
                bits=tensor.bits, scale=pair.scale2))
            w1s = out_ws[f"layer{i}.w1"].values.shape
            w2s = out_ws[f"layer{i}.w2"].values.shape
            print(f"factor shapes: {w1s} and {w2s}")
        else:
            out_ws.add(weights[name])
    hint = (args.pattern or "dp-hi2c-cp").lower()
    layers = list(net.layers)
    layers[i] = LayerSpec(kind="ffconv", d=layer.d, stride=layer.stride,
                          out_channels=layer.out_channels, rank=rank,
                          packing_hint=hint)
    new_net = NetworkSpec(scheme=net.scheme, input_shape=net.input_shape,
                          layers=tuple(layers), version=net.version)
    if not args.output:
        raise CliError("--output PATH is required (weights written to PATH, "
                       "network to PATH.net.json)")
    save_weights(out_ws, args.output)
    save_network(new_net, args.output + ".net.json")
    print(f"# factorized weights written to {args.output}, "
          f"network spec to {args.output}.net.json")
    return 0


def cmd_compare_packings(args) -> int:
    net = _load_net(args)
    if args.layer is None:
        raise CliError("--layer is required")
    try:
        ranked = costmodel.compare_plans(net, args.layer, rank=args.rank,
                                         rotation_weight=args.rotation_weight)
    except (ValueError, IndexError) as exc:
        raise CliError(str(exc)) from exc
    rw = args.rotation_weight if args.rotation_weight is not None \
        else net.scheme.rotation_weight
    print(f"rotation weight: {rw:g}")
    print(f"{'pattern':14s} {'mul_pc':>10s} {'add_cc':>10s} {'rot':>10s} {'weighted':>14s}")
    for v in ranked:
        print(f"{v.pattern:14s} {v.triple.mul_pc:>10d} {v.triple.add_cc:>10d} "
              f"{v.triple.rot:>10d} {v.weighted:>14.0f}")
    return 0


def cmd_verify(args) -> int:
    net = _apply_pattern_override(_load_net(args), args.pattern)
    weights = None
    if args.weights:
        weights = _load_weights_or_random(args, net)
    plan = build_plan(net, args.strategy)
    report = verify(net, plan, weights=weights, trials=args.trials, seed=args.seed)
    print(report.summary())
    return 0 if report.ok else 2


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--net", help="network spec file (JSON)")
    p.add_argument("--preset", help=f"built-in network: {', '.join(PRESET_NAMES)}")
    p.add_argument("--weights", help="weight file")
    p.add_argument("--output", help="report/artifact output path")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--rotation-weight", type=float, default=None,
                   help="override the rotation cost multiplier")
    p.add_argument("--pattern", default=None,
                   help="override the two-stage packing pattern of ffconv layers")
    p.add_argument("--strategy", default="ffconv-default", choices=STRATEGIES,
                   help="packing strategy (default ffconv-default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cipherpack",
        description="Slot-packed ciphertext CNN inference simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a network over packed ciphertexts")
    _add_common(p)
    p.add_argument("--input", help="raw uint8 image (dense layout order)")
    p.add_argument("--count-only", action="store_true",
                   help="skip slot values; measure operation counts only")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plan", help="show the packing plan and predicted costs")
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("report", help="predicted cost report (alias of plan)")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("factorize", help="low-rank factorize a convolution layer")
    _add_common(p)
    p.add_argument("--layer", type=int, help="index of the layer to factorize")
    p.add_argument("--rank", type=int, default=None, help="target rank")
    p.add_argument("--budget", type=float, default=None,
                   help="relative Frobenius error budget (picks the smallest rank)")
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("compare-packings",
                       help="rank the four two-stage packing variants for a layer")
    _add_common(p)
    p.add_argument("--layer", type=int, help="index of the convolution layer")
    p.add_argument("--rank", type=int, default=None, help="factorization rank")
    p.set_defaults(func=cmd_compare_packings)

    p = sub.add_parser("verify", help="random-trial encrypted-vs-reference check")
    _add_common(p)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NetworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
