"""Plan execution, the plaintext reference oracle, and verification.

run_encrypted walks a packing plan over the slot engine, capturing
measured operation counts per report row; run_reference computes the
same quantized-integer pipeline with direct loops and no packing.  The
master invariant: for every supported network, plan, and input, the
decrypted logits equal the reference logits exactly.

Overflow guarding is two-tier.  The static ledger propagates worst-case
magnitude bounds from the actual weight values (sound for every input up
to the given bound, but often far above what trained nets produce); it
only flags.  The run ledger takes the instrumented per-layer maxima of
the reference run and rejects, naming the offending layer, whenever a
value's magnitude reaches t/2 - at that point the modular engine could
no longer represent the signed result and decryption would be garbage.

Count-only mode (track_values=False) runs the identical plan walk with
untracked ciphertexts: counters, depths, and the report are exact, slot
values and logits are not computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import costmodel
from .costmodel import CostReport, CostTriple, ReportRow
from .engine import (
    BiasVector,
    WeightMatrix,
    avg_pool_weights,
    conv_conv,
    conv_dense,
    factored_conv,
    fc_dense,
    packed_depth,
    square_layer,
)
from .factorize import weights_to_matrix
from .hesim import HeContext, OpCounters
from .netspec import NetworkSpec
from .packing import (
    ChannelPacked,
    ConvPacked,
    DensePacked,
    KernelSpec,
    channel_unpack,
    channels_to_dense,
    conv_pack,
    dense_pack,
    dense_unpack,
    h_grouping,
    h_grouping_from_dense,
    h_im2col_from_conv,
    h_im2col_from_dense,
    plain_im2col,
)
from .planner import (
    COMBINE,
    CONV_COLUMNS,
    CONV_DENSE,
    FC,
    FFCONV,
    GROUP_CONV,
    GROUP_DENSE,
    HIM2COL_CONV,
    HIM2COL_DENSE,
    PACK_COLUMNS,
    PACK_DENSE,
    SQUARE,
    PackingPlan,
    build_plan,
)
from .weights import WeightSet, validate_weights


class ModulusTooSmallError(ValueError):
    """An intermediate magnitude reached t/2; the run is rejected."""


@dataclass(frozen=True)
class LayerBound:
    layer_index: int
    kind: str
    scale: float
    static_bound: int
    actual_max: int | None


@dataclass
class ScaleLedger:
    """Plaintext-side fixed-point bookkeeping per layer."""

    entries: list[LayerBound]
    modulus: int

    def warnings(self) -> list[str]:
        half = self.modulus // 2
        out = []
        for e in self.entries:
            if e.static_bound >= half:
                out.append(
                    f"layer {e.layer_index} ({e.kind}): worst-case bound "
                    f"{e.static_bound} reaches t/2; actual inputs may still fit")
        return out

    def reject_if_overflow(self) -> None:
        half = self.modulus // 2
        for e in self.entries:
            if e.actual_max is not None and e.actual_max >= half:
                raise ModulusTooSmallError(
                    f"layer {e.layer_index} ({e.kind}): value magnitude "
                    f"{e.actual_max} reaches t/2 = {half}; increase t")


@dataclass
class RunResult:
    logits: np.ndarray | None
    report: CostReport
    depth: int
    assembly_depth: int
    ledger: ScaleLedger | None
    reference_logits: np.ndarray | None = None
    layer_depths: list = field(default_factory=list)
    layer_outputs: list = field(default_factory=list)
    elided_rotations: int = 0


# ----------------------------------------------------------------------
# weights -> engine operands
# ----------------------------------------------------------------------

def _conv_weight(ws: WeightSet, i: int) -> WeightMatrix:
    t = ws[f"layer{i}.weight"]
    return WeightMatrix(entries=weights_to_matrix(t.values), bits=t.bits, scale=t.scale)


def _ffconv_weights(ws: WeightSet, i: int) -> tuple[WeightMatrix, WeightMatrix]:
    t1, t2 = ws[f"layer{i}.w1"], ws[f"layer{i}.w2"]
    w1 = WeightMatrix(entries=weights_to_matrix(t1.values), bits=t1.bits, scale=t1.scale)
    w2 = WeightMatrix(entries=weights_to_matrix(t2.values), bits=t2.bits, scale=t2.scale)
    return w1, w2


def _fc_weight(ws: WeightSet, i: int) -> tuple[WeightMatrix, BiasVector]:
    t = ws[f"layer{i}.weight"]
    b = ws[f"layer{i}.bias"]
    return (WeightMatrix(entries=t.values, bits=t.bits, scale=t.scale),
            BiasVector(entries=b.values, scale=b.scale))


# ----------------------------------------------------------------------
# reference oracle: direct integer loops, no packing
# ----------------------------------------------------------------------

def _ref_flat_filters(w4d: np.ndarray) -> np.ndarray:
    d, _, c, oc = w4d.shape
    flat = np.empty((c * d * d, oc), dtype=object)
    i = 0
    for ch in range(c):
        for ky in range(d):
            for kx in range(d):
                flat[i] = w4d[ky, kx, ch]
                i += 1
    return flat


def _ref_conv(x: np.ndarray, w4d: np.ndarray, stride: int) -> np.ndarray:
    c, h, w = x.shape
    d = w4d.shape[0]
    oc = w4d.shape[3]
    ow = (w - d) // stride + 1
    oh = (h - d) // stride + 1
    flat = _ref_flat_filters(w4d.astype(object))
    out = np.empty((oc, oh, ow), dtype=object)
    for oy in range(oh):
        for ox in range(ow):
            patch = x[:, oy * stride: oy * stride + d, ox * stride: ox * stride + d]
            out[:, oy, ox] = patch.reshape(-1) @ flat
    return out


def _ref_avgpool(x: np.ndarray, d: int, stride: int) -> np.ndarray:
    c, h, w = x.shape
    ow = (w - d) // stride + 1
    oh = (h - d) // stride + 1
    out = np.empty((c, oh, ow), dtype=object)
    for oy in range(oh):
        for ox in range(ow):
            window = x[:, oy * stride: oy * stride + d, ox * stride: ox * stride + d]
            out[:, oy, ox] = [int(window[ch].sum()) for ch in range(c)]
    return out


def run_reference(net: NetworkSpec, weights: WeightSet,
                  input_tensor: np.ndarray) -> tuple[np.ndarray, list, list[int]]:
    """Quantized-integer pipeline with plain loops.

    Returns (logits, per-layer tensors, per-layer max magnitudes).
    """
    validate_weights(net, weights)
    x = np.asarray(input_tensor, dtype=object)
    if x.shape != (net.input_shape.c, net.input_shape.h, net.input_shape.w):
        raise ValueError(f"input shape {x.shape} does not match "
                         f"(c, h, w) = {(net.input_shape.c, net.input_shape.h, net.input_shape.w)}")
    outputs, maxima = [], []
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv":
            x = _ref_conv(x, weights[f"layer{i}.weight"].values, layer.stride)
        elif layer.kind == "ffconv":
            x = _ref_conv(x, weights[f"layer{i}.w1"].values, layer.stride)
            x = _ref_conv(x, weights[f"layer{i}.w2"].values, 1)
        elif layer.kind == "square":
            x = x * x
        elif layer.kind == "avgpool":
            x = _ref_avgpool(x, layer.d, layer.stride)
        elif layer.kind == "fc":
            w = weights[f"layer{i}.weight"].values.astype(object)
            b = weights[f"layer{i}.bias"].values.astype(object)
            x = (x.reshape(-1) @ w + b).reshape(layer.out_channels, 1, 1)
        outputs.append(x)
        flat = [abs(int(v)) for v in x.reshape(-1)]
        maxima.append(max(flat) if flat else 0)
    return outputs[-1].reshape(-1), outputs, maxima


# ----------------------------------------------------------------------
# static worst-case bound walk
# ----------------------------------------------------------------------

def static_bounds(net: NetworkSpec, weights: WeightSet, input_bound: int,
                  input_scale: float = 1.0) -> list[LayerBound]:
    bound = int(input_bound)
    scale = float(input_scale)
    entries = []
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv":
            t = weights[f"layer{i}.weight"]
            l1 = _max_column_l1(weights_to_matrix(t.values))
            bound, scale = bound * l1, scale * t.scale
        elif layer.kind == "ffconv":
            t1, t2 = weights[f"layer{i}.w1"], weights[f"layer{i}.w2"]
            bound = bound * _max_column_l1(weights_to_matrix(t1.values))
            bound = bound * _max_column_l1(weights_to_matrix(t2.values))
            scale = scale * t1.scale * t2.scale
        elif layer.kind == "square":
            bound, scale = bound * bound, scale * scale
        elif layer.kind == "avgpool":
            bound = bound * layer.d * layer.d
            scale = scale / (layer.d * layer.d)
        elif layer.kind == "fc":
            t, b = weights[f"layer{i}.weight"], weights[f"layer{i}.bias"]
            bias_max = int(np.max(np.abs(b.values))) if b.values.size else 0
            bound = bound * _max_column_l1(t.values) + bias_max
            scale = scale * t.scale
        entries.append(LayerBound(layer_index=i, kind=layer.kind, scale=scale,
                                  static_bound=bound, actual_max=None))
    return entries


def _max_column_l1(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    return int(np.max(np.sum(np.abs(m.astype(object)), axis=0)))


# ----------------------------------------------------------------------
# encrypted (simulated) execution
# ----------------------------------------------------------------------

def _logits_from(value, ctx) -> np.ndarray:
    if isinstance(value, DensePacked):
        return np.array(ctx.decrypt(value.ct)[: value.occupied], dtype=object)
    if isinstance(value, ChannelPacked):
        parts = [ctx.decrypt(ct)[: value.rows] for ct in value.cts]
        return np.concatenate(parts)
    raise ValueError(f"cannot extract logits from {type(value)!r}")


def _value_tensor(value, ctx) -> np.ndarray | None:
    if isinstance(value, DensePacked):
        return dense_unpack(value, ctx)
    if isinstance(value, ChannelPacked):
        return channel_unpack(value, ctx)
    return None


def run_encrypted(net: NetworkSpec, plan: PackingPlan, weights: WeightSet,
                  input_tensor: np.ndarray | None, *, track_values: bool = True,
                  check_ledger: bool = True, capture_layers: bool = False,
                  input_scale: float = 1.0) -> RunResult:
    validate_weights(net, weights)
    if plan.net != net:
        raise ValueError("plan was built for a different network")
    ctx = HeContext(net.scheme)

    ledger = None
    reference_logits = None
    if track_values:
        input_tensor = np.asarray(input_tensor)
        ref_logits, _, maxima = run_reference(net, weights, input_tensor)
        reference_logits = ref_logits
        input_max = int(np.max(np.abs(input_tensor.astype(object)))) if input_tensor.size else 0
        entries = static_bounds(net, weights, input_bound=max(input_max, 1),
                                input_scale=input_scale)
        entries = [LayerBound(e.layer_index, e.kind, e.scale, e.static_bound, m)
                   for e, m in zip(entries, maxima)]
        ledger = ScaleLedger(entries=entries, modulus=net.scheme.t)
        if check_ledger:
            ledger.reject_if_overflow()

    predicted_rows = costmodel.predict_plan(plan)
    rows: list[ReportRow] = []
    layer_depths = []
    layer_outputs = []
    value = None

    def close_rows(preds, deltas):
        for pred, delta in zip(preds, deltas):
            rows.append(ReportRow(
                name=pred.name, op=pred.op, pattern=pred.pattern,
                predicted=pred.triple,
                measured=CostTriple(delta.mul_pc, delta.add_cc, delta.rot),
                predicted_assembly=pred.assembly_mul_pc,
                measured_assembly=delta.assembly_mul_pc,
                predicted_squarings=pred.squarings,
                measured_squarings=delta.mul_cc,
                flags=pred.flags, note=pred.note))

    pred_iter = iter(predicted_rows)

    for step in plan.steps:
        preds = costmodel.predict_step(step)
        before = ctx.counters.copy()
        depth_before = packed_depth(value) if value is not None else (0, 0)
        phases = None

        if step.op == PACK_DENSE:
            value = dense_pack(np.asarray(input_tensor) if track_values else
                               np.zeros((step.in_shape.c, step.in_shape.h, step.in_shape.w),
                                        dtype=np.int64),
                               ctx, tracked=track_values)
        elif step.op == PACK_COLUMNS:
            ow, oh = step.kernel.out_dims(step.in_shape)
            if track_values:
                cols = plain_im2col(np.asarray(input_tensor), step.kernel)
            else:
                cols = np.zeros((ow * oh, step.kernel.k_columns(step.in_shape.c)),
                                dtype=np.int64)
            value = conv_pack(cols, ctx, spatial=(ow, oh), tracked=track_values)
        elif step.op == COMBINE:
            value = channels_to_dense(value, ctx)
        elif step.op == HIM2COL_DENSE:
            value = h_im2col_from_dense(value, step.kernel, ctx)
        elif step.op == HIM2COL_CONV:
            value = h_im2col_from_conv(value, step.kernel, ctx)
        elif step.op == GROUP_DENSE:
            value = h_grouping_from_dense(value, KernelSpec(d=1, stride=1), ctx)
        elif step.op == GROUP_CONV:
            value = h_grouping(value, KernelSpec(d=1, stride=1))
        elif step.op == SQUARE:
            value, phases = square_layer(value, ctx)
        elif step.op == CONV_DENSE:
            i = step.layer_index
            w = (avg_pool_weights(step.kernel, step.in_shape.c) if step.pooling
                 else _conv_weight(weights, i))
            value, phases = conv_dense(value, w, step.kernel, ctx)
        elif step.op == CONV_COLUMNS:
            i = step.layer_index
            w = (avg_pool_weights(step.kernel, step.in_shape.c) if step.pooling
                 else _conv_weight(weights, i))
            value, phases = conv_conv(value, w, ctx)
        elif step.op == FC:
            w, bias = _fc_weight(weights, step.layer_index)
            outs, phases = fc_dense(value, w, bias, ctx)
            value = ChannelPacked(cts=tuple(outs), spatial=(1, 1))
        elif step.op == FFCONV:
            value, phases = _run_ffconv(step, value, weights, ctx)
        else:
            raise ValueError(f"cannot execute step {step.op!r}")

        if phases is not None and len(phases) == len(preds):
            close_rows(preds, [p.counters for p in phases])
        else:
            close_rows(preds, [ctx.counters - before])

        if step.layer_index is not None and step.op in (
                SQUARE, CONV_DENSE, CONV_COLUMNS, FC, FFCONV):
            depth_after = packed_depth(value)
            layer_depths.append({
                "layer_index": step.layer_index,
                "op": step.op,
                "pattern": step.pattern,
                "depth_delta": depth_after[0] - depth_before[0],
                "assembly_delta": depth_after[1] - depth_before[1],
            })
            if capture_layers and track_values:
                layer_outputs.append((step.layer_index, _value_tensor(value, ctx)))

    logits = _logits_from(value, ctx) if track_values else None
    depth, assembly_depth = packed_depth(value)
    report = CostReport(rows=rows, rotation_weight=net.scheme.rotation_weight)
    return RunResult(logits=logits, report=report, depth=depth,
                     assembly_depth=assembly_depth, ledger=ledger,
                     reference_logits=reference_logits,
                     layer_depths=layer_depths, layer_outputs=layer_outputs,
                     elided_rotations=ctx.elided_rotations)


def _run_ffconv(step, value, weights: WeightSet, ctx: HeContext):
    w1, w2 = _ffconv_weights(weights, step.layer_index)
    pattern = step.pattern
    if pattern in ("DP-HI2C-CP", "CP-HI2C-CP"):
        return factored_conv(value, w1, w2, step.kernel, pattern, ctx)
    rank_kernel = KernelSpec(d=step.kernel.d, stride=step.kernel.stride,
                             out_channels=step.rank)
    one_by_one = KernelSpec(d=1, stride=1, out_channels=step.kernel.out_channels)
    if pattern == "DP-DP":
        mid, ph1 = conv_dense(value, w1, rank_kernel, ctx)
        out, ph2 = conv_dense(mid, w2, one_by_one, ctx)
        names = ["w1-dots", "w1-assembly", "w2-dots", "w2-assembly"]
        return out, _renamed(ph1 + ph2, names)
    if pattern == "CP-HI2C-DP":
        mid, ph1 = conv_conv(value, w1, ctx)
        before = ctx.counters.copy()
        dense_mid = channels_to_dense(mid, ctx)
        combine_phase = [_Phase("mid-combine", ctx.counters - before)]
        out, ph2 = conv_dense(dense_mid, w2, one_by_one, ctx)
        names = ["w1", "mid-combine", "w2-dots", "w2-assembly"]
        return out, _renamed(ph1 + combine_phase + ph2, names)
    raise ValueError(f"unknown factorized pattern {pattern!r}")


@dataclass(frozen=True)
class _Phase:
    name: str
    counters: OpCounters


def _renamed(phases, names):
    return [_Phase(name=n, counters=p.counters) for p, n in zip(phases, names)]


# ----------------------------------------------------------------------
# verification
# ----------------------------------------------------------------------

@dataclass
class VerifyReport:
    trials: int
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        if self.ok:
            return f"verify: {self.trials} trials, all exact"
        lines = [f"verify: {len(self.failures)} failure(s) in {self.trials} trials"]
        lines.extend(f"  - {f}" for f in self.failures[:20])
        return "\n".join(lines)


def verify(net: NetworkSpec, plan: PackingPlan | None = None,
           weights: WeightSet | None = None, trials: int = 10,
           seed: int = 0, input_bound: int = 15) -> VerifyReport:
    """Random-input agreement check: encrypted-simulated vs reference
    logits (exact), and measured vs predicted counters (exact).

    On a logit mismatch the first diverging layer is named.
    """
    from .weights import random_weights

    if plan is None:
        plan = build_plan(net, "ffconv-default")
    rng = np.random.default_rng(seed)
    failures = []
    for trial in range(trials):
        ws = weights if weights is not None else random_weights(net, rng, bound=5)
        x = rng.integers(0, input_bound + 1,
                         size=(net.input_shape.c, net.input_shape.h, net.input_shape.w))
        try:
            result = run_encrypted(net, plan, ws, x, capture_layers=True)
        except ModulusTooSmallError as exc:
            failures.append(f"trial {trial}: {exc}")
            continue
        _, ref_layers, _ = run_reference(net, ws, x)
        if result.logits.tolist() != result.reference_logits.tolist():
            bad = _first_divergence(result.layer_outputs, ref_layers)
            failures.append(
                f"trial {trial}: logits diverge from reference "
                f"(first differing layer: {bad})")
        for row in result.report.divergences():
            failures.append(
                f"trial {trial}: row {row.name}: measured "
                f"{row.measured.as_tuple()} != predicted {row.predicted.as_tuple()}")
    return VerifyReport(trials=trials, failures=failures)


def _first_divergence(layer_outputs, ref_layers) -> str:
    for idx, got in layer_outputs:
        if got is None:
            continue
        ref = np.asarray(ref_layers[idx], dtype=object)
        got = np.asarray(got, dtype=object)
        if got.shape != ref.shape or (got != ref).any():
            return f"layer {idx}"
    return "output"
