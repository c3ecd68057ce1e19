"""Closed-form operation-count predictions and the cost report.

Per-layer formulas (O = O_w*O_h*O_c of the layer, K = d*d*I_c, r = rank):

    dense convolution, dot products   (O, O*q, O*q), q = ceil(log2 span)
    dense convolution, assembly       O one-hot masks, O-1 rot, O-1 add
    column convolution                (O_c*K, O_c*(K-1), 0)
    fully connected (m inputs)        (O_c, O_c*q, O_c*q), q = ceil(log2 m)

Transition cells (second-layer kernel d, S2 = O2_w*O2_h):

    CP-HI2C-CP  d>1   (O1,   S2*K, S2*K)        d=1   (0, 0, 0)
    DP-HI2C-CP  d>1   (O1,   S2*K, S2*K)        d=1   (O1_c, 0, O1_c)
    CP-HI2C-DP  any   (0, I2_c - 1, I2_c - 1)

``predict_transition`` returns these published cells verbatim.  The
engine-faithful variants differ in two documented places: the patch
rebuild masks each distinct source element once (so its multiply count
is the exact used-element count, of which O1 is the upper bound), and
the d=1 dense grouping never issues the channel-0 rotation (c - 1
instead of c).  ``predict_plan`` uses the engine-faithful counts, so
predicted and measured reports must agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .hesim import rotations_for_span
from .netspec import NetworkSpec
from .packing import KernelSpec, TensorShape
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
    PlanStep,
)


@dataclass(frozen=True)
class CostTriple:
    mul_pc: int = 0
    add_cc: int = 0
    rot: int = 0

    def __add__(self, other: "CostTriple") -> "CostTriple":
        return CostTriple(self.mul_pc + other.mul_pc,
                          self.add_cc + other.add_cc,
                          self.rot + other.rot)

    def weighted(self, rotation_weight: float) -> float:
        return self.mul_pc + self.add_cc + rotation_weight * self.rot

    def as_tuple(self):
        return (self.mul_pc, self.add_cc, self.rot)


ZERO = CostTriple()


# ----------------------------------------------------------------------
# published formulas
# ----------------------------------------------------------------------

def predict_dense(out_count: int, span: int) -> CostTriple:
    """Dense-style dot-product phase over a payload of ``span`` slots."""
    q = rotations_for_span(span)
    return CostTriple(mul_pc=out_count, add_cc=out_count * q, rot=out_count * q)


def predict_dense_assembly(out_count: int, groups: int = 1) -> CostTriple:
    """Placing out_count slot-0 results into ``groups`` contiguous vectors:
    one free alignment per group, the masks live on the assembly ledger."""
    moves = out_count - groups
    return CostTriple(mul_pc=0, add_cc=moves, rot=moves)


def predict_conv(k: int, out_channels: int) -> CostTriple:
    """Column-style convolution: O_c*K multiplies, O_c*(K-1) adds, no
    rotations."""
    return CostTriple(mul_pc=out_channels * k,
                      add_cc=out_channels * (k - 1),
                      rot=0)


def predict_fc(out_count: int, payload: int) -> CostTriple:
    q = rotations_for_span(payload)
    return CostTriple(mul_pc=out_count, add_cc=out_count * q, rot=out_count * q)


def predict_transition(pattern: str, prev_shape: TensorShape,
                       kernel: KernelSpec) -> CostTriple:
    """Published transition cells.  prev_shape is the first layer's output
    tensor (the second layer's input); kernel belongs to the second layer."""
    key = pattern.upper()
    if key == "CP-HI2C-DP":
        return CostTriple(0, prev_shape.c - 1, prev_shape.c - 1)
    if key not in ("CP-HI2C-CP", "DP-HI2C-CP"):
        raise ValueError(f"unknown transition pattern {pattern!r}")
    if kernel.d == 1:
        if key == "CP-HI2C-CP":
            return ZERO
        return CostTriple(prev_shape.c, 0, prev_shape.c)
    ow, oh = kernel.out_dims(prev_shape)
    moves = ow * oh * kernel.k_columns(prev_shape.c)
    return CostTriple(prev_shape.c * prev_shape.w * prev_shape.h, moves, moves)


def _used_extent(size: int, d: int, stride: int, outs: int) -> int:
    return (outs - 1) * min(stride, d) + d


def im2col_masks_used(shape: TensorShape, kernel: KernelSpec) -> int:
    """Exact number of distinct input elements the patch rebuild touches."""
    ow, oh = kernel.out_dims(shape)
    return (shape.c
            * _used_extent(shape.w, kernel.d, kernel.stride, ow)
            * _used_extent(shape.h, kernel.d, kernel.stride, oh))


def predict_transition_effective(pattern: str, prev_shape: TensorShape,
                                 kernel: KernelSpec) -> CostTriple:
    """Engine-faithful transition counts (see module docstring)."""
    nominal = predict_transition(pattern, prev_shape, kernel)
    key = pattern.upper()
    if key == "DP-HI2C-CP" and kernel.d == 1:
        return CostTriple(nominal.mul_pc, 0, nominal.rot - 1)
    if kernel.d > 1 and key in ("CP-HI2C-CP", "DP-HI2C-CP"):
        return CostTriple(im2col_masks_used(prev_shape, kernel),
                          nominal.add_cc, nominal.rot)
    return nominal


# ----------------------------------------------------------------------
# per-step rows
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RowPrediction:
    name: str
    triple: CostTriple
    op: str = ""
    pattern: str | None = None
    assembly_mul_pc: int = 0
    squarings: int = 0
    flags: tuple[str, ...] = ()
    note: str = ""


def predict_step(step: PlanStep) -> list[RowPrediction]:
    """Engine-faithful predicted rows for one plan step."""
    rows = _predict_step_rows(step)
    return [replace(r, op=step.op, pattern=step.pattern) for r in rows]


def _predict_step_rows(step: PlanStep) -> list[RowPrediction]:
    op = step.op
    if op in (PACK_DENSE, PACK_COLUMNS):
        return [RowPrediction(name=step.label(), triple=ZERO,
                              note="client-side, pre-encryption")]
    if op == COMBINE:
        blocks = step.in_shape.c
        return [RowPrediction(name=step.label(),
                              triple=CostTriple(0, blocks - 1, blocks - 1))]
    if op in (HIM2COL_DENSE, HIM2COL_CONV):
        pattern = "DP-HI2C-CP" if op == HIM2COL_DENSE else "CP-HI2C-CP"
        eff = predict_transition_effective(pattern, step.in_shape, step.kernel)
        nominal = predict_transition(pattern, step.in_shape, step.kernel)
        flags = ()
        if nominal.mul_pc != eff.mul_pc:
            flags = ("mask-once-below-bound",)
        return [RowPrediction(name=step.label(), triple=eff, flags=flags,
                              note=f"published cell {nominal.as_tuple()}")]
    if op == GROUP_DENSE:
        eff = predict_transition_effective("DP-HI2C-CP", step.in_shape,
                                           KernelSpec(d=1, out_channels=1))
        return [RowPrediction(name=step.label(), triple=eff,
                              flags=("free-channel0-rotation",),
                              note=f"published cell ({step.in_shape.c}, 0, {step.in_shape.c})")]
    if op == GROUP_CONV:
        return [RowPrediction(name=step.label(), triple=ZERO)]
    if op == SQUARE:
        count = 1 if step.in_form == "dense" else step.in_shape.c
        return [RowPrediction(name=step.label(), triple=ZERO, squarings=count)]
    if op == CONV_DENSE:
        out = step.kernel.out_shape(step.in_shape)
        o = out.size
        rows = [RowPrediction(name=f"{step.label()}:dot-products",
                              triple=predict_dense(o, step.in_shape.size))]
        rows.append(RowPrediction(name=f"{step.label()}:assembly",
                                  triple=predict_dense_assembly(o, groups=1),
                                  assembly_mul_pc=o,
                                  flags=("untabulated-assembly",)))
        return rows
    if op == CONV_COLUMNS:
        k = step.kernel.k_columns(step.in_shape.c)
        return [RowPrediction(name=step.label(),
                              triple=predict_conv(k, step.kernel.out_channels))]
    if op == FC:
        return [RowPrediction(name=step.label(),
                              triple=predict_fc(step.out_shape.c, step.in_shape.size))]
    if op == FFCONV:
        return _predict_ffconv(step)
    raise ValueError(f"cannot predict step {op!r}")


def _predict_ffconv(step: PlanStep) -> list[RowPrediction]:
    kernel, rank = step.kernel, step.rank
    in_shape = step.in_shape
    ow, oh = kernel.out_dims(in_shape)
    s2 = ow * oh
    k = kernel.k_columns(in_shape.c)
    oc = kernel.out_channels
    o_mid = s2 * rank
    name = step.label()
    pattern = step.pattern
    rows: list[RowPrediction] = []
    if pattern in ("DP-HI2C-CP", "DP-DP"):
        rows.append(RowPrediction(name=f"{name}:w1-dot-products",
                                  triple=predict_dense(o_mid, in_shape.size)))
        groups = rank if pattern == "DP-HI2C-CP" else 1
        rows.append(RowPrediction(name=f"{name}:w1-assembly",
                                  triple=predict_dense_assembly(o_mid, groups=groups),
                                  assembly_mul_pc=o_mid,
                                  flags=("untabulated-assembly",)))
    else:  # CP-HI2C-CP, CP-HI2C-DP
        rows.append(RowPrediction(name=f"{name}:w1",
                                  triple=predict_conv(k, rank)))
    if pattern in ("DP-HI2C-CP", "CP-HI2C-CP"):
        rows.append(RowPrediction(name=f"{name}:w2",
                                  triple=predict_conv(rank, oc)))
    else:
        if pattern == "CP-HI2C-DP":
            rows.append(RowPrediction(name=f"{name}:mid-combine",
                                      triple=CostTriple(0, rank - 1, rank - 1)))
        rows.append(RowPrediction(name=f"{name}:w2-dot-products",
                                  triple=predict_dense(s2 * oc, o_mid)))
        rows.append(RowPrediction(name=f"{name}:w2-assembly",
                                  triple=predict_dense_assembly(s2 * oc, groups=1),
                                  assembly_mul_pc=s2 * oc,
                                  flags=("untabulated-assembly",)))
    return rows


def predict_plan(plan: PackingPlan) -> list[RowPrediction]:
    rows: list[RowPrediction] = []
    for step in plan.steps:
        rows.extend(predict_step(step))
    return rows


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------

@dataclass
class ReportRow:
    name: str
    op: str = ""
    pattern: str | None = None
    predicted: CostTriple = ZERO
    measured: CostTriple | None = None
    predicted_assembly: int = 0
    measured_assembly: int | None = None
    predicted_squarings: int = 0
    measured_squarings: int | None = None
    flags: tuple[str, ...] = ()
    note: str = ""

    def diverges(self) -> bool:
        if self.measured is None:
            return False
        return (self.measured != self.predicted
                or (self.measured_assembly is not None
                    and self.measured_assembly != self.predicted_assembly)
                or (self.measured_squarings is not None
                    and self.measured_squarings != self.predicted_squarings))


@dataclass
class CostReport:
    rows: list[ReportRow]
    rotation_weight: float
    notes: list[str] = field(default_factory=list)

    def predicted_total(self) -> CostTriple:
        total = ZERO
        for r in self.rows:
            total = total + r.predicted
        return total

    def measured_total(self) -> CostTriple | None:
        if any(r.measured is None for r in self.rows):
            return None
        total = ZERO
        for r in self.rows:
            total = total + r.measured
        return total

    def divergences(self) -> list[ReportRow]:
        return [r for r in self.rows if r.diverges()]

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def table(self) -> str:
        headers = ["row", "pred mul", "pred add", "pred rot",
                   "meas mul", "meas add", "meas rot", "flags"]
        lines = []
        for r in self.rows:
            meas = r.measured.as_tuple() if r.measured is not None else ("-", "-", "-")
            lines.append([r.name, *map(str, r.predicted.as_tuple()),
                          *map(str, meas), ",".join(r.flags)])
        pt = self.predicted_total()
        mt = self.measured_total()
        lines.append(["TOTAL", *map(str, pt.as_tuple()),
                      *(map(str, mt.as_tuple()) if mt else ("-", "-", "-")), ""])
        widths = [max(len(h), *(len(row[i]) for row in lines))
                  for i, h in enumerate(headers)]
        def fmt(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(headers), fmt(["-" * w for w in widths])]
        out.extend(fmt(row) for row in lines)
        out.append("")
        out.append(f"weighted predicted cost (rotation weight {self.rotation_weight:g}): "
                   f"{pt.weighted(self.rotation_weight):.0f}")
        for note in self.notes:
            out.append(f"note: {note}")
        return "\n".join(out)

    def records(self) -> list[dict]:
        recs = []
        for r in self.rows:
            recs.append({
                "row": r.name,
                "op": r.op,
                "pattern": r.pattern,
                "predicted": {"mul_pc": r.predicted.mul_pc,
                              "add_cc": r.predicted.add_cc,
                              "rot": r.predicted.rot,
                              "assembly_mul_pc": r.predicted_assembly,
                              "squarings": r.predicted_squarings},
                "measured": None if r.measured is None else {
                    "mul_pc": r.measured.mul_pc,
                    "add_cc": r.measured.add_cc,
                    "rot": r.measured.rot,
                    "assembly_mul_pc": r.measured_assembly,
                    "squarings": r.measured_squarings},
                "flags": list(r.flags),
                "note": r.note,
            })
        return recs


def predict_network(net: NetworkSpec, plan: PackingPlan) -> CostReport:
    """Predicted cost report for a plan (measured columns left empty)."""
    if plan.net is not net and plan.net != net:
        raise ValueError("plan was built for a different network")
    rows = [ReportRow(name=p.name, op=p.op, pattern=p.pattern,
                      predicted=p.triple,
                      predicted_assembly=p.assembly_mul_pc,
                      predicted_squarings=p.squarings,
                      flags=p.flags, note=p.note)
            for p in predict_plan(plan)]
    return CostReport(rows=rows, rotation_weight=net.scheme.rotation_weight)


# ----------------------------------------------------------------------
# packing-variant comparison for one factorized layer
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class VariantCost:
    pattern: str
    triple: CostTriple
    weighted: float


def compare_plans(net: NetworkSpec, layer_index: int, rank: int | None = None,
                  rotation_weight: float | None = None) -> list[VariantCost]:
    """Cost of the four two-stage packing variants for one convolution.

    Scope matches the published variant comparison: the upstream
    transition feeding the first stage, both stages (with their assembly,
    where dense), and the mid transition; the downstream combine shared
    by the CP-ending variants is excluded.  Variants are sorted by
    weighted cost, ascending.
    """
    layer = net.layers[layer_index]
    if layer.kind not in ("conv", "ffconv"):
        raise ValueError(f"layer {layer_index} is not a convolution")
    if rank is None:
        rank = layer.rank
    if rank is None:
        raise ValueError("a factorization rank is required")
    rw = rotation_weight if rotation_weight is not None else net.scheme.rotation_weight
    shapes = [net.input_shape] + net.layer_shapes()
    in_shape = shapes[layer_index]
    kernel = KernelSpec(d=layer.d, stride=layer.stride,
                        out_channels=layer.out_channels)
    ow, oh = kernel.out_dims(in_shape)
    s2 = ow * oh
    k = kernel.k_columns(in_shape.c)
    oc = kernel.out_channels
    o_mid = s2 * rank
    o_full = s2 * oc

    # the value feeding this layer arrives per-channel unless the layer
    # consumes the client-packed input directly
    upstream_channels = layer_index > 0

    def upstream(to_form: str) -> CostTriple:
        if not upstream_channels:
            return ZERO   # client-side packing is free either way
        if to_form == "dense":
            return CostTriple(0, in_shape.c - 1, in_shape.c - 1)
        return predict_transition_effective("CP-HI2C-CP", in_shape, kernel)

    variants = {}
    variants["DP-HI2C-CP"] = (upstream("dense")
                              + predict_dense(o_mid, in_shape.size)
                              + predict_dense_assembly(o_mid, groups=rank)
                              + predict_conv(rank, oc))
    variants["DP-DP"] = (upstream("dense")
                         + predict_dense(o_mid, in_shape.size)
                         + predict_dense_assembly(o_mid, groups=1)
                         + predict_dense(o_full, o_mid)
                         + predict_dense_assembly(o_full, groups=1))
    variants["CP-HI2C-CP"] = (upstream("columns")
                              + predict_conv(k, rank)
                              + predict_conv(rank, oc))
    variants["CP-HI2C-DP"] = (upstream("columns")
                              + predict_conv(k, rank)
                              + CostTriple(0, rank - 1, rank - 1)
                              + predict_dense(o_full, o_mid)
                              + predict_dense_assembly(o_full, groups=1))
    out = [VariantCost(pattern=p, triple=t, weighted=t.weighted(rw))
           for p, t in variants.items()]
    out.sort(key=lambda v: v.weighted)
    return out


def rotation_reduction(baseline_rot: int, replaced_rot: int) -> float:
    """Percentage reduction in rotations going from baseline to replaced."""
    return 100.0 * (baseline_rot - replaced_rot) / baseline_rot
