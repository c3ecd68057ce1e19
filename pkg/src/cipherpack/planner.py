"""Packing plans: per-layer representation assignments plus the exact
transition inserted at every layer boundary.

Strategies
----------
lola-default      first convolution column-packed via client-side patch
                  extraction, every later convolution dense, fully
                  connected layers dense.
ffconv-default    like lola-default for regular layers; factorized layers
                  pick DP-HI2C-CP when their input arrives dense and
                  CP-HI2C-CP when it arrives in per-channel form.
explicit          honor each layer's packing_hint (dense assumed where
                  no hint is given, except a column-packed first layer).

When a layer's output is per-channel and the next value-consuming layer
needs a dense vector, the combine transition is placed before any
intervening square layers, matching the published pipeline row order.

The plan is a list of steps; each step becomes one or more report rows
with exact predicted operation counts (see costmodel).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .netspec import NetworkError, NetworkSpec
from .packing import KernelSpec, TensorShape

STRATEGIES = ("lola-default", "ffconv-default", "explicit")

# step ops
PACK_DENSE = "pack-dense"
PACK_COLUMNS = "pack-columns"
COMBINE = "combine"
HIM2COL_DENSE = "him2col-dense"
HIM2COL_CONV = "him2col-conv"
GROUP_DENSE = "group-dense"
GROUP_CONV = "group-conv"
CONV_DENSE = "conv-dense"
CONV_COLUMNS = "conv-columns"
FFCONV = "ffconv"
FC = "fc"
SQUARE = "square"

PATTERNS = ("DP-HI2C-CP", "CP-HI2C-CP", "DP-DP", "CP-HI2C-DP")


@dataclass(frozen=True)
class PlanStep:
    op: str
    layer_index: int | None = None
    in_shape: TensorShape | None = None
    out_shape: TensorShape | None = None
    in_form: str | None = None
    out_form: str | None = None
    kernel: KernelSpec | None = None
    rank: int | None = None
    pattern: str | None = None
    pooling: bool = False
    note: str = ""

    def label(self) -> str:
        if self.layer_index is None:
            return self.op
        return f"layer{self.layer_index}:{self.op}"


@dataclass(frozen=True)
class PackingPlan:
    net: NetworkSpec
    strategy: str
    steps: tuple[PlanStep, ...]

    def final_form(self) -> str:
        return self.steps[-1].out_form


class PlanError(ValueError):
    pass


def _layer_need(layer, hint: str) -> tuple[str, str | None]:
    """(required input form, ffconv pattern) for a value-consuming layer."""
    if layer.kind == "fc":
        return "dense", None
    if layer.kind in ("conv", "avgpool"):
        return ("columns" if hint == "conv" else "dense"), None
    if layer.kind == "ffconv":
        pattern = hint.upper()
        if pattern not in PATTERNS:
            raise PlanError(f"unknown factorized pattern {hint!r}")
        need = "dense" if pattern.startswith("DP") else "columns"
        return need, pattern
    raise PlanError(f"layer kind {layer.kind} does not consume values")


def _resolve_hints(net: NetworkSpec, strategy: str) -> dict[int, str]:
    """Per value-consuming layer: 'dense' / 'conv' or an ffconv pattern."""
    hints: dict[int, str] = {}
    first_conv = next((i for i, l in enumerate(net.layers)
                       if l.kind in ("conv", "ffconv", "avgpool")), None)
    for i, layer in enumerate(net.layers):
        if layer.kind == "square":
            continue
        if strategy == "explicit":
            if layer.packing_hint is not None:
                hints[i] = layer.packing_hint
            elif layer.kind == "ffconv":
                hints[i] = "cp-hi2c-cp" if i == first_conv else "dp-hi2c-cp"
            elif layer.kind == "fc":
                hints[i] = "dense"
            else:
                hints[i] = "conv" if i == first_conv else "dense"
        elif strategy in ("lola-default", "ffconv-default"):
            if layer.kind == "fc":
                hints[i] = "dense"
            elif layer.kind == "ffconv":
                if strategy == "lola-default":
                    hints[i] = "dp-dp"
                else:
                    # client-packed first layers and free 1x1 regroupings
                    # favor a column-packed left factor; everywhere else the
                    # dense left factor avoids the patch-rebuild rotations
                    cheap_columns = i == first_conv or layer.d == 1
                    hints[i] = "cp-hi2c-cp" if cheap_columns else "dp-hi2c-cp"
            else:
                hints[i] = "conv" if i == first_conv else "dense"
        else:
            raise PlanError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return hints


def _dense_needed_downstream(net: NetworkSpec, i: int, hints) -> bool:
    """True if the next value-consuming layer after index i (skipping
    squares) wants a dense input, or the network ends."""
    for j in range(i, len(net.layers)):
        layer = net.layers[j]
        if layer.kind == "square":
            continue
        need, _ = _layer_need(layer, hints[j])
        return need == "dense"
    return True


def build_plan(net: NetworkSpec, strategy: str = "ffconv-default") -> PackingPlan:
    hints = _resolve_hints(net, strategy)
    shapes = [net.input_shape] + net.layer_shapes()
    steps: list[PlanStep] = []

    # client-side packing, decided by the first value-consuming layer
    first = next((i for i, l in enumerate(net.layers) if l.kind != "square"), None)
    want_columns = False
    first_kernel = None
    if first is not None and net.layers[first].kind in ("conv", "ffconv", "avgpool"):
        need, _ = _layer_need(net.layers[first], hints[first])
        # a column-packed first layer is produced by client-side patch
        # extraction only when no square precedes it
        if need == "columns" and first == 0:
            want_columns = True
            lay = net.layers[first]
            if lay.kind == "avgpool":
                first_kernel = KernelSpec(d=lay.d, stride=lay.stride,
                                          out_channels=net.input_shape.c)
            else:
                first_kernel = lay.kernel()
    if want_columns:
        steps.append(PlanStep(op=PACK_COLUMNS, in_shape=net.input_shape,
                              out_shape=shapes[1], in_form="client",
                              out_form="columns", kernel=first_kernel,
                              note="client-side patch extraction"))
        form = "columns"
    else:
        steps.append(PlanStep(op=PACK_DENSE, in_shape=net.input_shape,
                              out_shape=net.input_shape, in_form="client",
                              out_form="dense"))
        form = "dense"

    for i, layer in enumerate(net.layers):
        in_shape, out_shape = shapes[i], shapes[i + 1]

        if layer.kind == "square":
            if form == "channels" and _dense_needed_downstream(net, i, hints):
                steps.append(PlanStep(op=COMBINE, layer_index=i,
                                      in_shape=in_shape, out_shape=in_shape,
                                      in_form="channels", out_form="dense"))
                form = "dense"
            steps.append(PlanStep(op=SQUARE, layer_index=i, in_shape=in_shape,
                                  out_shape=out_shape, in_form=form, out_form=form))
            continue

        need, pattern = _layer_need(layer, hints[i])

        if layer.kind == "avgpool":
            kernel = KernelSpec(d=layer.d, stride=layer.stride, out_channels=in_shape.c)
        elif layer.kind in ("conv", "ffconv"):
            kernel = layer.kernel()
        else:
            kernel = None

        # transition into the required form
        if need == "dense" and form == "channels":
            steps.append(PlanStep(op=COMBINE, layer_index=i, in_shape=in_shape,
                                  out_shape=in_shape, in_form="channels",
                                  out_form="dense"))
            form = "dense"
        elif need == "columns" and form != "columns":
            if kernel.d > 1:
                op = HIM2COL_DENSE if form == "dense" else HIM2COL_CONV
            else:
                if kernel.stride != 1:
                    raise PlanError(
                        f"layer {i}: column packing with d=1 needs stride 1")
                op = GROUP_DENSE if form == "dense" else GROUP_CONV
            steps.append(PlanStep(op=op, layer_index=i, in_shape=in_shape,
                                  out_shape=in_shape, in_form=form,
                                  out_form="columns", kernel=kernel))
            form = "columns"
        elif need == "dense" and form == "columns":
            raise PlanError(f"layer {i}: column-packed value cannot feed a dense layer")

        # the layer itself
        if layer.kind == "fc":
            steps.append(PlanStep(op=FC, layer_index=i, in_shape=in_shape,
                                  out_shape=out_shape, in_form="dense",
                                  out_form="channels"))
            form = "channels"
        elif layer.kind == "ffconv":
            out_form = "dense" if pattern.endswith("DP") else "channels"
            steps.append(PlanStep(op=FFCONV, layer_index=i, in_shape=in_shape,
                                  out_shape=out_shape, in_form=form,
                                  out_form=out_form, kernel=kernel,
                                  rank=layer.rank, pattern=pattern))
            form = out_form
        else:  # conv / avgpool
            pooling = layer.kind == "avgpool"
            if need == "columns":
                steps.append(PlanStep(op=CONV_COLUMNS, layer_index=i,
                                      in_shape=in_shape, out_shape=out_shape,
                                      in_form="columns", out_form="channels",
                                      kernel=kernel, pooling=pooling))
                form = "channels"
            else:
                steps.append(PlanStep(op=CONV_DENSE, layer_index=i,
                                      in_shape=in_shape, out_shape=out_shape,
                                      in_form="dense", out_form="dense",
                                      kernel=kernel, pooling=pooling))
                form = "dense"

    return PackingPlan(net=net, strategy=strategy, steps=tuple(steps))
