"""Closed-form count predictions and the packing-variant comparison."""

import pytest

from cipherpack import costmodel
from cipherpack.costmodel import CostTriple, predict_conv, predict_dense, predict_fc, \
    predict_transition, predict_transition_effective, rotation_reduction
from cipherpack.hesim import SchemeParams
from cipherpack.netspec import LayerSpec, NetworkSpec
from cipherpack.packing import KernelSpec, TensorShape
from cipherpack.planner import build_plan
from cipherpack.presets import (
    WIDENET_CONV2_BASELINE_OUTPUTS,
    WIDENET_CONV2_BASELINE_SPAN,
    preset_network,
)


# ----------------------------------------------------------------------
# layer formulas
# ----------------------------------------------------------------------

def test_predict_dense_widenet_baseline():
    # 4075 outputs over the recorded 6912-slot span: 13 rounds each
    triple = predict_dense(WIDENET_CONV2_BASELINE_OUTPUTS, WIDENET_CONV2_BASELINE_SPAN)
    assert triple.as_tuple() == (4075, 52975, 52975)


def test_predict_dense_factorized_left_stage():
    # 500 outputs over the occupied 16268-slot payload: 14 rounds each
    assert predict_dense(500, 16268).rot == 7000


def test_predict_dense_degenerate():
    assert predict_dense(1, 1).as_tuple() == (1, 0, 0)


def test_predict_conv_cells():
    assert predict_conv(20, 163).as_tuple() == (3260, 3097, 0)
    assert predict_conv(1, 1).as_tuple() == (1, 0, 0)
    assert predict_conv(64, 56).as_tuple() == (3584, 3528, 0)
    assert predict_conv(64, 13).as_tuple() == (832, 819, 0)


def test_predict_fc_widenet():
    assert predict_fc(10, 4075).as_tuple() == (10, 120, 120)


# ----------------------------------------------------------------------
# transition cells
# ----------------------------------------------------------------------

def test_transition_cells():
    prev = TensorShape(w=3, h=3, c=3)
    k2 = KernelSpec(d=2, stride=1)
    assert predict_transition("CP-HI2C-CP", prev, KernelSpec(d=1)).as_tuple() == (0, 0, 0)
    assert predict_transition("DP-HI2C-CP", TensorShape(w=5, h=5, c=20),
                              KernelSpec(d=1)).as_tuple() == (20, 0, 20)
    assert predict_transition("CP-HI2C-DP", TensorShape(w=5, h=5, c=163),
                              k2).as_tuple() == (0, 162, 162)
    # d>1 rebuild: O_w*O_h*K moves, element-count bound on masks
    assert predict_transition("CP-HI2C-CP", prev, k2).as_tuple() == (27, 48, 48)
    assert predict_transition("DP-HI2C-CP", prev, k2).as_tuple() == (27, 48, 48)
    with pytest.raises(ValueError):
        predict_transition("DP-HI2C-DP", prev, k2)


def test_transition_effective_adjustments():
    prev = TensorShape(w=3, h=3, c=3)
    # d=1 dense grouping: channel-0 rotation elided
    eff = predict_transition_effective("DP-HI2C-CP", prev, KernelSpec(d=1))
    assert eff.as_tuple() == (3, 0, 2)
    # stride-1 rebuild touches every element: masks = O1 exactly
    eff = predict_transition_effective("DP-HI2C-CP", prev, KernelSpec(d=2))
    assert eff.as_tuple() == (27, 48, 48)
    # stride 2 skips elements: fewer masks than the bound
    prev = TensorShape(w=5, h=5, c=1)
    eff = predict_transition_effective("CP-HI2C-CP", prev, KernelSpec(d=2, stride=2))
    nominal = predict_transition("CP-HI2C-CP", prev, KernelSpec(d=2, stride=2))
    assert eff.add_cc == nominal.add_cc and eff.rot == nominal.rot
    assert eff.mul_pc == 16 < nominal.mul_pc == 25


def test_weighted_cost():
    t = CostTriple(10, 20, 5)
    assert t.weighted(10.0) == 10 + 20 + 50
    assert (t + CostTriple(1, 1, 1)).as_tuple() == (11, 21, 6)


# ----------------------------------------------------------------------
# plan-level prediction
# ----------------------------------------------------------------------

def test_predict_network_rows_cover_plan():
    net = preset_network("ffconv-widenet")
    plan = build_plan(net, "ffconv-default")
    report = costmodel.predict_network(net, plan)
    names = [r.name for r in report.rows]
    assert "layer2:ffconv:w1-dot-products" in names
    assert report.row("layer2:ffconv:w1-dot-products").predicted.rot == 7000
    assert report.row("layer3:combine").predicted.rot == 162
    assert report.row("layer4:fc").predicted.rot == 120
    assert report.row("layer1:combine").predicted.rot == 82
    assert report.measured_total() is None
    # the table renders and carries the totals line
    assert "TOTAL" in report.table()


def test_empty_network_zero_report():
    net = NetworkSpec(scheme=SchemeParams(n_slots=64, t=257),
                      input_shape=TensorShape(w=2, h=2, c=2), layers=())
    plan = build_plan(net, "lola-default")
    report = costmodel.predict_network(net, plan)
    assert report.predicted_total().as_tuple() == (0, 0, 0)


def test_published_reduction_figure():
    assert rotation_reduction(52975, 7162) == pytest.approx(86.4804, abs=1e-3)


# ----------------------------------------------------------------------
# packing-variant comparison
# ----------------------------------------------------------------------

def test_compare_plans_widenet_ordering():
    net = preset_network("ffconv-widenet")
    order = [v.pattern for v in costmodel.compare_plans(net, 2, rank=20)]
    assert order == ["DP-HI2C-CP", "DP-DP", "CP-HI2C-CP", "CP-HI2C-DP"]


def test_compare_plans_full_rank_keeps_dense_left_ahead():
    net = preset_network("ffconv-widenet")
    ranked = costmodel.compare_plans(net, 2, rank=163)
    weights = {v.pattern: v.weighted for v in ranked}
    assert weights["DP-HI2C-CP"] <= weights["DP-DP"]


def test_compare_plans_always_four_variants():
    net = NetworkSpec(
        scheme=SchemeParams(n_slots=512, t=65537),
        input_shape=TensorShape(w=6, h=6, c=1),
        layers=(LayerSpec(kind="conv", d=3, stride=1, out_channels=4),))
    ranked = costmodel.compare_plans(net, 0, rank=2)
    assert len(ranked) == 4
    assert sorted(v.weighted for v in ranked) == [v.weighted for v in ranked]


def test_compare_plans_monotone_in_rank():
    net = preset_network("ffconv-widenet")
    prev = None
    for rank in (5, 10, 20, 40, 80, 163):
        cost = {v.pattern: v.weighted for v in costmodel.compare_plans(net, 2, rank=rank)}
        if prev is not None:
            for pattern in cost:
                assert cost[pattern] >= prev[pattern]
        prev = cost


def test_compare_plans_requires_rank():
    net = preset_network("lola-widenet")
    with pytest.raises(ValueError):
        costmodel.compare_plans(net, 2)          # plain conv, no rank given
    with pytest.raises(ValueError):
        costmodel.compare_plans(net, 1, rank=3)  # square layer
