"""End-to-end oracle equivalence, ledger behavior, verification plumbing."""

import numpy as np
import pytest

from conftest import random_network

from cipherpack.hesim import SchemeParams
from cipherpack.netspec import LayerSpec, NetworkSpec
from cipherpack.packing import TensorShape
from cipherpack.planner import PlanError, build_plan
from cipherpack.runner import (
    ModulusTooSmallError,
    run_encrypted,
    run_reference,
    static_bounds,
    verify,
)
from cipherpack.weights import WeightSet, WeightTensor, random_weights


def small_net(t=2_000_003, hint="conv"):
    return NetworkSpec(
        scheme=SchemeParams(n_slots=512, t=t),
        input_shape=TensorShape(w=5, h=5, c=1),
        layers=(LayerSpec(kind="conv", d=2, stride=1, out_channels=2,
                          packing_hint=hint),
                LayerSpec(kind="square"),
                LayerSpec(kind="fc", out_channels=3)))


# ----------------------------------------------------------------------
# reference oracle
# ----------------------------------------------------------------------

def test_reference_hand_computed_conv():
    # 3x3 input, 2x2 filter keeping top-left and bottom-right:
    # out[oy, ox] = x[oy, ox] + x[oy+1, ox+1]
    net = NetworkSpec(
        scheme=SchemeParams(n_slots=64, t=10007),
        input_shape=TensorShape(w=3, h=3, c=1),
        layers=(LayerSpec(kind="conv", d=2, stride=1, out_channels=1),))
    w4d = np.zeros((2, 2, 1, 1), dtype=np.int64)
    w4d[0, 0, 0, 0] = 1
    w4d[1, 1, 0, 0] = 1
    ws = WeightSet([WeightTensor(name="layer0.weight", values=w4d, bits=8, scale=1.0)])
    x = np.arange(1, 10).reshape(1, 3, 3)
    logits, _, _ = run_reference(net, ws, x)
    assert logits.tolist() == [6, 8, 12, 14]


def test_reference_identity_conv():
    net = NetworkSpec(
        scheme=SchemeParams(n_slots=64, t=10007),
        input_shape=TensorShape(w=2, h=2, c=1),
        layers=(LayerSpec(kind="conv", d=1, stride=1, out_channels=1),))
    ws = WeightSet([WeightTensor(name="layer0.weight",
                                 values=np.ones((1, 1, 1, 1), dtype=np.int64),
                                 bits=8, scale=1.0)])
    x = np.array([[[4, -3], [2, 9]]])
    logits, _, _ = run_reference(net, ws, x)
    assert logits.tolist() == [4, -3, 2, 9]


def test_reference_input_shape_check():
    net = small_net()
    ws = random_weights(net, np.random.default_rng(0), bound=3)
    with pytest.raises(ValueError, match="input shape"):
        run_reference(net, ws, np.zeros((1, 4, 4), dtype=np.int64))


# ----------------------------------------------------------------------
# encrypted-vs-reference agreement
# ----------------------------------------------------------------------

def test_all_zero_input_yields_biases():
    net = small_net()
    rng = np.random.default_rng(1)
    ws = random_weights(net, rng, bound=3)
    x = np.zeros((1, 5, 5), dtype=np.int64)
    res = run_encrypted(net, build_plan(net, "explicit"), ws, x)
    assert res.logits.tolist() == ws["layer2.bias"].values.tolist()


def test_random_networks_exact_and_predicted(subtests=None):
    rng = np.random.default_rng(9)
    for _ in range(40):
        net, ws, x = random_network(rng)
        plan = build_plan(net, "explicit")
        res = run_encrypted(net, plan, ws, x)
        assert res.logits.tolist() == res.reference_logits.tolist()
        assert res.report.divergences() == []


def test_strategies_agree_on_logits():
    rng = np.random.default_rng(10)
    net, ws, x = random_network(rng)
    outs = []
    for strategy in ("lola-default", "ffconv-default", "explicit"):
        res = run_encrypted(net, build_plan(net, strategy), ws, x)
        outs.append(res.logits.tolist())
    assert outs[0] == outs[1] == outs[2]


def test_depth_contracts_per_layer():
    rng = np.random.default_rng(11)
    for _ in range(15):
        net, ws, x = random_network(rng)
        res = run_encrypted(net, build_plan(net, "explicit"), ws, x)
        for rec in res.layer_depths:
            if rec["op"] == "ffconv":
                assert rec["depth_delta"] == 2, rec
            elif rec["op"] in ("conv-dense", "conv-columns", "fc", "square"):
                assert rec["depth_delta"] == 1, rec


def test_count_only_matches_tracked_counts():
    rng = np.random.default_rng(12)
    net, ws, x = random_network(rng)
    plan = build_plan(net, "explicit")
    tracked = run_encrypted(net, plan, ws, x)
    phantom = run_encrypted(net, plan, ws, None, track_values=False)
    assert phantom.logits is None
    for a, b in zip(tracked.report.rows, phantom.report.rows):
        assert a.name == b.name
        assert a.measured == b.measured
        assert a.measured_assembly == b.measured_assembly
    assert tracked.depth == phantom.depth


# ----------------------------------------------------------------------
# ledger
# ----------------------------------------------------------------------

def test_modulus_too_small_names_layer():
    net = small_net(t=257)
    rng = np.random.default_rng(13)
    ws = random_weights(net, rng, bound=7)
    x = rng.integers(0, 16, size=(1, 5, 5))
    with pytest.raises(ModulusTooSmallError, match=r"layer \d"):
        run_encrypted(net, build_plan(net, "explicit"), ws, x)


def test_static_bound_dominates_actual():
    rng = np.random.default_rng(14)
    for _ in range(10):
        net, ws, x = random_network(rng)
        _, _, maxima = run_reference(net, ws, x)
        entries = static_bounds(net, ws, input_bound=int(x.max()) if x.size else 1)
        for e, actual in zip(entries, maxima):
            assert actual <= e.static_bound


def test_ledger_scale_walk():
    net = NetworkSpec(
        scheme=SchemeParams(n_slots=64, t=(1 << 40)),
        input_shape=TensorShape(w=2, h=2, c=1),
        layers=(LayerSpec(kind="conv", d=1, stride=1, out_channels=1),
                LayerSpec(kind="square"),
                LayerSpec(kind="avgpool", d=2, stride=2)))
    ws = WeightSet([WeightTensor(name="layer0.weight",
                                 values=np.full((1, 1, 1, 1), 2, dtype=np.int64),
                                 bits=8, scale=0.5)])
    entries = static_bounds(net, ws, input_bound=3, input_scale=0.1)
    assert [e.static_bound for e in entries] == [6, 36, 144]
    assert entries[0].scale == pytest.approx(0.05)
    assert entries[1].scale == pytest.approx(0.0025)
    assert entries[2].scale == pytest.approx(0.000625)


# ----------------------------------------------------------------------
# verify
# ----------------------------------------------------------------------

def test_verify_passes_on_consistent_net():
    net = small_net()
    report = verify(net, build_plan(net, "explicit"), trials=5, seed=3, input_bound=7)
    assert report.ok
    assert "all exact" in report.summary()


def test_verify_reports_modulus_failures():
    net = small_net(t=521)
    report = verify(net, build_plan(net, "explicit"), trials=3, seed=4, input_bound=15)
    assert not report.ok
    assert any("t/2" in f for f in report.failures)


def test_plan_error_on_strided_1x1_columns():
    net = NetworkSpec(
        scheme=SchemeParams(n_slots=512, t=65537),
        input_shape=TensorShape(w=4, h=4, c=1),
        layers=(LayerSpec(kind="conv", d=2, stride=1, out_channels=2, packing_hint="dense"),
                LayerSpec(kind="conv", d=1, stride=2, out_channels=2, packing_hint="conv"),))
    with pytest.raises(PlanError, match="stride 1"):
        build_plan(net, "explicit")


def test_run_rejects_foreign_plan():
    net_a = small_net()
    net_b = small_net(hint="dense")
    plan_b = build_plan(net_b, "explicit")
    ws = random_weights(net_a, np.random.default_rng(15), bound=3)
    with pytest.raises(ValueError, match="different network"):
        run_encrypted(net_a, plan_b, ws, np.zeros((1, 5, 5), dtype=np.int64))
