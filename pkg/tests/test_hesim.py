"""Slot-engine primitives: exact Z_t semantics, counters, depth."""

import math

import numpy as np
import pytest

from cipherpack.hesim import (
    CapacityError,
    EncodingOverflowError,
    HeContext,
    OpCounters,
    PreconditionError,
    SchemeParams,
    merge_contexts,
    rotations_for_span,
)

P97 = SchemeParams(n_slots=4, t=97)


def ctx97():
    return HeContext(P97)


# ----------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(n_slots=3, t=97)
    with pytest.raises(ValueError):
        SchemeParams(n_slots=0, t=97)
    with pytest.raises(ValueError):
        SchemeParams(n_slots=4, t=1)
    with pytest.raises(ValueError):
        SchemeParams(n_slots=4, t=97, rotation_weight=0)
    p = SchemeParams(n_slots=8192, t=1099511922689, noise_budget_bits=380,
                     security_bits=128)
    assert p.noise_budget_bits == 380  # recorded, never consulted


# ----------------------------------------------------------------------
# encrypt / decrypt
# ----------------------------------------------------------------------

def test_encrypt_signed_residues():
    ct = ctx97().encrypt([1, -2, 3])
    assert ct.slots.tolist() == [1, 95, 3, 0]
    assert ct.depth == 0


def test_encrypt_empty():
    ct = ctx97().encrypt([])
    assert ct.slots.tolist() == [0, 0, 0, 0]


def test_encrypt_boundaries():
    ctx = HeContext(SchemeParams(n_slots=4, t=100))
    ctx.encrypt([49, -49])
    with pytest.raises(EncodingOverflowError):
        ctx.encrypt([50])
    c97 = ctx97()
    c97.encrypt([48, -48])
    with pytest.raises(EncodingOverflowError):
        c97.encrypt([49])
    with pytest.raises(CapacityError):
        c97.encrypt([1, 2, 3, 4, 5])


def test_decrypt_round_trip():
    ctx = ctx97()
    assert ctx.decrypt(ctx.encrypt([5, -7])).tolist() == [5, -7, 0, 0]


def test_decrypt_centered_lift():
    ctx = ctx97()
    ct = ctx.encrypt([-2])
    assert ct.slots[0] == 95
    assert ctx.decrypt(ct)[0] == -2
    assert ctx.decrypt(ctx.encrypt([0, 0])).tolist() == [0, 0, 0, 0]


def test_decrypt_even_modulus_halfpoint():
    # |v| < t/2 excludes -5 at t=10 from encoding, but residue 5 can still
    # arise mid-computation and lifts to the -t/2 end of [-t/2, t/2).
    ctx = HeContext(SchemeParams(n_slots=2, t=10))
    with pytest.raises(EncodingOverflowError):
        ctx.encrypt([-5])
    ct = ctx.add_cc(ctx.encrypt([2]), ctx.encrypt([3]))
    assert ct.slots[0] == 5
    assert ctx.decrypt(ct)[0] == -5


# ----------------------------------------------------------------------
# rotate
# ----------------------------------------------------------------------

def test_rotate_cyclic():
    ctx = ctx97()
    ct = ctx.encrypt([1, 2, 3, 4])
    assert ctx.rotate(ct, 1).slots.tolist() == [2, 3, 4, 1]
    assert ctx.counters.rot == 1


def test_rotate_zero_is_free():
    ctx = ctx97()
    ct = ctx.encrypt([1, 2, 3, 4])
    out = ctx.rotate(ct, 0)
    assert out.slots.tolist() == [1, 2, 3, 4]
    assert ctx.counters.rot == 0
    assert ctx.elided_rotations == 1
    # explicit per-move charging for schedule accounting
    ctx.rotate(ct, 0, charge_identity=True)
    assert ctx.counters.rot == 1


def test_rotate_group_law():
    ctx = ctx97()
    rng = np.random.default_rng(0)
    for _ in range(50):
        vals = rng.integers(-48, 49, size=4)
        a, b = int(rng.integers(0, 4)), int(rng.integers(0, 4))
        ct = ctx.encrypt(vals)
        lhs = ctx.rotate(ctx.rotate(ct, a), b)
        rhs = ctx.rotate(ct, (a + b) % 4)
        assert lhs.slots.tolist() == rhs.slots.tolist()


def test_rotate_out_of_range():
    ctx = ctx97()
    ct = ctx.encrypt([1])
    with pytest.raises(ValueError):
        ctx.rotate(ct, 4)
    with pytest.raises(ValueError):
        ctx.rotate(ct, -1)


def test_rotate_bijection_and_identity():
    ctx = ctx97()
    ct = ctx.encrypt([4, 7, -1, 2])
    back = ctx.rotate(ctx.rotate(ct, 3), 1)  # 3 + 1 = N
    assert back.slots.tolist() == ct.slots.tolist()


# ----------------------------------------------------------------------
# mul_plain / add_cc / square
# ----------------------------------------------------------------------

def test_mul_plain_basic():
    ctx = ctx97()
    ct = ctx.mul_plain(ctx.encrypt([1, 2, 3, 4]), ctx.encode([2, 2, 2, 2]))
    assert ct.slots.tolist() == [2, 4, 6, 8]
    assert ctx.counters.mul_pc == 1
    assert ct.depth == 1


def test_mul_plain_identity_values_still_cost_depth():
    ctx = ctx97()
    ct = ctx.mul_plain(ctx.encrypt([5, -6]), ctx.encode([1, 1, 1, 1]))
    assert ctx.decrypt(ct).tolist() == [5, -6, 0, 0]
    assert ct.depth == 1


def test_mul_plain_hand_oracle():
    # 50*3 = 150 = 97 + 53; 60*3 = 180 = 97 + 83
    ctx = ctx97()
    ct = ctx.mul_plain(ctx.encrypt([50 - 97, 60 - 97]), ctx.encode([3, 3]))
    assert ct.slots[:2].tolist() == [53, 83]


def test_add_cc_basic():
    ctx = ctx97()
    ct = ctx.add_cc(ctx.encrypt([1, 2]), ctx.encrypt([3, 4]))
    assert ct.slots[:2].tolist() == [4, 6]
    assert ctx.counters.add_cc == 1
    assert ct.depth == 0


def test_add_cc_identity_and_mismatch():
    ctx = ctx97()
    x = ctx.encrypt([9, -9])
    assert ctx.add_cc(x, ctx.encrypt([])).slots.tolist() == x.slots.tolist()
    other = HeContext(SchemeParams(n_slots=4, t=101)).encrypt([1])
    with pytest.raises(ValueError):
        ctx.add_cc(x, other)


def test_add_cc_hand_oracle():
    # 96 + 5 = 101 = 97 + 4
    ctx = ctx97()
    ct = ctx.add_cc(ctx.encrypt([-1, -1]), ctx.encrypt([5, 5]))
    assert ct.slots[:2].tolist() == [4, 4]


def test_square():
    ctx = ctx97()
    assert ctx.square(ctx.encrypt([2, 3])).slots[:2].tolist() == [4, 9]
    assert ctx.square(ctx.encrypt([0, 1])).slots[:2].tolist() == [0, 1]
    # 10^2 = 100 = 97 + 3
    assert ctx.square(ctx.encrypt([10])).slots[0] == 3
    assert ctx.counters.mul_cc == 3
    assert ctx.square(ctx.encrypt([2])).depth == 1


# ----------------------------------------------------------------------
# rotate_and_sum
# ----------------------------------------------------------------------

def test_rotate_and_sum_small():
    ctx = ctx97()
    out = ctx.rotate_and_sum(ctx.encrypt([1, 2, 3, 4]), 4)
    assert out.slots[0] == 10
    assert ctx.counters.rot == 2
    assert ctx.counters.add_cc == 2
    assert out.depth == 0


def test_rotate_and_sum_identity():
    ctx = ctx97()
    out = ctx.rotate_and_sum(ctx.encrypt([7]), 1)
    assert out.slots[0] == 7
    assert ctx.counters.rot == 0


def test_rotate_and_sum_precondition():
    ctx = ctx97()
    with pytest.raises(PreconditionError):
        ctx.rotate_and_sum(ctx.encrypt([1, 2, 3, 4]), 3)
    with pytest.raises(ValueError):
        ctx.rotate_and_sum(ctx.encrypt([1]), 0)
    with pytest.raises(ValueError):
        ctx.rotate_and_sum(ctx.encrypt([1]), 5)


def test_rotate_and_sum_rotation_count_exhaustive():
    # ceil(log2 m) for every payload length up to N = 64
    params = SchemeParams(n_slots=64, t=10007)
    rng = np.random.default_rng(1)
    for m in range(1, 65):
        ctx = HeContext(params)
        vals = rng.integers(-5000, 5001, size=m)
        out = ctx.rotate_and_sum(ctx.encrypt(vals), m)
        expected_rounds = math.ceil(math.log2(m)) if m > 1 else 0
        assert ctx.counters.rot == expected_rounds
        assert ctx.counters.add_cc == expected_rounds
        assert ctx.decrypt(out)[0] == int(sum(int(v) for v in vals)) % 10007 - (
            10007 if int(sum(int(v) for v in vals)) % 10007 >= 5004 else 0
        )


def test_rotate_and_sum_published_spans():
    # 16268-slot payload needs 14 rounds; 4075 needs 12.
    assert rotations_for_span(16268) == 14
    assert rotations_for_span(4075) == 12
    assert 500 * rotations_for_span(16268) == 7000
    assert 10 * rotations_for_span(4075) == 120
    params = SchemeParams(n_slots=16384, t=65537)
    ctx = HeContext(params)
    ct = ctx.encrypt(np.ones(16268, dtype=np.int64))
    out = ctx.rotate_and_sum(ct, 16268)
    assert ctx.counters.rot == 14
    assert ctx.decrypt(out)[0] == 16268 % 65537


# ----------------------------------------------------------------------
# properties
# ----------------------------------------------------------------------

def _centered(v, t):
    r = v % t
    return r - t if r >= (t + 1) // 2 else r


def test_homomorphic_correctness_random_sequences():
    """decrypt(ops(encrypt(x))) == ops on centered integers mod t."""
    rng = np.random.default_rng(7)
    for trial in range(1000):
        n = int(rng.choice([4, 8, 16]))
        t = int(rng.choice([97, 101, 256, 65537]))
        params = SchemeParams(n_slots=n, t=t)
        ctx = HeContext(params)
        bound = (t - 1) // 2
        x = rng.integers(-bound, bound + 1, size=n)
        ct = ctx.encrypt(x)
        ref = np.array([_centered(int(v), t) for v in x], dtype=object)
        for _ in range(int(rng.integers(1, 6))):
            op = rng.integers(0, 4)
            if op == 0:
                k = int(rng.integers(0, n))
                ct = ctx.rotate(ct, k)
                ref = np.roll(ref, -k)
            elif op == 1:
                pv = rng.integers(-bound, bound + 1, size=n)
                ct = ctx.mul_plain(ct, ctx.encode(pv))
                ref = np.array([_centered(int(a) * int(b), t) for a, b in zip(ref, pv)],
                               dtype=object)
            elif op == 2:
                y = rng.integers(-bound, bound + 1, size=n)
                ct = ctx.add_cc(ct, ctx.encrypt(y))
                ref = np.array([_centered(int(a) + _centered(int(b), t), t)
                                for a, b in zip(ref, y)], dtype=object)
            else:
                ct = ctx.square(ct)
                ref = np.array([_centered(int(a) * int(a), t) for a in ref], dtype=object)
        assert ctx.decrypt(ct).tolist() == ref.tolist(), f"trial {trial}"


def test_depth_law():
    """Depth equals the longest multiplicative chain, not the op count."""
    ctx = ctx97()
    a = ctx.mul_plain(ctx.encrypt([1]), ctx.encode([2]))          # depth 1
    b = ctx.square(ctx.square(ctx.encrypt([2])))                  # depth 2
    c = ctx.add_cc(a, b)
    assert c.depth == 2
    d = ctx.mul_plain(c, ctx.encode([1, 1, 1, 1]))
    assert d.depth == 3
    e = ctx.rotate(d, 1)
    assert e.depth == 3
    # assembly masks accrue on the separate ledger
    f = ctx.mul_plain(e, ctx.encode([1]), assembly=True)
    assert f.depth == 3 and f.assembly_depth == 1
    assert ctx.counters.assembly_mul_pc == 1
    assert ctx.counters.mul_pc == 2


def test_counter_additivity_and_merge():
    c1, c2 = ctx97(), ctx97()
    x1 = c1.encrypt([1, 2, 3, 4])
    c1.rotate_and_sum(c1.mul_plain(x1, c1.encode([1, 1, 1, 1])), 4)
    x2 = c2.encrypt([1, 1])
    c2.add_cc(x2, x2)
    total = OpCounters() + c1.counters + c2.counters
    merged = merge_contexts(HeContext(P97), c1, c2)
    assert merged.counters == total
    assert total.mul_pc == 1 and total.rot == 2 and total.add_cc == 3


# ----------------------------------------------------------------------
# big-modulus (object dtype) and fallback paths
# ----------------------------------------------------------------------

BIG_T = 9007199255560193 * 9007199255658497   # ~2^106, object storage


def test_big_modulus_object_path():
    params = SchemeParams(n_slots=8, t=BIG_T)
    assert not params.int64_storage
    ctx = HeContext(params)
    v = 2**100
    ct = ctx.encrypt([v, -v, 123])
    out = ctx.mul_plain(ct, ctx.encode([3, 3, 0]))
    assert ctx.decrypt(out).tolist()[:3] == [
        _centered(3 * v, BIG_T), _centered(-3 * v, BIG_T), 0]
    sq = ctx.square(ctx.encrypt([2**52]))
    assert ctx.decrypt(sq)[0] == _centered(2**104, BIG_T)
    s = ctx.add_cc(ct, ct)
    assert ctx.decrypt(s)[0] == _centered(2 * v, BIG_T)


def test_int64_storage_with_per_op_fallback():
    # t ~ 2^59: storage is int64 but weight multiplies and squares must
    # detour through exact big-int arithmetic.
    t = 576460752303439873
    params = SchemeParams(n_slots=8, t=t)
    assert params.int64_storage
    ctx = HeContext(params)
    big = 2**57
    ct = ctx.encrypt([big, -big])
    out = ctx.mul_plain(ct, ctx.encode([127, -127]))
    assert ctx.decrypt(out).tolist()[:2] == [
        _centered(127 * big, t), _centered(127 * big, t)]
    sq = ctx.square(ctx.encrypt([2**40]))
    assert ctx.decrypt(sq)[0] == _centered(2**80, t)


def test_untracked_counts_match_tracked():
    params = SchemeParams(n_slots=16, t=65537)
    real, phantom = HeContext(params), HeContext(params)

    def run(ctx, ct):
        ct = ctx.mul_plain(ct, ctx.encode([2] * 16) if ct.tracked else None)
        ct = ctx.rotate(ct, 3)
        ct = ctx.add_cc(ct, ct)
        ct = ctx.square(ct)
        return ct

    a = run(real, real.encrypt([1] * 16))
    b = run(phantom, phantom.encrypt_untracked())
    assert real.counters == phantom.counters
    assert a.depth == b.depth
    with pytest.raises(ValueError):
        phantom.decrypt(b)
