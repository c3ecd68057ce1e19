"""Shared helpers: independent plaintext oracles, small builders, and the
random-network generator used by the runner and acceptance suites."""

import numpy as np

from cipherpack.hesim import HeContext, SchemeParams
from cipherpack.netspec import LayerSpec, NetworkSpec
from cipherpack.packing import ChannelPacked, TensorShape


def make_ctx(n=256, t=65537):
    return HeContext(SchemeParams(n_slots=n, t=t))


def rand_tensor(rng, c, h, w, bound=20):
    return rng.integers(-bound, bound + 1, size=(c, h, w))


def naive_im2col(tensor, d, stride):
    """Patch-matrix oracle: plain nested loops, no vectorization."""
    c, h, w = tensor.shape
    ow = (w - d) // stride + 1
    oh = (h - d) // stride + 1
    out = []
    for oy in range(oh):
        for ox in range(ow):
            row = []
            for ch in range(c):
                for ky in range(d):
                    for kx in range(d):
                        row.append(tensor[ch, oy * stride + ky, ox * stride + kx])
            out.append(row)
    return np.array(out)


def naive_conv(tensor, w4d, stride):
    """Direct convolution oracle: sum over the receptive field per output,
    exact integer arithmetic.  w4d has shape (d, d, in_c, out_c); the
    result has shape (out_c, oh, ow)."""
    c, h, w = tensor.shape
    d = w4d.shape[0]
    oc = w4d.shape[3]
    ow = (w - d) // stride + 1
    oh = (h - d) // stride + 1
    out = np.zeros((oc, oh, ow), dtype=object)
    for o in range(oc):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0
                for ch in range(c):
                    for ky in range(d):
                        for kx in range(d):
                            acc += int(tensor[ch, oy * stride + ky, ox * stride + kx]) \
                                * int(w4d[ky, kx, ch, o])
                out[o, oy, ox] = acc
    return out


def channels_from_tensor(tensor, ctx):
    c, h, w = tensor.shape
    cts = tuple(ctx.encrypt(tensor[ch].reshape(-1)) for ch in range(c))
    return ChannelPacked(cts=cts, spatial=(w, h))


FFCONV_PATTERN_POOL = ("dp-hi2c-cp", "cp-hi2c-cp", "dp-dp", "cp-hi2c-dp")


def random_network(rng, *, max_side=12, max_channels=3, input_bound=7):
    """A 1-2 convolution network (regular or factorized, every packing
    pattern), square activation, and a final fc, with a modulus sized so
    the worst case fits and the int64 path stays exact.

    Returns (net, weights, input_tensor).
    """
    from cipherpack.runner import static_bounds
    from cipherpack.weights import random_weights

    w = int(rng.integers(3, max_side + 1))
    h = int(rng.integers(3, max_side + 1))
    c = int(rng.integers(1, max_channels + 1))
    shape = TensorShape(w=w, h=h, c=c)

    def conv_layer(cur):
        d = int(rng.integers(1, min(3, cur.w, cur.h) + 1))
        stride = int(rng.integers(1, 3))
        if (cur.w - d) // stride + 1 < 1 or (cur.h - d) // stride + 1 < 1:
            stride = 1
        oc = int(rng.integers(1, 5))
        kind = "ffconv" if rng.random() < 0.5 else "conv"
        if kind == "ffconv":
            k = d * d * cur.c
            if min(k, oc) < 1:
                kind = "conv"
        if kind == "ffconv":
            rank = int(rng.integers(1, min(d * d * cur.c, oc) + 1))
            pattern = str(rng.choice(FFCONV_PATTERN_POOL))
            if pattern in ("cp-hi2c-cp", "cp-hi2c-dp") and d == 1 and stride > 1:
                stride = 1
            return LayerSpec(kind="ffconv", d=d, stride=stride, out_channels=oc,
                             rank=rank, packing_hint=pattern)
        hint = str(rng.choice(["dense", "conv"]))
        if hint == "conv" and d == 1 and stride > 1:
            stride = 1
        return LayerSpec(kind="conv", d=d, stride=stride, out_channels=oc,
                         packing_hint=hint)

    layers = [conv_layer(shape)]
    cur = NetworkSpec._apply(layers[0], shape)
    if rng.random() < 0.5 and min(cur.w, cur.h) >= 2:
        layers.append(conv_layer(cur))
        cur = NetworkSpec._apply(layers[1], cur)
    layers.append(LayerSpec(kind="square"))
    layers.append(LayerSpec(kind="fc", out_channels=int(rng.integers(2, 6))))

    n_slots = 1024
    provisional = NetworkSpec(scheme=SchemeParams(n_slots=n_slots, t=(1 << 61)),
                              input_shape=shape, layers=tuple(layers))
    weights = random_weights(provisional, rng, bound=3)
    entries = static_bounds(provisional, weights, input_bound=input_bound)
    bound = max(e.static_bound for e in entries)
    t = max(2 * bound + 3, 257)
    net = NetworkSpec(scheme=SchemeParams(n_slots=n_slots, t=t),
                      input_shape=shape, layers=tuple(layers))
    x = rng.integers(0, input_bound + 1, size=(c, h, w))
    return net, weights, x
