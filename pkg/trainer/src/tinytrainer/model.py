"""The MNIST-scale square-activation network and its factorized variant.

TinyNet: one 8x8 stride-2 convolution (54 maps, no bias), a Square
activation, and a 10-way fully connected head.  The factorized variant
splits the convolution into a rank-r 8x8 stage followed by a 1x1 stage
restoring the channels; both stages stay bias-free so the pair is exactly
a low-rank factorization of the original weight matrix.

The fc head is bias-free as well: the inference engine adds bias integers
at the running activation scale, and after a square activation that scale
is so fine that matched-scale bias integers overflow the weight file's
32-bit tensors.  Dropping the ten logit offsets costs nothing measurable
on digit classification.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

CONV_CHANNELS = 54
CONV_KERNEL = 8
CONV_STRIDE = 2
N_CLASSES = 10
FC_INPUT = CONV_CHANNELS * 11 * 11


class Square(nn.Module):
    def forward(self, x):
        return x * x


class TinyNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, CONV_CHANNELS, CONV_KERNEL, stride=CONV_STRIDE,
                              bias=False)
        self.act = Square()
        self.fc = nn.Linear(FC_INPUT, N_CLASSES, bias=False)

    def forward(self, x):
        x = self.conv(x)
        x = self.act(x)
        return self.fc(x.flatten(start_dim=1))


class FactorizedTinyNet(nn.Module):
    def __init__(self, rank: int):
        super().__init__()
        self.rank = rank
        self.conv1 = nn.Conv2d(1, rank, CONV_KERNEL, stride=CONV_STRIDE, bias=False)
        self.conv2 = nn.Conv2d(rank, CONV_CHANNELS, 1, stride=1, bias=False)
        self.act = Square()
        self.fc = nn.Linear(FC_INPUT, N_CLASSES, bias=False)

    def forward(self, x):
        x = self.conv2(self.conv1(x))
        x = self.act(x)
        return self.fc(x.flatten(start_dim=1))


def conv_weight_matrix(weight: torch.Tensor) -> np.ndarray:
    """Torch conv weight (out_c, in_c, kh, kw) -> K x O_c with rows
    enumerated channel-major (ch, ky, kx)."""
    oc, ic, kh, kw = weight.shape
    return (weight.detach().permute(1, 2, 3, 0).reshape(ic * kh * kw, oc)
            .cpu().numpy().astype(np.float64))


def svd_init(source: TinyNet, rank: int) -> FactorizedTinyNet:
    """Initialize the factorized model from the truncated SVD of the
    source convolution (singular values folded into the first stage)."""
    w = conv_weight_matrix(source.conv.weight)
    k, oc = w.shape
    if not 1 <= rank <= min(k, oc):
        raise ValueError(f"rank must be in [1, {min(k, oc)}], got {rank}")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    w1 = u[:, :rank] * s[:rank]          # K x r
    w2 = vt[:rank, :]                    # r x O_c
    model = FactorizedTinyNet(rank)
    ic, d = source.conv.in_channels, CONV_KERNEL
    conv1 = torch.from_numpy(w1.reshape(ic, d, d, rank).transpose(3, 0, 1, 2).copy())
    conv2 = torch.from_numpy(w2.T.reshape(oc, rank, 1, 1).copy())
    with torch.no_grad():
        model.conv1.weight.copy_(conv1.to(model.conv1.weight.dtype))
        model.conv2.weight.copy_(conv2.to(model.conv2.weight.dtype))
        model.fc.weight.copy_(source.fc.weight)
    return model


def save_checkpoint(model: nn.Module, path: str, meta: dict | None = None) -> None:
    payload = {"state": model.state_dict(),
               "arch": "ffconv-tinynet" if isinstance(model, FactorizedTinyNet)
               else "tinynet",
               "meta": meta or {}}
    if isinstance(model, FactorizedTinyNet):
        payload["rank"] = model.rank
    torch.save(payload, path)


def load_checkpoint(path: str) -> nn.Module:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload["arch"] == "ffconv-tinynet":
        model = FactorizedTinyNet(payload["rank"])
    else:
        model = TinyNet()
    model.load_state_dict(payload["state"])
    model.eval()
    return model
