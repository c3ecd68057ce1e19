"""Training loop: Adam, per-epoch learning-rate decay, gradient clipping.

Square activations can blow up during backpropagation; clipping the
gradient norm at 5 keeps the runs from diverging.  Data is held as whole
tensors and sliced into minibatches directly, which keeps a full
100-epoch run on CPU within minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .model import FactorizedTinyNet, TinyNet, svd_init

GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    architecture: str = "tinynet"      # tinynet | ffconv-tinynet
    epochs: int = 100
    lr: float = 1e-3
    lr_decay: float = 0.97             # multiplied in after every epoch
    optimizer: str = "adam"
    rank: int | None = None            # ffconv only
    init: str = "svd"                  # svd | random (ffconv only)
    source_checkpoint: str | None = None
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.architecture not in ("tinynet", "ffconv-tinynet"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "ffconv-tinynet" and self.rank is None:
            raise ValueError("ffconv-tinynet needs a rank")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr decay multiplier must be in (0, 1]")
        if self.init not in ("svd", "random"):
            raise ValueError(f"unknown init {self.init!r}")


def _to_tensors(images: np.ndarray, labels: np.ndarray):
    x = torch.from_numpy(images.astype(np.float32) / 255.0).unsqueeze(1)
    y = torch.from_numpy(labels.astype(np.int64))
    return x, y


def build_model(config: TrainConfig):
    torch.manual_seed(config.seed)
    if config.architecture == "tinynet":
        return TinyNet()
    if config.init == "svd":
        if not config.source_checkpoint:
            raise ValueError("svd init needs --source (a trained tinynet checkpoint)")
        from .model import load_checkpoint
        source = load_checkpoint(config.source_checkpoint)
        if not isinstance(source, TinyNet):
            raise ValueError("svd init source must be an unfactorized checkpoint")
        return svd_init(source, config.rank)
    return FactorizedTinyNet(config.rank)


@torch.no_grad()
def evaluate(model, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 1024) -> float:
    model.eval()
    x, y = _to_tensors(images, labels)
    hits = 0
    for i in range(0, len(x), batch_size):
        logits = model(x[i:i + batch_size])
        hits += int((logits.argmax(dim=1) == y[i:i + batch_size]).sum())
    return hits / len(x)


def train(config: TrainConfig, train_images, train_labels, test_images,
          test_labels, log=print):
    """Returns (model, test_accuracy)."""
    torch.manual_seed(config.seed)
    model = build_model(config)
    x, y = _to_tensors(train_images, train_labels)
    if config.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    generator = torch.Generator().manual_seed(config.seed)
    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(len(x), generator=generator)
        total_loss = 0.0
        for i in range(0, len(x), config.batch_size):
            batch = order[i:i + config.batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(model(x[batch]), y[batch])
            loss.backward()
            if not torch.isfinite(loss):
                raise RuntimeError(f"loss diverged at epoch {epoch}: {config}")
            torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
            opt.step()
            total_loss += float(loss.detach()) * len(batch)
        for group in opt.param_groups:
            group["lr"] *= config.lr_decay
        if log and (epoch % 10 == 9 or epoch == config.epochs - 1):
            acc = evaluate(model, test_images, test_labels)
            log(f"epoch {epoch + 1:3d}: loss {total_loss / len(x):.4f} "
                f"test accuracy {acc * 100:.2f}%")
    return model, evaluate(model, test_images, test_labels)
