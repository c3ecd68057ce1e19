"""Training and export side for the packed-ciphertext inference engine."""

from .data import fetch_mnist, load_mnist, mnist_available, upscaled_digits
from .export import export, quantize
from .model import (
    FactorizedTinyNet,
    TinyNet,
    load_checkpoint,
    save_checkpoint,
    svd_init,
)
from .train import TrainConfig, evaluate, train
