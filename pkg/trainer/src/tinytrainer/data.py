"""MNIST fetching and loading (IDX format), plus a bundled fallback set.

fetch_mnist downloads the four IDX archives from the usual mirrors; in
offline environments it fails cleanly and the caller can point --data-dir
at an existing copy.  upscaled_digits turns scikit-learn's bundled 8x8
digits into 28x28 uint8 images so the full training/export pipeline can
be exercised without network access (it is a stand-in corpus, not MNIST).
"""

from __future__ import annotations

import gzip
import os
import struct
import urllib.error
import urllib.request

import numpy as np

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
)
FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def fetch_mnist(data_dir: str) -> None:
    os.makedirs(data_dir, exist_ok=True)
    for fname in FILES.values():
        dest = os.path.join(data_dir, fname)
        if os.path.exists(dest):
            continue
        last_error = None
        for mirror in MIRRORS:
            try:
                urllib.request.urlretrieve(mirror + fname, dest)
                break
            except (urllib.error.URLError, OSError) as exc:
                last_error = exc
        else:
            raise RuntimeError(
                f"could not download {fname} from any mirror "
                f"(last error: {last_error}); place the IDX archives in "
                f"{data_dir} manually")


def _read_idx(path: str) -> np.ndarray:
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        magic = struct.unpack(">I", fh.read(4))[0]
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(dims)


def mnist_available(data_dir: str) -> bool:
    return all(os.path.exists(os.path.join(data_dir, f)) for f in FILES.values())


def load_mnist(data_dir: str):
    """(train_images, train_labels, test_images, test_labels), uint8."""
    if not mnist_available(data_dir):
        raise FileNotFoundError(
            f"MNIST archives not found in {data_dir}; run the fetch step first")
    xs = _read_idx(os.path.join(data_dir, FILES["train_images"]))
    ys = _read_idx(os.path.join(data_dir, FILES["train_labels"]))
    xt = _read_idx(os.path.join(data_dir, FILES["test_images"]))
    yt = _read_idx(os.path.join(data_dir, FILES["test_labels"]))
    return xs, ys, xt, yt


def upscaled_digits(seed: int = 0):
    """8x8 bundled digits upscaled to 28x28 uint8, split 80/20."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images          # (n, 8, 8), values 0..16
    labels = digits.target.astype(np.int64)
    big = np.repeat(np.repeat(images, 4, axis=1), 4, axis=2)   # 32x32
    big = big[:, 2:30, 2:30]                                   # center 28x28
    big = np.clip(big * 15.9375, 0, 255).astype(np.uint8)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(big))
    big, labels = big[order], labels[order]
    cut = int(0.8 * len(big))
    return big[:cut], labels[:cut], big[cut:], labels[cut:]
