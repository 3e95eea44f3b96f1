"""Data ingestion: whitening, label normalization, synthetic sets, IDX files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_linear import WeightSetting
from .errors import DegenerateDataError, ParseError, RankError, ShapeError
from .homogeneous import LabeledSet

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class WhiteningTransform:
    """``x -> matrix @ x``; ``matrix`` is the inverse square root of the input covariance."""

    matrix: np.ndarray

    def apply(self, inputs) -> np.ndarray:
        return np.atleast_2d(np.asarray(inputs, dtype=float)) @ self.matrix.T


def whiten(inputs, rtol: float = 1e-12):
    """Map rows so their uncentered empirical covariance is the identity.

    Raises ``RankError`` listing the null directions when the covariance
    is singular (relative eigenvalue below ``rtol``).
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError("inputs must be a nonempty (samples, features) array")
    cov = x.T @ x / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    top = max(float(vals[-1]), 0.0)
    null = vals <= rtol * top if top > 0 else np.ones_like(vals, dtype=bool)
    if np.any(null):
        raise RankError(f"input covariance is singular; null directions (columns): {vecs[:, null].T.tolist()}")
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    t = WhiteningTransform(inv_root)
    return t.apply(x), t


def normalize_labels(labels, whitened_inputs):
    """Scale labels jointly so the input-label cross-covariance has unit norm.

    Returns ``(scaled_labels, scale)``.
    """
    y = np.asarray(labels, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    x = np.atleast_2d(np.asarray(whitened_inputs, dtype=float))
    if x.shape[0] != y.shape[0]:
        raise ShapeError("inputs and labels differ in sample count")
    size = float(np.linalg.norm(y.T @ x / x.shape[0]))
    if size == 0.0:
        raise DegenerateDataError("input-label cross-covariance is zero")
    scale = 1.0 / size
    return y * scale, scale


def synthetic_dataset(n_samples: int, d0: int, dn: int = 1, seed: int = 0, whiten_inputs: bool = True,
                      noise: float = 0.0, classes: int | None = None) -> LabeledSet:
    """Gaussian inputs with labels from a random linear teacher.

    With ``classes`` set, labels are argmax class indices of the teacher
    output (for cross-entropy); otherwise real-valued, normalized to a unit
    cross-covariance when ``whiten_inputs`` holds.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, d0))
    if whiten_inputs:
        x, _ = whiten(x)
    width = classes if classes is not None else dn
    teacher = rng.standard_normal((width, d0))
    y = x @ teacher.T + noise * rng.standard_normal((n_samples, width))
    if classes is not None:
        return LabeledSet(x, np.argmax(y, axis=1).astype(np.int64))
    if whiten_inputs:
        y, _ = normalize_labels(y, x)
    return LabeledSet(x, y)


def xavier_uniform_init(dims, seed: int = 0) -> WeightSetting:
    """Layers drawn from ``U(-l, l)`` with ``l = sqrt(6 / (fan_in + fan_out))``."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    layers = []
    for j in range(1, len(dims)):
        lim = np.sqrt(6.0 / (dims[j] + dims[j - 1]))
        layers.append(rng.uniform(-lim, lim, size=(dims[j], dims[j - 1])))
    return WeightSetting(layers)


# ---------------------------------------------------------------- IDX files


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParseError(f"{path}: file shorter than the magic number", 0)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise ParseError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ParseError(f"{path}: truncated header", len(raw))
    shape = struct.unpack(">" + "I" * ndim, raw[4:header_end])
    need = int(np.prod(shape, dtype=np.int64))
    have = len(raw) - header_end
    if have < need:
        raise ParseError(f"{path}: truncated payload, {need} bytes declared, {have} present",
                         header_end + have)
    if have > need:
        raise ParseError(f"{path}: {have - need} trailing bytes after payload", header_end + need)
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header_end).reshape(shape)


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (images if 3-D, labels if 1-D)."""
    arr = np.asarray(array, dtype=np.uint8)
    magic = {3: IMAGE_MAGIC, 1: LABEL_MAGIC}.get(arr.ndim)
    if magic is None:
        raise ShapeError("IDX writer supports 1-D labels or 3-D images")
    header = struct.pack(">I" + "I" * arr.ndim, magic, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_idx(images_path, labels_path, subset: int | None = 1000, seed: int = 0) -> LabeledSet:
    """Images and class labels from an IDX pair.

    Pixels are flattened and shifted/scaled to zero mean and unit standard
    deviation over the whole file; then ``subset`` items are drawn without
    replacement (kept in file order).  ``subset=None`` keeps everything.
    """
    imgs = _read_idx(images_path, IMAGE_MAGIC, 3)
    labs = _read_idx(labels_path, LABEL_MAGIC, 1)
    if imgs.shape[0] != labs.shape[0]:
        raise ParseError(f"count mismatch: {imgs.shape[0]} images vs {labs.shape[0]} labels", 4)
    x = imgs.reshape(imgs.shape[0], -1).astype(float)
    std = x.std()
    x = (x - x.mean()) / (std if std > 0 else 1.0)
    count = x.shape[0]
    if subset is None or subset >= count:
        idx = np.arange(count)
    else:
        if subset <= 0:
            raise ShapeError("subset size must be positive")
        idx = np.sort(np.random.default_rng(seed).choice(count, size=subset, replace=False))
    return LabeledSet(x[idx], labs[idx].astype(np.int64))
