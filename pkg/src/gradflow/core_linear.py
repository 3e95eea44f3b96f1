"""Deep linear networks under square loss on whitened data.

The loss of a depth-``n`` linear network ``x -> W_n ... W_1 x`` on whitened
inputs reduces to ``0.5 * ||W_n...W_1 - Lambda||_F^2 + c`` where ``Lambda`` is
the label/input cross-covariance.  This module evaluates that loss, its
gradient, the exact Hessian quadratic form, a dense Hessian oracle and two
lower bounds on the smallest Hessian eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, PreconditionError, ShapeError, SizeError

DENSE_HESSIAN_CAP = 2000


class WeightSetting:
    """Ordered layer matrices ``W_1 ... W_n``; layer ``j`` is ``d_j x d_{j-1}``.

    Also used for perturbations, which share the same shape.
    """

    __slots__ = ("layers", "dims")

    def __init__(self, layers: Sequence[np.ndarray]):
        mats = tuple(np.array(w, dtype=float, ndmin=2) for w in layers)
        if not mats:
            raise ShapeError("a network needs at least one layer")
        dims = [mats[0].shape[1]]
        for j, w in enumerate(mats, start=1):
            if w.ndim != 2:
                raise ShapeError(f"layer {j} is not a matrix")
            if w.shape[1] != dims[-1]:
                raise ShapeError(
                    f"layer {j} has {w.shape[1]} columns, expected {dims[-1]}"
                )
            dims.append(w.shape[0])
        for w in mats:
            w.setflags(write=False)
        self.layers = mats
        self.dims = tuple(dims)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def size(self) -> int:
        return sum(w.size for w in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    @classmethod
    def from_flat(cls, vec: np.ndarray, dims: Sequence[int]) -> "WeightSetting":
        vec = np.asarray(vec, dtype=float)
        expected = param_count(dims)
        if vec.shape != (expected,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({expected},)")
        layers, pos = [], 0
        for j in range(1, len(dims)):
            rows, cols = dims[j], dims[j - 1]
            layers.append(vec[pos : pos + rows * cols].reshape(rows, cols))
            pos += rows * cols
        return cls(layers)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "WeightSetting":
        return cls([np.zeros((dims[j], dims[j - 1])) for j in range(1, len(dims))])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) for w in self.layers)))

    def scaled(self, factors: Sequence[float]) -> "WeightSetting":
        return WeightSetting([c * w for c, w in zip(factors, self.layers)])

    def __add__(self, other: "WeightSetting") -> "WeightSetting":
        _check_conform(self, other)
        return WeightSetting([a + b for a, b in zip(self.layers, other.layers)])

    def __sub__(self, other: "WeightSetting") -> "WeightSetting":
        _check_conform(self, other)
        return WeightSetting([a - b for a, b in zip(self.layers, other.layers)])

    def __mul__(self, c: float) -> "WeightSetting":
        return WeightSetting([c * w for w in self.layers])

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"WeightSetting(dims={self.dims})"


PerturbationSetting = WeightSetting


def param_count(dims: Sequence[int]) -> int:
    return sum(dims[j] * dims[j - 1] for j in range(1, len(dims)))


def _check_conform(a: WeightSetting, b: WeightSetting) -> None:
    if a.dims != b.dims:
        raise ShapeError(f"dims {a.dims} and {b.dims} do not conform")


@dataclass(frozen=True)
class DataMoments:
    """Whitened-data summary: cross-covariance ``lambda_yx`` and loss offset."""

    lambda_yx: np.ndarray
    offset_c: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        lam = np.array(self.lambda_yx, dtype=float, ndmin=2)
        lam.setflags(write=False)
        object.__setattr__(self, "lambda_yx", lam)
        if self.normalized and abs(np.linalg.norm(lam) - 1.0) > 1e-12:
            raise DomainError("normalized moments need ||lambda_yx||_F = 1")

    @classmethod
    def from_data(cls, inputs: np.ndarray, labels: np.ndarray) -> "DataMoments":
        """Build moments from whitened inputs (rows) and labels (rows)."""
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(labels, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.shape[0] != y.shape[0]:
            raise ShapeError("inputs and labels differ in sample count")
        s = x.shape[0]
        lam = y.T @ x / s
        c = -0.5 * float(np.sum(lam * lam)) + 0.5 * float(np.sum(y * y)) / s
        normalized = abs(np.linalg.norm(lam) - 1.0) <= 1e-12
        return cls(lam, c, normalized)


def _check_moments(theta: WeightSetting, m: DataMoments) -> None:
    if m.lambda_yx.shape != (theta.dims[-1], theta.dims[0]):
        raise ShapeError(
            f"lambda_yx has shape {m.lambda_yx.shape}, network maps "
            f"{theta.dims[0]} -> {theta.dims[-1]}"
        )


def prefix_products(theta: WeightSetting) -> list[np.ndarray]:
    """``out[k] = W_k ... W_1`` with ``out[0]`` the identity."""
    out = [np.eye(theta.dims[0])]
    for w in theta.layers:
        out.append(w @ out[-1])
    return out


def suffix_products(theta: WeightSetting) -> list[np.ndarray]:
    """``out[k] = W_n ... W_{k+1}`` with ``out[n]`` the identity."""
    n = theta.depth
    out = [None] * (n + 1)
    out[n] = np.eye(theta.dims[-1])
    for k in range(n - 1, -1, -1):
        out[k] = out[k + 1] @ theta.layers[k]
    return out


def end_to_end(theta: WeightSetting) -> np.ndarray:
    """Ordered product ``W_n ... W_1``."""
    prod = theta.layers[0]
    for w in theta.layers[1:]:
        prod = w @ prod
    return prod


def residual(theta: WeightSetting, m: DataMoments) -> np.ndarray:
    """Gradient of the end-to-end loss, ``W_{n:1} - Lambda``."""
    _check_moments(theta, m)
    return end_to_end(theta) - m.lambda_yx


def loss(theta: WeightSetting, m: DataMoments) -> float:
    r = residual(theta, m)
    return 0.5 * float(np.sum(r * r)) + m.offset_c


def gradient(theta: WeightSetting, m: DataMoments) -> WeightSetting:
    r = residual(theta, m)
    pre = prefix_products(theta)
    suf = suffix_products(theta)
    return WeightSetting(
        [suf[j + 1].T @ r @ pre[j].T for j in range(theta.depth)]
    )


def _qform_batch(layers, deltas, resid, phi_hessian=None):
    """Hessian quadratic form for a stack of perturbations.

    ``deltas[j]`` has shape ``(batch, d_j, d_{j-1})``.  Forward recursion on
    the first and second order parts of the perturbed product:
    ``B_k = W_k B_{k-1} + dW_k A_{k-1}`` and ``C_k = W_k C_{k-1} + dW_k B_{k-1}``.
    """
    batch = deltas[0].shape[0]
    d0 = layers[0].shape[1]
    a = np.eye(d0)
    b = np.zeros((batch, d0, d0))
    c = np.zeros((batch, d0, d0))
    for w, dw in zip(layers, deltas):
        c = w @ c + dw @ b
        b = w @ b + dw @ a
        a = w @ a
    if phi_hessian is None:
        first = np.einsum("bij,bij->b", b, b)
    else:
        first = np.array([phi_hessian(bk) for bk in b])
    second = 2.0 * np.einsum("ij,bij->b", resid, c)
    return first + second


def hessian_qform(
    theta: WeightSetting,
    delta: WeightSetting,
    m: DataMoments,
    phi_hessian: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Second directional derivative ``delta^T H(theta) delta``.

    ``phi_hessian`` maps an end-to-end perturbation ``E`` to the quadratic
    form of the end-to-end loss Hessian; the default ``||E||_F^2`` is the
    square loss.
    """
    _check_conform(theta, delta)
    r = residual(theta, m)
    deltas = [dw[None] for dw in delta.layers]
    return float(_qform_batch(theta.layers, deltas, r, phi_hessian)[0])


def polarized_dense(dims, qform_batch, cap: int = DENSE_HESSIAN_CAP, chunk=4096):
    """Assemble a symmetric matrix from a batched quadratic form by polarization.

    ``qform_batch`` takes an array of flat vectors ``(batch, d)``.
    """
    d = param_count(dims) if not isinstance(dims, int) else dims
    if d > cap:
        raise SizeError(f"dense Hessian of size {d} exceeds cap {cap}")
    iu, ju = np.triu_indices(d)
    h = np.zeros((d, d))
    for start in range(0, iu.size, chunk):
        ii, jj = iu[start : start + chunk], ju[start : start + chunk]
        k = ii.size
        plus = np.zeros((k, d))
        minus = np.zeros((k, d))
        rows = np.arange(k)
        plus[rows, ii] += 1.0
        plus[rows, jj] += 1.0
        minus[rows, ii] += 1.0
        minus[rows, jj] -= 1.0
        vals = 0.25 * (qform_batch(plus) - qform_batch(minus))
        h[ii, jj] = vals
        h[jj, ii] = vals
    return h


def split_flat_batch(vecs: np.ndarray, dims: Sequence[int]) -> list[np.ndarray]:
    out, pos = [], 0
    for j in range(1, len(dims)):
        rows, cols = dims[j], dims[j - 1]
        out.append(vecs[:, pos : pos + rows * cols].reshape(-1, rows, cols))
        pos += rows * cols
    return out


def hessian_dense(
    theta: WeightSetting,
    m: DataMoments,
    cap: int = DENSE_HESSIAN_CAP,
    phi_hessian: Callable[[np.ndarray], float] | None = None,
) -> np.ndarray:
    """Dense Hessian in flat coordinates, assembled from ``hessian_qform``."""
    r = residual(theta, m)

    def qb(vecs):
        return _qform_batch(theta.layers, split_flat_batch(vecs, theta.dims), r, phi_hessian)

    return polarized_dense(theta.dims, qb, cap)


def spectral_norm(w: np.ndarray) -> float:
    if w.size == 0:
        return 0.0
    return float(np.linalg.svd(w, compute_uv=False)[0])


def max_partial_product(norms: Sequence[float], keep: int) -> float:
    """Largest product of ``keep`` entries of a nonnegative list (1 if keep=0)."""
    if keep <= 0:
        return 1.0
    return float(np.prod(sorted(norms, reverse=True)[:keep]))


def min_eig_lower_bound(theta: WeightSetting, m: DataMoments) -> float:
    """Lower bound on the smallest Hessian eigenvalue valid at any point."""
    n = theta.depth
    if n == 1:
        return 0.0
    g = float(np.linalg.norm(residual(theta, m)))
    norms = [spectral_norm(w) for w in theta.layers]
    k = min(theta.dims[0], theta.dims[-1])
    return -(n - 1) * np.sqrt(k) * g * max_partial_product(norms, n - 2)


def gf_bound_constant(theta: WeightSetting, m: DataMoments) -> float:
    """Coefficient of the ``eps`` term in the trajectory eigenvalue bound."""
    n = theta.depth
    g = float(np.linalg.norm(residual(theta, m)))
    k = min(theta.dims[0], theta.dims[-1])
    top = max([1.0] + [spectral_norm(w) for w in theta.layers])
    return 4 * n * (n - 1) / (4 * n) ** (2.0 / n) * np.sqrt(k) * g * top ** (2 * (n - 2))


def gf_min_eig_lower_bound(theta: WeightSetting, m: DataMoments, eps: float) -> float:
    """Eigenvalue lower bound for points on a flow started within ``eps`` of 0.

    It also holds for every ``eps`` in range along flows from exactly balanced
    starts, since only the conserved balance defect enters its derivation.
    """
    n = theta.depth
    if not 0.0 < eps <= 1.0 / (2 * n):
        raise DomainError(f"eps={eps} outside (0, 1/(2n)] with n={n}")
    g = float(np.linalg.norm(residual(theta, m)))
    k = min(theta.dims[0], theta.dims[-1])
    e2e = spectral_norm(end_to_end(theta))
    p = 1.0 - 2.0 / n
    head = -(n - 1) * np.sqrt(k) * g * e2e**p if n > 1 else 0.0
    return head - gf_bound_constant(theta, m) * eps**p


def construct_negative_curvature(
    c: float, dims: Sequence[int], m: DataMoments
) -> tuple[WeightSetting, WeightSetting]:
    """Weights and a direction with ``qform = -c * ||direction||^2``.

    The first two layers are zero, so the end-to-end matrix vanishes and
    only the cross term through ``-Lambda`` survives.  Rank-one factors are
    chained along the top singular pair of ``Lambda``.
    """
    dims = tuple(int(d) for d in dims)
    n = len(dims) - 1
    if n < 3:
        raise PreconditionError("construction needs depth n >= 3")
    if c <= 0:
        raise DomainError("c must be positive")
    lam = m.lambda_yx
    if lam.shape != (dims[-1], dims[0]):
        raise ShapeError("lambda_yx does not match dims")
    if not np.any(lam):
        raise PreconditionError("zero map is a global minimizer (Lambda = 0)")
    u, s, vt = np.linalg.svd(lam)
    top_u, top_v = u[:, 0], vt[0]

    def e1(k):
        v = np.zeros(k)
        v[0] = 1.0
        return v

    # Chain: W'_n ... W'_3 dW2 dW1 = -u v^T, so <-Lambda, chain> = s_max > 0.
    dw1 = np.outer(e1(dims[1]), top_v)
    dw2 = np.outer(e1(dims[2]), e1(dims[1]))
    base = [np.outer(e1(dims[j]), e1(dims[j - 1])) for j in range(3, n + 1)]
    base[-1] = -np.outer(top_u, e1(dims[n - 1]))
    chain = dw2 @ dw1
    for w in base:
        chain = w @ chain
    inner = float(np.sum(-lam * chain))
    sq = float(np.sum(dw1 * dw1) + np.sum(dw2 * dw2))
    base[0] = base[0] * (-c * sq / (2.0 * inner))
    theta = WeightSetting([np.zeros((dims[1], dims[0])), np.zeros((dims[2], dims[1]))] + base)
    delta = WeightSetting(
        [dw1, dw2] + [np.zeros((dims[j], dims[j - 1])) for j in range(3, n + 1)]
    )
    return theta, delta
