"""Fully connected networks with positively homogeneous activations.

The activation is ``sigma(z) = alpha * max(z, 0) - alpha_bar * max(-z, 0)``,
so ``alpha_bar`` is the slope on the negative side: linear nets have
``alpha == alpha_bar``, ReLU has ``alpha_bar == 0``.

Away from zero pre-activations the loss coincides with a multilinear
function fixed by the sign pattern of every hidden unit.  Hessian forms and
bounds here are taken with respect to that local formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_linear import (
    WeightSetting,
    max_partial_product,
    polarized_dense,
    split_flat_batch,
)
from .errors import BoundaryError, ConstructionError, PreconditionError, ShapeError


@dataclass(frozen=True)
class ActivationSpec:
    alpha: float = 1.0
    alpha_bar: float = 0.0

    @classmethod
    def linear(cls) -> "ActivationSpec":
        return cls(1.0, 1.0)

    @classmethod
    def relu(cls) -> "ActivationSpec":
        return cls(1.0, 0.0)

    @classmethod
    def leaky(cls, slope: float) -> "ActivationSpec":
        # sigma(z) = z for z > 0 and slope * z for z < 0.
        return cls(1.0, slope)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.alpha * np.maximum(z, 0.0) - self.alpha_bar * np.maximum(-z, 0.0)

    def slopes(self, positive: np.ndarray) -> np.ndarray:
        return np.where(positive, self.alpha, self.alpha_bar)

    @property
    def max_abs_slope(self) -> float:
        return max(abs(self.alpha), abs(self.alpha_bar))


class LabeledSet:
    """Immutable training set: ``inputs`` is ``(S, d0)``.

    ``labels`` is ``(S, dn)`` for square loss or an integer vector of class
    indices for cross-entropy.
    """

    def __init__(self, inputs, labels):
        x = np.atleast_2d(np.array(inputs, dtype=float))
        y = np.array(labels)
        if y.dtype.kind in "fc" or y.ndim > 1:
            y = np.array(y, dtype=float)
            if y.ndim == 1:
                y = y[:, None]
        if y.shape[0] != x.shape[0]:
            raise ShapeError("inputs and labels differ in sample count")
        x.setflags(write=False)
        y.setflags(write=False)
        self.inputs = x
        self.labels = y

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


class SquareLoss:
    """``0.5 * ||pred - y||^2`` per sample."""

    name = "square"

    def value(self, pred, y):
        return 0.5 * np.sum((pred - y) ** 2, axis=-1)

    def grad(self, pred, y):
        return pred - y

    def hess_form(self, pred, y, v):
        """Per-sample ``v^T H v``; ``v`` may carry a leading batch axis."""
        return np.sum(v * v, axis=-1)


class CrossEntropyLoss:
    """Softmax cross-entropy with integer class labels."""

    name = "cross_entropy"

    @staticmethod
    def _probs(pred):
        z = pred - pred.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def value(self, pred, y):
        z = pred - pred.max(axis=-1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=-1))
        return logsum - np.take_along_axis(z, y.astype(int)[:, None], axis=-1)[:, 0]

    def grad(self, pred, y):
        p = self._probs(pred)
        p[np.arange(p.shape[0]), y.astype(int)] -= 1.0
        return p

    def hess_form(self, pred, y, v):
        # v^T (diag(p) - p p^T) v
        p = self._probs(pred)
        return np.sum(p * v * v, axis=-1) - np.sum(p * v, axis=-1) ** 2


LOSSES = {"square": SquareLoss, "cross_entropy": CrossEntropyLoss}


def get_loss(loss) -> SquareLoss | CrossEntropyLoss:
    if isinstance(loss, str):
        return LOSSES[loss]()
    return loss


@dataclass(frozen=True)
class ActivationPattern:
    """Sign masks of hidden pre-activations; ``masks[j-1]`` is ``(S, d_j)``."""

    masks: tuple
    act: ActivationSpec = field(default_factory=ActivationSpec)

    def slopes(self, j: int) -> np.ndarray:
        """Diagonal slopes of hidden layer ``j`` (1-based) for every sample."""
        return self.act.slopes(self.masks[j - 1])

    def same_region(self, other: "ActivationPattern") -> bool:
        return len(self.masks) == len(other.masks) and all(
            np.array_equal(a, b) for a, b in zip(self.masks, other.masks)
        )


def _hidden_preactivations(theta: WeightSetting, x: np.ndarray, act: ActivationSpec):
    pre, a = [], x
    for w in theta.layers[:-1]:
        z = a @ w.T
        pre.append(z)
        a = act(z)
    return pre, a


def forward(theta: WeightSetting, x, act: ActivationSpec) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != theta.dims[0]:
        raise ShapeError(f"input has dimension {x.shape[-1]}, expected {theta.dims[0]}")
    _, a = _hidden_preactivations(theta, x, act)
    return a @ theta.layers[-1].T


def empirical_loss(theta: WeightSetting, data: LabeledSet, act: ActivationSpec, loss="square") -> float:
    lf = get_loss(loss)
    return float(np.mean(lf.value(forward(theta, data.inputs, act), data.labels)))


def empirical_loss_grad(theta: WeightSetting, data: LabeledSet, act: ActivationSpec, loss="square"):
    """Loss value and gradient by backpropagation (slope ``alpha_bar`` on ties)."""
    lf = get_loss(loss)
    x = data.inputs
    s = x.shape[0]
    acts, pres = [x], []
    for w in theta.layers[:-1]:
        z = acts[-1] @ w.T
        pres.append(z)
        acts.append(act(z))
    pred = acts[-1] @ theta.layers[-1].T
    value = float(np.mean(lf.value(pred, data.labels)))
    delta = lf.grad(pred, data.labels) / s
    grads = [None] * theta.depth
    for j in range(theta.depth - 1, -1, -1):
        grads[j] = delta.T @ acts[j]
        if j > 0:
            delta = (delta @ theta.layers[j]) * act.slopes(pres[j - 1] > 0)
    return value, WeightSetting(grads)


def activation_pattern(
    theta: WeightSetting, data: LabeledSet, act: ActivationSpec, loss="square", check=True
) -> ActivationPattern:
    """Read off the region containing ``theta``.

    Raises ``BoundaryError`` when some hidden pre-activation is exactly zero.
    With ``check`` set, confirms the region formula reproduces the loss.
    """
    pre, _ = _hidden_preactivations(theta, data.inputs, act)
    masks = []
    for j, z in enumerate(pre, start=1):
        zero = np.argwhere(z == 0.0)
        if zero.size:
            i, unit = zero[0]
            raise BoundaryError(int(i), j, int(unit))
        m = z > 0
        m.setflags(write=False)
        masks.append(m)
    pattern = ActivationPattern(tuple(masks), act)
    if check:
        lf = get_loss(loss)
        direct = float(np.mean(lf.value(forward(theta, data.inputs, act), data.labels)))
        lin = float(np.mean(lf.value(region_forward(theta, data, pattern), data.labels)))
        if abs(direct - lin) > 1e-10 * max(1.0, abs(direct)):
            raise PreconditionError(
                f"region formula gives {lin}, forward pass gives {direct}"
            )
    return pattern


def region_forward(theta: WeightSetting, data: LabeledSet, pattern: ActivationPattern) -> np.ndarray:
    """Outputs of the multilinear map fixed by ``pattern`` (one row per sample)."""
    a = data.inputs
    for j, w in enumerate(theta.layers[:-1], start=1):
        a = (a @ w.T) * pattern.slopes(j)
    return a @ theta.layers[-1].T


def _region_qform_batch(theta, deltas, data, pattern, lf):
    """Region Hessian form for ``deltas[j]`` of shape ``(B, d_j, d_{j-1})``."""
    x = data.inputs
    s = x.shape[0]
    batch = deltas[0].shape[0]
    a = x  # (S, d)
    b = np.zeros((batch, s, x.shape[1]))
    c = np.zeros_like(b)
    n = theta.depth
    for j, (w, dw) in enumerate(zip(theta.layers, deltas), start=1):
        dwt = np.swapaxes(dw, 1, 2)
        c = c @ w.T + b @ dwt
        b = b @ w.T + a[None] @ dwt
        a = a @ w.T
        if j < n:
            d = pattern.slopes(j)
            a, b, c = a * d, b * d, c * d
    pred = a
    g = lf.grad(pred, data.labels)
    first = lf.hess_form(pred, data.labels, b).sum(axis=1)
    second = 2.0 * np.einsum("sk,bsk->b", g, c)
    return (first + second) / s


def region_hessian_qform(
    theta: WeightSetting,
    delta: WeightSetting,
    data: LabeledSet,
    pattern: ActivationPattern,
    loss="square",
) -> float:
    """Second directional derivative of the region formula at ``theta``.

    ``pattern`` must describe the region of ``theta``; this is not checked.
    """
    if delta.dims != theta.dims:
        raise ShapeError("perturbation does not conform to weights")
    lf = get_loss(loss)
    return float(
        _region_qform_batch(theta, [d[None] for d in delta.layers], data, pattern, lf)[0]
    )


def region_hessian_dense(theta, data, pattern, loss="square", cap=2000) -> np.ndarray:
    lf = get_loss(loss)

    def qb(vecs):
        return _region_qform_batch(theta, split_flat_batch(vecs, theta.dims), data, pattern, lf)

    return polarized_dense(theta.dims, qb, cap)


def _loss_grad_data_term(theta, data, pattern, loss):
    lf = get_loss(loss)
    g = lf.grad(region_forward(theta, data, pattern), data.labels)
    return float(np.mean(np.linalg.norm(g, axis=1) * np.linalg.norm(data.inputs, axis=1)))


def region_min_eig_lower_bound(theta, data, pattern, loss="square") -> float:
    n = theta.depth
    if n == 1:
        return 0.0
    term = _loss_grad_data_term(theta, data, pattern, loss)
    norms = [float(np.linalg.norm(w)) for w in theta.layers]
    scale = pattern.act.max_abs_slope ** (n - 1)
    return -scale * (n - 1) * term * max_partial_product(norms, n - 2)


def gf_region_min_eig_lower_bound(theta, data, pattern, eps: float, loss="square") -> float:
    """Bound for points on a flow started within ``eps`` of the origin."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    n = theta.depth
    if n == 1:
        return 0.0
    term = _loss_grad_data_term(theta, data, pattern, loss)
    smallest = min(float(np.linalg.norm(w)) for w in theta.layers)
    scale = pattern.act.max_abs_slope ** (n - 1)
    return -scale * (n - 1) * term * (smallest + eps) ** (n - 2)


def layer_norm_gaps(theta: WeightSetting) -> np.ndarray:
    sq = np.array([np.sum(w * w) for w in theta.layers])
    return np.abs(np.diff(sq))


def layer_norm_differences(theta: WeightSetting) -> np.ndarray:
    """Signed ``||W_{j+1}||_F^2 - ||W_j||_F^2`` (conserved along the flow)."""
    sq = np.array([np.sum(w * w) for w in theta.layers])
    return np.diff(sq)


class RescalingFamily:
    """Weights ``theta(a)`` with layers 1, 2 scaled by ``a^-2`` and layer 3 by ``a``.

    The direction ``(W_1, W_2, 0, ...)`` is fixed, and the Hessian form along
    it diverges to minus infinity as ``a`` grows.
    """

    def __init__(self, base: WeightSetting, data: LabeledSet, act: ActivationSpec, loss):
        self.base = base
        self.data = data
        self.act = act
        self.loss = loss
        self.pattern = activation_pattern(base, data, act, loss)
        self.delta = WeightSetting(
            [base.layers[0], base.layers[1]] + [np.zeros_like(w) for w in base.layers[2:]]
        )

    def theta(self, a: float) -> WeightSetting:
        n = self.base.depth
        return self.base.scaled([a**-2, a**-2, a] + [1.0] * (n - 3))

    def qform(self, a: float) -> float:
        return region_hessian_qform(self.theta(a), self.delta, self.data, self.pattern, self.loss)


def construct_negative_curvature_nonlinear(
    dims: Sequence[int],
    data: LabeledSet,
    act: ActivationSpec,
    loss="square",
    seed: int = 0,
    attempts: int = 50,
    max_halvings: int = 200,
) -> RescalingFamily:
    """Rescaling family along which the region Hessian form is unbounded below.

    A random base point is drawn; the last layer is negated if needed so the
    output correlates negatively with the loss gradient at zero.  The last
    layer is then halved until the form is already negative at ``a = 1``.
    """
    dims = tuple(int(d) for d in dims)
    n = len(dims) - 1
    if n < 3:
        raise PreconditionError("construction needs depth n >= 3")
    if data.input_dim != dims[0]:
        raise ShapeError("data dimension does not match dims")
    lf = get_loss(loss)
    rng = np.random.default_rng(seed)
    s = data.size
    zero_pred = np.zeros((s, dims[-1]))
    g0 = lf.grad(zero_pred, data.labels)
    for _ in range(attempts):
        layers = [rng.standard_normal((dims[j], dims[j - 1])) for j in range(1, n + 1)]
        base = WeightSetting(layers)
        h = forward(base, data.inputs, act)
        corr = float(np.sum(g0 * h))
        if corr == 0.0:
            continue
        if corr > 0:
            layers[-1] = -layers[-1]
            base = WeightSetting(layers)
        try:
            fam = RescalingFamily(base, data, act, loss)
        except (BoundaryError, PreconditionError):
            continue
        for _ in range(max_halvings):
            if fam.qform(1.0) < 0:
                return fam
            layers[-1] = 0.5 * layers[-1]
            fam = RescalingFamily(WeightSetting(layers), data, act, loss)
    raise ConstructionError("no base point with a correlated nonzero output was found")
