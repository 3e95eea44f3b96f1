"""Balanced initialization, the unbalancedness measure and rebalancing."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_linear import WeightSetting, end_to_end
from .errors import ConvergenceWarning, DomainError, ShapeError


@dataclass(frozen=True)
class BalancedInitConfig:
    """Sampling recipe for the end-to-end matrix ``A`` of a balanced start.

    ``A`` gets Gaussian entries and is rescaled to Frobenius norm
    ``radius * U`` with ``U`` uniform on (0, 1], unless ``norm`` fixes it.
    """

    dims: tuple
    radius: float = 0.2
    seed: int = 0
    norm: float | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or min(dims) <= 0:
            raise ShapeError(f"invalid dims {self.dims}")
        if self.radius <= 0:
            raise DomainError("radius must be positive")
        if self.norm is not None and self.norm < 0:
            raise DomainError("norm must be nonnegative")
        object.__setattr__(self, "dims", dims)

    def sample_target(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        d0, dn = self.dims[0], self.dims[-1]
        rank = min(self.dims)
        a = rng.standard_normal((dn, rank)) @ rng.standard_normal((rank, d0))
        size = self.norm if self.norm is not None else self.radius * (1.0 - rng.random())
        return a * (size / np.linalg.norm(a))


def balanced_factorization(a: np.ndarray, dims: Sequence[int]) -> WeightSetting:
    """Balanced layers whose product is ``a`` (rank at most ``min(dims)``).

    With ``a = U S V^T``: the last layer is ``U S^{1/n}``, middle layers are
    ``S^{1/n}`` and the first is ``S^{1/n} V^T``, all zero-padded.
    """
    dims = tuple(int(d) for d in dims)
    n = len(dims) - 1
    a = np.array(a, dtype=float, ndmin=2)
    if a.shape != (dims[-1], dims[0]):
        raise ShapeError(f"target has shape {a.shape}, dims need {(dims[-1], dims[0])}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r = min(min(dims), s.size)
    if np.any(s[r:] > 1e-12 * max(1.0, s[0] if s.size else 0.0)):
        raise ShapeError("target rank exceeds the narrowest layer")
    root = s[:r] ** (1.0 / n)
    layers = []
    for j in range(1, n + 1):
        w = np.zeros((dims[j], dims[j - 1]))
        if n == 1:
            w = a.copy()
        elif j == 1:
            w[:r, :] = root[:, None] * vt[:r]
        elif j == n:
            w[:, :r] = u[:, :r] * root[None, :]
        else:
            w[np.arange(r), np.arange(r)] = root
        layers.append(w)
    return WeightSetting(layers)


def random_balanced_init(cfg: BalancedInitConfig) -> WeightSetting:
    return balanced_factorization(cfg.sample_target(), cfg.dims)


def balance_defects(theta: WeightSetting) -> list[np.ndarray]:
    """``W_{j+1}^T W_{j+1} - W_j W_j^T`` for each adjacent pair."""
    ls = theta.layers
    return [ls[j + 1].T @ ls[j + 1] - ls[j] @ ls[j].T for j in range(len(ls) - 1)]


def unbalancedness(theta: WeightSetting) -> float:
    """Largest nuclear norm of the adjacent balance defects (0 when n = 1)."""
    defects = balance_defects(theta)
    if not defects:
        return 0.0
    return max(float(np.linalg.norm(dm, "nuc")) for dm in defects)


def _rebalance_pair(lower: np.ndarray, upper: np.ndarray):
    """Split ``upper @ lower`` evenly between the two factors.

    The SVD split is unique only up to an orthogonal change of the shared
    hidden basis; that rotation is fixed by Procrustes alignment with the
    input pair so the result moves as little as possible.  Rotating the
    hidden basis leaves every adjacent defect norm and product unchanged.
    """
    u, s, vt = np.linalg.svd(upper @ lower, full_matrices=False)
    mid = lower.shape[0]
    r = min(mid, s.size)
    root = np.sqrt(s[:r])
    new_lower = np.zeros_like(lower)
    new_upper = np.zeros_like(upper)
    new_lower[:r] = root[:, None] * vt[:r]
    new_upper[:, :r] = u[:, :r] * root[None, :]
    a, _, bt = np.linalg.svd(new_lower @ lower.T + new_upper.T @ upper)
    q = bt.T @ a.T
    return q @ new_lower, new_upper @ q.T


def balance_nearest(
    theta: WeightSetting, sweeps: int = 50, tol: float = 1e-8, history: list | None = None
) -> WeightSetting:
    """Product-preserving rebalancing by sweeps of adjacent-pair SVD splits.

    Each pair update keeps ``W_{j+1} W_j`` fixed, so the end-to-end matrix
    never changes.  Stops once the unbalancedness is at most ``tol``; a
    ``ConvergenceWarning`` carries the residual if ``sweeps`` runs out.
    ``history`` (if given) receives the unbalancedness after every sweep.
    """
    if theta.depth < 2:
        return theta
    current = unbalancedness(theta)
    if history is not None:
        history.append(current)
    if current <= tol:
        return theta
    layers = [w.copy() for w in theta.layers]
    for _ in range(sweeps):
        for j in range(len(layers) - 1):
            layers[j], layers[j + 1] = _rebalance_pair(layers[j], layers[j + 1])
        for j in range(len(layers) - 2, -1, -1):
            layers[j], layers[j + 1] = _rebalance_pair(layers[j], layers[j + 1])
        current = unbalancedness(WeightSetting(layers))
        if history is not None:
            history.append(current)
        if current <= tol:
            return WeightSetting(layers)
    warnings.warn(
        f"rebalancing stopped after {sweeps} sweeps with residual {current:.3e}",
        ConvergenceWarning,
        stacklevel=2,
    )
    return WeightSetting(layers)


def lemma_distance_bound(theta: WeightSetting) -> float:
    """``n^{1.5} sqrt(eps_hat)`` with ``eps_hat`` the unbalancedness."""
    return theta.depth**1.5 * np.sqrt(unbalancedness(theta))


__all__ = [
    "BalancedInitConfig",
    "balance_defects",
    "balance_nearest",
    "balanced_factorization",
    "end_to_end",
    "lemma_distance_bound",
    "random_balanced_init",
    "unbalancedness",
]
