"""Gradient flow references, gradient descent, and their comparison.

Objectives are passed either as a callable returning the gradient of a flat
parameter vector, or as an object with ``grad(flat)`` and optionally
``value(flat)``.  ``LinearObjective`` routes through the compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .backend import kernels
from .core_linear import DataMoments, WeightSetting
from .errors import DivergenceError, DomainError, IntegrationError, ShapeError

DIVERGENCE_NORM = 1e12


class LinearObjective:
    """Deep-linear square loss on whitened data, in flat coordinates."""

    def __init__(self, dims, moments: DataMoments):
        self.dims = tuple(int(d) for d in dims)
        self.moments = moments
        self._dims_arr = np.asarray(self.dims, dtype=np.int64)
        self._lam = np.array(moments.lambda_yx, dtype=float, order="C", copy=True)
        if self._lam.shape != (self.dims[-1], self.dims[0]):
            raise ShapeError("lambda_yx does not match dims")

    def value_grad(self, flat):
        v, g = kernels.linear_loss_grad(
            np.ascontiguousarray(flat, dtype=float), self._dims_arr, self._lam
        )
        return v + self.moments.offset_c, g

    def value(self, flat):
        return self.value_grad(flat)[0]

    def grad(self, flat):
        return self.value_grad(flat)[1]

    __call__ = grad


class NetworkObjective:
    """Empirical loss of a homogeneous-activation network."""

    def __init__(self, dims, data, act, loss="square"):
        from . import homogeneous as hm

        self.dims = tuple(int(d) for d in dims)
        self.data, self.act, self.loss = data, act, loss
        self._hm = hm

    def value_grad(self, flat):
        v, g = self._hm.empirical_loss_grad(
            WeightSetting.from_flat(flat, self.dims), self.data, self.act, self.loss
        )
        return v, g.flat()

    def value(self, flat):
        return self.value_grad(flat)[0]

    def grad(self, flat):
        return self.value_grad(flat)[1]

    __call__ = grad


class FunctionObjective:
    """Wrap plain callables ``grad(x)`` and optional ``value(x)``."""

    def __init__(self, grad: Callable, value: Callable | None = None):
        self._grad, self._value = grad, value

    def grad(self, flat):
        return np.asarray(self._grad(flat), dtype=float)

    def value(self, flat):
        if self._value is None:
            raise AttributeError("objective has no value function")
        return float(self._value(flat))

    __call__ = grad


def as_objective(obj):
    if hasattr(obj, "grad"):
        return obj
    if callable(obj):
        return FunctionObjective(obj)
    raise TypeError("objective must be callable or expose grad()")


def _flat(theta):
    if isinstance(theta, WeightSetting):
        return theta.flat()
    return np.atleast_1d(np.asarray(theta, dtype=float)).copy()


@dataclass
class Trajectory:
    """Time-stamped states in flat coordinates.

    ``kind`` is ``"flow"`` or ``"gd"``.  Flow trajectories carry a dense
    interpolant; gd trajectories satisfy ``times[k] = k * step_size``.
    """

    times: np.ndarray
    states: np.ndarray
    kind: str
    step_size: float | None = None
    dims: tuple | None = None
    meta: dict = field(default_factory=dict)
    dense: Callable | None = None
    grad: Callable | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must increase strictly")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        """State(s) at time(s) ``t``; flow uses the dense interpolant."""
        if self.kind == "flow":
            t_arr = np.asarray(t, dtype=float)
            if np.any(t_arr < self.times[0] - 1e-12) or np.any(t_arr > self.horizon * (1 + 1e-12) + 1e-12):
                raise DomainError(f"time outside [0, {self.horizon}]")
            return self.dense(t)
        return euler_polygon_eval(self, t)

    def weights(self, i: int) -> WeightSetting:
        if self.dims is None:
            raise ShapeError("trajectory carries no layer dims")
        return WeightSetting.from_flat(self.states[i], self.dims)

    def weights_at(self, t: float) -> WeightSetting:
        return WeightSetting.from_flat(np.asarray(self(t)), self.dims)


def gd_run(theta0, eta: float, k: int, grad, record_every: int = 1) -> Trajectory:
    """Plain gradient descent ``theta <- theta - eta * grad(theta)`` for ``k`` steps.

    Only every ``record_every``-th iterate is stored (the last one always).
    Raises ``DivergenceError`` on a non-finite iterate or norm above 1e12.
    """
    if eta <= 0:
        raise DomainError("step size must be positive")
    if k < 0:
        raise DomainError("iteration count must be nonnegative")
    obj = as_objective(grad)
    dims = getattr(obj, "dims", None)
    if isinstance(theta0, WeightSetting):
        dims = theta0.dims
    th = _flat(theta0)
    stride = max(1, int(record_every))
    if isinstance(obj, LinearObjective):
        recs, final, bad = kernels.linear_gd(
            th, obj._dims_arr, obj._lam, float(eta), int(k), stride, DIVERGENCE_NORM
        )
        if bad >= 0:
            raise DivergenceError("gradient descent diverged", int(bad))
        idx = np.arange(recs.shape[0]) * stride
        if idx[-1] != k:
            recs = np.vstack([recs, final])
            idx = np.append(idx, k)
    else:
        recs, idx = [th.copy()], [0]
        for i in range(1, k + 1):
            th = th - eta * obj.grad(th)
            if not np.all(np.isfinite(th)) or np.linalg.norm(th) > DIVERGENCE_NORM:
                raise DivergenceError("gradient descent diverged", i)
            if i % stride == 0 or i == k:
                recs.append(th.copy())
                idx.append(i)
        recs, idx = np.array(recs), np.array(idx)
    return Trajectory(
        times=np.asarray(idx, dtype=float) * eta,
        states=recs,
        kind="gd",
        step_size=float(eta),
        dims=dims,
        meta={"iterations": int(k), "record_every": stride},
        grad=obj.grad,
    )


def euler_polygon_eval(traj: Trajectory, t):
    """Point on the Euler polygon at time ``t`` (scalar or array)."""
    if traj.kind != "gd":
        raise DomainError("polygon evaluation needs a gd trajectory")
    if traj.meta.get("record_every", 1) != 1:
        raise DomainError("polygon evaluation needs every iterate recorded")
    eta = traj.step_size
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    k_max = traj.states.shape[0] - 1
    if np.any(t_arr < 0) or np.any(t_arr > k_max * eta * (1 + 1e-12)):
        raise DomainError(f"time outside [0, {k_max * eta}]")
    k = np.minimum(np.floor(t_arr / eta + 1e-12).astype(int), k_max)
    out = traj.states[k].copy()
    inner = k < k_max
    for i in np.nonzero(inner)[0]:
        frac = t_arr[i] - k[i] * eta
        if frac > 0:
            out[i] -= frac * traj.grad(traj.states[k[i]])
    return out[0] if np.ndim(t) == 0 else out


class _Budget(Exception):
    pass


def gf_integrate(
    theta0,
    T: float,
    tol: float = 1e-10,
    grad=None,
    check_descent: bool = True,
    t_eval=None,
    max_evals: int = 200_000,
) -> Trajectory:
    """High-accuracy gradient flow with dense output (8th-order Dormand-Prince).

    ``tol`` bounds the local error per step (used as both relative and
    absolute tolerance).  The loss is checked to be non-increasing at the
    accepted steps when the objective exposes a value.

    Nonsmooth objectives (ReLU networks) can trap the step controller on a
    region boundary; after ``max_evals`` gradient evaluations the call raises
    ``IntegrationError`` carrying the last time reached.
    """
    if not 1e-13 <= tol <= 1e-3:
        raise DomainError("tol must lie in [1e-13, 1e-3]")
    if T <= 0:
        raise DomainError("horizon must be positive")
    obj = as_objective(grad)
    dims = getattr(obj, "dims", None)
    if isinstance(theta0, WeightSetting):
        dims = theta0.dims
    y0 = _flat(theta0)

    evals = [0, 0.0]

    def rhs(t, y):
        evals[0] += 1
        if evals[0] > max_evals:
            raise _Budget()
        evals[1] = max(evals[1], t)
        return -obj.grad(y)

    try:
        sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", rtol=tol, atol=tol, dense_output=True)
    except _Budget:
        raise IntegrationError(f"gave up after {max_evals} gradient evaluations", evals[1]) from None
    if sol.status != 0:
        raise IntegrationError(sol.message, float(sol.t[-1]))
    times, states = sol.t, sol.y.T
    meta = {"tol": tol, "nfev": int(sol.nfev), "accepted": int(times.size - 1), "method": "DOP853"}
    if check_descent and hasattr(obj, "value"):
        try:
            vals = np.array([obj.value(s) for s in states])
        except AttributeError:
            vals = None
        if vals is not None:
            rises = np.diff(vals) > 1e-12 * np.maximum(1.0, np.abs(vals[:-1])) + 10 * tol
            meta["descent_ok"] = bool(not np.any(rises))
    dense = sol.sol

    def evaluate(t):
        v = dense(t)
        return v.T if np.ndim(t) else v

    traj = Trajectory(times=times, states=states, kind="flow", dims=dims, meta=meta, dense=evaluate, grad=obj.grad)
    if t_eval is not None:
        traj.meta["samples"] = evaluate(np.asarray(t_eval))
    return traj


def sample_uniform(flow: Trajectory, h: float, T: float | None = None):
    """Flow states and velocities on the grid ``0, h, 2h, ...`` up to ``T``."""
    T = flow.horizon if T is None else T
    count = int(math.floor(T / h + 1e-9)) + 1
    grid = np.arange(count) * h
    if grid[-1] < T - 1e-12:
        grid = np.append(grid, grid[-1] + h)
    grid = np.minimum(grid, flow.horizon)
    states = np.asarray(flow.dense(grid)).reshape(grid.size, -1).copy()
    derivs = -np.array([flow.grad(s) for s in states])
    return grid, np.ascontiguousarray(states), np.ascontiguousarray(derivs)


def gd_flow_max_deviation(theta0, eta: float, steps: int, objective: LinearObjective, flow: Trajectory,
                          grid_h: float = 1e-3, block: int | None = None):
    """Largest ``||theta_k - theta(k eta)||`` over ``k <= steps`` in one pass.

    The flow is resampled on a uniform grid and interpolated by cubic Hermite
    splines using exact velocities, so the interpolation error is of order
    ``grid_h^4``.  Returns (max distance, argmax k, per-block maxima).
    """
    T = steps * eta
    if T > flow.horizon * (1 + 1e-12):
        raise DomainError("flow horizon does not cover the gd horizon")
    grid, states, derivs = sample_uniform(flow, grid_h, T)
    if grid.size < 2:
        grid, states, derivs = sample_uniform(flow, T / 2 if T > 0 else grid_h, max(T, grid_h))
    h = grid[1] - grid[0]
    block = block or max(1, steps // 1000)
    best, arg, blocks, _ = kernels.linear_gd_track(
        _flat(theta0), objective._dims_arr, objective._lam, float(eta), int(steps), float(h),
        states, derivs, int(block),
    )
    return float(best), int(arg), blocks


def trajectory_distance(gd: Trajectory, flow: Trajectory) -> np.ndarray:
    """Rows ``(t_k, ||theta_k - theta(t_k)||)`` for every recorded gd iterate."""
    if gd.kind != "gd" or flow.kind != "flow":
        raise DomainError("expects a gd trajectory and a flow trajectory")
    if gd.horizon > flow.horizon * (1 + 1e-12) + 1e-15:
        raise DomainError("flow horizon does not cover the gd horizon")
    ref = np.asarray(flow.dense(np.minimum(gd.times, flow.horizon))).reshape(gd.states.shape)
    return np.column_stack([gd.times, np.linalg.norm(gd.states - ref, axis=1)])


# ------------------------------------------------------------- end-to-end flow


def e2e_field_h(w, lam, n: int) -> np.ndarray:
    """Velocity field (negated) of the end-to-end matrix under balanced flow.

    ``h(w) = (|w|^{2-2/n} I + (n-1) |w|^{-2/n} w w^T)(w - lam)`` for a row
    vector ``w``; the second term vanishes at ``w = 0``.
    """
    if n < 1:
        raise DomainError("depth must be positive")
    w = np.asarray(w, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    g = w - lam
    r = float(np.linalg.norm(w))
    if r == 0.0:
        return np.zeros_like(w) if n > 1 else g
    return r ** (2 - 2.0 / n) * g + (n - 1) * r ** (-2.0 / n) * w * float(w @ g)


def e2e_integrate(w0, lam, n: int, T: float, tol: float = 1e-10) -> Trajectory:
    lam = np.asarray(lam, dtype=float).ravel()
    return gf_integrate(np.asarray(w0, dtype=float).ravel(), T, tol,
                        FunctionObjective(lambda w: e2e_field_h(w, lam, n)), check_descent=False)


@dataclass
class ReparamStates:
    """Samples of the time-changed end-to-end trajectory."""

    times: np.ndarray
    u: np.ndarray
    nu: np.ndarray
    xi: np.ndarray
    dense: Callable
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def __getitem__(self, i):
        return {"t": self.times[i], "u": self.u[i], "nu": self.nu[i], "xi": self.xi[i]}


def reparam_field(u, lam, n: int) -> np.ndarray:
    """``du/dt = -|u|(n u - lam) + (n-1) |u|^{-1} u (u . lam)``."""
    r = float(np.linalg.norm(u))
    return -r * (n * u - lam) + (n - 1) / r * u * float(u @ lam)


def reparam_integrate(u0, lam, n: int, T: float, tol: float = 1e-10, t_eval=None) -> ReparamStates:
    """Integrate the reparameterized trajectory along with its clock ``xi``.

    ``xi(t) = int_0^t |u|^{-(1-2/n)}`` maps reparameterized time back to
    the original flow time of the end-to-end matrix.
    """
    u0 = np.asarray(u0, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    if not np.any(u0):
        raise DomainError("u0 must be nonzero")
    if abs(np.linalg.norm(lam) - 1.0) > 1e-12:
        raise DomainError("lam must have unit norm")
    d = u0.size

    def rhs(_t, y):
        u = y[:d]
        r = float(np.linalg.norm(u))
        if r == 0.0:
            raise IntegrationError("trajectory collapsed to zero", _t)
        return np.append(reparam_field(u, lam, n), r ** (-(1.0 - 2.0 / n)))

    def collapse(_t, y):
        return np.linalg.norm(y[:d]) - 1e-300

    collapse.terminal = True
    sol = solve_ivp(rhs, (0.0, T), np.append(u0, 0.0), method="DOP853", rtol=tol, atol=tol * 1e-2,
                    dense_output=True, events=collapse, t_eval=t_eval)
    if sol.status == 1:
        raise IntegrationError("norm of u underflowed", float(sol.t[-1]))
    if sol.status != 0:
        raise IntegrationError(sol.message, float(sol.t[-1]))
    u = sol.y[:d].T
    norms = np.linalg.norm(u, axis=1)
    nu = (u @ lam) / norms
    return ReparamStates(sol.t, u, nu, sol.y[d], sol.sol, {"tol": tol, "nfev": int(sol.nfev)})


def nu_closed_form(t, nu0: float):
    """Alignment ``nu(t)`` solving ``dnu/dt = 1 - nu^2``."""
    if not -1.0 < nu0 <= 1.0:
        raise DomainError("nu0 must lie in (-1, 1]")
    r = (1.0 - nu0) / (1.0 + nu0)
    t = np.asarray(t, dtype=float)
    # 1 - 2r/(r + e^{2t}) written to avoid overflow for large t
    out = 1.0 - 2.0 * r * np.exp(-2.0 * t) / (r * np.exp(-2.0 * t) + 1.0)
    return float(out) if out.ndim == 0 else out


def norm_closed_form_aligned(t, u0_norm: float, n: int):
    """``|u(t)|`` when ``u0`` is aligned with ``lam`` (alignment stays 1)."""
    t = np.asarray(t, dtype=float)
    e = np.exp(n * t)
    return e / (e + 1.0 / u0_norm - 1.0)
