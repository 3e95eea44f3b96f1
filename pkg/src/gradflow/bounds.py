"""Computable certificates relating gradient descent to gradient flow.

Curvature and discretization-defect profiles are piecewise constant, so the
error bound ``y' = m(t) y + delta(t)`` integrates exactly segment by segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core_linear import DataMoments, WeightSetting, end_to_end, gf_min_eig_lower_bound, residual
from .errors import DomainError


class PiecewiseConstant:
    """Function equal to ``values[i]`` on ``[breaks[i], breaks[i+1])``."""

    def __init__(self, breaks: Sequence[float], values: Sequence[float]):
        b = np.asarray(breaks, dtype=float)
        v = np.asarray(values, dtype=float)
        if b.ndim != 1 or b.size < 2 or v.shape != (b.size - 1,):
            raise DomainError("need len(values) == len(breaks) - 1 >= 1")
        if np.any(np.diff(b) <= 0):
            raise DomainError("breakpoints must increase strictly")
        if not np.all(np.isfinite(v)):
            raise DomainError("values must be finite")
        self.breaks, self.values = b, v

    @classmethod
    def constant(cls, value: float, t_end: float, t_start: float = 0.0):
        return cls([t_start, t_end], [value])

    @property
    def start(self) -> float:
        return float(self.breaks[0])

    @property
    def end(self) -> float:
        return float(self.breaks[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.start) or np.any(t > self.end):
            raise DomainError(f"time outside [{self.start}, {self.end}]")
        idx = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, self.values.size - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def integral(self, t):
        """``int_start^t`` of the function."""
        t = float(t)
        if not self.start <= t <= self.end * (1 + 1e-14):
            raise DomainError(f"time outside [{self.start}, {self.end}]")
        widths = np.clip(np.minimum(self.breaks[1:], t) - self.breaks[:-1], 0.0, None)
        return float(np.sum(widths * self.values))


class CurvatureProfile(PiecewiseConstant):
    """Upper envelope ``m(t)`` of minus the smallest Hessian eigenvalue."""

    @classmethod
    def from_samples(cls, times: Sequence[float], m_values: Sequence[float]):
        """Each gap between samples takes the larger of its two endpoint values."""
        t = np.asarray(times, dtype=float)
        m = np.asarray(m_values, dtype=float)
        if t.size < 2 or m.shape != t.shape:
            raise DomainError("need at least two samples with matching values")
        env = cls(t, np.maximum(m[:-1], m[1:]))
        env.samples = m
        return env

    def mu(self, t) -> float:
        return self.integral(t)


def _merged_segments(funcs, t_end):
    pts = {0.0, float(t_end)}
    for f in funcs:
        pts.update(float(b) for b in f.breaks if 0.0 <= b <= t_end)
    pts = np.array(sorted(pts))
    mids = 0.5 * (pts[:-1] + pts[1:])
    return pts, [np.asarray(f(mids), dtype=float).reshape(-1) for f in funcs]


def _propagate(m_vals, d_vals, widths, y0):
    """Solve ``y' = m y + d`` exactly over consecutive constant segments."""
    ys = [y0]
    y = y0
    for m, d, w in zip(m_vals, d_vals, widths):
        growth = math.exp(m * w)
        inc = w if m == 0.0 else math.expm1(m * w) / m
        y = growth * y + d * inc
        ys.append(y)
    return np.array(ys)


def fundamental_bound(profile: PiecewiseConstant, delta: PiecewiseConstant, init_gap: float, t) -> float | np.ndarray:
    """``e^{mu(t)} (gap + int_0^t e^{-mu} delta)`` for one time or an array of times."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    t_max = float(ts.max())
    for f in (profile, delta):
        if f.start > 0.0 or t_max > f.end * (1 + 1e-14):
            raise DomainError(f"time {t_max} outside the profile domain")
    if np.any(ts < 0):
        raise DomainError("negative time")
    if init_gap < 0:
        raise DomainError("initial gap must be nonnegative")
    if t_max == 0.0:
        out = np.full(ts.shape, float(init_gap))
        return float(out[0]) if np.ndim(t) == 0 else out
    knots = np.unique(np.concatenate([[0.0], ts]))
    probe = PiecewiseConstant(knots, np.zeros(knots.size - 1))
    pts, (mv, dv, _) = _merged_segments([profile, delta, probe], t_max)
    ys = _propagate(mv, dv, np.diff(pts), float(init_gap))
    out = np.interp(ts, pts, ys)  # exact at breakpoints; every query time is one
    return float(out[0]) if np.ndim(t) == 0 else out


def euler_defect_profile(times: Sequence[float], grad_norms: Sequence[float], eta: float, beta: float) -> PiecewiseConstant:
    """Bound on the polygon's velocity defect: ``beta * eta * |grad f(theta_k)|`` on step ``k``.

    Valid when ``beta`` bounds the Hessian norm along each Euler segment.
    """
    t = np.asarray(times, dtype=float)
    g = np.asarray(grad_norms, dtype=float)
    return PiecewiseConstant(np.append(t, t[-1] + eta), beta * eta * g)


@dataclass
class EtaBound:
    eta: float
    feasible: bool
    t_critical: float
    statement: str = "step size threshold for eps-tracking up to t_tilde"


def gf_gd_eta_bound(profile: CurvatureProfile, beta: float, gamma: float, init_gap: float,
                    eps: float, t_tilde: float, refine: int = 100) -> EtaBound:
    """Largest step size certified to keep gradient descent within ``eps`` of the flow.

    The infimum over ``t`` in ``(0, t_tilde]`` is taken on the profile
    breakpoints plus ``refine`` uniform points.  Between grid points the
    numerator is bounded by its worse endpoint and the denominator by its
    right endpoint (it is nondecreasing), so the result never exceeds the
    exact infimum.  Infeasible inputs return ``eta = 0``.
    """
    if beta <= 0 or gamma <= 0:
        raise DomainError("beta and gamma must be positive")
    if eps <= 0 or t_tilde <= 0:
        raise DomainError("eps and t_tilde must be positive")
    if profile.start > 0 or t_tilde > profile.end * (1 + 1e-14):
        raise DomainError("profile does not cover (0, t_tilde]")
    grid = PiecewiseConstant(np.linspace(0.0, t_tilde, refine + 1), np.zeros(refine))
    pts, (mv, _) = _merged_segments([profile, grid], t_tilde)
    widths = np.diff(pts)
    mu = np.concatenate([[0.0], np.cumsum(mv * widths)])
    y = _propagate(mv, np.ones_like(mv), widths, 0.0)
    worst_exp = np.exp(np.maximum(mu[:-1], mu[1:]))
    num = eps - init_gap * worst_exp
    ratio = num / (beta * gamma * y[1:])
    i = int(np.argmin(ratio))
    if np.any(num <= 0) or init_gap >= eps:
        bad = int(np.argmax(num <= 0)) if np.any(num <= 0) else 0
        return EtaBound(0.0, False, float(pts[bad + 1]))
    return EtaBound(float(ratio[i]), True, float(pts[i + 1]))


def coarse_eta_bound(m: float, beta: float, f0: float, eps: float, init_gap: float, t_tilde: float) -> EtaBound:
    """Three-regime threshold for a globally ``beta``-smooth nonnegative objective."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    if f0 < 0:
        raise DomainError("objective value must be nonnegative")
    c = 1.0 / (math.sqrt(2 * beta**3 * f0) + beta**2 * eps)
    if m < 0:
        eta = c * (eps - init_gap) * abs(m)
    elif m == 0:
        eta = c * (eps - init_gap) / t_tilde
    else:
        grow = math.exp(m * t_tilde)
        eta = c * (eps - init_gap * grow) * m / math.expm1(m * t_tilde)
    if eta <= 0:
        return EtaBound(0.0, False, t_tilde, "coarse three-regime threshold")
    return EtaBound(eta, True, t_tilde, "coarse three-regime threshold")


# ------------------------------------------------------- deep-linear certificates


@dataclass
class Certificate:
    statement: str
    inputs: dict
    outputs: dict
    hypotheses_checked: list = field(default_factory=list)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def _ratio(nu: float) -> float:
    if nu <= -1.0 or nu > 1.0:
        raise DomainError("hypothesis violated: nu must lie in (-1, 1]")
    return (1.0 - nu) / (1.0 + nu)


def _check_w(w_norm: float, upper: float) -> None:
    if not 0.0 < w_norm <= upper:
        raise DomainError(f"hypothesis violated: end-to-end norm must lie in (0, {upper}]")


def flow_time(w_norm: float, nu: float, n: int, eps_bar: float) -> float:
    """Time after which the flow's loss gap is at most ``eps_bar``."""
    _check_w(w_norm, 0.2)
    if eps_bar <= 0:
        raise DomainError("hypothesis violated: eps_bar must be positive")
    r = _ratio(nu)
    lead = 2 * n * max(1.0, 1.5 * r) ** n / w_norm
    return lead * math.log(15 * n * max(1.0, r) / (w_norm * min(1.0, 2 * eps_bar)))


def curvature_integral_bound(w_norm: float, nu: float, n: int, eps: float, t: float) -> float:
    r = _ratio(nu)
    lin = 15 * n**3 * max(1.0, 1.5 * r) ** n * t * eps / w_norm
    return lin + math.log(n**2 * (math.e**2 * max(1.0, r)) ** (5 * (n - 1) / 2) / w_norm**2)


def u_min_lower_bound(w_norm: float, nu: float, n: int) -> float:
    """Lower bound on the smallest norm of the reparameterized trajectory."""
    if nu == 1.0:
        return w_norm
    return w_norm * min(1.0, (2.0 / 3.0 * (1 + nu) / (1 - nu)) ** n)


def lnn_flow_certificate(w_norm: float, nu: float, n: int, eps_bar: float, eps: float, t: float) -> Certificate:
    _check_w(w_norm, 0.2)
    _ratio(nu)
    if not 0.0 < eps <= 1.0 / (2 * n):
        raise DomainError("hypothesis violated: eps must lie in (0, 1/(2n)]")
    if t < 0:
        raise DomainError("time must be nonnegative")
    outputs = {
        "t_bar": flow_time(w_norm, nu, n, eps_bar),
        "curvature_integral_bound": curvature_integral_bound(w_norm, nu, n, eps, t),
        "beta": 16.0 * n,
        "gamma": 6.0 * math.sqrt(n),
        "u_min_lower_bound": u_min_lower_bound(w_norm, nu, n),
    }
    return Certificate(
        statement="balanced deep linear flow: convergence time and tube constants",
        inputs={"w_norm": w_norm, "nu": nu, "n": n, "eps_bar": eps_bar, "eps": eps, "t": t},
        outputs=outputs,
        hypotheses_checked=["0 < w_norm <= 0.2", "nu != -1", "0 < eps <= 1/(2n)", "eps_bar > 0"],
    )


def _log_arg(w_norm, nu, n, eps_tilde, const, floor):
    r = _ratio(nu)
    if floor == 1.0:
        big = max(1.0, r)
    else:
        big = max(3.0, (3.0 - nu) / (1.0 + nu))
    return math.log(const * n * big / (w_norm * min(1.0, eps_tilde))), big


def gd_translation(w_norm: float, nu: float, n: int, eps_tilde: float, eta: float | None = None):
    """Step-size threshold and iterate count for balanced deep linear GD.

    Returns ``(eta_max, k)``; ``k`` uses ``eta`` when given, else ``eta_max``.
    """
    _check_w(w_norm, 0.2)
    if eps_tilde <= 0:
        raise DomainError("hypothesis violated: eps_tilde must be positive")
    log, big = _log_arg(w_norm, nu, n, eps_tilde, 15.0, 1.0)
    eta_max = (w_norm**5 * min(1.0, eps_tilde)
               / (n**8.5 * math.exp(7 * n + 6) * big ** ((11 * n - 5) / 2)) / log**2)
    step = eta_max if eta is None else eta
    if step <= 0:
        raise DomainError("step size must be positive")
    # same expression as the flow time at eps_bar = eps_tilde / 2, divided by the step
    k = math.floor(flow_time(w_norm, nu, n, eps_tilde / 2) / step + 1)
    return eta_max, k


def unbalanced_translation(w_norm: float, nu: float, n: int, eps_tilde: float, eta: float | None = None):
    """``(eps_hat_max, eta_max, k_bound)`` for nearly balanced starts."""
    _check_w(w_norm, 0.1)
    _ratio(nu)
    if eps_tilde <= 0:
        raise DomainError("hypothesis violated: eps_tilde must be positive")
    log, big = _log_arg(w_norm, nu, n, eps_tilde, 23.0, 3.0)
    eps_hat = (w_norm**8 * min(1.0, eps_tilde**2)
               / (n**15 * math.exp(12 * n + 6) * big ** (9 * n - 5)) / log**2)
    eta_max = (w_norm**5 * min(1.0, eps_tilde)
               / (n**8.5 * math.exp(7 * n + 10) * big ** ((11 * n - 5) / 2)) / log**2)
    step = eta_max if eta is None else eta
    k_bound = 3 * n * (1.5 * big) ** n / (w_norm * step) * log + 1
    return eps_hat, eta_max, k_bound


def infinite_time_norm_bound(grad_at_zero_norm: float, beta: float, start_norm: float, t: float, t0: float = 0.0) -> float:
    """Norm bound for a flow on a ``beta``-smooth objective at time ``t >= t0``."""
    g = grad_at_zero_norm
    return ((g + beta * start_norm) * math.exp(beta * (t - t0)) - g) / beta


# ------------------------------------------------------------ curvature profiles


def ball_curvature_envelope(theta: WeightSetting, m: DataMoments, eps: float) -> float:
    """Upper bound on minus the smallest Hessian eigenvalue over an ``eps``-ball.

    Holds for balanced single-output networks with unit-norm targets, using
    the end-to-end vector and its gradient at the ball centre.
    """
    n = theta.depth
    w = float(np.linalg.norm(end_to_end(theta)))
    g = float(np.linalg.norm(residual(theta, m)))
    return (n - 1) * (g + 2 * n * eps) * (w + 2 * n * eps) ** (1 - 2.0 / n)


def curvature_profile_from_flow(flow, m: DataMoments, eps: float, times=None, envelope: str = "trajectory") -> CurvatureProfile:
    """Sampled envelope ``m(t)`` along a deep-linear flow.

    ``envelope`` chooses the per-sample value: ``"trajectory"`` uses minus the
    trajectory eigenvalue bound, ``"ball"`` the ball envelope, ``"max"`` the
    larger of the two.  ``times`` defaults to the accepted integrator steps.
    """
    ts = np.asarray(flow.times if times is None else times, dtype=float)
    vals = []
    for t in ts:
        theta = flow.weights_at(t)
        traj = -gf_min_eig_lower_bound(theta, m, eps)
        if envelope == "trajectory":
            vals.append(traj)
        elif envelope == "ball":
            vals.append(ball_curvature_envelope(theta, m, eps))
        elif envelope == "max":
            vals.append(max(traj, ball_curvature_envelope(theta, m, eps)))
        else:
            raise ValueError(f"unknown envelope {envelope!r}")
    return CurvatureProfile.from_samples(ts, vals)
