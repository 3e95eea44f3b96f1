"""A separable landscape on which gradient descent needs an exponentially small
step size to track gradient flow, with closed-form flow coordinates and a
divergence experiment.

The per-axis pieces are written with plain arithmetic so they evaluate under
``float`` or ``mpmath.mpf`` alike; the latter is needed to inspect junctions
near the far cut point, which sits around ``3e13``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import DomainError, PreconditionError

E12 = math.exp(-12.0)


@dataclass(frozen=True)
class WorstParams:
    """Landscape parameters; cut points and transition width are derived."""

    a: float = 1.0
    b: float = 3.0
    eps: float = 1e-6
    d: int = 3

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("a must be positive")
        if not self.b >= 3:
            raise DomainError("b must be at least 3")
        if not 0 < self.eps < 1:
            raise DomainError("eps must lie in (0, 1)")
        if int(self.d) < 3:
            raise DomainError("dimension must be at least 3")

    @property
    def zc(self) -> float:
        return self.b * math.exp(30.0) + 1.0

    @property
    def zbc(self) -> float:
        return self.b + 1.0

    @property
    def rho(self) -> float:
        return min(E12 / 2.0, self.eps / (2.0 * self.b))

    @property
    def z0(self) -> float:
        return 0.5 * self.rho - 1.0

    def exact(self, dps: int = 60) -> "_MpParams":
        """The same parameters as ``mpmath`` numbers at ``dps`` digits."""
        import mpmath

        mpmath.mp.dps = dps
        a, b, eps = mpmath.mpf(self.a), mpmath.mpf(self.b), mpmath.mpf(self.eps)
        rho = min(mpmath.exp(-12) / 2, eps / (2 * b))
        return _MpParams(a=a, zc=b * mpmath.exp(30) + 1, zbc=b + 1, rho=rho)


@dataclass(frozen=True)
class _MpParams:
    a: object
    zc: object
    zbc: object
    rho: object

    @property
    def z0(self):
        return self.rho / 2 - 1


def _plateau_cubic_quartic(z, a, cut, base):
    """Value, slope and curvature of the quadratic-to-plateau piece past ``cut``."""
    s = z - cut
    c3 = a * (2 * cut + 2) / 2 - a / 3  # a(2/3 + cut)
    c4 = a * (cut + 0.5) / 2  # a(1/4 + cut/2)
    val = base - a * z * z / 2 + c3 * s**3 - c4 * s**4
    d1 = -a * z + 3 * c3 * s * s - 4 * c4 * s**3
    d2 = -a + 6 * c3 * s - 12 * c4 * s * s
    return val, d1, d2


def phi_eval(z, p):
    """``(value, first, second)`` derivative of the first-axis piece at ``z``."""
    a, zc = p.a, p.zc
    base = a * (zc + 1) ** 2 / 2 - 5 * a / 12 - a * zc / 2
    sign = 1
    if z < 0:
        z, sign = -z, -1
    if z < zc:
        return base - a * z * z / 2, sign * (-a * z), -a
    if z <= zc + 1:
        val, d1, d2 = _plateau_cubic_quartic(z, a, zc, base)
        return val, sign * d1, d2
    return 0 * z, 0 * z, 0 * z


def phibar_eval(z, p):
    """``(value, first, second)`` derivative of the second-axis piece at ``z``."""
    a, zbc, rho = p.a, p.zbc, p.rho
    z0 = rho / 2 - 1
    correction = a * (rho / 2 - 7 * rho * rho / 48)
    top = a * (zbc + 1) ** 2 / 2 + a / 12 - a * zbc / 2 - correction
    base = top - a / 2 + correction
    sign = 1
    if z < z0:
        z, sign = 2 * z0 - z, -1
    if z < 1 - rho:
        u = z - z0
        return top - a * u * u / 4, sign * (-a * u / 2), -a / 2
    if z <= 1:
        s = z - 1
        return (base - a * z * z / 2 - a * s**3 / (12 * rho),
                sign * (-a * z - a * s * s / (4 * rho)),
                -a - a * s / (2 * rho))
    if z < zbc:
        return base - a * z * z / 2, sign * (-a * z), -a
    if z <= zbc + 1:
        val, d1, d2 = _plateau_cubic_quartic(z, a, zbc, base)
        return val, sign * d1, d2
    return 0 * z, 0 * z, 0 * z


def worst_f(q, p: WorstParams):
    """Objective value and gradient at ``q`` (length at least 3)."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size < 3:
        raise DomainError("point must be a vector of length >= 3")
    v1, g1, _ = phi_eval(float(q[0]), p)
    v2, g2, _ = phibar_eval(float(q[1]), p)
    grad = np.zeros_like(q)
    grad[0], grad[1], grad[2] = g1, g2, 12.0 * p.a * q[2]
    return float(v1 + v2 + 6.0 * p.a * q[2] ** 2), grad


def worst_hessian_diag(q, p: WorstParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    h = np.zeros_like(q)
    h[0] = phi_eval(float(q[0]), p)[2]
    h[1] = phibar_eval(float(q[1]), p)[2]
    h[2] = 12.0 * p.a
    return h


def junction_points(p):
    """The five first-axis and nine second-axis branch junctions."""
    zc, zbc, rho = p.zc, p.zbc, p.rho
    z0 = rho / 2 - 1
    first = [-zc - 1, -zc, 0 * zc, zc, zc + 1]
    right = [1 - rho, 1 + 0 * rho, zbc, zbc + 1]
    second = [2 * z0 - r for r in reversed(right)] + [z0] + right
    return first, second


def junction_mismatch(p: WorstParams, dps: int = 60, h: float = 1e-25):
    """Largest one-sided disagreement of value/slope/curvature per junction.

    Each side is evaluated ``h`` away from the junction in ``dps``-digit
    arithmetic, so the branch polynomials are compared at their common limit.
    Returns a list of ``(axis, point, max_abs_gap)``.
    """
    import mpmath

    mp = p.exact(dps)
    hh = mpmath.mpf(h)
    out = []
    first, second = junction_points(mp)
    for axis, fn, pts in (("phi", phi_eval, first), ("phibar", phibar_eval, second)):
        for z in pts:
            left, right = fn(z - hh, mp), fn(z + hh, mp)
            gap = max(abs(lv - rv) for lv, rv in zip(left, right))
            out.append((axis, float(z), float(gap)))
    return out


# ----------------------------------------------------------- closed-form flow


def check_start_box(theta_s) -> np.ndarray:
    q = np.asarray(theta_s, dtype=float)
    if q.ndim != 1 or q.size < 3:
        raise PreconditionError("start must be a vector of length >= 3")
    if not 0.5 < q[0] < 1.0:
        raise PreconditionError("first coordinate must lie in (0.5, 1)")
    if not E12 / 2 - 1 < q[1] < E12 - 1:
        raise PreconditionError("second coordinate must lie in (e^-12/2 - 1, e^-12 - 1)")
    if not q[2] > 2:
        raise PreconditionError("third coordinate must exceed 2")
    return q


def admissible_interval(theta_s, p: WorstParams) -> tuple[float, float]:
    """Target times for which the divergence guarantee applies."""
    q = check_start_box(theta_s)
    rho, a = p.rho, p.a
    lead = (2.0 / a) * math.log((2 - 1.5 * rho) / (q[1] - p.z0))
    lo = lead + math.log(2.0 / (1 - rho)) / a
    hi = lead + math.log((1 + rho / 4) / (1 - 0.75 * rho)) / a + math.log(p.b) / a
    return lo, hi


def threshold_eta(p: WorstParams, t_tilde: float) -> float:
    """Step sizes at or above this value cannot eps-approximate the flow at ``t_tilde``."""
    return 1e14 / p.a * math.exp(-p.a * t_tilde) * p.eps


@dataclass
class ClosedForms:
    """Exact flow coordinates 1-3 on ``[0, t_exit]``."""

    start: np.ndarray
    params: WorstParams
    t_transition: float
    t_one: float
    t_exit: float
    _q: float = field(init=False, repr=False)

    def __post_init__(self):
        r = self.params.rho
        self._q = 2.0 * math.sqrt(r * (1 - r))

    def __call__(self, t):
        p, s = self.params, self.start
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_exit * (1 + 1e-12)):
            raise DomainError(f"closed forms hold on [0, {self.t_exit}]")
        a, r, z0, q = p.a, p.rho, p.z0, self._q
        c1 = s[0] * np.exp(a * t)
        c3 = s[2] * np.exp(-12 * a * t)
        aniso = (s[1] - z0) * np.exp(a * t / 2) + z0
        ang = a * q / (4 * r) * (t - self.t_transition) + math.atan(r / q)
        trans = 1 - 2 * r + q * np.tan(np.where(t < self.t_one, ang, 0.0))
        iso = np.exp(a * (t - self.t_one))
        c2 = np.where(t < self.t_transition, aniso, np.where(t < self.t_one, trans, iso))
        out = np.stack([c1, c2, c3], axis=-1)
        if s.size > 3:
            rest = np.broadcast_to(s[3:], out.shape[:-1] + (s.size - 3,))
            out = np.concatenate([out, rest], axis=-1)
        return out


def worst_closed_forms(theta_s, p: WorstParams) -> ClosedForms:
    """Closed-form flow from ``theta_s`` with its region-exit times.

    In the transition band the second coordinate obeys a Riccati equation
    whose solution is a shifted tangent; it reaches 1 at ``t_one``.
    """
    s = check_start_box(theta_s)
    a, r = p.a, p.rho
    t_tr = (2.0 / a) * math.log((4 - 3 * r) / (2 * s[1] + 2 - r))
    q = 2.0 * math.sqrt(r * (1 - r))
    t_one = t_tr + 4 * r / (a * q) * (math.atan(2 * r / q) - math.atan(r / q))
    t_exit = t_one + math.log(p.zbc) / a
    return ClosedForms(start=s.copy(), params=p, t_transition=t_tr, t_one=t_one, t_exit=t_exit)


# -------------------------------------------------------------- experiment


def preset(a: float = 1.0, b: float = 3.0, eps: float = 1e-6, d: int = 3):
    """Desk-scale start, parameters and target time (interval midpoint)."""
    p = WorstParams(a=a, b=b, eps=eps, d=d)
    start = np.zeros(d)
    start[:3] = (0.75, 0.75 * E12 - 1.0, 3.0)
    lo, hi = admissible_interval(start, p)
    return start, p, 0.5 * (lo + hi)


@dataclass
class DivergenceReport:
    eta: float
    t_tilde: float
    eps: float
    threshold: float
    min_distance: float
    argmin_k: int
    steps_run: int
    diverged: bool
    growth_rate: float
    window_times: np.ndarray
    window_discrepancy: np.ndarray

    @property
    def above_threshold(self) -> bool:
        return self.eta >= self.threshold

    @property
    def separated(self) -> bool:
        return self.min_distance > self.eps

    def summary(self) -> dict:
        return {
            "eta": self.eta, "t_tilde": self.t_tilde, "eps": self.eps,
            "threshold": self.threshold, "min_distance": self.min_distance,
            "argmin_k": self.argmin_k, "steps_run": self.steps_run,
            "diverged": self.diverged, "growth_rate": self.growth_rate,
            "above_threshold": self.above_threshold, "separated": self.separated,
        }


def divergence_experiment(theta_s, p: WorstParams, t_tilde: float, eta: float, check_interval: bool = True) -> DivergenceReport:
    """GD on the landscape against the exact flow value at ``t_tilde``.

    Reports the closest any iterate gets to the flow point and the slope of
    ``log ||theta_k - theta(k eta)||`` over the isotropic window.  Blow-up
    of the third coordinate is an outcome, not an error.
    """
    if eta <= 0:
        raise DomainError("step size must be positive")
    s = check_start_box(theta_s)
    if check_interval:
        lo, hi = admissible_interval(s, p)
        if not lo <= t_tilde <= hi:
            raise PreconditionError(f"t_tilde must lie in [{lo}, {hi}]")
    flow = worst_closed_forms(s, p)
    target = flow(t_tilde)
    t_lo, t_hi = flow.t_one, flow.t_exit
    max_steps = int(math.ceil(2.0 * max(t_hi, t_tilde) / eta)) + 10
    best, arg, k_last, diverged, ks, ws = kernels.worst_gd_scan(
        s[:3].copy(), p.a, p.zc, p.zbc, p.rho, eta, max_steps, target[:3].copy(), t_lo, t_hi
    )
    rate = float("nan")
    times = ks * eta
    disc = np.zeros(0)
    if ks.size >= 2 and not diverged:
        mask = times <= flow.t_exit
        times, ws = times[mask], ws[mask]
        disc = np.linalg.norm(ws - flow(times)[:, :3], axis=1)
        ok = disc > 0
        if ok.sum() >= 2:
            rate = float(np.polyfit(times[ok], np.log(disc[ok]), 1)[0])
    return DivergenceReport(
        eta=float(eta), t_tilde=float(t_tilde), eps=p.eps, threshold=threshold_eta(p, t_tilde),
        min_distance=float(best), argmin_k=int(arg), steps_run=int(k_last), diverged=bool(diverged),
        growth_rate=rate, window_times=times, window_discrepancy=disc,
    )
