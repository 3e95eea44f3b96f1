import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gradflow.errors import DomainError, PreconditionError
from gradflow.flow_engine import FunctionObjective, gf_integrate
from gradflow.worstcase import (
    E12,
    WorstParams,
    admissible_interval,
    divergence_experiment,
    junction_mismatch,
    junction_points,
    phi_eval,
    phibar_eval,
    preset,
    threshold_eta,
    worst_closed_forms,
    worst_f,
    worst_hessian_diag,
)

P = WorstParams(a=1.0, b=3.0, eps=1e-6)


def test_derived_parameters():
    p = WorstParams(a=2.0, b=4.0, eps=0.5)
    assert p.zc == 4.0 * math.exp(30) + 1
    assert p.zbc == 5.0
    assert p.rho == min(math.exp(-12) / 2, 0.5 / 8)
    assert WorstParams(eps=1e-9).rho == 1e-9 / 6
    for bad in (dict(a=0.0), dict(b=2.0), dict(eps=1.0), dict(d=2)):
        with pytest.raises(DomainError):
            WorstParams(**bad)


# ------------------------------------------------------------------ pieces


def test_phi_at_zero():
    a, zc = P.a, P.zc
    val, d1, d2 = phi_eval(0.0, P)
    assert val == pytest.approx(0.5 * a * (zc + 1) ** 2 - 5 * a / 12 - 0.5 * a * zc, rel=1e-15)
    assert d1 == 0.0 and d2 == -a


def test_plateaus_are_zero():
    assert phi_eval(P.zc + 2, P) == (0.0, 0.0, 0.0)
    assert phi_eval(-P.zc - 2, P) == (0.0, 0.0, 0.0)
    assert phibar_eval(P.zbc + 1.5, P) == (0.0, 0.0, 0.0)
    val, grad = worst_f([P.zc + 5, P.zbc + 5, 0.0], P)
    assert val == 0.0 and np.all(grad == 0.0)


def test_phibar_interior_curvatures():
    z0 = P.z0
    for z in (z0 + 0.1, 0.0, 0.5):
        assert phibar_eval(z, P)[2] == -P.a / 2
    for z in (1.5, 2.0, 3.9):
        assert phibar_eval(z, P)[2] == -P.a
    # even extension about z0
    for u in (0.3, 1.7, 4.5, 6.0):
        left, right = phibar_eval(z0 - u, P), phibar_eval(z0 + u, P)
        assert left[0] == pytest.approx(right[0], rel=1e-13, abs=1e-13)
        assert left[1] == pytest.approx(-right[1], rel=1e-12, abs=1e-12)
        assert left[2] == pytest.approx(right[2], rel=1e-12, abs=1e-12)


def test_junctions_exact_arithmetic():
    gaps = junction_mismatch(P)
    assert len(gaps) == 14
    assert max(g for _, _, g in gaps) <= 1e-8


def _richardson_gaps(fn, z, h):
    """One-sided gaps of (value, slope, curvature) extrapolated to h -> 0.

    A C^2 junction has gaps of order h (the third derivative may jump);
    extrapolating from h and h/10 removes that term.
    """
    def gaps(step):
        left, right = fn(z - step, P), fn(z + step, P)
        return np.array([abs(lv - rv) for lv, rv in zip(left, right)])

    return np.abs((10 * gaps(h / 10) - gaps(h)) / 9)


@pytest.mark.parametrize("z", [1 - P.rho, 1.0, P.zbc, P.zbc + 1, P.z0])
def test_phibar_junctions_finite_differences(z):
    # the cubic band [1 - rho, 1] is only rho wide, so step well inside it
    h = 1e-2 * P.rho if 0.5 < z < 1.5 else 1e-5
    assert np.all(_richardson_gaps(phibar_eval, z, h) <= 1e-8)


def test_phi_smooth_near_origin():
    for z in (0.0, -1.0, 1.0):
        assert np.all(_richardson_gaps(phi_eval, z, 1e-5)[1:] <= 1e-8)


def test_junction_point_lists():
    first, second = junction_points(P)
    assert first[2] == 0.0 and first[3] == P.zc
    assert second[4] == P.z0 and second[5] == 1 - P.rho


def test_gradient_matches_finite_differences():
    # values carry a ~1e26 constant, so difference in 60-digit arithmetic
    import mpmath

    exact = P.exact(60)
    h = mpmath.mpf("1e-12")

    def f_exact(q):
        return phi_eval(q[0], exact)[0] + phibar_eval(q[1], exact)[0] + 6 * exact.a * q[2] ** 2

    rng = np.random.default_rng(7)
    for _ in range(20):
        q = np.array([rng.uniform(-3, 3), rng.uniform(-6, 6), rng.uniform(-2, 2)])
        _, g = worst_f(q, P)
        qm = [mpmath.mpf(float(v)) for v in q]
        for i in range(3):
            up, dn = list(qm), list(qm)
            up[i] += h
            dn[i] -= h
            fd = float((f_exact(up) - f_exact(dn)) / (2 * h))
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_curvature_floor():
    z1 = np.linspace(-3, 3, 10_000)
    z2 = np.linspace(-7, 7, 10_000)
    c1 = np.array([phi_eval(z, P)[2] for z in z1])
    c2 = np.array([phibar_eval(z, P)[2] for z in z2])
    assert c1.min() >= -P.a - 1e-9 and c2.min() >= -P.a - 1e-9
    assert np.any(c1 == -P.a) and np.any(c2 == -P.a)
    band = np.linspace(1 - P.rho, 1.0, 101)
    assert min(phibar_eval(z, P)[2] for z in band) >= -P.a - 1e-9
    diag = worst_hessian_diag(np.array([0.5, 2.0, 1.0, 0.0]), P)
    assert diag.tolist() == [-1.0, -1.0, 12.0, 0.0]


# ------------------------------------------------------------------ closed forms


START, PP, T_MID = preset()


def test_start_box():
    with pytest.raises(PreconditionError):
        worst_closed_forms([0.4, START[1], 3.0], PP)
    with pytest.raises(PreconditionError):
        worst_closed_forms([0.75, -0.5, 3.0], PP)
    with pytest.raises(PreconditionError):
        worst_closed_forms([0.75, START[1], 1.0], PP)


def test_closed_forms_at_zero():
    cf = worst_closed_forms(START, PP)
    assert np.allclose(cf(0.0), START[:3], rtol=1e-15, atol=0)


def test_transition_time_formula():
    cf = worst_closed_forms(START, PP)
    r = PP.rho
    want = 2.0 * math.log((4 - 3 * r) / (2 * START[1] + 2 - r))
    assert cf.t_transition == pytest.approx(want, rel=1e-15)
    assert cf.t_transition < cf.t_one < T_MID < cf.t_exit


def test_crossing_time_matches_event_detection():
    cf = worst_closed_forms(START, PP)
    target = 1 - PP.rho

    def hit(_t, y):
        return y[0] - target

    hit.terminal = True
    sol = solve_ivp(lambda _t, y: [-phibar_eval(y[0], PP)[1]], (0, 40), [START[1]], method="DOP853",
                    rtol=1e-13, atol=1e-15, events=hit)
    assert abs(sol.t_events[0][0] - cf.t_transition) <= 1e-6


def test_closed_forms_match_integration():
    cf = worst_closed_forms(START, PP)
    tol = 1e-10
    obj = FunctionObjective(lambda q: worst_f(q, PP)[1], lambda q: worst_f(q, PP)[0])
    flow = gf_integrate(START, cf.t_transition, tol, obj, check_descent=False)
    for t in np.linspace(0, cf.t_transition, 30):
        got, want = flow(t), cf(t)
        assert np.all(np.abs(got - want) <= 100 * tol * np.maximum(1.0, np.abs(want)))


def test_closed_forms_through_transition_and_isotropic_region():
    cf = worst_closed_forms(START, PP)
    t_hi = cf.t_exit * (1 - 1e-9)
    sol = solve_ivp(lambda _t, y: [-phibar_eval(y[0], PP)[1]], (0, t_hi), [START[1]], method="DOP853",
                    rtol=1e-13, atol=1e-15, dense_output=True)
    times = np.linspace(cf.t_transition, t_hi, 40)
    assert np.allclose(sol.sol(times)[0], cf(times)[:, 1], rtol=1e-8, atol=1e-9)
    iso = np.linspace(cf.t_one, t_hi, 20)
    c = cf(iso)
    at_one = cf(cf.t_one)
    scale = np.exp(PP.a * (iso - cf.t_one))
    assert np.allclose(c[:, 0], at_one[0] * scale, rtol=1e-12)
    assert np.allclose(c[:, 1], at_one[1] * scale, rtol=1e-12)
    with pytest.raises(DomainError):
        cf(cf.t_exit * 1.01)


def test_coordinates_nondecreasing_for_flow_and_gd():
    cf = worst_closed_forms(START, PP)
    c = cf(np.linspace(0, cf.t_exit, 500))
    assert np.all(np.diff(c[:, 0]) >= 0) and np.all(np.diff(c[:, 1]) >= 0)
    q = START[:3].copy()
    prev = q.copy()
    for _ in range(2000):
        q = q - 0.01 * worst_f(q, PP)[1]
        assert q[0] >= prev[0] and q[1] >= prev[1]
        prev = q.copy()


# ------------------------------------------------------------------ experiment


def test_threshold_and_interval():
    lo, hi = admissible_interval(START, PP)
    assert lo < T_MID < hi and T_MID == pytest.approx(0.5 * (lo + hi))
    eta = threshold_eta(PP, T_MID)
    assert eta == pytest.approx(1e14 * math.exp(-T_MID) * 1e-6, rel=1e-14)
    assert 1e-6 <= eta <= 1e-1


def test_divergence_above_threshold():
    rep = divergence_experiment(START, PP, T_MID, threshold_eta(PP, T_MID))
    assert rep.above_threshold and rep.separated and not rep.diverged
    assert 0.9 <= rep.growth_rate <= 1.1
    doc = rep.summary()
    assert doc["min_distance"] > doc["eps"]


def test_distance_shrinks_with_step():
    dists = [divergence_experiment(START, PP, T_MID, eta).min_distance for eta in (1e-2, 1e-3, 1e-4)]
    assert dists[0] > dists[1] > dists[2]


def test_large_step_diverges_in_third_coordinate():
    rep = divergence_experiment(START, PP, T_MID, 0.2)
    assert rep.diverged and rep.separated


def test_experiment_preconditions():
    with pytest.raises(PreconditionError):
        divergence_experiment(START, PP, 5.0, 1e-3)
    with pytest.raises(DomainError):
        divergence_experiment(START, PP, T_MID, 0.0)
