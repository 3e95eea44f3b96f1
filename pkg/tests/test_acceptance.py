"""Acceptance criteria 1-11.

Each check returns ``(passed, detail)`` and prints one ``criterion N: PASS|FAIL``
line.  Run standalone with ``python3 tests/test_acceptance.py`` or through
pytest, where the lines are repeated in the terminal summary.

Criteria 6 and the monotonicity clause of 9 are known to fail for reasons
documented in the decisions ledger; their tests are strict xfails so an
unexpected pass is reported.
"""

from __future__ import annotations

import json
import math
import sys
import time
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import random_dims, random_moments, random_theta, rel_err  # noqa: E402
from test_bounds import GRID, ref_gd_eta, ref_gd_k, sig12  # noqa: E402

from gradflow.bounds import (  # noqa: E402
    PiecewiseConstant,
    curvature_profile_from_flow,
    euler_defect_profile,
    flow_time,
    fundamental_bound,
    gd_translation,
    gf_gd_eta_bound,
)
from gradflow.core_linear import (  # noqa: E402
    DataMoments,
    WeightSetting,
    construct_negative_curvature,
    end_to_end,
    gf_min_eig_lower_bound,
    hessian_dense,
    hessian_qform,
    loss,
    min_eig_lower_bound,
)
from gradflow.datasets import synthetic_dataset, xavier_uniform_init  # noqa: E402
from gradflow.flow_engine import (  # noqa: E402
    FunctionObjective,
    LinearObjective,
    NetworkObjective,
    gd_flow_max_deviation,
    gd_run,
    gf_integrate,
    nu_closed_form,
    reparam_integrate,
    trajectory_distance,
)
from gradflow.harness import ExperimentConfig, drift_summary, stepsize_refinement_experiment  # noqa: E402
from gradflow.homogeneous import ActivationSpec, construct_negative_curvature_nonlinear, layer_norm_gaps  # noqa: E402
from gradflow.init_balance import (  # noqa: E402
    BalancedInitConfig,
    balance_defects,
    balance_nearest,
    balanced_factorization,
    lemma_distance_bound,
    random_balanced_init,
    unbalancedness,
)
from gradflow.worstcase import divergence_experiment, junction_mismatch, phibar_eval, preset, threshold_eta  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}
STEP_BUDGET = 5 * 10**7  # largest GD run attempted for the tracking check


def report(num: int, ok: bool, detail: str) -> None:
    RESULTS[num] = (ok, detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}", flush=True)


def unit_moments(rng, d0, dn=1):
    lam = rng.standard_normal((dn, d0))
    return DataMoments(lam / np.linalg.norm(lam), normalized=True)


def linear_configs(count=100, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        dims = random_dims(rng)
        out.append((dims, random_theta(dims, rng), random_moments(dims, rng)))
    return out, rng


# ------------------------------------------------------------------ 1


def check_1():
    start = time.perf_counter()
    configs, rng = linear_configs()
    worst_fd = worst_dense = 0.0
    h = 1e-4
    for dims, theta, m in configs:
        delta = random_theta(dims, rng, scale=1.0)
        q = hessian_qform(theta, delta, m)
        f0 = loss(theta, m)
        fp = loss(WeightSetting.from_flat(theta.flat() + h * delta.flat(), dims), m)
        fm = loss(WeightSetting.from_flat(theta.flat() - h * delta.flat(), dims), m)
        fd = (fp - 2 * f0 + fm) / h**2
        v = delta.flat()
        dense = float(v @ hessian_dense(theta, m) @ v)
        worst_fd = max(worst_fd, rel_err(q, fd))
        worst_dense = max(worst_dense, rel_err(q, dense))
    elapsed = time.perf_counter() - start
    ok = worst_fd <= 1e-4 and worst_dense <= 1e-10 and elapsed < 10
    return ok, f"100 configs: max rel err vs finite differences {worst_fd:.1e} (<=1e-4), vs dense {worst_dense:.1e} (<=1e-10), {elapsed:.1f} s (<10 s)"


# ------------------------------------------------------------------ 2


def check_2():
    start = time.perf_counter()
    configs, _ = linear_configs()
    static_viol = 0
    # eigvalsh round-off allowance; the bound is attained exactly for some depth-2 nets
    def slack(lam):
        return 1e-12 * max(1.0, abs(lam))

    for _, theta, m in configs:
        lam = np.linalg.eigvalsh(hessian_dense(theta, m))[0]
        static_viol += min_eig_lower_bound(theta, m) > lam + slack(lam)
    # the trajectory bound covers flows started anywhere in the eps-ball at 0;
    # each flow is a balanced start plus 5 random starts in that ball
    flow_viol, checked, worst = 0, 0, -np.inf
    for k, dims in enumerate([(2, 2, 2, 1), (3, 3, 3, 1), (2, 3, 3, 3, 1), (3, 2, 2), (1, 2, 2, 1)]):
        n = len(dims) - 1
        eps = 1.0 / (2 * n)
        rng = np.random.default_rng(300 + k)
        m = unit_moments(rng, dims[0], dims[-1])
        obj = LinearObjective(dims, m)
        bal = random_balanced_init(BalancedInitConfig(dims, 0.2, k)).flat()
        starts = [bal * (0.999 * eps / np.linalg.norm(bal))]
        for _ in range(5):
            d = rng.standard_normal(bal.size)
            starts.append(d * eps * rng.uniform() ** (1 / bal.size) / np.linalg.norm(d))
        for s in starts:
            flow = gf_integrate(s, 40.0, 1e-10, obj)
            for t in np.linspace(0.0, 40.0, 10):
                th = flow.weights_at(t)
                lam = np.linalg.eigvalsh(hessian_dense(th, m))[0]
                gap = gf_min_eig_lower_bound(th, m, eps) - lam
                worst = max(worst, gap)
                flow_viol += gap > slack(lam)
                checked += 1
    elapsed = time.perf_counter() - start
    ok = static_viol == 0 and flow_viol == 0 and elapsed < 60
    return ok, (f"static bound violations {static_viol}/100; trajectory bound violations {flow_viol}/{checked} "
                f"(5 flows x [balanced + 5 ball starts] x 10 times, max bound-lambda_min {worst:.1e}); {elapsed:.1f} s (<60 s)")


# ------------------------------------------------------------------ 3

# ReLU configurations whose flows stay off activation kinks up to t = 20;
# flows that slide along a kink are not classical solutions (see ledger)
RELU_CASES = [((3, 4, 3, 1), 4), ((4, 6, 1), 3), ((4, 6, 1), 4), ((4, 6, 1), 6), ((2, 5, 5, 1), 2), ((2, 5, 5, 1), 3)]


def check_3():
    times = np.linspace(0.0, 20.0, 81)
    lin_drift = 0.0
    for k, dims in enumerate([(2, 2, 2, 1), (3, 4, 3, 2), (2, 3, 3, 3, 1), (4, 2, 3)]):
        rng = np.random.default_rng(500 + k)
        m = unit_moments(rng, dims[0], dims[-1])
        for start in (random_theta(dims, rng, scale=0.4), random_balanced_init(BalancedInitConfig(dims, 0.2, k))):
            flow = gf_integrate(start, 20.0, 1e-10, LinearObjective(dims, m))
            d0 = balance_defects(flow.weights_at(0.0))
            for t in times:
                dt = balance_defects(flow.weights_at(t))
                lin_drift = max(lin_drift, max(float(np.max(np.abs(a - b))) for a, b in zip(dt, d0)))
    relu_drift = 0.0
    for dims, seed in RELU_CASES:
        data = synthetic_dataset(20, dims[0], dims[-1], seed=seed)
        obj = NetworkObjective(dims, data, ActivationSpec.relu(), "square")
        flow = gf_integrate(xavier_uniform_init(dims, seed), 20.0, 1e-10, obj, max_evals=100_000)
        gaps = np.array([layer_norm_gaps(flow.weights_at(t)) for t in times])
        relu_drift = max(relu_drift, float(np.max(np.abs(gaps - gaps[0]))))
    ok = lin_drift <= 1e-8 and relu_drift <= 1e-8
    return ok, f"linear defect drift {lin_drift:.1e}, ReLU norm-gap drift {relu_drift:.1e} over {len(RELU_CASES)} nets (<=1e-8, tol 1e-10, t=20)"


# ------------------------------------------------------------------ 4


def check_4():
    nu_err = e2e_err = 0.0
    sandwich_ok = True
    ts = np.linspace(0.0, 3.0, 31)
    for n in (2, 3):
        for d0 in (1, 3):
            for seed in range(3):
                rng = np.random.default_rng(40 * n + 10 * d0 + seed)
                lam = rng.standard_normal(d0)
                lam /= np.linalg.norm(lam)
                u0 = rng.standard_normal(d0)
                if d0 == 1:
                    u0 = np.abs(u0) * np.sign(lam)  # alignment -1 is outside the domain
                u0 *= rng.uniform(0.05, 0.2) / np.linalg.norm(u0)
                nu0 = float(u0 @ lam / np.linalg.norm(u0))
                rs = reparam_integrate(u0, lam, n, ts[-1], 1e-11, t_eval=ts)
                nu_err = max(nu_err, float(np.max(np.abs(rs.nu - nu_closed_form(ts, nu0)))))
                norms = np.linalg.norm(rs.u, axis=1)
                r0 = norms[0]
                sandwich_ok &= bool(np.all(norms >= r0 * np.exp(-2 * n * ts) * (1 - 1e-12)))
                sandwich_ok &= bool(np.all(norms <= r0 * np.exp(n * ts) * (1 + 1e-12)))
                dims = (d0,) + (2,) * (n - 1) + (1,)
                theta0 = balanced_factorization(u0[None, :], dims)
                flow = gf_integrate(theta0, float(rs.xi[-1]), 1e-12, LinearObjective(dims, DataMoments(lam[None, :])))
                for xi, u in zip(rs.xi, rs.u):
                    e2e_err = max(e2e_err, float(np.linalg.norm(end_to_end(flow.weights_at(xi)).ravel() - u)))
    ok = nu_err <= 1e-8 and sandwich_ok and e2e_err <= 1e-7
    return ok, f"alignment vs closed form {nu_err:.1e} (<=1e-8); norm sandwich {'holds' if sandwich_ok else 'violated'}; end-to-end at clock vs u {e2e_err:.1e} (<=1e-7); n in {{2,3}}, d0 in {{1,3}}"


# ------------------------------------------------------------------ 5


def lnn_case(seed, dims=(2, 2, 2, 1), norm=0.1):
    rng = np.random.default_rng(seed)
    m = unit_moments(rng, dims[0])
    theta0 = random_balanced_init(BalancedInitConfig(dims, 0.2, seed, norm=norm))
    return theta0, m, LinearObjective(dims, m)


def check_5():
    n, eps_bar = 3, 0.1
    worst_gap, t_bars, descent = 0.0, [], True
    for seed in range(10):
        theta0, m, obj = lnn_case(seed)
        w0 = end_to_end(theta0).ravel()
        nu = float(w0 @ m.lambda_yx.ravel() / np.linalg.norm(w0))
        t_bar = flow_time(float(np.linalg.norm(w0)), nu, n, eps_bar)
        t_bars.append(t_bar)
        # the loss never increases along the flow, so a gap <= eps_bar reached
        # before t_bar persists to t_bar; long horizons are cut at 5000
        horizon = min(t_bar, 5000.0)
        flow = gf_integrate(theta0, horizon, 1e-10, obj)
        values = [loss(flow.weights_at(t), m) for t in np.linspace(0.0, horizon, 201)]
        descent &= bool(np.all(np.diff(values) <= 1e-12))
        worst_gap = max(worst_gap, values[-1])  # minimum loss is 0
    formula_ok = True
    for w, nu, nn in GRID:
        eta, k = gd_translation(w, nu, nn, 0.6)
        formula_ok &= bool(sig12(eta, ref_gd_eta(w, nu, nn, 0.6)) and sig12(k, ref_gd_k(w, nu, nn, 0.6, eta)))
    ok = worst_gap <= eps_bar and descent and formula_ok
    return ok, (f"10 seeds: largest loss gap at min(t_bar, 5000) {worst_gap:.1e} (<= {eps_bar}), loss nonincreasing: {descent}, "
                f"t_bar in [{min(t_bars):.0f}, {max(t_bars):.1e}]; "
                f"step/iteration formulas {'match' if formula_ok else 'differ from'} the mpmath evaluator to 12 digits")


# ------------------------------------------------------------------ 6


def check_6():
    n, t_tilde = 3, 10.0
    eps = 1.0 / (2 * n)
    beta, gamma = 16.0 * n, 6.0 * math.sqrt(n)
    runs, violations, skipped, needed = 0, 0, 0, []
    for seed in range(10):
        theta0, m, obj = lnn_case(seed)
        flow = gf_integrate(theta0, t_tilde, 1e-12, obj)
        prof = curvature_profile_from_flow(flow, m, eps, times=np.linspace(0, t_tilde, 1001), envelope="max")
        res = gf_gd_eta_bound(prof, beta, gamma, 0.0, eps, t_tilde)
        eta = 0.9 * res.eta
        steps = math.floor(t_tilde / eta) if eta > 0 else math.inf
        needed.append(steps)
        if not res.feasible or steps > STEP_BUDGET:
            skipped += 1
            continue
        worst, _, _ = gd_flow_max_deviation(theta0, eta, steps, obj, flow)
        runs += 1
        violations += worst > eps
    ok = runs == 10 and violations == 0
    return ok, (f"certified steps need {min(needed):.1e}..{max(needed):.1e} iterations to reach t=10; "
                f"{skipped}/10 seeds exceed the {STEP_BUDGET:.0e}-step budget and were not run; "
                f"{violations} violations among {runs} runs")


# ------------------------------------------------------------------ 7


def fundamental_check(obj, x0, eta, steps, m_profile, beta, tol=1e-12):
    gd = gd_run(x0, eta, steps, obj)
    flow = gf_integrate(x0, steps * eta, tol, obj)
    measured = trajectory_distance(gd, flow)
    grads = np.linalg.norm([obj.grad(s) for s in gd.states], axis=1)
    delta = euler_defect_profile(gd.times, grads, eta, beta)
    bound = fundamental_bound(m_profile(delta.end), delta, 0.0, gd.times)
    return measured[:, 1], bound


def check_7():
    lines, ok = [], True
    # scalar convex: f = (x - 1)^2 / 2, curvature 1
    obj = LinearObjective((1, 1), DataMoments([[1.0]]))
    d, b = fundamental_check(obj, np.zeros(1), 0.1, 100, lambda T: PiecewiseConstant.constant(-1.0, T), 1.0)
    ok &= bool(np.all(d <= b + 1e-12))
    lines.append(f"scalar max d/b {np.max(d / np.maximum(b, 1e-300)):.2f}")
    # deep linear: ball envelope at radius 1/(2n) is valid while the gap stays below it
    theta0, m, obj = lnn_case(0)
    n, eps = 3, 1.0 / 6.0
    T, eta = 5.0, 1e-2
    steps = int(round(T / eta))
    flow = gf_integrate(theta0, T, 1e-12, obj)
    prof = curvature_profile_from_flow(flow, m, eps, times=np.linspace(0, T, 501), envelope="max")
    d, b = fundamental_check(obj, theta0, eta, steps, lambda _T: prof, 16.0 * n)
    # the defect profile assumes |Hessian| <= 16 n along the Euler segments
    gd = gd_run(theta0, eta, steps, obj)
    h_norm = max(float(np.max(np.abs(np.linalg.eigvalsh(hessian_dense(WeightSetting.from_flat(s, theta0.dims), m)))))
               for s in gd.states[::5])
    hyp = bool(np.max(d) <= eps) and h_norm <= 16.0 * n
    ok &= hyp and bool(np.all(d <= b + 1e-12))
    lines.append(f"deep linear max d/b {np.max(d[1:] / b[1:]):.2e} (tube and smoothness hypotheses {'hold' if hyp else 'fail'}, |H| <= {h_norm:.2f})")
    # worst-case landscape, second coordinate alone
    _, p, _ = preset()
    c3, c4 = p.a * (2 / 3 + p.zbc), p.a * (0.25 + 0.5 * p.zbc)
    beta = max(p.a + p.a / 2, abs(-p.a + 3 * c3 * c3 / (4 * c4)))  # peak of the plateau curvature
    obj = FunctionObjective(lambda y: np.array([phibar_eval(float(y[0]), p)[1]]),
                            lambda y: float(phibar_eval(float(y[0]), p)[0]))
    y0 = np.array([0.75 * math.exp(-12) - 1.0])
    d, b = fundamental_check(obj, y0, 1e-2, 3000, lambda T: PiecewiseConstant.constant(p.a, T), beta)
    ok &= bool(np.all(d <= b + 1e-12))
    lines.append(f"worst-case axis max d/b {np.max(d[1:] / b[1:]):.2f}")
    return ok, "Euler gap <= bound at every grid time: " + "; ".join(lines)


# ------------------------------------------------------------------ 8


def check_8():
    start, p, t_tilde = preset(1.0, 3.0, 1e-6)
    thr = threshold_eta(p, t_tilde)
    in_range = 1e-5 <= thr <= 1e-2
    etas = [thr, 2 * thr, 10 * thr, 1e-2]
    reps = [divergence_experiment(start, p, t_tilde, eta) for eta in etas]
    separated = all(r.separated for r in reps)
    rates = [r.growth_rate for r in reps]
    rate_ok = all(0.9 * p.a <= g <= 1.1 * p.a for g in rates)
    gaps = [g for _, _, g in junction_mismatch(p)]
    junc_ok = len(gaps) == 14 and max(gaps) <= 1e-8
    ok = in_range and separated and rate_ok and junc_ok
    return ok, (f"threshold {thr:.2e} in [1e-5, 1e-2]: {in_range}; min distance > eps at {len(etas)} steps >= threshold: {separated} "
                f"(smallest {min(r.min_distance for r in reps):.1e}); growth rates {min(rates):.3f}..{max(rates):.3f}; "
                f"14 junctions max gap {max(gaps):.1e}")


# ------------------------------------------------------------------ 9


def refinement_runs():
    base = json.loads((files("gradflow") / "data" / "baseline_drift.json").read_text())
    out = {}
    for name, entry in base["runs"].items():
        summary = drift_summary(stepsize_refinement_experiment(ExperimentConfig.from_dict(entry["config"])))
        out[name] = (summary, {int(r): v for r, v in entry["drift_ratio"].items()})
    return out


_REFINEMENT_CACHE: dict = {}


def check_9():
    if not _REFINEMENT_CACHE:
        _REFINEMENT_CACHE.update(refinement_runs())
    parts, threshold_ok, mono_ok = [], True, True
    for name, (now, baseline) in _REFINEMENT_CACHE.items():
        rs = sorted(now)
        t_ok = now[20] <= 2 * baseline[20]
        m_ok = all(now[b] <= 1.05 * now[a] for a, b in zip(rs, rs[1:]))
        threshold_ok &= t_ok
        mono_ok &= m_ok
        ratios = ", ".join(f"r={r}: {now[r]:.2e}" for r in rs)
        parts.append(f"{name} [{ratios}] threshold {'ok' if t_ok else 'exceeded'}, nonincreasing {'yes' if m_ok else 'no'}")
    return threshold_ok and mono_ok, "; ".join(parts), threshold_ok


# ------------------------------------------------------------------ 10


def check_10():
    rng = np.random.default_rng(10)
    worst = 0.0
    for dims in [(2, 2, 2, 1), (3, 3, 3, 2), (2, 3, 2, 2, 3)]:
        m = random_moments(dims, rng)
        for c in (1.0, 10.0, 1000.0):
            theta, delta = construct_negative_curvature(c, dims, m)
            want = -c * float(np.sum(delta.flat() ** 2))
            worst = max(worst, abs(hessian_qform(theta, delta, m) - want) / abs(want))
    data = synthetic_dataset(20, 3, 1, seed=0)
    fam = construct_negative_curvature_nonlinear((3, 4, 4, 1), data, ActivationSpec.relu())
    q = [fam.qform(a) for a in (1.0, 10.0, 100.0, 1000.0)]
    mono = all(b < a for a, b in zip(q, q[1:]))
    ok = worst <= 1e-8 and mono
    return ok, f"linear construction max rel err {worst:.1e} (<=1e-8) for c in {{1,10,1000}}; ReLU family qforms {', '.join(f'{v:.3g}' for v in q)} strictly decreasing: {mono}"


# ------------------------------------------------------------------ 11


def check_11():
    init_defect = init_recon = 0.0
    for k, dims in enumerate([(2, 2, 2, 1), (3, 4, 3, 2), (4, 4, 4, 4, 4), (5, 3, 2)]):
        for seed in range(10):
            cfg = BalancedInitConfig(dims, 0.2, 100 * k + seed)
            theta = random_balanced_init(cfg)
            init_defect = max(init_defect, unbalancedness(theta))
            init_recon = max(init_recon, float(np.max(np.abs(end_to_end(theta) - cfg.sample_target()))))
    worst_defect, over_bound, budget_out = 0.0, 0, 0
    rng = np.random.default_rng(11)
    for i in range(100):
        dims = random_dims(rng, depths=(2, 3, 4))
        base = random_balanced_init(BalancedInitConfig(dims, 0.2, i, norm=0.5))
        theta = WeightSetting.from_flat(base.flat() + 1e-3 * rng.standard_normal(base.size), dims)
        hist: list = []
        fixed = balance_nearest(theta, sweeps=50, tol=1e-8, history=hist)
        worst_defect = max(worst_defect, unbalancedness(fixed))
        budget_out += len(hist) - 1 > 50
        over_bound += float(np.linalg.norm(fixed.flat() - theta.flat())) > lemma_distance_bound(theta)
    ok = init_defect <= 1e-10 and init_recon <= 1e-10 and worst_defect <= 1e-8 and budget_out == 0 and over_bound == 0
    return ok, (f"init defect {init_defect:.1e}, reconstruction {init_recon:.1e} (<=1e-10); rebalanced defect {worst_defect:.1e} (<=1e-8) "
                f"within 50 sweeps on 100 inputs; distance bound violations {over_bound}")


# ------------------------------------------------------------------ pytest entry points


@pytest.mark.parametrize("num", [1, 2, 3, 4, 5, 7, 8, 10, 11])
def test_criterion(num):
    ok, detail = globals()[f"check_{num}"]()
    report(num, ok, detail)
    assert ok, detail


@pytest.mark.xfail(strict=True, reason="certified step size needs 1e16+ iterations at t=10; see ledger")
def test_criterion_6():
    ok, detail = check_6()
    report(6, ok, detail)
    assert ok, detail


@pytest.mark.xfail(strict=True, reason="drift grows with r toward the flow gap; monotonicity clause cannot hold; see ledger")
def test_criterion_9():
    ok, detail, _ = check_9()
    report(9, ok, detail)
    assert ok, detail


def test_criterion_9_threshold_clause():
    _, detail, threshold_ok = check_9()
    assert threshold_ok, detail


if __name__ == "__main__":
    for num in range(1, 12):
        res = globals()[f"check_{num}"]()
        report(num, res[0], res[1])
    failed = [k for k, (ok, _) in RESULTS.items() if not ok]
    print(f"{11 - len(failed)}/11 criteria pass" + (f"; failing: {failed}" if failed else ""))
