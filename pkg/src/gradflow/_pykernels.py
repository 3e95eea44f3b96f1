"""NumPy implementations with the same signatures as the compiled kernels."""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _split(theta, dims):
    out, pos = [], 0
    for j in range(1, len(dims)):
        r, c = int(dims[j]), int(dims[j - 1])
        out.append(theta[pos : pos + r * c].reshape(r, c))
        pos += r * c
    return out


def linear_loss_grad(theta, dims, lam):
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    layers = _split(theta, dims)
    n = len(layers)
    pre = [np.eye(int(dims[0]))]
    for w in layers:
        pre.append(w @ pre[-1])
    res = pre[-1] - lam
    suf = [None] * (n + 1)
    suf[n] = np.eye(int(dims[-1]))
    for k in range(n - 1, -1, -1):
        suf[k] = suf[k + 1] @ layers[k]
    g = np.concatenate([(suf[j + 1].T @ res @ pre[j].T).ravel() for j in range(n)])
    return 0.5 * float(np.sum(res * res)), g


def linear_gd(theta0, dims, lam, eta, steps, stride, blowup=1e12):
    th = np.array(theta0, dtype=float, copy=True)
    recs = [th.copy()]
    bad = -1
    for k in range(1, steps + 1):
        th -= eta * linear_loss_grad(th, dims, lam)[1]
        nrm = float(th @ th)
        if not np.isfinite(nrm) or nrm > blowup * blowup:
            bad = k
            break
        if k % stride == 0:
            recs.append(th.copy())
    return np.array(recs), th, bad


def _hermite(states, derivs, h, idx, s):
    s2, s3 = s * s, s * s * s
    return (
        (2 * s3 - 3 * s2 + 1) * states[idx]
        + (s3 - 2 * s2 + s) * h * derivs[idx]
        + (-2 * s3 + 3 * s2) * states[idx + 1]
        + (s3 - s2) * h * derivs[idx + 1]
    )


def linear_gd_track(theta0, dims, lam, eta, steps, grid_h, ref_states, ref_derivs, block):
    ngrid = ref_states.shape[0]
    if steps * eta > grid_h * (ngrid - 1) * (1 + 1e-12):
        raise ValueError("reference grid does not cover the GD horizon")
    th = np.array(theta0, dtype=float, copy=True)
    blocks = np.zeros(steps // block + 1)
    best, arg = -1.0, 0
    for k in range(steps + 1):
        if k > 0:
            th -= eta * linear_loss_grad(th, dims, lam)[1]
        t = k * eta
        idx = min(int(t / grid_h), ngrid - 2)
        ref = _hermite(ref_states, ref_derivs, grid_h, idx, t / grid_h - idx)
        dist = float(np.linalg.norm(th - ref))
        if not np.isfinite(dist):
            best, arg = dist, k
            break
        if dist > best:
            best, arg = dist, k
        blocks[k // block] = max(blocks[k // block], dist)
    return best, arg, blocks, th


def _dphi(z, a, zc):
    sgn = 1.0
    if z < 0:
        z, sgn = -z, -1.0
    if z < zc:
        return sgn * (-a * z)
    if z <= zc + 1.0:
        s = z - zc
        return sgn * (-a * z + 3 * a * (2 / 3 + zc) * s * s - 4 * a * (0.25 + 0.5 * zc) * s**3)
    return 0.0


def _dphibar(z, a, zbc, rho):
    z0 = 0.5 * rho - 1.0
    sgn = 1.0
    if z < z0:
        z, sgn = 2 * z0 - z, -1.0
    if z < 1.0 - rho:
        return sgn * (-0.5 * a * (z - z0))
    if z <= 1.0:
        return sgn * (-a * z - a / (4 * rho) * (z - 1) ** 2)
    if z < zbc:
        return sgn * (-a * z)
    if z <= zbc + 1.0:
        s = z - zbc
        return sgn * (-a * z + 3 * a * (2 / 3 + zbc) * s * s - 4 * a * (0.25 + 0.5 * zbc) * s**3)
    return 0.0


def worst_gd_scan(q0, a, zc, zbc, rho, eta, max_steps, target, t_lo, t_hi, blowup=1e12):
    x, y, z = (float(v) for v in q0[:3])
    best, arg, k = np.inf, 0, 0
    diverged = False
    ks, ws = [], []
    while True:
        dx, dy, dz = x - target[0], y - target[1], z - target[2]
        dist = float(np.sqrt(dx * dx + dy * dy + dz * dz))
        if dist < best:
            best, arg = dist, k
        t = k * eta
        if t_lo <= t <= t_hi:
            ks.append(k)
            ws.append((x, y, z))
        if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)) or abs(z) > blowup:
            diverged = True
            break
        if (dx > best or dy > best) and t > t_hi:
            break
        if k >= max_steps:
            break
        x, y = x - eta * _dphi(x, a, zc), y - eta * _dphibar(y, a, zbc, rho)
        z = z - eta * 12 * a * z
        k += 1
    return (
        best,
        arg,
        k,
        diverged,
        np.array(ks, dtype=np.int64),
        np.array(ws, dtype=float).reshape(-1, 3),
    )
