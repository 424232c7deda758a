"""Compiled inner loop of the closed-loop integrator.

One call advances a whole path on its (jump-refined) grid with pre-drawn
Gaussian increments, so the Python layer only handles setup, RNG, and
reduction. Everything here mirrors the module-level operations in
``filtering``/``control`` step for step; the pure-numpy reference engine
in ``simulate`` exists to cross-check this kernel.

Status codes returned by ``run_closed_loop``: 0 completed, 1 explosion
(norm crossed the radius at index ``last``), 2 non-finite update (arrays
valid through ``last``), 3 entered the stop ball at index ``last``.
"""

from __future__ import annotations

import numba
import numpy as np

STATUS_OK = 0
STATUS_EXPLOSION = 1
STATUS_NONFINITE = 2
STATUS_STOPPED = 3


@numba.njit(cache=True, nogil=True)
def project_simplex(v):
    m = v.size
    feasible = True
    total = 0.0
    for i in range(m):
        if v[i] < 0.0:
            feasible = False
        total += v[i]
    if feasible and abs(total - 1.0) <= 1e-12:
        return v.copy()
    u = np.sort(v)[::-1]
    running = 0.0
    tau = 0.0
    for k in range(m):
        running += u[k]
        t = (1.0 - running) / (k + 1)
        if u[k] + t > 0.0:
            tau = t
    out = np.empty(m)
    for i in range(m):
        w = v[i] + tau
        out[i] = w if w > 0.0 else 0.0
    return out


@numba.njit(cache=True, nogil=True)
def run_closed_loop(grid, alpha, A, B, G, PiT, x0, phi0, z,
                    explosion_radius, stop_radius):
    L1 = grid.shape[0]
    n = x0.shape[0]
    m = phi0.shape[0]
    d = B.shape[2]

    X = np.zeros((L1, n))
    PHI = np.zeros((L1, m))
    U = np.zeros((L1, d))
    DV = np.zeros((L1 - 1, n))
    N = np.zeros((L1, m))
    QV = np.zeros(L1)
    YN = np.zeros(L1)

    x = x0.copy()
    phi = phi0.copy()
    X[0] = x
    PHI[0] = phi
    acc = 0.0
    for i in range(n):
        acc += x[i] * x[i]
    for i in range(m):
        acc += phi[i] * phi[i]
    YN[0] = np.sqrt(acc)

    pift = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += PiT[i, j] * phi[j]
        pift[i] = acc
    integ = np.zeros(m)

    Cx = np.empty((n, m))
    u = np.empty(d)
    dx = np.empty(n)
    dv = np.empty(n)
    w = np.empty(m)
    raw = np.empty(m)

    status = STATUS_OK
    last = L1 - 1

    for k in range(L1 - 1):
        h = grid[k + 1] - grid[k]
        # u = -(sum_i phi_i R^-1 B_i' P_i) x
        for a in range(d):
            acc = 0.0
            for i in range(m):
                gi = 0.0
                for b in range(n):
                    gi += G[i, a, b] * x[b]
                acc += phi[i] * gi
            u[a] = -acc
        U[k] = u
        # drift columns A_i x + B_i u
        for i in range(m):
            for r in range(n):
                acc = 0.0
                for c in range(n):
                    acc += A[i, r, c] * x[c]
                for c in range(d):
                    acc += B[i, r, c] * u[c]
                Cx[r, i] = acc
        mode = alpha[k]
        sq = np.sqrt(h)
        for r in range(n):
            dx[r] = Cx[r, mode] * h + sq * z[k, r]
            acc = 0.0
            for i in range(m):
                acc += Cx[r, i] * phi[i]
            dv[r] = dx[r] - acc * h
            DV[k, r] = dv[r]
        # innovation weights w = C' dv, then D(phi) w = phi*w - phi (phi.w)
        pw = 0.0
        for i in range(m):
            acc = 0.0
            for r in range(n):
                acc += Cx[r, i] * dv[r]
            w[i] = acc
            pw += phi[i] * acc
        finite = True
        for i in range(m):
            # innovation component first: exactly zero at filter vertices
            innov = phi[i] * w[i] - phi[i] * pw
            raw[i] = phi[i] + pift[i] * h + innov
            if not np.isfinite(raw[i]):
                finite = False
        if not finite:
            status = STATUS_NONFINITE
            last = k
            break
        phi_new = project_simplex(raw)
        acc = 0.0
        for r in range(n):
            x[r] = x[r] + dx[r]
            acc += x[r] * x[r]
        qv_inc = 0.0
        for i in range(m):
            pnew = 0.0
            for j in range(m):
                pnew += PiT[i, j] * phi_new[j]
            integ[i] += 0.5 * (pift[i] + pnew) * h
            pift[i] = pnew
            nv = phi_new[i] - phi0[i] - integ[i]
            dn = nv - N[k, i]
            qv_inc += dn * dn
            N[k + 1, i] = nv
            acc += phi_new[i] * phi_new[i]
            phi[i] = phi_new[i]
        QV[k + 1] = QV[k] + qv_inc
        yn = np.sqrt(acc)
        YN[k + 1] = yn
        X[k + 1] = x
        PHI[k + 1] = phi
        if np.isnan(yn):
            status = STATUS_NONFINITE
            last = k
            break
        if yn > explosion_radius:
            status = STATUS_EXPLOSION
            last = k + 1
            break
        if stop_radius > 0.0 and yn <= stop_radius:
            status = STATUS_STOPPED
            last = k + 1
            break

    # control at the final stored point
    for a in range(d):
        acc = 0.0
        for i in range(m):
            gi = 0.0
            for b in range(n):
                gi += G[i, a, b] * X[last, b]
            acc += PHI[last, i] * gi
        U[last, a] = -acc

    return status, last, X, PHI, U, DV, N, QV, YN
