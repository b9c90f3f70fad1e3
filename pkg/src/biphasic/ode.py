"""Runge-Kutta-Fehlberg 4(5) kernel for the coupled biphasic Richards' system.

Compiled with numba; the Python-facing wrapper is ``growth.integrate``.
"""
import numpy as np
from numba import njit

OK = 0
STEP_UNDERFLOW = 1
NON_FINITE = 2

# Fehlberg tableau
A21 = 1.0 / 4.0
A31, A32 = 3.0 / 32.0, 9.0 / 32.0
A41, A42, A43 = 1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0
A51, A52, A53, A54 = 439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0
A61, A62, A63, A64, A65 = -8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0
B41, B43, B44, B45 = 25.0 / 216.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0
E1, E3, E4, E5, E6 = 1.0 / 360.0, -128.0 / 4275.0, -2197.0 / 75240.0, 1.0 / 50.0, 2.0 / 55.0

CAPACITY_ROUNDOFF = 1e-12


@njit(cache=True)
def _rates(c, coef, gamma, K, out):
    total = 0.0
    for m in range(c.shape[0]):
        total += c[m]
    ratio = total / K
    at_capacity = abs(total - K) <= CAPACITY_ROUNDOFF
    for m in range(c.shape[0]):
        bracket = 1.0 - ratio ** gamma[m]
        if at_capacity and bracket < 0.0:
            bracket = 0.0
        out[m] = coef[m] * c[m] * bracket


@njit(cache=True)
def rkf45_biphasic(alpha, gamma, alpha_d, change_abs, K, c0, t0, times,
                   rtol, atol, h0, hmin, hmax, safety):
    """Integrate from ``t0`` and report the state at each of ``times``.

    Returns ``(cover, status, t_at_status)``.
    """
    M = c0.shape[0]
    n_out = times.shape[0]
    out = np.empty((n_out, M))
    t_end = times[n_out - 1]

    n_stop = n_out
    for m in range(M):
        if change_abs[m] > t0 and change_abs[m] < t_end:
            n_stop += 1
    stops = np.empty(n_stop)
    stops[:n_out] = times
    j = n_out
    for m in range(M):
        if change_abs[m] > t0 and change_abs[m] < t_end:
            stops[j] = change_abs[m]
            j += 1
    stops = np.unique(stops)

    y = c0.copy()
    t = t0
    h = min(max(h0, hmin), hmax)
    k = 0
    while k < n_out and times[k] <= t0:
        out[k, :] = y
        k += 1

    coef = np.empty(M)
    k1 = np.empty(M); k2 = np.empty(M); k3 = np.empty(M)
    k4 = np.empty(M); k5 = np.empty(M); k6 = np.empty(M)
    tmp = np.empty(M)
    y4 = np.empty(M)

    for s in stops:
        if s <= t:
            continue
        # phase is constant on (t, s] since change points are stops
        for m in range(M):
            scale = alpha_d[m] if s <= change_abs[m] else 1.0
            coef[m] = scale * alpha[m] / gamma[m]
        while t < s:
            landing = h >= s - t
            hs = s - t if landing else h

            _rates(y, coef, gamma, K, k1)
            for m in range(M):
                tmp[m] = y[m] + hs * A21 * k1[m]
            _rates(tmp, coef, gamma, K, k2)
            for m in range(M):
                tmp[m] = y[m] + hs * (A31 * k1[m] + A32 * k2[m])
            _rates(tmp, coef, gamma, K, k3)
            for m in range(M):
                tmp[m] = y[m] + hs * (A41 * k1[m] + A42 * k2[m] + A43 * k3[m])
            _rates(tmp, coef, gamma, K, k4)
            for m in range(M):
                tmp[m] = y[m] + hs * (A51 * k1[m] + A52 * k2[m] + A53 * k3[m] + A54 * k4[m])
            _rates(tmp, coef, gamma, K, k5)
            for m in range(M):
                tmp[m] = y[m] + hs * (A61 * k1[m] + A62 * k2[m] + A63 * k3[m]
                                      + A64 * k4[m] + A65 * k5[m])
            _rates(tmp, coef, gamma, K, k6)

            err = 0.0
            finite = True
            for m in range(M):
                y4[m] = y[m] + hs * (B41 * k1[m] + B43 * k3[m] + B44 * k4[m] + B45 * k5[m])
                e = hs * (E1 * k1[m] + E3 * k3[m] + E4 * k4[m] + E5 * k5[m] + E6 * k6[m])
                if not (np.isfinite(y4[m]) and np.isfinite(e)):
                    finite = False
                sc = atol + rtol * max(abs(y[m]), abs(y4[m]))
                r = abs(e) / sc
                if r > err:
                    err = r
            if not finite:
                return out, NON_FINITE, t

            if err <= 1.0:
                t = s if landing else t + hs
                for m in range(M):
                    y[m] = y4[m]
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, safety * err ** -0.2))
                # a truncated landing step says nothing about the free step size
                h = min(hmax, max(h, hs * fac) if landing else hs * fac)
            else:
                h = hs * max(0.2, safety * err ** -0.2)
                if h < hmin:
                    return out, STEP_UNDERFLOW, t
        while k < n_out and times[k] <= t:
            out[k, :] = y
            k += 1
    return out, OK, t
