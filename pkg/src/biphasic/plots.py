"""Chart builders for the pipeline's artifacts."""
from __future__ import annotations

import numpy as np

from .growth import GroupParams, GrowthParams, InitialState, solve_analytic
from .svg import Chart

GROWTH_SHAPES = (1e-6, 1.0, 2.0)


def richards_curves(K: float = 90.0, alpha: float = 0.5, c0: float = 5.0,
                    gammas=GROWTH_SHAPES, t_max: float = 25.0, n: int = 201):
    """Single-phase growth curves for several shape values; returns (times, {gamma: cover})."""
    times = np.linspace(0.0, t_max, n)
    init = InitialState(0.0, [c0])
    curves = {}
    for g in gammas:
        params = GrowthParams((GroupParams(alpha, g, 0.0, 1.0),), K)
        curves[g] = solve_analytic(params, init, times).cover[:, 0]
    return times, curves


def richards_chart(times, curves, K: float) -> Chart:
    chart = Chart(title=f"Richards growth, K = {K:g}%", xlabel="years since disturbance",
                  ylabel="cover (%)", ylim=(0.0, 100.0))
    for g, cover in curves.items():
        chart.line(times, cover, label=f"gamma = {g:g}")
    return chart


def bands_chart(times, bands: dict, obs=None, title: str = "") -> Chart:
    """``bands`` maps level -> (lo, hi); widest band drawn first."""
    chart = Chart(title=title, xlabel="year", ylabel="cover (%)")
    for level in sorted(bands, reverse=True):
        lo, hi = bands[level]
        opacity = 0.12 + 0.5 * (1.0 - level / 100.0)
        chart.band(times, lo, hi, label=f"{level}% CrI", color="#1f77b4", opacity=round(opacity, 3))
    if obs is not None:
        chart.points(times, obs, label="observed", color="black")
    return chart


def coverage_chart(beta, p_hat, s_hat) -> Chart:
    beta = np.asarray(beta, float)
    p = np.asarray(p_hat, float)
    s = np.asarray(s_hat, float)
    chart = Chart(title="Posterior predictive coverage", xlabel="credible level (%)",
                  ylabel="fraction of observations inside", xlim=(0.0, 100.0), ylim=(0.0, 1.0))
    chart.band(beta, np.clip(p - 3 * s, 0, 1), np.clip(p + 3 * s, 0, 1), label="3 s.e.", color="#1f77b4")
    chart.line([0, 100], [0, 1], label="ideal", color="#7f7f7f", width=1.0)
    chart.line(beta, p, label="observed", color="#1f77b4")
    return chart


def marginal_chart(values, name: str) -> Chart:
    chart = Chart(title=f"marginal posterior of {name}", xlabel=name, ylabel="density",
                  width=420, height=300)
    chart.histogram(values, bins=40)
    return chart


def trace_chart(chains, name: str, max_points: int = 2000) -> Chart:
    chart = Chart(title=f"trace of {name}", xlabel="kept draw", ylabel=name, width=640, height=260)
    for c, x in enumerate(chains):
        x = np.asarray(x, float)
        step = max(1, x.size // max_points)
        idx = np.arange(0, x.size, step)
        chart.line(idx, x[idx], label=f"chain {c + 1}", width=0.8)
    return chart
