"""Shared builders for the test suite."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from hems_lp.model import EssParams, ExogenousProfile, Tariff
from hems_lp.problem import build_lp, extract_trajectory
from hems_lp.solver import solve

HOME = EssParams.default_home()


def random_profile(rng: np.random.Generator, n: int, solar_max: float = 4.5,
                   load_max: float = 3.0) -> ExogenousProfile:
    sol = rng.uniform(0.0, solar_max, n) * (rng.random(n) < 0.8)
    load = rng.uniform(0.0, load_max, n)
    return ExogenousProfile(sol, load)


def random_params(rng: np.random.Generator) -> EssParams:
    return replace(HOME, e0=float(rng.uniform(HOME.e_min, HOME.e_max)))


def tariff_for_row(rng: np.random.Generator, n: int, row: int) -> Tariff:
    """A random tariff in the given row of the five-row regime table."""
    prices = rng.uniform(0.01, 0.2, n)
    if row in (2, 3):
        prices[rng.random(n) < 0.4] = 0.0
        prices[rng.integers(n)] = 0.0
    if row in (1, 3, 5):
        alpha = beta = 0.0
    else:
        alpha, beta = rng.uniform(0.0, 0.01, 2)
        if alpha + beta == 0.0:
            alpha = 0.001
    return Tariff(prices, alpha=float(alpha), beta=float(beta), net_metering=row <= 3)


def solve_p1(params, prof, tariff, **kw):
    lp, index = build_lp(params, prof, tariff, **kw)
    out = solve(lp)
    assert out.optimal, out.status
    return lp, index, out, extract_trajectory(out.x)


def simultaneous_feasible(rng: np.random.Generator, params, prof, tariff):
    """A feasible trajectory that charges and discharges at once at several steps.

    Either the LP optimum of a cost that rewards battery throughput, or the true
    optimum with SOC-neutral charge/discharge pairs added on top.
    """
    from hems_lp.model import DecisionTrajectory

    n = prof.n
    lp, _ = build_lp(params, prof, tariff)
    if rng.random() < 0.5:
        c = lp.c.copy()
        c[n:3 * n] = -rng.uniform(0.01, 1.0, 2 * n)
        out = solve(replace(lp, c=c))
        assert out.optimal
        return extract_trajectory(out.x)
    x = extract_trajectory(solve(lp).x)
    ch, dis, grid = x.p_ch.copy(), x.p_dis.copy(), x.p_grid.copy()
    ratio = params.efficiency_ratio
    for t in rng.choice(n, size=max(1, n // 3), replace=False):
        room = min(params.p_ch_max - ch[t], (params.p_dis_max - dis[t]) * ratio)
        d = rng.uniform(0.2, 1.0) * room
        ch[t] += d
        dis[t] += d / ratio
        grid[t] += d - d / ratio
    return DecisionTrajectory(grid, ch, dis, x.p_c)
