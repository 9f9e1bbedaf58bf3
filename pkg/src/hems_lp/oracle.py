"""Brute-force reference solver for horizons of at most three steps.

Charge, discharge and curtailment are gridded per step; grid draw follows
from the power balance. With ``enforce_complementarity`` only grid points
with ``p_ch * p_dis == 0`` are allowed, which turns the problem into the
nonconvex storage model. The search is exact over the grid. Per-step
candidates are reduced to their cheapest curtailment, and the last step is
resolved with a range-minimum table over candidates sorted by SOC change,
which gives the same minimum as scanning every combination.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DecisionTrajectory, EssParams, ExogenousProfile, Tariff, cost

MAX_HORIZON = 3
_SOC_TOL = 1e-12
_CHUNK = 2_000_000


class OracleInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("grid step must be positive")

    @classmethod
    def default_for(cls, n: int) -> "GridSpec":
        return cls({1: 0.01, 2: 0.05, 3: 0.1}.get(n, 0.1))

    def error_bound(self, tariff: Tariff) -> float:
        return float(np.sum(tariff.c_e + tariff.alpha + tariff.beta)) * self.step


@dataclass(frozen=True)
class OracleResult:
    trajectory: DecisionTrajectory
    objective: float
    error_bound: float
    grid_points: int


def _axis(upper: float, step: float) -> np.ndarray:
    pts = np.arange(0.0, upper + 1e-12, step)
    pts = pts[pts <= upper]
    if upper - pts[-1] > 1e-12:
        pts = np.append(pts, upper)
    return pts


@dataclass
class _StepOptions:
    ch: np.ndarray
    dis: np.ndarray
    curt: np.ndarray
    grid: np.ndarray
    cost: np.ndarray
    d_soc: np.ndarray
    n_raw: int


def _step_options(t: int, params: EssParams, prof: ExogenousProfile, tariff: Tariff,
                  step: float, complementarity: bool) -> _StepOptions:
    ch_axis = _axis(params.p_ch_max, step)
    dis_axis = _axis(params.p_dis_max, step)
    ch, dis = (a.ravel() for a in np.meshgrid(ch_axis, dis_axis, indexing="ij"))
    if complementarity:
        keep = (ch == 0) | (dis == 0)
        ch, dis = ch[keep], dis[keep]

    sol, load = prof.p_sol[t], prof.p_load[t]
    curt_axis = _axis(sol, step) if sol > 0 else np.zeros(1)
    # grid point plus the curtailment that zeroes grid draw, where it lies in range
    balancing = np.clip(sol - load + dis - ch, 0.0, sol)
    curt = np.concatenate([np.broadcast_to(curt_axis, (len(ch), len(curt_axis))),
                           balancing[:, None]], axis=1)
    grid = load - sol + curt - dis[:, None] + ch[:, None]
    step_cost = tariff.c_e[t] * grid + tariff.alpha * ch[:, None] + tariff.beta * dis[:, None]
    if not tariff.net_metering:
        grid = np.where(grid < -1e-12, np.nan, np.maximum(grid, 0.0))
        step_cost = np.where(np.isnan(grid), np.inf, step_cost)
    best = np.argmin(step_cost, axis=1)
    rows = np.arange(len(ch))
    c = step_cost[rows, best]
    ok = np.isfinite(c)
    d_soc = params.dt * (params.eta_c * ch - params.eta_d * dis)
    return _StepOptions(ch[ok], dis[ok], curt[rows, best][ok], grid[rows, best][ok], c[ok],
                        d_soc[ok], n_raw=len(ch) * curt.shape[1])


class _RangeMin:
    """Sparse table over candidates sorted by SOC change."""

    def __init__(self, d_soc: np.ndarray, values: np.ndarray):
        order = np.argsort(d_soc, kind="stable")
        self.order = order
        self.keys = d_soc[order]
        self.levels = [values[order]]
        self.argidx = [np.arange(len(order))]
        width = 1
        while 2 * width <= len(order):
            prev, prev_i = self.levels[-1], self.argidx[-1]
            left, right = prev[:-width], prev[width:]
            take_right = right < left
            self.levels.append(np.where(take_right, right, left))
            self.argidx.append(np.where(take_right, prev_i[width:], prev_i[:-width]))
            width *= 2

    def query(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Min value and original index with key in [lo, hi]; inf / -1 if empty."""
        left = np.searchsorted(self.keys, lo, side="left")
        right = np.searchsorted(self.keys, hi, side="right") - 1
        empty = right < left
        span = np.where(empty, 1, right - left + 1)
        k = np.floor(np.log2(span)).astype(int)
        left_c = np.where(empty, 0, left)
        right_c = np.where(empty, 0, right - (1 << k) + 1)
        val = np.full(len(lo), np.inf)
        idx = np.full(len(lo), -1)
        for level in np.unique(k[~empty]):
            sel = (~empty) & (k == level)
            a = self.levels[level][left_c[sel]]
            b = self.levels[level][right_c[sel]]
            ia = self.argidx[level][left_c[sel]]
            ib = self.argidx[level][right_c[sel]]
            use_b = b < a
            val[sel] = np.where(use_b, b, a)
            idx[sel] = self.order[np.where(use_b, ib, ia)]
        return val, idx


def _best_tail(t: int, e: np.ndarray, options: list[_StepOptions], tables: list[_RangeMin],
               params: EssParams) -> np.ndarray:
    """Cheapest cost of steps t..N-1 for each starting SOC in ``e``."""
    lo = params.e_min - _SOC_TOL - e
    hi = params.e_max + _SOC_TOL - e
    if t == len(options) - 1:
        return tables[t].query(lo, hi)[0]
    opt = options[t]
    out = np.full(len(e), np.inf)
    rows_per_chunk = max(1, _CHUNK // max(1, len(opt.cost)))
    for start in range(0, len(e), rows_per_chunk):
        e_chunk = e[start:start + rows_per_chunk]
        e_next = e_chunk[:, None] + opt.d_soc[None, :]
        ok = (e_next >= params.e_min - _SOC_TOL) & (e_next <= params.e_max + _SOC_TOL)
        total = np.full(e_next.shape, np.inf)
        if ok.any():
            total[ok] = np.broadcast_to(opt.cost, e_next.shape)[ok] + _best_tail(
                t + 1, e_next[ok], options, tables, params)
        out[start:start + len(e_chunk)] = total.min(axis=1)
    return out


def enumerate_grid(params: EssParams, prof: ExogenousProfile, tariff: Tariff,
                   grid: GridSpec | None = None,
                   enforce_complementarity: bool = False) -> OracleResult:
    n = prof.n
    if not 1 <= n <= MAX_HORIZON:
        raise ValueError(f"oracle horizon must be 1..{MAX_HORIZON}, got {n}")
    if tariff.n != n:
        raise ValueError("tariff and profile lengths differ")
    grid = grid or GridSpec.default_for(n)

    options = [_step_options(t, params, prof, tariff, grid.step, enforce_complementarity)
               for t in range(n)]
    tables = [_RangeMin(o.d_soc, o.cost) for o in options]

    # walk forward choosing the option with the best cost-to-go
    e = params.e0
    chosen = []
    for t in range(n):
        opt = options[t]
        e_next = e + opt.d_soc
        ok = (e_next >= params.e_min - _SOC_TOL) & (e_next <= params.e_max + _SOC_TOL)
        total = np.full(len(opt.cost), np.inf)
        if t == n - 1:
            total[ok] = opt.cost[ok]
        elif ok.any():
            total[ok] = opt.cost[ok] + _best_tail(t + 1, e_next[ok], options, tables, params)
        k = int(np.argmin(total)) if len(total) else -1
        if k < 0 or not np.isfinite(total[k]):
            raise OracleInfeasible(f"no feasible grid point (step {grid.step})")
        chosen.append(k)
        e = e_next[k]

    traj = DecisionTrajectory(
        p_grid=[options[t].grid[k] for t, k in enumerate(chosen)],
        p_ch=[options[t].ch[k] for t, k in enumerate(chosen)],
        p_dis=[options[t].dis[k] for t, k in enumerate(chosen)],
        p_c=[options[t].curt[k] for t, k in enumerate(chosen)],
    )
    return OracleResult(traj, cost(traj, tariff), grid.error_bound(tariff),
                        int(np.prod([o.n_raw for o in options], dtype=float)))
