"""Remove simultaneous charge/discharge from a feasible trajectory.

Each transformation keeps the trajectory feasible, never raises the cost, and
strictly lowers total charging. ``repair_until_clean`` works backwards from
the last simultaneous step:

* local: shrink charge and discharge at that step in the SOC-neutral ratio
  ``eta_c * dch = eta_d * ddis`` and cover the lost net load by drawing less
  from the grid or curtailing more. SOC is unchanged everywhere.
* terminal: with no grid draw, full curtailment and no later charging, set
  charge to zero and discharge to the net difference.
* forwarding: with a later charging step ``t_star``, cut both powers by ``p``
  at the simultaneous step and take the extra stored energy out of the
  charging at ``t_star``, so SOC after ``t_star`` is unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (DEFAULT_TOL, DecisionTrajectory, EssParams, ExogenousProfile, Tariff,
                    check_feasible, cost, simultaneity_index, total_charging)

_LOGGER = logging.getLogger(__name__)


class RepairError(RuntimeError):
    """A repair precondition or invariant failed."""


class InfeasibleTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class RepairPlan:
    step: int
    case: str
    delta: float
    p: float = 0.0
    a: float = 0.0
    b: float = 0.0
    t_star: int | None = None


@dataclass
class RepairResult:
    trajectory: DecisionTrajectory
    rounds: int
    cost_reduction: float
    charging_history: list[float] = field(default_factory=list)
    actions: list[tuple[int, str]] = field(default_factory=list)


def detect(x: DecisionTrajectory, tol: float = DEFAULT_TOL) -> int | None:
    """Last step whose min(p_ch, p_dis) strictly exceeds ``tol``."""
    hits = np.flatnonzero(simultaneity_index(x) > tol)
    return int(hits[-1]) if len(hits) else None


def _set(arr: np.ndarray, t: int, value: float) -> np.ndarray:
    out = arr.copy()
    out[t] = value
    return out


def _require_simultaneous(x: DecisionTrajectory, tau: int, tol: float):
    if not (x.p_ch[tau] > tol and x.p_dis[tau] > tol):
        raise RepairError(f"step {tau} is not simultaneous")


def next_charging_step(x: DecisionTrajectory, tau: int, tol: float = DEFAULT_TOL) -> int | None:
    later = np.flatnonzero(x.p_ch[tau + 1:] > tol)
    return int(tau + 1 + later[0]) if len(later) else None


def repair_local(x: DecisionTrajectory, tau: int, params: EssParams, prof: ExogenousProfile,
                 tariff: Tariff, tol: float = DEFAULT_TOL) -> DecisionTrajectory:
    """SOC-neutral reduction at ``tau``, limited by how much supply can be shed there.

    Returns ``x`` unchanged when nothing can be shed (no grid draw to cut and
    all solar already curtailed).
    """
    _require_simultaneous(x, tau, tol)
    ch, dis = x.p_ch[tau], x.p_dis[tau]
    if params.eta_c * ch >= params.eta_d * dis:
        d_dis, d_ch = dis, params.efficiency_ratio * dis
    else:
        d_ch, d_dis = ch, ch / params.efficiency_ratio
    shed = d_ch - d_dis

    grid_room = np.inf if tariff.net_metering else max(x.p_grid[tau], 0.0)
    curt_room = max(prof.p_sol[tau] - x.p_c[tau], 0.0)
    room = grid_room + curt_room
    if room <= 0.0:
        return x
    if room < shed:
        scale = room / shed
        d_ch, d_dis, shed = scale * d_ch, scale * d_dis, room
    a = min(shed, grid_room)
    b = shed - a

    new_ch = 0.0 if d_ch == ch else ch - d_ch
    new_dis = 0.0 if d_dis == dis else dis - d_dis
    return x.replace(
        p_grid=_set(x.p_grid, tau, x.p_grid[tau] - a),
        p_ch=_set(x.p_ch, tau, new_ch),
        p_dis=_set(x.p_dis, tau, new_dis),
        p_c=_set(x.p_c, tau, x.p_c[tau] + b),
    )


def repair_terminal(x: DecisionTrajectory, tau: int, params: EssParams, prof: ExogenousProfile,
                    tol: float = DEFAULT_TOL) -> DecisionTrajectory:
    _require_simultaneous(x, tau, tol)
    if abs(x.p_grid[tau]) > tol:
        raise RepairError(f"terminal repair needs zero grid draw at {tau}, got {x.p_grid[tau]}")
    if abs(x.p_c[tau] - prof.p_sol[tau]) > tol:
        raise RepairError(f"terminal repair needs full curtailment at {tau}")
    if next_charging_step(x, tau, tol) is not None:
        raise RepairError(f"terminal repair needs no charging after {tau}")

    delta = x.p_dis[tau] - x.p_ch[tau]
    if delta < -tol:
        raise RepairError(f"discharge below charge at {tau} (delta={delta})")
    # grid and curtailment are kept as-is so the balance stays exact
    return x.replace(
        p_ch=_set(x.p_ch, tau, max(-delta, 0.0)),
        p_dis=_set(x.p_dis, tau, max(delta, 0.0)),
    )


def plan_forwarding(x: DecisionTrajectory, tau: int, t_star: int, params: EssParams,
                    prof: ExogenousProfile, net_metering: bool = False,
                    tol: float = DEFAULT_TOL) -> RepairPlan:
    _require_simultaneous(x, tau, tol)
    if t_star <= tau or x.p_ch[t_star] <= tol:
        raise RepairError(f"t_star={t_star} is not a charging step after {tau}")
    if next_charging_step(x, tau, tol) != t_star:
        raise RepairError(f"t_star={t_star} is not the first charging step after {tau}")
    if x.p_dis[t_star] > tol:
        raise RepairError(f"step {t_star} discharges while charging; {tau} is not the last "
                          "simultaneous step")
    delta = x.p_dis[tau] - x.p_ch[tau]
    if delta < -tol:
        raise RepairError(f"forwarding needs discharge >= charge at {tau} (delta={delta})")

    ratio = params.efficiency_ratio
    p = min(params.eta_c * x.p_ch[t_star] / (params.eta_d - params.eta_c), x.p_ch[tau])
    # zeroing a sub-tolerance discharge at t_star is absorbed by the same split
    amount = (ratio - 1.0) * p - x.p_dis[t_star]
    if amount >= 0:
        cap = np.inf if net_metering else max(x.p_grid[t_star], 0.0)
        a = min(amount, cap)
        b = amount - a
    else:
        a, b = amount, 0.0
    room = prof.p_sol[t_star] - x.p_c[t_star]
    if b > room + 1e-12 * max(1.0, prof.p_sol[t_star]):
        raise RepairError(f"no (a, b) split at {t_star}: need b={b}, curtailment room={room}")
    return RepairPlan(step=tau, case="forwarding", delta=delta, p=p, a=a, b=min(b, max(room, 0.0)),
                      t_star=t_star)


def apply_forwarding(x: DecisionTrajectory, plan: RepairPlan,
                     params: EssParams) -> DecisionTrajectory:
    tau, ts, p = plan.step, plan.t_star, plan.p
    ratio = params.efficiency_ratio
    p_ch = x.p_ch.copy()
    p_dis = x.p_dis.copy()
    p_ch[tau] -= p
    p_dis[tau] -= p
    new_ts = x.p_ch[ts] - (ratio - 1.0) * p
    # when p is capped by the t_star charge this is zero up to round-off
    p_ch[ts] = 0.0 if abs(new_ts) <= 1e-12 * max(1.0, x.p_ch[ts]) else new_ts
    p_dis[ts] = 0.0
    return x.replace(
        p_grid=_set(x.p_grid, ts, x.p_grid[ts] - plan.a),
        p_ch=p_ch,
        p_dis=p_dis,
        p_c=_set(x.p_c, ts, x.p_c[ts] + plan.b),
    )


def repair_forwarding(x: DecisionTrajectory, tau: int, t_star: int, params: EssParams,
                      prof: ExogenousProfile, net_metering: bool = False,
                      tol: float = DEFAULT_TOL) -> DecisionTrajectory:
    plan = plan_forwarding(x, tau, t_star, params, prof, net_metering, tol)
    return apply_forwarding(x, plan, params)


def _clear_step(x, tau, params, prof, tariff, tol, actions, round_no):
    n = x.n
    for _ in range(n + 2):
        if min(x.p_ch[tau], x.p_dis[tau]) <= tol:
            return x
        y = repair_local(x, tau, params, prof, tariff, tol)
        if y is not x:
            actions.append((round_no, "local"))
            x = y
            if min(x.p_ch[tau], x.p_dis[tau]) <= tol:
                return x
        t_star = next_charging_step(x, tau, tol)
        if t_star is None:
            actions.append((round_no, "terminal"))
            x = repair_terminal(x, tau, params, prof, tol)
        else:
            actions.append((round_no, "forwarding"))
            x = repair_forwarding(x, tau, t_star, params, prof, tariff.net_metering, tol)
    raise RepairError(f"step {tau} still simultaneous after {n + 2} transformations")


def repair_until_clean(x: DecisionTrajectory, params: EssParams, prof: ExogenousProfile,
                       tariff: Tariff, tol: float = DEFAULT_TOL,
                       max_rounds: int | None = None) -> RepairResult:
    report = check_feasible(x, params, prof, tariff, tol)
    if not report.feasible:
        raise InfeasibleTrajectory(f"input violates {sorted(report.kinds())} "
                                   f"(max {report.max_violation:.3g})")
    max_rounds = x.n if max_rounds is None else max_rounds
    start_cost = cost(x, tariff)
    history = [total_charging(x)]
    actions: list[tuple[int, str]] = []
    rounds = 0
    while (tau := detect(x, tol)) is not None:
        rounds += 1
        if rounds > max_rounds:
            raise RepairError(f"exceeded {max_rounds} repair rounds")
        x = _clear_step(x, tau, params, prof, tariff, tol, actions, rounds)
        history.append(total_charging(x))
        if history[-1] >= history[-2]:
            raise RepairError(f"round {rounds} did not reduce total charging")
        _LOGGER.debug("round %d cleared step %d, total charging %.6g", rounds, tau, history[-1])

    report = check_feasible(x, params, prof, tariff, tol)
    if not report.feasible:
        raise RepairError(f"repair produced an infeasible trajectory: {report.violations[:3]}")
    return RepairResult(x, rounds, start_cost - cost(x, tariff), history, actions)
