"""KKT certification for the dispatch LP.

Multipliers are looked up by constraint name through :class:`ConstraintIndex`
and the four stationarity families are evaluated from their closed forms
(grid, charge, discharge, curtailment), not by multiplying against the LP
matrix, so a change in row emission order cannot pass silently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import (DecisionTrajectory, EssParams, ExogenousProfile, Tariff,
                    balance_residual, soc_trajectory, simultaneity_index)
from .problem import BALANCE, INEQ_KINDS, ConstraintIndex, LpStandardForm, build_lp, extract_trajectory
from .solver import SolveOutcome, solve

GROUPS = (
    "primal_feasibility",
    "dual_feasibility",
    "complementary_slackness",
    "stationarity_grid",
    "stationarity_ch",
    "stationarity_dis",
    "stationarity_sol",
)


@dataclass(frozen=True)
class Multipliers:
    """Named Lagrange multipliers, one array of length N per constraint family.

    ``grid_lo`` is ``None`` when export is allowed (that constraint is absent).
    """

    ch_lo: np.ndarray
    ch_hi: np.ndarray
    dis_lo: np.ndarray
    dis_hi: np.ndarray
    soc_lo: np.ndarray
    soc_hi: np.ndarray
    sol_lo: np.ndarray
    sol_hi: np.ndarray
    mu: np.ndarray
    grid_lo: np.ndarray | None = None

    @classmethod
    def zeros(cls, n: int, net_metering: bool = False) -> "Multipliers":
        z = np.zeros(n)
        return cls(z, z, z, z, z, z, z, z, z, None if net_metering else z)

    @classmethod
    def from_outcome(cls, outcome: SolveOutcome, index: ConstraintIndex) -> "Multipliers":
        if not outcome.optimal:
            raise ValueError(f"outcome is {outcome.status.value}, multipliers unavailable")
        if len(outcome.lam) == 0 and len(outcome.mu) == 0:
            raise ValueError("outcome carries no multipliers")
        named = {k: outcome.lam[index.rows_of(k)] for k in index.ineq_kinds}
        named["mu"] = outcome.mu[index.rows_of(BALANCE)]
        return cls(**named)

    def replace(self, **kw) -> "Multipliers":
        values = dict(self.__dict__)
        values.update(kw)
        return Multipliers(**values)

    def inequality(self) -> dict[str, np.ndarray]:
        out = {k: getattr(self, k) for k in INEQ_KINDS}
        if self.grid_lo is None:
            del out["grid_lo"]
        return out


@dataclass(frozen=True)
class Solution:
    """A primal trajectory paired with its multipliers and objective value."""

    trajectory: DecisionTrajectory
    multipliers: Multipliers
    objective: float

    @classmethod
    def from_outcome(cls, outcome: SolveOutcome, index: ConstraintIndex) -> "Solution":
        return cls(extract_trajectory(outcome.x), Multipliers.from_outcome(outcome, index),
                   outcome.objective)


def constraint_values(x: DecisionTrajectory, params: EssParams,
                      prof: ExogenousProfile) -> dict[str, np.ndarray]:
    """Left-hand sides f(x) of every ``f(x) <= 0`` constraint, plus the balance h(x)."""
    e = soc_trajectory(x, params).e[1:]
    return {
        "grid_lo": -x.p_grid,
        "ch_lo": -x.p_ch,
        "ch_hi": x.p_ch - params.p_ch_max,
        "dis_lo": -x.p_dis,
        "dis_hi": x.p_dis - params.p_dis_max,
        "soc_lo": params.e_min - e,
        "soc_hi": e - params.e_max,
        "sol_lo": -x.p_c,
        "sol_hi": x.p_c - prof.p_sol,
        BALANCE: balance_residual(x, prof),
    }


def soc_multiplier_tail(mult: Multipliers) -> np.ndarray:
    """sum_{n >= t} (upper SOC multiplier - lower SOC multiplier), per step t."""
    diff = mult.soc_hi - mult.soc_lo
    return np.cumsum(diff[::-1])[::-1]


def stationarity(mult: Multipliers, params: EssParams, tariff: Tariff,
                 cost_weight: float = 1.0) -> dict[str, np.ndarray]:
    """Per-step gradient of the Lagrangian, split by variable family."""
    tail = soc_multiplier_tail(mult)
    dt = params.dt
    c_e = cost_weight * tariff.c_e
    alpha = cost_weight * tariff.alpha
    beta = cost_weight * tariff.beta
    grid = c_e - mult.mu if mult.grid_lo is None else c_e - mult.grid_lo - mult.mu
    return {
        "grid": grid,
        "ch": alpha - mult.ch_lo + mult.ch_hi + params.eta_c * dt * tail + mult.mu,
        "dis": beta - mult.dis_lo + mult.dis_hi + params.eta_d * dt * (-tail) - mult.mu,
        "sol": -mult.sol_lo + mult.sol_hi + mult.mu,
    }


@dataclass
class KktReport:
    residuals: dict[str, float]
    stationarity: dict[str, np.ndarray]
    tol: float
    scale: float
    net_metering: bool
    worst: dict[str, tuple[str, int]] = field(default_factory=dict)

    @property
    def threshold(self) -> float:
        return self.tol * self.scale

    @property
    def passed(self) -> bool:
        return all(r <= self.threshold for r in self.residuals.values())

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    def failed_groups(self) -> list[str]:
        return [g for g in GROUPS if self.residuals[g] > self.threshold]

    def to_records(self) -> list[dict]:
        return [
            {
                "group": g,
                "residual": self.residuals[g],
                "threshold": self.threshold,
                "passed": self.residuals[g] <= self.threshold,
                "worst": list(self.worst[g]) if g in self.worst else None,
            }
            for g in GROUPS
        ]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tol,
            "scale": self.scale,
            "net_metering": self.net_metering,
            "groups": self.to_records(),
            "stationarity_by_step": {k: v.tolist() for k, v in self.stationarity.items()},
        }


def data_scale(params: EssParams, prof: ExogenousProfile, tariff: Tariff) -> float:
    values = [params.e_min, params.e_max, params.e0, params.p_ch_max, params.p_dis_max,
              tariff.alpha, tariff.beta]
    values += [float(np.max(a, initial=0.0)) for a in (tariff.c_e, prof.p_sol, prof.p_load)]
    return 1.0 + max(abs(v) for v in values)


def _argmax_key(arrays: dict[str, np.ndarray]) -> tuple[float, tuple[str, int]]:
    best, where = 0.0, ("", -1)
    for kind, arr in arrays.items():
        if len(arr) and float(np.max(arr)) > best:
            t = int(np.argmax(arr))
            best, where = float(arr[t]), (kind, t)
    return best, where


def check_solution(sol: Solution, params: EssParams, prof: ExogenousProfile, tariff: Tariff,
                   tol: float = 1e-8, cost_weight: float = 1.0) -> KktReport:
    x, mult = sol.trajectory, sol.multipliers
    if (mult.grid_lo is None) != tariff.net_metering:
        raise ValueError("grid_lo multipliers must be present exactly when export is forbidden")
    if x.n != prof.n or x.n != tariff.n or len(mult.mu) != x.n:
        raise ValueError("trajectory, profile, tariff and multipliers disagree on N")

    f = constraint_values(x, params, prof)
    ineq = mult.inequality()
    residuals, worst = {}, {}

    excess = {k: np.maximum(f[k], 0.0) for k in ineq}
    excess[BALANCE] = np.abs(f[BALANCE])
    residuals["primal_feasibility"], worst["primal_feasibility"] = _argmax_key(excess)

    neg = {k: np.maximum(-lam, 0.0) for k, lam in ineq.items()}
    residuals["dual_feasibility"], worst["dual_feasibility"] = _argmax_key(neg)

    prod = {k: np.abs(lam * f[k]) for k, lam in ineq.items()}
    residuals["complementary_slackness"], worst["complementary_slackness"] = _argmax_key(prod)

    stat = stationarity(mult, params, tariff, cost_weight)
    for fam, r in stat.items():
        key = f"stationarity_{fam}"
        residuals[key] = float(np.max(np.abs(r), initial=0.0))
        worst[key] = (fam, int(np.argmax(np.abs(r))) if len(r) else -1)

    return KktReport(residuals=residuals, stationarity=stat, tol=tol,
                     scale=data_scale(params, prof, tariff), net_metering=tariff.net_metering,
                     worst=worst)


def profile_from_lp(lp: LpStandardForm, index: ConstraintIndex) -> ExogenousProfile:
    """Recover (p_sol, p_load) from the named curtailment and balance rows."""
    p_sol = lp.b_ub[index.rows_of("sol_hi")]
    p_load = p_sol - lp.b_eq[index.rows_of(BALANCE)]
    # round-off can leave -1e-17 where the load was exactly zero
    return ExogenousProfile(p_sol, np.where(np.abs(p_load) < 1e-12, 0.0, p_load))


def check(lp: LpStandardForm, index: ConstraintIndex, outcome: SolveOutcome, params: EssParams,
          tariff: Tariff, tol: float = 1e-8, prof: ExogenousProfile | None = None,
          energy_weighted_cost: bool = False) -> KktReport:
    """Certify a solver outcome against the full KKT system."""
    if not outcome.optimal:
        raise ValueError(f"cannot certify a {outcome.status.value} outcome")
    prof = prof if prof is not None else profile_from_lp(lp, index)
    weight = params.dt if energy_weighted_cost else 1.0
    return check_solution(Solution.from_outcome(outcome, index), params, prof, tariff, tol, weight)


def recover_multipliers(x: DecisionTrajectory, params: EssParams, prof: ExogenousProfile,
                        tariff: Tariff, active_tol: float = 1e-7,
                        energy_weighted_cost: bool = False) -> tuple[Multipliers, float]:
    """Best multipliers for a stored primal point.

    Solves an auxiliary LP: multipliers of rows slack by more than ``active_tol``
    are fixed at zero, the rest are nonnegative (balance multipliers free), and
    the l1 norm of the stationarity residual is minimized. Returns the multipliers
    and the attained residual; zero residual means the point is KKT.
    """
    lp, index = build_lp(params, prof, tariff, energy_weighted_cost)
    z = x.pack()
    slack = lp.b_ub - lp.A_ub @ z
    active = np.flatnonzero(slack <= active_tol)
    n_act, n_eq, nv = len(active), lp.n_eq, lp.n_vars

    # variables: [lam_active (>=0), mu (free), r_plus (>=0), r_minus (>=0)]
    # c + A_act' lam + A_eq' mu - r_plus + r_minus = 0
    A_eq = np.hstack([lp.A_ub[active].T, lp.A_eq.T, -np.eye(nv), np.eye(nv)])
    b_eq = -lp.c
    cost = np.concatenate([np.zeros(n_act + n_eq), np.ones(2 * nv)])
    lb = np.concatenate([np.zeros(n_act), np.full(n_eq, -np.inf), np.zeros(2 * nv)])
    ub = np.full(len(cost), np.inf)
    aux = LpStandardForm.from_arrays(cost, A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub)
    out = solve(aux)
    if not out.optimal:
        raise RuntimeError(f"multiplier recovery LP ended {out.status.value}")

    lam = np.zeros(lp.n_ineq)
    lam[active] = out.x[:n_act]
    mu = out.x[n_act:n_act + n_eq]
    fake = SolveOutcome(out.status, z, lp.objective(z), out.iterations, lam=lam, mu=mu)
    return Multipliers.from_outcome(fake, index), float(out.objective)


# --- suboptimality certificate ------------------------------------------------


class NoDualCertificate(ValueError):
    """No multiplier-based contradiction exists at this step.

    Raised when grid draw is zero and all solar is curtailed without export:
    there the balance multiplier can be negative, and only the primal
    constructions in :mod:`hems_lp.repair` show suboptimality.
    """


@dataclass(frozen=True)
class Certificate:
    """Lower bound on the combined charge/discharge stationarity expression.

    ``lower_bound = penalty_term + dis_term + ch_term + price_term``; if it is
    strictly positive no multipliers can make a simultaneous point stationary.
    """

    step: int
    case: str
    penalty_term: float
    dis_term: float
    ch_term: float
    price_term: float

    @property
    def lower_bound(self) -> float:
        return self.penalty_term + self.dis_term + self.ch_term + self.price_term

    @property
    def certifies(self) -> bool:
        return self.lower_bound > 0


def certificate_of_suboptimality(step: int, sol: Solution, params: EssParams, tariff: Tariff,
                                 prof: ExogenousProfile, tol: float = 1e-7) -> Certificate:
    x, mult = sol.trajectory, sol.multipliers
    t = step
    if not (x.p_ch[t] > tol and x.p_dis[t] > tol):
        raise ValueError(f"step {t} is not simultaneous (p_ch={x.p_ch[t]}, p_dis={x.p_dis[t]})")

    ratio = params.efficiency_ratio
    if tariff.net_metering:
        case, mu_term = "net_metering", tariff.c_e[t]
    elif x.p_grid[t] > tol:
        case, mu_term = "grid_import", tariff.c_e[t]
    elif x.p_c[t] < prof.p_sol[t] - tol:
        # upper curtailment multiplier vanishes, so mu equals the lower one
        case, mu_term = "interior_curtailment", max(float(mult.sol_lo[t]), 0.0)
    else:
        raise NoDualCertificate(
            f"step {t}: no grid draw and full curtailment; use the primal repair instead"
        )

    return Certificate(
        step=t,
        case=case,
        penalty_term=tariff.beta + ratio * tariff.alpha,
        dis_term=max(float(mult.dis_hi[t]), 0.0),
        ch_term=ratio * max(float(mult.ch_hi[t]), 0.0),
        price_term=(ratio - 1.0) * mu_term,
    )


# --- regime table --------------------------------------------------------------


class Behavior(str, Enum):
    NON_SIMULTANEOUS = "non-simultaneous"
    SIMULTANEOUS_POSSIBLE = "simultaneous-possible"


@dataclass(frozen=True)
class Regime:
    row: int
    behavior: Behavior

    @property
    def guaranteed_clean(self) -> bool:
        return self.behavior is Behavior.NON_SIMULTANEOUS


def classify_regime(tariff: Tariff) -> Regime:
    """Map a tariff to its row of the five-row regime table.

    Rows: 1 export, all prices > 0; 2 export, penalties > 0; 3 export, no penalty
    and some zero price; 4 no export, penalties > 0; 5 no export, no penalty.
    """
    penalized = tariff.alpha + tariff.beta > 0
    all_priced = bool(np.all(tariff.c_e > 0))
    if tariff.net_metering:
        if all_priced:
            return Regime(1, Behavior.NON_SIMULTANEOUS)
        if penalized:
            return Regime(2, Behavior.NON_SIMULTANEOUS)
        return Regime(3, Behavior.SIMULTANEOUS_POSSIBLE)
    if penalized:
        return Regime(4, Behavior.NON_SIMULTANEOUS)
    return Regime(5, Behavior.SIMULTANEOUS_POSSIBLE)


def max_simultaneity(x: DecisionTrajectory) -> float:
    return float(np.max(simultaneity_index(x), initial=0.0))
