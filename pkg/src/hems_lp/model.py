"""Domain types for the home battery dispatch problem.

Holds the battery/tariff/profile containers, the state-of-charge recursion,
the per-step cost, and a feasibility checker for candidate trajectories.
All series are 0-indexed numpy arrays; step ``t`` covers ``[t*dt, (t+1)*dt)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-7


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EssParams:
    """Battery physics and limits (energies in kWh, powers in kW, dt in h)."""

    e_min: float
    e_max: float
    e0: float
    p_ch_max: float
    p_dis_max: float
    eta_c: float
    eta_d: float
    dt: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta_c < self.eta_d:
            raise ValueError(f"need 0 < eta_c < eta_d, got eta_c={self.eta_c}, eta_d={self.eta_d}")
        if not 0.0 <= self.e_min <= self.e0 <= self.e_max:
            raise ValueError(
                f"need 0 <= e_min <= e0 <= e_max, got {self.e_min}, {self.e0}, {self.e_max}"
            )
        if self.p_ch_max <= 0 or self.p_dis_max <= 0:
            raise ValueError("power limits must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def efficiency_ratio(self) -> float:
        """eta_d / eta_c, always > 1."""
        return self.eta_d / self.eta_c

    @property
    def strict(self) -> bool:
        """True when eta_c < 1 < eta_d (the practical default regime)."""
        return self.eta_c < 1.0 < self.eta_d

    @classmethod
    def default_home(cls, e0: float = 2.0) -> "EssParams":
        """5 kWh battery kept between 15 % and 85 %, 3 kW limits, eta_c = 0.95."""
        return cls(
            e_min=0.15 * 5.0,
            e_max=0.85 * 5.0,
            e0=e0,
            p_ch_max=3.0,
            p_dis_max=3.0,
            eta_c=0.95,
            eta_d=1.0 / 0.95,
            dt=1.0,
        )


@dataclass(frozen=True)
class Tariff:
    c_e: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0
    net_metering: bool = False

    def __post_init__(self):
        object.__setattr__(self, "c_e", _frozen_array(self.c_e, "c_e"))
        if np.any(self.c_e < 0):
            raise ValueError("energy prices must be nonnegative")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.c_e)

    @classmethod
    def flat(cls, price: float, n: int, alpha: float = 0.0, beta: float = 0.0,
             net_metering: bool = False) -> "Tariff":
        return cls(np.full(n, float(price)), alpha, beta, net_metering)


@dataclass(frozen=True)
class ExogenousProfile:
    """Available solar and house load per step (kW)."""

    p_sol: np.ndarray
    p_load: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_sol", _frozen_array(self.p_sol, "p_sol"))
        object.__setattr__(self, "p_load", _frozen_array(self.p_load, "p_load"))
        if len(self.p_sol) != len(self.p_load):
            raise ValueError(
                f"p_sol and p_load lengths differ: {len(self.p_sol)} vs {len(self.p_load)}"
            )
        if np.any(self.p_sol < 0) or np.any(self.p_load < 0):
            raise ValueError("solar and load must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.p_sol)


@dataclass(frozen=True)
class DecisionTrajectory:
    """Control trajectory: grid draw, charge, discharge, curtailment per step."""

    p_grid: np.ndarray
    p_ch: np.ndarray
    p_dis: np.ndarray
    p_c: np.ndarray

    def __post_init__(self):
        for name in ("p_grid", "p_ch", "p_dis", "p_c"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), name))
        lengths = {len(self.p_grid), len(self.p_ch), len(self.p_dis), len(self.p_c)}
        if len(lengths) != 1:
            raise ValueError(f"all four series must share one length, got {sorted(lengths)}")

    @property
    def n(self) -> int:
        return len(self.p_grid)

    @classmethod
    def zeros(cls, n: int) -> "DecisionTrajectory":
        z = np.zeros(n)
        return cls(z, z, z, z)

    @classmethod
    def traditional(cls, prof: ExogenousProfile) -> "DecisionTrajectory":
        """Battery idle, all solar curtailed, load served from the grid."""
        z = np.zeros(prof.n)
        return cls(prof.p_load, z, z, prof.p_sol)

    def replace(self, **series) -> "DecisionTrajectory":
        values = {k: getattr(self, k) for k in ("p_grid", "p_ch", "p_dis", "p_c")}
        values.update(series)
        return DecisionTrajectory(**values)

    def pack(self) -> np.ndarray:
        """Stack as [p_grid(0..N), p_ch(0..N), p_dis(0..N), p_c(0..N)]."""
        return np.concatenate([self.p_grid, self.p_ch, self.p_dis, self.p_c])

    def __add__(self, other: "DecisionTrajectory") -> "DecisionTrajectory":
        return DecisionTrajectory(self.p_grid + other.p_grid, self.p_ch + other.p_ch,
                                  self.p_dis + other.p_dis, self.p_c + other.p_c)

    def __mul__(self, k: float) -> "DecisionTrajectory":
        return DecisionTrajectory(k * self.p_grid, k * self.p_ch, k * self.p_dis, k * self.p_c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SocTrajectory:
    """State of charge at step boundaries; ``e[0]`` is the initial SOC."""

    e: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "e", _frozen_array(self.e, "e"))


def soc_step(e: float, p_ch: float, p_dis: float, params: EssParams) -> float:
    return e + params.eta_c * params.dt * p_ch - params.eta_d * params.dt * p_dis


def soc_trajectory(x: DecisionTrajectory, params: EssParams) -> SocTrajectory:
    e = np.empty(x.n + 1)
    e[0] = params.e0
    for t in range(x.n):
        e[t + 1] = soc_step(e[t], x.p_ch[t], x.p_dis[t], params)
    return SocTrajectory(e)


def soc_unrolled(x: DecisionTrajectory, params: EssParams) -> np.ndarray:
    """Closed form E0 + dt * cumsum(eta_c*p_ch - eta_d*p_dis), prefixed by E0."""
    inc = params.dt * (params.eta_c * x.p_ch - params.eta_d * x.p_dis)
    return params.e0 + np.concatenate([[0.0], np.cumsum(inc)])


def cost(x: DecisionTrajectory, tariff: Tariff, dt: float = 1.0,
         energy_weighted_cost: bool = False) -> float:
    """Objective sum_t c_e*p_grid + alpha*p_ch + beta*p_dis.

    Prices are applied to power directly; pass ``energy_weighted_cost=True`` to
    scale each term by ``dt`` when steps are not one hour long.
    """
    if x.n != tariff.n:
        raise ValueError(f"trajectory has {x.n} steps but tariff has {tariff.n}")
    total = float(np.sum(tariff.c_e * x.p_grid + tariff.alpha * x.p_ch + tariff.beta * x.p_dis))
    return total * dt if energy_weighted_cost else total


def simultaneity_index(x: DecisionTrajectory) -> np.ndarray:
    return np.minimum(x.p_ch, x.p_dis)


def simultaneous_steps(x: DecisionTrajectory, tol: float = DEFAULT_TOL) -> list[int]:
    return [int(t) for t in np.flatnonzero(simultaneity_index(x) > tol)]


def total_charging(x: DecisionTrajectory) -> float:
    return float(np.sum(x.p_ch))


@dataclass(frozen=True)
class Violation:
    kind: str
    step: int
    magnitude: float


@dataclass
class FeasibilityReport:
    violations: list[Violation] = field(default_factory=list)
    max_violation: float = 0.0

    @property
    def feasible(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def balance_residual(x: DecisionTrajectory, prof: ExogenousProfile) -> np.ndarray:
    """Per-step power balance -p_grid + p_load - (p_sol - p_c) - p_dis + p_ch."""
    return -x.p_grid + prof.p_load - (prof.p_sol - x.p_c) - x.p_dis + x.p_ch


def check_feasible(x: DecisionTrajectory, params: EssParams, prof: ExogenousProfile,
                   tariff: Tariff, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    if x.n != prof.n or x.n != tariff.n:
        raise ValueError(f"length mismatch: trajectory {x.n}, profile {prof.n}, tariff {tariff.n}")

    e = soc_trajectory(x, params).e[1:]
    # (kind, amount by which the constraint "g <= 0" is exceeded, per step)
    checks = [
        ("ch_lo", -x.p_ch),
        ("ch_hi", x.p_ch - params.p_ch_max),
        ("dis_lo", -x.p_dis),
        ("dis_hi", x.p_dis - params.p_dis_max),
        ("soc_lo", params.e_min - e),
        ("soc_hi", e - params.e_max),
        ("sol_lo", -x.p_c),
        ("sol_hi", x.p_c - prof.p_sol),
        ("balance", np.abs(balance_residual(x, prof))),
    ]
    if not tariff.net_metering:
        checks.insert(0, ("grid_lo", -x.p_grid))

    report = FeasibilityReport()
    for kind, excess in checks:
        for t in np.flatnonzero(excess > tol):
            report.violations.append(Violation(kind, int(t), float(excess[t])))
        report.max_violation = max(report.max_violation, float(np.max(excess, initial=0.0)))
    return report
