"""Assemble the dispatch problem as a dense linear program.

Variables are ordered ``[p_grid(0..N), p_ch(0..N), p_dis(0..N), p_c(0..N)]``.
Every bound is an explicit inequality row so each one gets its own multiplier;
the structural variables themselves are free. SOC limits are written as
prefix-sum rows in the decision variables, so SOC is not a variable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DecisionTrajectory, EssParams, ExogenousProfile, Tariff

GRID, CH, DIS, CURT = range(4)

# Inequality row blocks, in emission order.
INEQ_KINDS = ("grid_lo", "ch_lo", "ch_hi", "dis_lo", "dis_hi",
              "soc_lo", "soc_hi", "sol_lo", "sol_hi")
BALANCE = "balance"


@dataclass(frozen=True)
class LpStandardForm:
    """min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        n = len(self.c)
        if self.A_ub.shape != (len(self.b_ub), n) or self.A_eq.shape != (len(self.b_eq), n):
            raise ValueError("constraint matrix shapes do not match c / b")
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bound vectors must match c")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub for some variable")

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_ineq(self) -> int:
        return len(self.b_ub)

    @property
    def n_eq(self) -> int:
        return len(self.b_eq)

    @classmethod
    def from_arrays(cls, c, A_ub=None, b_ub=None, A_eq=None, b_eq=None,
                    lb=None, ub=None) -> "LpStandardForm":
        """Convenience constructor; omitted parts default to empty / free."""
        c = np.asarray(c, dtype=float)
        n = len(c)
        A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
        A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
        lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        return cls(c, A_ub, b_ub, A_eq, b_eq, lb, ub)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def residuals(self, x: np.ndarray) -> tuple[float, float]:
        """(max inequality excess, max |equality residual|)."""
        ineq = float(np.max(self.A_ub @ x - self.b_ub, initial=0.0))
        eq = float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0))
        return max(ineq, 0.0), eq


@dataclass
class ConstraintIndex:
    """Bijection between named constraints ``(kind, t)`` and LP rows.

    Inequality kinds map into rows of ``A_ub``; ``"balance"`` maps into ``A_eq``.
    """

    n: int
    net_metering: bool
    _rows: dict[tuple[str, int], int] = field(default_factory=dict)
    _ineq_keys: list[tuple[str, int]] = field(default_factory=list)
    _eq_keys: list[tuple[str, int]] = field(default_factory=list)

    def _add(self, kind: str, t: int) -> int:
        if (kind, t) in self._rows:
            raise ValueError(f"duplicate constraint {(kind, t)}")
        keys = self._eq_keys if kind == BALANCE else self._ineq_keys
        self._rows[(kind, t)] = len(keys)
        keys.append((kind, t))
        return len(keys) - 1

    def has(self, kind: str) -> bool:
        return (kind, 0) in self._rows

    def row(self, kind: str, t: int) -> int:
        try:
            return self._rows[(kind, t)]
        except KeyError:
            if kind == "grid_lo" and self.net_metering:
                raise KeyError("grid_lo rows are omitted under net metering") from None
            raise KeyError(f"no constraint {(kind, t)}") from None

    def key(self, row: int, equality: bool = False) -> tuple[str, int]:
        return (self._eq_keys if equality else self._ineq_keys)[row]

    def rows_of(self, kind: str) -> np.ndarray:
        return np.array([self.row(kind, t) for t in range(self.n)], dtype=int)

    @property
    def ineq_kinds(self) -> tuple[str, ...]:
        return tuple(k for k in INEQ_KINDS if self.has(k))

    def __len__(self) -> int:
        return len(self._rows)


def var_index(family: int, t: int, n: int) -> int:
    return family * n + t


def build_lp(params: EssParams, prof: ExogenousProfile, tariff: Tariff,
             energy_weighted_cost: bool = False) -> tuple[LpStandardForm, ConstraintIndex]:
    n = prof.n
    if n < 1:
        raise ValueError("horizon must have at least one step")
    if tariff.n != n:
        raise ValueError(f"tariff has {tariff.n} steps, profile has {n}")

    nv = 4 * n
    g = np.arange(n) + GRID * n
    ch = np.arange(n) + CH * n
    dis = np.arange(n) + DIS * n
    cu = np.arange(n) + CURT * n

    c = np.zeros(nv)
    c[g] = tariff.c_e
    c[ch] = tariff.alpha
    c[dis] = tariff.beta
    if energy_weighted_cost:
        c *= params.dt

    index = ConstraintIndex(n=n, net_metering=tariff.net_metering)
    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def emit(kind, t, coeffs, b):
        index._add(kind, t)
        rows.append(coeffs)
        rhs.append(b)

    def unit(col, sign):
        r = np.zeros(nv)
        r[col] = sign
        return r

    if not tariff.net_metering:
        for t in range(n):
            emit("grid_lo", t, unit(g[t], -1.0), 0.0)
    for t in range(n):
        emit("ch_lo", t, unit(ch[t], -1.0), 0.0)
    for t in range(n):
        emit("ch_hi", t, unit(ch[t], 1.0), params.p_ch_max)
    for t in range(n):
        emit("dis_lo", t, unit(dis[t], -1.0), 0.0)
    for t in range(n):
        emit("dis_hi", t, unit(dis[t], 1.0), params.p_dis_max)

    # E0 + dt*sum_{k<=t}(eta_c ch_k - eta_d dis_k) within [e_min, e_max]
    dt = params.dt
    for t in range(n):
        r = np.zeros(nv)
        r[ch[: t + 1]] = -params.eta_c * dt
        r[dis[: t + 1]] = params.eta_d * dt
        emit("soc_lo", t, r, params.e0 - params.e_min)
    for t in range(n):
        r = np.zeros(nv)
        r[ch[: t + 1]] = params.eta_c * dt
        r[dis[: t + 1]] = -params.eta_d * dt
        emit("soc_hi", t, r, params.e_max - params.e0)
    for t in range(n):
        emit("sol_lo", t, unit(cu[t], -1.0), 0.0)
    for t in range(n):
        emit("sol_hi", t, unit(cu[t], 1.0), prof.p_sol[t])

    # h_t(x) = -p_grid + p_load - (p_sol - p_c) - p_dis + p_ch = 0
    A_eq = np.zeros((n, nv))
    b_eq = np.zeros(n)
    for t in range(n):
        index._add(BALANCE, t)
        A_eq[t, g[t]] = -1.0
        A_eq[t, ch[t]] = 1.0
        A_eq[t, dis[t]] = -1.0
        A_eq[t, cu[t]] = 1.0
        b_eq[t] = prof.p_sol[t] - prof.p_load[t]

    lp = LpStandardForm(
        c=c,
        A_ub=np.array(rows),
        b_ub=np.array(rhs),
        A_eq=A_eq,
        b_eq=b_eq,
        lb=np.full(nv, -np.inf),
        ub=np.full(nv, np.inf),
    )
    return lp, index


def extract_trajectory(x: np.ndarray) -> DecisionTrajectory:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) % 4 or len(x) == 0:
        raise ValueError(f"expected a vector of length 4N, got shape {x.shape}")
    n = len(x) // 4
    return DecisionTrajectory(x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:])
