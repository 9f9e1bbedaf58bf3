"""Two-phase bounded-variable revised simplex with dual extraction.

Handles ``min c.x  s.t.  A_ub x <= b_ub, A_eq x = b_eq, lb <= x <= ub`` where
bounds may be infinite. Each inequality row gets a slack column, rows whose
starting residual has the wrong sign get an artificial column, and the basis
inverse is carried explicitly with product-form updates and periodic
refactorization.

Multipliers follow the Lagrangian convention
``c + A_ub' lam + A_eq' mu - nu_lo + nu_hi = 0`` with ``lam, nu >= 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .problem import ConstraintIndex, LpStandardForm, BALANCE

_LOGGER = logging.getLogger(__name__)


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class IterationLimitError(RuntimeError):
    """The pivot budget ran out before optimality, infeasibility or unboundedness was shown."""


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    pivot_tol: float = 1e-10
    max_iter: int | None = None
    bland_after: int | None = None
    refactor_every: int = 64
    equilibrate: bool = False


@dataclass(frozen=True)
class FarkasCertificate:
    """Row weights proving ``{A_ub x <= b_ub, A_eq x = b_eq, box}`` is empty.

    For every x in the box, ``g.x >= min_box(g.x) > lam.b_ub + mu.b_eq`` with
    ``g = A_ub' lam + A_eq' mu``, while feasibility would need ``g.x <= lam.b_ub + mu.b_eq``.
    """

    lam: np.ndarray
    mu: np.ndarray
    ineq_rows: tuple[int, ...]
    eq_rows: tuple[int, ...]

    def margin(self, lp: LpStandardForm) -> float:
        """Positive when the certificate is valid for ``lp``."""
        g = lp.A_ub.T @ self.lam + lp.A_eq.T @ self.mu
        lo = 0.0
        for gj, l, u in zip(g, lp.lb, lp.ub):
            if abs(gj) <= 1e-12:
                continue
            bound = l if gj > 0 else u
            if not np.isfinite(bound):
                return -np.inf
            lo += gj * bound
        return lo - float(self.lam @ lp.b_ub + self.mu @ lp.b_eq)


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray
    objective: float
    iterations: int
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_objective: float = np.nan
    farkas: FarkasCertificate | None = None
    ray: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def duality_gap(self) -> float:
        return abs(self.objective - self.dual_objective)

    def primal_residual(self, lp: LpStandardForm) -> float:
        ineq, eq = lp.residuals(self.x)
        box = max(float(np.max(lp.lb - self.x, initial=0.0)),
                  float(np.max(self.x - lp.ub, initial=0.0)))
        return max(ineq, eq, box)

    def complementarity(self, lp: LpStandardForm) -> float:
        """Sum over inequality rows of lam_i * slack_i."""
        slack = lp.b_ub - lp.A_ub @ self.x
        return float(np.sum(np.abs(self.lam * slack)))


def _dual_objective(lp: LpStandardForm, lam, mu, d, zero_tol: float = 1e-11) -> float:
    val = -float(lam @ lp.b_ub) - float(mu @ lp.b_eq)
    for j, dj in enumerate(d):
        if abs(dj) <= zero_tol:
            continue
        bound = lp.lb[j] if dj > 0 else lp.ub[j]
        if not np.isfinite(bound):
            return -np.inf
        val += dj * bound
    return val


class _Simplex:
    def __init__(self, lp: LpStandardForm, opts: SolveOptions):
        self.opts = opts
        n, m_ub, m_eq = lp.n_vars, lp.n_ineq, lp.n_eq
        self.n, self.m_ub, self.m = n, m_ub, m_ub + m_eq

        A = np.vstack([lp.A_ub, lp.A_eq]) if self.m else np.zeros((0, n))
        b = np.concatenate([lp.b_ub, lp.b_eq])
        self.row_scale = np.ones(self.m)
        if opts.equilibrate and self.m:
            norms = np.max(np.abs(A), axis=1)
            self.row_scale = np.where(norms > 0, 1.0 / norms, 1.0)
            A = A * self.row_scale[:, None]
            b = b * self.row_scale

        x0 = np.clip(np.zeros(n), lp.lb, lp.ub)
        r = b - A @ x0

        art_rows, art_sign = [], []
        basis = np.empty(self.m, dtype=int)
        for i in range(self.m):
            if i < m_ub and r[i] >= 0:
                basis[i] = n + i
            else:
                art_rows.append(i)
                art_sign.append(-1.0 if i < m_ub else (1.0 if r[i] >= 0 else -1.0))
        n_art = len(art_rows)
        self.n_slack_end = n + m_ub
        ncol = n + m_ub + n_art

        M = np.zeros((self.m, ncol))
        M[:, :n] = A
        M[np.arange(m_ub), n + np.arange(m_ub)] = 1.0
        for k, (i, s) in enumerate(zip(art_rows, art_sign)):
            M[i, self.n_slack_end + k] = s
            basis[i] = self.n_slack_end + k
        self.M, self.b = M, b

        self.lb = np.concatenate([lp.lb, np.zeros(m_ub), np.zeros(n_art)])
        self.ub = np.concatenate([lp.ub, np.full(m_ub, np.inf), np.full(n_art, np.inf)])
        self.x = np.zeros(ncol)
        self.x[:n] = x0
        self.basis = basis
        self.is_basic = np.zeros(ncol, dtype=bool)
        self.is_basic[basis] = True
        self.ncol = ncol
        self.n_art = n_art
        self.iterations = 0
        self.since_refactor = 0
        self.refactor()

        size = self.m + ncol
        self.max_iter = opts.max_iter if opts.max_iter is not None else 50 * size + 1000
        self.bland_after = opts.bland_after if opts.bland_after is not None else 10 * size

    def refactor(self):
        if self.m == 0:
            self.Binv = np.zeros((0, 0))
            return
        self.Binv = np.linalg.inv(self.M[:, self.basis])
        nonbasic = ~self.is_basic
        rhs = self.b - self.M[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs
        self.since_refactor = 0

    def duals(self, cost: np.ndarray) -> np.ndarray:
        return cost[self.basis] @ self.Binv if self.m else np.zeros(0)

    def run(self, cost: np.ndarray) -> tuple[str, int | None, float]:
        """Pivot until optimal or unbounded. Returns (state, entering col, direction)."""
        opts = self.opts
        while True:
            if self.iterations >= self.max_iter:
                raise IterationLimitError(f"simplex hit the iteration limit ({self.max_iter})")
            y = self.duals(cost)
            d = cost - y @ self.M
            nonbasic = ~self.is_basic
            can_up = nonbasic & (self.x < self.ub - opts.feas_tol) & (d < -opts.opt_tol)
            can_dn = nonbasic & (self.x > self.lb + opts.feas_tol) & (d > opts.opt_tol)
            eligible = can_up | can_dn
            if not eligible.any():
                return "optimal", None, 0.0

            bland = self.iterations >= self.bland_after
            cand = np.flatnonzero(eligible)
            q = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if d[q] < 0 else -1.0

            w = self.Binv @ self.M[:, q]
            alpha = direction * w
            xb = self.x[self.basis]
            lbb, ubb = self.lb[self.basis], self.ub[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = alpha > opts.pivot_tol
            inc = alpha < -opts.pivot_tol
            with np.errstate(invalid="ignore"):
                ratios[dec] = (xb[dec] - lbb[dec]) / alpha[dec]
                ratios[inc] = (ubb[inc] - xb[inc]) / (-alpha[inc])
            ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))

            theta_rows = float(np.min(ratios)) if self.m else np.inf
            theta_flip = self.ub[q] - self.lb[q]
            if not np.isfinite(theta_rows) and not np.isfinite(theta_flip):
                return "unbounded", q, direction

            self.iterations += 1
            if theta_flip <= theta_rows:
                self.x[q] = self.ub[q] if direction > 0 else self.lb[q]
                self.x[self.basis] = xb - theta_flip * alpha
                continue

            theta = theta_rows
            ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])

            leaving = self.basis[r]
            self.x[self.basis] = xb - theta * alpha
            self.x[q] += direction * theta
            self.x[leaving] = lbb[r] if alpha[r] > 0 else ubb[r]

            self.basis[r] = q
            self.is_basic[leaving] = False
            self.is_basic[q] = True
            piv = w[r]
            row_r = self.Binv[r] / piv
            self.Binv -= np.outer(w, row_r)
            self.Binv[r] = row_r
            self.since_refactor += 1
            if self.since_refactor >= opts.refactor_every:
                self.refactor()


def solve(lp: LpStandardForm, opts: SolveOptions | None = None) -> SolveOutcome:
    opts = opts or SolveOptions()
    s = _Simplex(lp, opts)
    n = lp.n_vars

    phase1_cost = np.zeros(s.ncol)
    phase1_cost[s.n_slack_end:] = 1.0
    if s.n_art:
        state, _, _ = s.run(phase1_cost)
        s.refactor()
        infeasibility = float(np.sum(s.x[s.n_slack_end:]))
        if infeasibility > opts.feas_tol * max(1.0, float(np.max(np.abs(s.b), initial=0.0))):
            y = s.duals(phase1_cost) * s.row_scale
            lam, mu = -y[: s.m_ub], -y[s.m_ub:]
            cert = FarkasCertificate(
                lam=lam, mu=mu,
                ineq_rows=tuple(int(i) for i in np.flatnonzero(np.abs(lam) > 1e-12)),
                eq_rows=tuple(int(i) for i in np.flatnonzero(np.abs(mu) > 1e-12)),
            )
            _LOGGER.debug("phase 1 ended with infeasibility %.3e", infeasibility)
            return SolveOutcome(Status.INFEASIBLE, s.x[:n].copy(), np.nan, s.iterations,
                                farkas=cert)
        # artificials are pinned at zero from here on
        s.ub[s.n_slack_end:] = 0.0
        s.x[s.n_slack_end:] = np.clip(s.x[s.n_slack_end:], 0.0, 0.0)
        s.refactor()

    cost = np.zeros(s.ncol)
    cost[:n] = lp.c
    state, q, direction = s.run(cost)
    if state == "unbounded":
        w = s.Binv @ s.M[:, q]
        full = np.zeros(s.ncol)
        full[q] = direction
        full[s.basis] -= direction * w
        ray = full[:n]
        return SolveOutcome(Status.UNBOUNDED, s.x[:n].copy(), -np.inf, s.iterations, ray=ray)

    s.refactor()
    x = s.x[:n].copy()
    y = s.duals(cost)
    d = cost - y @ s.M
    y = y * s.row_scale
    lam, mu = -y[: s.m_ub], -y[s.m_ub:]
    red = d[:n]
    obj = float(lp.c @ x)
    out = SolveOutcome(
        status=Status.OPTIMAL,
        x=x,
        objective=obj,
        iterations=s.iterations,
        lam=lam,
        mu=mu,
        reduced_costs=red,
        dual_objective=_dual_objective(lp, lam, mu, red),
    )
    _LOGGER.debug("optimal after %d pivots, obj=%.12g gap=%.2e", s.iterations, obj,
                  out.duality_gap)
    return out


def dual_by_constraint(outcome: SolveOutcome, index: ConstraintIndex, kind: str, t: int) -> float:
    """Multiplier of a named constraint; ``"balance"`` returns the equality multiplier."""
    if not outcome.optimal:
        raise ValueError(f"no multipliers for a {outcome.status.value} outcome")
    row = index.row(kind, t)
    return float(outcome.mu[row] if kind == BALANCE else outcome.lam[row])
