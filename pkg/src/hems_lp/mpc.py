"""Receding-horizon simulation over a daily solar/load/price cycle.

At every wall-clock step the next ``horizon`` steps of the (perfectly
forecast) profiles are cut out with wrap-around at 24 h, the LP is solved
from the current SOC, the plan is KKT-checked, and only its first control is
applied.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kkt
from .model import (DecisionTrajectory, EssParams, ExogenousProfile, Tariff, cost,
                    simultaneous_steps, soc_step)
from .problem import LpStandardForm, build_lp, extract_trajectory
from .solver import SolveOptions, Status, solve

_LOGGER = logging.getLogger(__name__)

HOURS_PER_DAY = 24.0

PV_AREA_M2 = 20.0
PV_ARRAY_EFF = 0.16
PV_INVERTER_EFF = 0.95


class ConfigError(ValueError):
    """Scenario file or profile CSV could not be used."""


class MpcSolverError(RuntimeError):
    """The LP at some wall-clock step did not solve to optimality."""

    def __init__(self, step: int, status: Status, lp: LpStandardForm):
        super().__init__(f"solver returned {status.value} at wall-clock step {step}")
        self.step = step
        self.status = status
        self.lp = lp

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        np.savez(path, c=self.lp.c, A_ub=self.lp.A_ub, b_ub=self.lp.b_ub,
                 A_eq=self.lp.A_eq, b_eq=self.lp.b_eq, lb=self.lp.lb, ub=self.lp.ub)
        return path


# --- tariff schedules -----------------------------------------------------------


@dataclass(frozen=True)
class TariffPeriod:
    name: str
    start: float
    end: float
    price: float

    def covers(self, hour: float) -> bool:
        h = hour % HOURS_PER_DAY
        if self.start < self.end:
            return self.start <= h < self.end
        return h >= self.start or h < self.end


@dataclass(frozen=True)
class TariffSchedule:
    """Either a single flat price or named periods covering the day once."""

    flat: float | None = None
    periods: tuple[TariffPeriod, ...] = ()

    def __post_init__(self):
        if (self.flat is None) == (not self.periods):
            raise ConfigError("tariff needs exactly one of 'flat' or 'periods'")
        if self.flat is not None and self.flat < 0:
            raise ConfigError("flat price must be nonnegative")
        if self.periods:
            self._check_partition()

    def _check_partition(self):
        covered = 0.0
        for p in self.periods:
            if p.price < 0:
                raise ConfigError(f"period {p.name!r} has a negative price")
            if not (0 <= p.start < HOURS_PER_DAY and 0 <= p.end <= HOURS_PER_DAY):
                raise ConfigError(f"period {p.name!r} hours must lie in [0, 24]")
            if p.start == p.end % HOURS_PER_DAY:
                raise ConfigError(f"period {p.name!r} is empty or covers the whole day")
            covered += (p.end - p.start) % HOURS_PER_DAY
        # every boundary must be claimed exactly once; lengths summing to 24 then
        # rules out gaps as well as overlaps
        starts = sorted(p.start for p in self.periods)
        ends = sorted(p.end % HOURS_PER_DAY for p in self.periods)
        if not math.isclose(covered, HOURS_PER_DAY) or starts != ends:
            raise ConfigError("tariff periods must partition 0-24 h exactly")

    def price_at(self, hour: float) -> float:
        if self.flat is not None:
            return self.flat
        for p in self.periods:
            if p.covers(hour):
                return p.price
        raise ConfigError(f"no tariff period covers hour {hour}")

    @classmethod
    def from_json(cls, raw) -> "TariffSchedule":
        if isinstance(raw, str):
            try:
                return PRESETS[raw]
            except KeyError:
                raise ConfigError(f"unknown tariff preset {raw!r}; known: {sorted(PRESETS)}") from None
        if isinstance(raw, (int, float)):
            return cls(flat=float(raw))
        if not isinstance(raw, dict):
            raise ConfigError("tariff must be a number, preset name, or object")
        if "flat" in raw:
            return cls(flat=float(raw["flat"]))
        try:
            periods = tuple(TariffPeriod(str(p["name"]), float(p["start"]), float(p["end"]),
                                         float(p["price"])) for p in raw["periods"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad tariff periods: {exc}") from None
        return cls(periods=periods)

    def to_json(self):
        if self.flat is not None:
            return {"flat": self.flat}
        return {"periods": [asdict(p) for p in self.periods]}


def tou_schedule(off_peak: float = 0.08, shoulder: float = 0.13,
                 on_peak: float = 0.18) -> TariffSchedule:
    """Off-peak 21-9 h, shoulder 9-14 h and 18-21 h, on-peak 14-18 h ($/kWh)."""
    return TariffSchedule(periods=(
        TariffPeriod("off_peak", 21, 9, off_peak),
        TariffPeriod("shoulder_am", 9, 14, shoulder),
        TariffPeriod("on_peak", 14, 18, on_peak),
        TariffPeriod("shoulder_pm", 18, 21, shoulder),
    ))


PRESETS = {
    "flat": TariffSchedule(flat=0.11),
    "tou": tou_schedule(),
    "tou_free_off_peak": tou_schedule(off_peak=0.0),
}


# --- profiles -------------------------------------------------------------------


def synthetic_solar(hours) -> np.ndarray:
    """Clipped sinusoid: zero before 6 h and after 20 h, 3 kW at 13 h."""
    h = np.asarray(hours, dtype=float) % HOURS_PER_DAY
    day = (h > 6.0) & (h < 20.0)
    return np.where(day, 3.0 * np.sin(np.pi * (h - 6.0) / 14.0), 0.0)


def synthetic_load(hours) -> np.ndarray:
    """0.4 kW base plus morning (7 h) and evening (19 h) bumps reaching about 2 kW."""
    h = np.asarray(hours, dtype=float) % HOURS_PER_DAY

    def bump(center):
        d = (h - center + 12.0) % HOURS_PER_DAY - 12.0
        return np.exp(-0.5 * (d / 1.5) ** 2)

    return 0.4 + 1.6 * (bump(7.0) + bump(19.0))


def _read_hourly_csv(path: str | Path, column: str) -> np.ndarray:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["hour", column]:
                raise ConfigError(f"{path}: header must be 'hour,{column}', got {header}")
            values: dict[int, float] = {}
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
                try:
                    hour, value = int(row[0]), float(row[1])
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: cannot parse {row}") from None
                if not 0 <= hour <= 23:
                    raise ConfigError(f"{path}:{lineno}: hour {hour} outside 0-23")
                if hour in values:
                    raise ConfigError(f"{path}:{lineno}: duplicate hour {hour}")
                if not math.isfinite(value):
                    raise ConfigError(f"{path}:{lineno}: non-finite value")
                values[hour] = value
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    missing = sorted(set(range(24)) - set(values))
    if missing:
        raise ConfigError(f"{path}: missing hours {missing}")
    return np.array([values[h] for h in range(24)])


def ingest_solar(path: str | Path, area: float = PV_AREA_M2, array_eff: float = PV_ARRAY_EFF,
                 inverter_eff: float = PV_INVERTER_EFF) -> np.ndarray:
    """Hourly PV output in kW from an irradiance CSV in W/m2."""
    irradiance = _read_hourly_csv(path, "irradiance_w_m2")
    if np.any(irradiance < 0):
        raise ConfigError(f"{path}: negative irradiance")
    return irradiance * area * array_eff * inverter_eff / 1000.0


def ingest_load(path: str | Path) -> np.ndarray:
    load = _read_hourly_csv(path, "load_kw")
    if np.any(load < 0):
        raise ConfigError(f"{path}: negative load")
    return load


@dataclass(frozen=True)
class ProfileSource:
    """A 24-value hourly CSV or the built-in synthetic day."""

    csv: str | None = None

    @property
    def synthetic(self) -> bool:
        return self.csv is None

    @classmethod
    def from_json(cls, raw, base: Path) -> "ProfileSource":
        if raw is None or raw == "synthetic" or (isinstance(raw, dict) and raw.get("synthetic")):
            return cls()
        path = raw.get("csv") if isinstance(raw, dict) else raw
        if not isinstance(path, str):
            raise ConfigError(f"profile source must be 'synthetic' or a CSV path, got {raw!r}")
        p = Path(path)
        return cls(str(p if p.is_absolute() else base / p))

    def to_json(self):
        return "synthetic" if self.synthetic else {"csv": self.csv}


# --- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    ess: EssParams = field(default_factory=EssParams.default_home)
    tariff: TariffSchedule = field(default_factory=lambda: PRESETS["flat"])
    alpha: float = 0.0
    beta: float = 0.0
    net_metering: bool = False
    solar: ProfileSource = field(default_factory=ProfileSource)
    load: ProfileSource = field(default_factory=ProfileSource)
    solar_scale: float = 1.0
    pv_area: float = PV_AREA_M2
    pv_array_eff: float = PV_ARRAY_EFF
    pv_inverter_eff: float = PV_INVERTER_EFF
    horizon: int = 24
    steps: int = 24
    start_hour: float = 0.0
    energy_weighted_cost: bool = False
    kkt_tol: float = 1e-8
    simultaneity_tol: float = 1e-7

    def __post_init__(self):
        if self.horizon < 1 or self.steps < 1:
            raise ConfigError("horizon and steps must be at least 1")
        if self.solar_scale < 0:
            raise ConfigError("solar_scale must be nonnegative")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")

    @property
    def dt(self) -> float:
        return self.ess.dt

    @classmethod
    def from_dict(cls, raw: dict, base: str | Path = ".") -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("scenario must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        base = Path(base)
        kw = dict(raw)
        try:
            if "ess" in kw:
                ess = asdict(EssParams.default_home())
                extra = set(kw["ess"]) - set(ess)
                if extra:
                    raise ConfigError(f"unknown ess keys: {sorted(extra)}")
                ess.update(kw["ess"])
                kw["ess"] = EssParams(**ess)
            if "tariff" in kw:
                kw["tariff"] = TariffSchedule.from_json(kw["tariff"])
            for key in ("solar", "load"):
                if key in kw:
                    kw[key] = ProfileSource.from_json(kw[key], base)
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base=path.parent)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, EssParams):
                v = asdict(v)
            elif isinstance(v, (TariffSchedule, ProfileSource)):
                v = v.to_json()
            out[f.name] = v
        return out

    def with_overrides(self, solar_scale: float | None = None,
                       net_metering: bool | None = None) -> "ScenarioConfig":
        kw = {}
        if solar_scale is not None:
            kw["solar_scale"] = solar_scale
        if net_metering is not None:
            kw["net_metering"] = net_metering
        return replace(self, **kw)

    # -- forecasts --

    def _hourly(self, source: ProfileSource, kind: str) -> np.ndarray | None:
        if source.synthetic:
            return None
        if kind == "solar":
            return ingest_solar(source.csv, self.pv_area, self.pv_array_eff, self.pv_inverter_eff)
        return ingest_load(source.csv)

    def forecaster(self) -> "Forecaster":
        return Forecaster(self, self._hourly(self.solar, "solar"), self._hourly(self.load, "load"))


@dataclass(frozen=True)
class Forecaster:
    """Perfect-foresight windows cut from a repeating daily cycle."""

    config: ScenarioConfig
    solar_hourly: np.ndarray | None
    load_hourly: np.ndarray | None

    def hours(self, step: int, n: int) -> np.ndarray:
        cfg = self.config
        return (cfg.start_hour + (step + np.arange(n)) * cfg.dt) % HOURS_PER_DAY

    @staticmethod
    def _sample(hourly, synthetic, hours):
        if hourly is None:
            return synthetic(hours)
        return hourly[np.floor(hours).astype(int) % 24]

    def window(self, step: int, n: int | None = None) -> tuple[ExogenousProfile, Tariff]:
        cfg = self.config
        n = cfg.horizon if n is None else n
        h = self.hours(step, n)
        sol = cfg.solar_scale * self._sample(self.solar_hourly, synthetic_solar, h)
        load = self._sample(self.load_hourly, synthetic_load, h)
        prices = [cfg.tariff.price_at(x) for x in h]
        return (ExogenousProfile(sol, load),
                Tariff(prices, alpha=cfg.alpha, beta=cfg.beta, net_metering=cfg.net_metering))


# --- simulation -----------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    hour: float
    soc_before: float
    soc_after: float
    applied: tuple[float, float, float, float]
    plan: DecisionTrajectory
    plan_objective: float
    status: Status
    kkt: kkt.KktReport
    plan_simultaneous: tuple[int, ...]

    @property
    def kkt_passed(self) -> bool:
        return self.kkt.passed

    @property
    def applied_simultaneous(self) -> bool:
        return 0 in self.plan_simultaneous


@dataclass
class RunLog:
    config: ScenarioConfig
    records: list[StepRecord] = field(default_factory=list)

    @property
    def hours(self) -> np.ndarray:
        return np.array([r.hour for r in self.records])

    @property
    def applied(self) -> DecisionTrajectory:
        cols = np.array([r.applied for r in self.records]).reshape(-1, 4)
        return DecisionTrajectory(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])

    @property
    def soc(self) -> np.ndarray:
        """Realized SOC, length steps + 1, starting from the configured E0."""
        if not self.records:
            return np.array([self.config.ess.e0])
        return np.array([self.records[0].soc_before] + [r.soc_after for r in self.records])

    @property
    def kkt_all_passed(self) -> bool:
        return all(r.kkt_passed for r in self.records)

    @property
    def simultaneity_steps(self) -> list[int]:
        """Wall-clock steps whose applied control charges and discharges at once."""
        return [r.step for r in self.records if r.applied_simultaneous]

    def realized_inputs(self) -> tuple[ExogenousProfile, Tariff]:
        """Profile and prices actually seen at each wall-clock step."""
        fc = self.config.forecaster()
        sol, load, price = [], [], []
        for r in self.records:
            p, t = fc.window(r.step, 1)
            sol.append(p.p_sol[0])
            load.append(p.p_load[0])
            price.append(t.c_e[0])
        cfg = self.config
        return (ExogenousProfile(sol, load),
                Tariff(price, alpha=cfg.alpha, beta=cfg.beta, net_metering=cfg.net_metering))

    def total_cost(self) -> float:
        _, tariff = self.realized_inputs()
        return cost(self.applied, tariff, self.config.dt, self.config.energy_weighted_cost)


def run(config: ScenarioConfig, options: SolveOptions | None = None) -> RunLog:
    params = config.ess
    fc = config.forecaster()
    log = RunLog(config)
    soc = params.e0
    for k in range(config.steps):
        # round-off can push the realized SOC a hair past a limit; clamp only what
        # is handed to the planner
        e_plan = min(max(soc, params.e_min), params.e_max)
        step_params = replace(params, e0=e_plan)
        prof, tariff = fc.window(k)
        lp, index = build_lp(step_params, prof, tariff, config.energy_weighted_cost)
        outcome = solve(lp, options)
        if not outcome.optimal:
            raise MpcSolverError(k, outcome.status, lp)
        report = kkt.check(lp, index, outcome, step_params, tariff, tol=config.kkt_tol,
                           prof=prof, energy_weighted_cost=config.energy_weighted_cost)
        if not report.passed:
            _LOGGER.warning("step %d: KKT check failed in %s", k, report.failed_groups)
        plan = extract_trajectory(outcome.x)
        applied = (plan.p_grid[0], plan.p_ch[0], plan.p_dis[0], plan.p_c[0])
        soc_next = soc_step(soc, applied[1], applied[2], params)
        log.records.append(StepRecord(
            step=k,
            hour=float(fc.hours(k, 1)[0]),
            soc_before=soc,
            soc_after=soc_next,
            applied=tuple(float(v) for v in applied),
            plan=plan,
            plan_objective=outcome.objective,
            status=outcome.status,
            kkt=report,
            plan_simultaneous=tuple(simultaneous_steps(plan, config.simultaneity_tol)),
        ))
        _LOGGER.debug("step %d hour %.2f: soc %.4f -> %.4f, applied %s", k,
                      log.records[-1].hour, soc, soc_next, applied)
        soc = soc_next
    return log
