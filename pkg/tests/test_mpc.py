from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from hems_lp import mpc
from hems_lp.model import soc_step
from hems_lp.mpc import (PRESETS, ConfigError, ProfileSource, ScenarioConfig, TariffPeriod,
                         TariffSchedule, ingest_solar, run, synthetic_load, synthetic_solar)


def _write_csv(path, column, values):
    path.write_text(f"hour,{column}\n" + "".join(f"{h},{v}\n" for h, v in enumerate(values)))
    return path


def test_ingest_solar_conversion(tmp_path):
    csv = _write_csv(tmp_path / "irr.csv", "irradiance_w_m2", [1000.0] + [0.0] * 23)
    p = ingest_solar(csv)
    assert p[0] == pytest.approx(3.04, abs=1e-12)
    assert np.all(p[1:] == 0.0)


def test_solar_scale_multiplies_series(tmp_path):
    csv = _write_csv(tmp_path / "irr.csv", "irradiance_w_m2", np.linspace(0, 900, 24))
    base = ScenarioConfig(solar=ProfileSource(str(csv)), steps=1)
    prof1, _ = base.forecaster().window(0)
    prof2, _ = replace(base, solar_scale=1.5).forecaster().window(0)
    np.testing.assert_allclose(prof2.p_sol, 1.5 * prof1.p_sol, rtol=1e-15)


@pytest.mark.parametrize("body, match", [
    ("hour,irr\n0,1\n", "header"),
    ("hour,irradiance_w_m2\n0,abc\n", "cannot parse"),
    ("hour,irradiance_w_m2\n0,-5\n" + "".join(f"{h},0\n" for h in range(1, 24)), "negative"),
    ("hour,irradiance_w_m2\n0,1\n", "missing hours"),
    ("hour,irradiance_w_m2\n0,1\n0,2\n", "duplicate"),
    ("hour,irradiance_w_m2\n24,1\n", "outside"),
])
def test_malformed_csv(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ConfigError, match=match):
        ingest_solar(path)


def test_synthetic_profiles_shape():
    h = np.arange(24)
    sol, load = synthetic_solar(h), synthetic_load(h)
    assert sol.argmax() == 13 and sol.max() == pytest.approx(3.0)
    assert np.all(sol[:7] == 0) and np.all(sol[20:] == 0)
    assert load.max() == pytest.approx(2.0, abs=1e-3)
    assert set(np.argsort(load)[-2:]) == {7, 19}


def test_tou_presets():
    tou, free = PRESETS["tou"], PRESETS["tou_free_off_peak"]
    hours = np.arange(24)
    prices = [tou.price_at(h) for h in hours]
    assert prices[:9] == [0.08] * 9 and prices[21:] == [0.08] * 3
    assert prices[9:14] == [0.13] * 5 and prices[18:21] == [0.13] * 3
    assert prices[14:18] == [0.18] * 4
    assert [free.price_at(h) for h in range(9)] == [0.0] * 9
    assert free.price_at(15) == 0.18


@pytest.mark.parametrize("periods", [
    [("a", 0, 12, 0.1), ("b", 11, 24, 0.2)],
    [("a", 0, 12, 0.1), ("b", 13, 24, 0.2)],
    [("a", 0, 24, 0.1)],
    [("a", 22, 8, 0.1), ("b", 8, 20, 0.2)],
])
def test_tariff_periods_must_partition_day(periods):
    with pytest.raises(ConfigError):
        TariffSchedule(periods=tuple(TariffPeriod(*p) for p in periods))


def test_wrapping_period_accepted():
    s = TariffSchedule(periods=(TariffPeriod("n", 22, 6, 0.05), TariffPeriod("d", 6, 22, 0.2)))
    assert s.price_at(23.5) == 0.05 and s.price_at(3) == 0.05 and s.price_at(12) == 0.2


def test_scenario_json_round_trip(tmp_path):
    cfg = ScenarioConfig(tariff=PRESETS["tou"], alpha=0.001, solar_scale=1.5, horizon=12)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.from_file(path) == cfg


def test_scenario_relative_csv_path(tmp_path):
    _write_csv(tmp_path / "load.csv", "load_kw", [1.0] * 24)
    (tmp_path / "s.json").write_text(json.dumps({"load": {"csv": "load.csv"}}))
    cfg = ScenarioConfig.from_file(tmp_path / "s.json")
    prof, _ = cfg.forecaster().window(0)
    np.testing.assert_array_equal(prof.p_load, np.ones(24))


@pytest.mark.parametrize("raw", [
    {"horizon": 0},
    {"nonsense": 1},
    {"ess": {"eta_c": 2.0}},
    {"ess": {"capacity": 5}},
    {"tariff": "no_such_preset"},
    {"alpha": -1},
])
def test_bad_scenarios(raw):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(raw)


def test_invalid_json(tmp_path):
    (tmp_path / "s.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ScenarioConfig.from_file(tmp_path / "s.json")


def test_zero_inputs_give_zero_controls(tmp_path):
    zero_irr = _write_csv(tmp_path / "irr.csv", "irradiance_w_m2", [0.0] * 24)
    zero_load = _write_csv(tmp_path / "load.csv", "load_kw", [0.0] * 24)
    cfg = ScenarioConfig(solar=ProfileSource(str(zero_irr)), load=ProfileSource(str(zero_load)),
                         alpha=0.001, beta=0.001, horizon=6, steps=6)
    log = run(cfg)
    np.testing.assert_allclose(log.applied.pack(), 0.0, atol=1e-12)


def _check_log_invariants(log):
    p = log.config.ess
    soc = log.soc
    assert np.all(soc >= p.e_min - 1e-9) and np.all(soc <= p.e_max + 1e-9)
    for r in log.records:
        assert r.soc_after == soc_step(r.soc_before, r.applied[1], r.applied[2], p)
    assert log.kkt_all_passed


def test_flat_scenario_is_clean_and_certified():
    log = run(ScenarioConfig())
    _check_log_invariants(log)
    assert log.simultaneity_steps == []
    assert all(r.plan_simultaneous == () for r in log.records)


def test_tou_discharges_on_peak_when_load_exceeds_solar(tmp_path):
    load = _write_csv(tmp_path / "load.csv", "load_kw", [2.5] * 24)
    cfg = ScenarioConfig(tariff=PRESETS["tou"], alpha=0.001, load=ProfileSource(str(load)))
    log = run(cfg)
    _check_log_invariants(log)
    prof, _ = log.realized_inputs()
    on_peak = [k for k, h in enumerate(log.hours) if 14 <= h < 18 and prof.p_load[k] > prof.p_sol[k]]
    assert on_peak
    assert all(log.applied.p_dis[k] > 0.1 for k in on_peak)


def test_stationary_policy_with_constant_inputs(tmp_path):
    irr = _write_csv(tmp_path / "irr.csv", "irradiance_w_m2", [600.0] * 24)
    load = _write_csv(tmp_path / "load.csv", "load_kw", [0.8] * 24)
    cfg = ScenarioConfig(solar=ProfileSource(str(irr)), load=ProfileSource(str(load)),
                         alpha=0.001, beta=0.001, horizon=6, steps=8)
    log = run(cfg)
    first = log.records[0].applied
    for r in log.records:
        np.testing.assert_allclose(r.applied, first, atol=1e-12)


def test_solver_failure_carries_step_and_lp(tmp_path, monkeypatch):
    from hems_lp.solver import SolveOutcome, Status

    def broken(lp, opts=None):
        return SolveOutcome(Status.INFEASIBLE, np.zeros(lp.n_vars), np.nan, 0)

    monkeypatch.setattr(mpc, "solve", broken)
    with pytest.raises(mpc.MpcSolverError) as info:
        run(ScenarioConfig(steps=2))
    assert info.value.step == 0
    dumped = info.value.dump(tmp_path / "lp.npz")
    assert np.load(dumped)["A_ub"].shape == info.value.lp.A_ub.shape
