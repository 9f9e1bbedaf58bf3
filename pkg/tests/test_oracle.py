from __future__ import annotations

import itertools

import numpy as np
import pytest

from hems_lp.kkt import classify_regime
from hems_lp.model import ExogenousProfile, Tariff, check_feasible
from hems_lp.oracle import GridSpec, enumerate_grid

from helpers import HOME, random_params, random_profile, solve_p1, tariff_for_row


def _naive(params, prof, tariff, step, complementarity):
    """Plain nested loops over every grid combination."""
    per_step = []
    for t in range(prof.n):
        opts = []
        chs = list(np.arange(0, params.p_ch_max, step)) + [params.p_ch_max]
        dis = list(np.arange(0, params.p_dis_max, step)) + [params.p_dis_max]
        for c, d in itertools.product(chs, dis):
            if complementarity and c > 0 and d > 0:
                continue
            sol, load = prof.p_sol[t], prof.p_load[t]
            curts = list(np.arange(0, sol, step)) + [sol, min(max(sol - load + d - c, 0), sol)]
            for cu in curts:
                g = load - sol + cu - d + c
                if g < -1e-12 and not tariff.net_metering:
                    continue
                opts.append((c, d, tariff.c_e[t] * g + tariff.alpha * c + tariff.beta * d))
        per_step.append(opts)
    best = np.inf
    for combo in itertools.product(*per_step):
        e = params.e0
        ok = True
        for c, d, _ in combo:
            e += params.dt * (params.eta_c * c - params.eta_d * d)
            if e < params.e_min - 1e-12 or e > params.e_max + 1e-12:
                ok = False
                break
        if ok:
            best = min(best, sum(o[2] for o in combo))
    return best


def test_single_step_example():
    prof = ExogenousProfile([0.0], [1.0])
    tariff = Tariff([0.11], alpha=0.001, beta=0.001)
    result = enumerate_grid(HOME, prof, tariff, GridSpec(0.01))
    assert result.objective == pytest.approx(0.001, abs=1e-12)
    assert result.trajectory.p_dis[0] == pytest.approx(1.0, abs=1e-12)


def test_zero_scenario():
    prof = ExogenousProfile(np.zeros(3), np.zeros(3))
    tariff = Tariff.flat(0.11, 3, alpha=0.001, beta=0.001)
    for comp in (False, True):
        assert enumerate_grid(HOME, prof, tariff, enforce_complementarity=comp).objective == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_matches_naive_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    params = random_params(rng)
    prof = random_profile(rng, 2)
    tariff = tariff_for_row(rng, 2, 1 + seed % 5)
    for comp in (False, True):
        got = enumerate_grid(params, prof, tariff, GridSpec(0.4), comp).objective
        assert got == pytest.approx(_naive(params, prof, tariff, 0.4, comp), abs=1e-12)


def test_oracle_brackets_lp_and_complementarity_dominates():
    rng = np.random.default_rng(30)
    for k in range(6):
        params, prof = random_params(rng), random_profile(rng, 3)
        tariff = tariff_for_row(rng, 3, 1 + k % 5)
        *_, out, _ = solve_p1(params, prof, tariff)
        relaxed = enumerate_grid(params, prof, tariff)
        strict = enumerate_grid(params, prof, tariff, enforce_complementarity=True)
        assert out.objective <= relaxed.objective + 1e-12
        assert relaxed.objective - out.objective <= relaxed.error_bound
        assert strict.objective >= relaxed.objective - 1e-12
        if classify_regime(tariff).guaranteed_clean:
            assert strict.objective - relaxed.objective <= relaxed.error_bound
        assert check_feasible(relaxed.trajectory, params, prof, tariff).feasible
        assert check_feasible(strict.trajectory, params, prof, tariff).feasible
        assert np.all(np.minimum(strict.trajectory.p_ch, strict.trajectory.p_dis) == 0)


def test_error_bound_formula():
    tariff = Tariff([0.1, 0.2], alpha=0.01, beta=0.02)
    assert GridSpec(0.05).error_bound(tariff) == pytest.approx((0.3 + 2 * 0.03) * 0.05)


def test_defaults_and_limits():
    assert GridSpec.default_for(2).step == 0.05
    assert GridSpec.default_for(3).step == 0.1
    with pytest.raises(ValueError):
        GridSpec(0.0)
    prof = ExogenousProfile(np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError, match="horizon"):
        enumerate_grid(HOME, prof, Tariff.flat(0.1, 4))
