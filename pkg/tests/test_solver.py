import math

import numpy as np
import pytest

from conftest import random_waterfill_inputs
from eewaterfill.solver import (
    AlphaState,
    ConvergenceError,
    SectorProblem,
    SolverConfig,
    SolverConfigError,
    SolverVariant,
    WaterfillInputs,
    bisect_mu,
    cutoff,
    default_mann_delta,
    dinkelbach_lambda,
    f_of_lambda,
    load_waterfill_inputs,
    mann_update,
    save_waterfill_inputs,
    solve_parametric,
    throughput_max_step,
    update_dual_prices,
    waterfill,
)

LN2 = math.log(2.0)
CFG = SolverConfig()


def _inputs(chi, price=0.0, tau=0.0, lam=0.0, slope=4.7, delta_f=180e3,
            total=39.81, cap=None):
    chi = np.asarray(chi, dtype=float)
    if cap is None:
        cap = total
    return WaterfillInputs(
        chi=chi, price_sum=price, tau=tau, slope=slope, delta_f=delta_f,
        total_cap=total, per_subcarrier_cap=cap, lam=lam,
    )


# ---------------------------------------------------------------------------
# cutoff


def test_cutoff_constant_without_pricing():
    wf = _inputs(np.array([1e4, 1e5, 1e6]), lam=2e4)
    om = cutoff(wf, mu=0.5)
    assert np.all(om == om[0])  # single level across the band


def test_cutoff_zero_when_all_multipliers_zero():
    wf = _inputs(np.array([1e4, 1e5]))
    assert np.all(cutoff(wf, mu=0.0) == 0.0)


def test_cutoff_direct_value():
    wf = _inputs(np.array([1.0]), lam=1.0, slope=4.7)
    expected = LN2 * 4.7 / 180e3
    assert cutoff(wf, mu=0.0)[0] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.810e-5, abs=1e-8)


def test_cutoff_varies_with_prices_and_tau():
    wf = _inputs(np.array([1e5, 1e5]), price=np.array([0.0, 1e-4]), lam=1e4)
    om = cutoff(wf, mu=0.0)
    assert om[1] > om[0]
    wf_tau = _inputs(np.array([1e5]), lam=1e4, tau=np.array([1.0]))
    wf_no = _inputs(np.array([1e5]), lam=1e4)
    assert cutoff(wf_tau, 0.0)[0] == pytest.approx(cutoff(wf_no, 0.0)[0] / 2.0)


# ---------------------------------------------------------------------------
# waterfill closed form


def test_waterfill_threshold_rule():
    rng = np.random.default_rng(0)
    for _ in range(200):
        wf = random_waterfill_inputs(rng)
        mu = float(rng.lognormal(0.0, 2.0)) if rng.random() < 0.7 else 0.0
        if np.all(_den := cutoff(wf, mu)) == 0.0:
            continue
        p = waterfill(wf, mu)
        om = cutoff(wf, mu)
        positive = p > 0
        above = wf.chi > om
        assert np.array_equal(positive, above)


def test_waterfill_direct_value():
    # water level 2e-5 W against chi = 1e5 leaves 1e-5 W
    lam_delta = 180e3 / (LN2 * 2e-5)
    wf = _inputs(np.array([1e5]), lam=lam_delta / 4.7)
    p = waterfill(wf, mu=0.0)
    assert p[0] == pytest.approx(1e-5, rel=1e-9)


def test_waterfill_clamps_to_cap():
    lam_delta = 180e3 / (LN2 * 2e-5)
    wf = _inputs(np.array([1e5]), lam=lam_delta / 4.7, cap=np.array([4e-6]))
    assert waterfill(wf, mu=0.0)[0] == 4e-6


def test_waterfill_zero_chi_gets_zero_power():
    wf = _inputs(np.array([0.0, 1e5]), lam=1e4)
    p = waterfill(wf, mu=0.0)
    assert p[0] == 0.0 and p[1] > 0.0


def test_waterfill_unbounded_level_raises():
    wf = WaterfillInputs(
        chi=np.array([1e5]), price_sum=0.0, tau=0.0, slope=4.7,
        delta_f=180e3, total_cap=1.0, per_subcarrier_cap=np.array([np.inf]),
        lam=0.0,
    )
    with pytest.raises(SolverConfigError):
        waterfill(wf, mu=0.0)


def test_waterfill_zero_denominator_with_finite_cap_saturates():
    wf = _inputs(np.array([1e5, 0.0]), total=2.0, cap=np.array([2.0, 2.0]))
    p = waterfill(wf, mu=0.0)
    assert p[0] == 2.0 and p[1] == 0.0


# the three closed forms written out separately, to pin the unified code path
def _reference_no_pricing(wf, mu):
    denom = (LN2 / wf.delta_f) * (wf.lam * wf.slope + mu)
    with np.errstate(divide="ignore"):
        p = 1.0 / denom - 1.0 / wf.chi
    p = np.where(wf.chi > 0.0, p, 0.0)
    return np.clip(p, 0.0, wf.per_subcarrier_cap)


def _reference_pricing(wf, mu):
    denom = (LN2 / wf.delta_f) * (wf.lam * wf.slope + mu) + wf.price_sum
    with np.errstate(divide="ignore"):
        p = 1.0 / denom - 1.0 / wf.chi
    p = np.where(wf.chi > 0.0, p, 0.0)
    return np.clip(p, 0.0, wf.per_subcarrier_cap)


def _reference_qos(wf, mu):
    denom = (LN2 / wf.delta_f) * (wf.lam * wf.slope + mu) + wf.price_sum
    with np.errstate(divide="ignore"):
        p = (1.0 + wf.tau) / denom - 1.0 / wf.chi
    p = np.where(wf.chi > 0.0, p, 0.0)
    return np.clip(p, 0.0, wf.per_subcarrier_cap)


def test_reduction_identities_bit_exact():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        wf = random_waterfill_inputs(rng)
        if np.all(cutoff(wf, 0.0) == 0.0):
            continue
        mu = float(rng.lognormal(0.0, 2.0))
        # QoS form with tau = 0 equals the pricing form, bit for bit
        wf_tau0 = WaterfillInputs(
            chi=wf.chi, price_sum=wf.price_sum, tau=np.zeros(wf.n),
            slope=wf.slope, delta_f=wf.delta_f, total_cap=wf.total_cap,
            per_subcarrier_cap=wf.per_subcarrier_cap, lam=wf.lam,
        )
        assert np.array_equal(waterfill(wf_tau0, mu), _reference_pricing(wf_tau0, mu))
        # pricing form with prices = 0 equals the plain form, bit for bit
        wf_pi0 = WaterfillInputs(
            chi=wf.chi, price_sum=np.zeros(wf.n), tau=np.zeros(wf.n),
            slope=wf.slope, delta_f=wf.delta_f, total_cap=wf.total_cap,
            per_subcarrier_cap=wf.per_subcarrier_cap, lam=wf.lam,
        )
        assert np.array_equal(waterfill(wf_pi0, mu), _reference_no_pricing(wf_pi0, mu))
        # full QoS form agrees with its own spelled-out reference
        assert np.array_equal(waterfill(wf, mu), _reference_qos(wf, mu))


def test_waterfill_kkt_stationarity():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(300):
        wf = random_waterfill_inputs(rng)
        if np.all(cutoff(wf, 0.0) == 0.0):
            continue
        res = bisect_mu(wf)
        p = res.powers
        denom = (LN2 / wf.delta_f) * (wf.lam * wf.slope + res.mu) + wf.price_sum
        interior = (p > 0) & (p < wf.per_subcarrier_cap)
        if not interior.any():
            continue
        lhs = (1.0 + wf.tau[interior]) * wf.chi[interior] / (1.0 + p[interior] * wf.chi[interior])
        assert np.all(np.abs(lhs - denom[interior]) <= 1e-8 * denom[interior])
        checked += 1
    assert checked > 50


# ---------------------------------------------------------------------------
# bisection


def test_bisect_slack_budget_gives_zero_mu():
    wf = _inputs(np.array([1e5, 5e4]), lam=1e6, total=39.81)
    res = bisect_mu(wf)
    assert res.mu == 0.0
    assert res.powers.sum() < wf.total_cap


def test_bisect_budget_and_complementary_slackness():
    rng = np.random.default_rng(3)
    for _ in range(300):
        wf = random_waterfill_inputs(rng)
        if np.all(cutoff(wf, 0.0) == 0.0):
            continue
        res = bisect_mu(wf)
        total = res.powers.sum()
        assert total <= wf.total_cap * (1 + 1e-6)
        if res.mu > 0:
            assert res.mu * (wf.total_cap - total) <= 1e-6 * res.mu * wf.total_cap


def test_bisect_sum_monotone_in_mu():
    rng = np.random.default_rng(4)
    for _ in range(100):
        wf = random_waterfill_inputs(rng)
        if np.all(cutoff(wf, 0.0) == 0.0):
            continue
        mus = np.sort(rng.lognormal(0.0, 3.0, size=50))
        sums = np.array([waterfill(wf, m).sum() for m in mus])
        assert np.all(np.diff(sums) <= 0.0)


def test_bisect_matches_mu_grid_oracle():
    # two subcarriers, lam = 0: pure budget-constrained fill
    wf = _inputs(np.array([1e5, 5e4]), total=1e-5, cap=1e-5)
    res = bisect_mu(wf)
    # closed-form optimum puts everything on the stronger subcarrier here
    assert res.powers[0] == pytest.approx(1e-5, rel=1e-6)
    assert res.powers[1] == pytest.approx(0.0, abs=1e-11)
    # 1-D grid over mu as an independent check of the bisection target
    mus = np.linspace(res.mu * 0.5, res.mu * 1.5, 20001)
    sums = np.array([waterfill(wf, m).sum() for m in mus])
    best = mus[np.argmin(np.abs(sums - wf.total_cap))]
    assert res.mu == pytest.approx(best, rel=1e-3)


def test_bisect_max_iters_raises():
    wf = _inputs(np.array([1e5, 5e4]), total=1e-5, cap=1e-5)
    with pytest.raises(ConvergenceError):
        bisect_mu(wf, max_iters=3)


# ---------------------------------------------------------------------------
# ratio iteration


def _sector(chis, price=None, lam_scale=1.0, slope=4.7, base=130.0,
            delta_f=180e3, total=39.81):
    wf = WaterfillInputs(
        chi=np.asarray(chis, dtype=float),
        price_sum=price if price is not None else np.zeros(len(chis)),
        tau=np.zeros(len(chis)),
        slope=slope, delta_f=delta_f, total_cap=total,
        per_subcarrier_cap=np.full(len(chis), total),
    )
    return SectorProblem(transmitters=[wf], base_power=base)


def test_dinkelbach_converges_and_f_small():
    problem = _sector([1e5, 5e4, 2e4])
    start = [np.full(3, 39.81 / 3)]
    res = dinkelbach_lambda(problem, start, CFG)
    assert res.converged
    assert abs(res.f_value) <= CFG.dinkelbach_eps * max(1.0, res.consumed)
    assert res.lam == pytest.approx(res.rate / res.consumed, rel=1e-9)


def test_dinkelbach_sign_property():
    problem = _sector([1e5, 5e4, 2e4])
    res = dinkelbach_lambda(problem, [np.full(3, 13.27)], CFG)
    for u in (0.01, 0.05, 0.2, 0.5):
        assert f_of_lambda(problem, res.lam * (1 - u), CFG) > 0
        assert f_of_lambda(problem, res.lam * (1 + u), CFG) < 0


def test_dinkelbach_matches_2d_grid_oracle():
    # independent exhaustive maximization of rate/power over the 2-D simplex
    chi = np.array([2e5, 4e4])
    problem = _sector(chi, base=130.0, total=10.0)
    res = dinkelbach_lambda(problem, [np.full(2, 5.0)], CFG)

    axis = np.linspace(0.0, 10.0, 600)
    p1, p2 = np.meshgrid(axis, axis, indexing="ij")
    feasible = p1 + p2 <= 10.0
    rate = 180e3 * (np.log2(1 + p1 * chi[0]) + np.log2(1 + p2 * chi[1]))
    power = 130.0 + 4.7 * (p1 + p2)
    ee = np.where(feasible, rate / power, -np.inf)
    best = ee.max()
    assert res.lam >= best * 0.99
    assert res.lam == pytest.approx(best, rel=0.01)


def test_dinkelbach_zero_rate_sector():
    problem = _sector([0.0, 0.0])
    res = dinkelbach_lambda(problem, [np.zeros(2)], CFG)
    assert res.converged
    assert res.lam == 0.0
    assert all(np.all(p == 0) for p in res.powers)


def test_throughput_max_flat_channel_splits_evenly():
    problem = _sector([1e5, 1e5, 1e5, 1e5], total=8.0)
    res = throughput_max_step(problem, CFG)
    p = res.powers[0]
    assert p.sum() == pytest.approx(8.0, rel=1e-9)  # budget saturated
    assert np.allclose(p, 2.0, rtol=1e-9)


def test_throughput_max_prices_divert_power():
    chi = np.array([1e5, 1e5])
    priced = SectorProblem(
        transmitters=[
            WaterfillInputs(
                chi=chi, price_sum=np.array([0.0, 5e-5]), tau=np.zeros(2),
                slope=4.7, delta_f=180e3, total_cap=39.81,
                per_subcarrier_cap=np.full(2, 39.81),
            )
        ],
        base_power=130.0,
    )
    res = throughput_max_step(priced, CFG)
    p = res.powers[0]
    assert p[1] < p[0]  # identical chi, higher price gets less power


def test_throughput_max_matches_grid():
    chi = np.array([3e5, 6e4])
    problem = _sector(chi, total=5.0)
    res = throughput_max_step(problem, CFG)
    axis = np.linspace(0.0, 5.0, 2501)
    p1, p2 = np.meshgrid(axis, axis, indexing="ij")
    feasible = p1 + p2 <= 5.0
    rate = 180e3 * (np.log2(1 + p1 * chi[0]) + np.log2(1 + p2 * chi[1]))
    best = rate[feasible].max()
    assert problem.rate(res.powers) >= best * 0.99


# ---------------------------------------------------------------------------
# damping and dual prices


def test_mann_delta_schedule():
    assert default_mann_delta(0) == 1.0
    assert default_mann_delta(1) == pytest.approx(1.0 / 3.0)
    assert default_mann_delta(10**9) == pytest.approx(0.5, abs=1e-6)


def test_mann_update_examples():
    old = np.array([3.0, 0.0])
    new = np.array([0.0, 6.0])
    assert np.array_equal(mann_update(old, new, 0), new)
    assert np.allclose(mann_update(old, new, 1), (2 / 3) * old + (1 / 3) * new)
    blended = mann_update(old, new, 7)
    assert np.all(blended >= np.minimum(old, new))
    assert np.all(blended <= np.maximum(old, new))


def test_dual_price_projection_and_rise():
    cfg = CFG
    tau = np.zeros(2)
    rates = np.array([600e3, 100e3])
    r_min = np.array([512e3, 512e3])
    state = AlphaState.initial(2, cfg.qos_alpha0)
    tau2, state2, infeasible = update_dual_prices(tau, rates, r_min, state, cfg)
    assert tau2[0] == 0.0  # satisfied user stays at zero
    assert tau2[1] > 0.0  # deficit pushes the price up
    assert not infeasible.any()
    # satisfied user with positive tau decays toward zero
    tau3, _, _ = update_dual_prices(np.array([0.5, 0.5]), rates, r_min, state2, cfg)
    assert tau3[0] < 0.5


def test_dual_price_adaptive_step_doubles_on_stall():
    cfg = CFG
    state = AlphaState.initial(1, cfg.qos_alpha0)
    # deficit 100 kbps then 95 kbps: 95 > 0.9*100, so the step doubles
    _, state, _ = update_dual_prices(
        np.zeros(1), np.array([412e3]), np.array([512e3]), state, cfg
    )
    assert state.alpha[0] == cfg.qos_alpha0
    _, state, _ = update_dual_prices(
        np.zeros(1), np.array([417e3]), np.array([512e3]), state, cfg
    )
    assert state.alpha[0] == cfg.qos_beta * cfg.qos_alpha0
    # a fast-enough shrink (e.g. to 80 kbps) leaves the step alone
    state = AlphaState.initial(1, cfg.qos_alpha0)
    _, state, _ = update_dual_prices(
        np.zeros(1), np.array([412e3]), np.array([512e3]), state, cfg
    )
    _, state, _ = update_dual_prices(
        np.zeros(1), np.array([432e3]), np.array([512e3]), state, cfg
    )
    assert state.alpha[0] == cfg.qos_alpha0


def test_dual_price_cap_marks_infeasible():
    cfg = SolverConfig(tau_cap=10.0)
    state = AlphaState.initial(1, 1.0)
    tau = np.array([9.9])
    tau2, _, infeasible = update_dual_prices(
        tau, np.array([0.0]), np.array([512e3]), state, cfg
    )
    assert tau2[0] == 10.0
    assert infeasible[0]


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dinkelbach_eps=0.0)
    with pytest.raises(ValueError):
        SolverConfig(qos_kappa=1.5)
    with pytest.raises(ValueError):
        SolverConfig(mann_delta=lambda t: 0.5)  # delta(0) must be 1


# ---------------------------------------------------------------------------
# table round-trip


def test_waterfill_inputs_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    wf = random_waterfill_inputs(rng)
    path = tmp_path / "inputs.txt"
    save_waterfill_inputs(wf, path)
    loaded = load_waterfill_inputs(path)
    assert np.array_equal(loaded.chi, wf.chi)
    assert np.array_equal(loaded.price_sum, wf.price_sum)
    assert np.array_equal(loaded.tau, wf.tau)
    assert loaded.total_cap == wf.total_cap
    assert loaded.lam == wf.lam
    p1 = waterfill(wf, 0.123)
    p2 = waterfill(loaded, 0.123)
    assert np.array_equal(p1, p2)
