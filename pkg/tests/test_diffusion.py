import numpy as np
import pytest

from antlab.diffusion import (
    FIRST_ORDER,
    SECOND_ORDER,
    NoiseSchedule,
    SamplerPlan,
    forward_noise,
    make_cosine_schedule,
    sampler_step,
    snr_at,
    x0_from_eps,
    x0_to_eps,
)


def test_cosine_schedule_default_T():
    sched = make_cosine_schedule(50)
    assert sched.T == 50
    assert np.all(np.diff(sched.alpha_bar) < 0.0)
    assert sched.abar(50) < 0.01
    assert sched.abar(0) == 1.0


def test_cosine_schedule_single_step():
    sched = make_cosine_schedule(1)
    assert 0.0 < sched.beta[0] < 1.0


@pytest.mark.parametrize("T", list(range(1, 201, 7)) + [200])
def test_cosine_schedule_monotone_sweep(T):
    sched = make_cosine_schedule(T)
    assert np.all(np.diff(sched.alpha_bar) < 0.0)
    assert np.all((sched.beta > 0.0) & (sched.beta < 1.0))


def test_cosine_schedule_rejects_bad_T():
    with pytest.raises(ValueError):
        make_cosine_schedule(0)


def test_schedule_csv_round_trip():
    sched = make_cosine_schedule(5)
    lines = sched.to_csv().strip().split("\n")
    assert lines[0] == "t,beta,alpha_bar"
    assert len(lines) == 6
    t, beta, abar = lines[3].split(",")
    assert int(t) == 3
    assert float(beta) == sched.beta[2]
    assert float(abar) == sched.alpha_bar[3]


def test_forward_noise_zero_noise_endpoint():
    sched = make_cosine_schedule(10)
    x0 = np.array([1.0, -2.0, 0.5])
    eps = np.array([5.0, 5.0, 5.0])
    np.testing.assert_array_equal(forward_noise(x0, 0, eps, sched), x0)


def test_forward_noise_zero_signal():
    sched = make_cosine_schedule(10)
    eps = np.array([1.0, 2.0])
    t = 4
    expected = np.sqrt(1.0 - sched.abar(t)) * eps
    np.testing.assert_allclose(forward_noise(np.zeros(2), t, eps, sched), expected)


def test_forward_noise_out_of_range_and_shape():
    sched = make_cosine_schedule(10)
    with pytest.raises(ValueError):
        forward_noise(np.zeros(2), 11, np.zeros(2), sched)
    with pytest.raises(ValueError):
        forward_noise(np.zeros(2), 3, np.zeros(3), sched)


def test_forward_noise_monte_carlo_variance():
    # sample variance of x_t over eps draws matches 1 - abar_t within 5%
    sched = make_cosine_schedule(50)
    rng = np.random.default_rng(123)
    x0 = np.array([0.4, -1.2, 0.0, 2.0])
    t = 20
    draws = np.stack(
        [forward_noise(x0, t, rng.standard_normal(4), sched) for _ in range(10_000)]
    )
    var = draws.var(axis=0).mean()
    expected = 1.0 - sched.abar(t)
    assert abs(var - expected) / expected < 0.05


def test_x0_to_eps_inverts_forward_noise():
    sched = make_cosine_schedule(50)
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(6, 2))
    eps = rng.normal(size=(6, 2))
    for t in (1, 17, 50):
        x_t = forward_noise(x0, t, eps, sched)
        np.testing.assert_allclose(x0_to_eps(x0, x_t, t, sched), eps, atol=1e-12)


def test_x0_to_eps_zero_case_and_error():
    sched = make_cosine_schedule(50)
    rng = np.random.default_rng(6)
    x_t = rng.normal(size=3)
    t = 9
    x0_hat = x_t / np.sqrt(sched.abar(t))
    np.testing.assert_allclose(x0_to_eps(x0_hat, x_t, t, sched), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        x0_to_eps(x_t, x_t, 0, sched)


def test_sampler_terminal_step_returns_x0_hat():
    sched = make_cosine_schedule(50)
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(4, 2))
    eps = rng.normal(size=(4, 2))
    t = 30
    x_t = forward_noise(x0, t, eps, sched)
    out = sampler_step(x_t, eps, t, 0, sched, FIRST_ORDER)
    np.testing.assert_allclose(out, x0, atol=1e-12)


@pytest.mark.parametrize("method", [FIRST_ORDER, SECOND_ORDER])
def test_oracle_denoiser_rollout_recovers_x0(method):
    # with the true eps at every step, any plan ending at t=0 returns x0
    sched = make_cosine_schedule(50)
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=(8, 2))
    eps = rng.normal(size=(8, 2))

    for plan in (
        SamplerPlan(method, tuple(range(50, 0, -1))),
        SamplerPlan.equispaced(50, 10, method),
    ):
        x = forward_noise(x0, plan.step_times[0], eps, sched)
        prev_x0, prev_t = None, None
        for from_t, to_t in plan.transitions():
            eps_true = x0_to_eps(x0, x, from_t, sched)
            new_x = sampler_step(
                x, eps_true, from_t, to_t, sched, method, prev_x0, prev_t
            )
            prev_x0 = x0_from_eps(x, eps_true, from_t, sched)
            prev_t = from_t
            x = new_x
        np.testing.assert_allclose(x, x0, atol=1e-10)


def test_equispaced_plan_visits_exactly_n_times():
    plan = SamplerPlan.equispaced(50, 10)
    assert plan.step_times == (50, 45, 40, 35, 30, 25, 20, 15, 10, 5)
    assert plan.n_steps == 10
    assert len(plan.transitions()) == 10
    assert plan.transitions()[-1] == (5, 0)


def test_sampler_rejects_nondecreasing_pair():
    sched = make_cosine_schedule(10)
    with pytest.raises(ValueError):
        sampler_step(np.zeros(2), np.zeros(2), 3, 3, sched)


def test_second_order_uses_history():
    sched = make_cosine_schedule(50)
    rng = np.random.default_rng(9)
    x_t = rng.normal(size=4)
    eps = rng.normal(size=4)
    prev = rng.normal(size=4)
    first = sampler_step(x_t, eps, 30, 20, sched, FIRST_ORDER)
    second = sampler_step(x_t, eps, 30, 20, sched, SECOND_ORDER, prev, 40)
    assert np.linalg.norm(first - second) > 1e-8


def test_snr_direct_value():
    assert snr_at(4.0, 2.0, 1.0) == pytest.approx(2.0)


def test_snr_zero_signal():
    assert snr_at(0.0, 3.0, 0.5) == 0.0


def test_snr_halves_when_t_doubles():
    assert snr_at(1.0, 2.0, 0.7) == pytest.approx(snr_at(1.0, 1.0, 0.7) / 2.0)


def test_snr_zero_energy_errors():
    with pytest.raises(ValueError):
        snr_at(1.0, 0.0, 1.0)


def test_snr_ordering_matches_power_ordering():
    # lower signal power gives lower SNR at equal time, for both noise forms
    sched = make_cosine_schedule(50)
    for noise in (0.8, sched):
        t = 10
        assert snr_at(0.5, t, noise) < snr_at(2.0, t, noise)


def test_schedule_invariants_enforced():
    with pytest.raises(ValueError):
        NoiseSchedule(T=2, beta=np.array([0.5, 1.5]), alpha_bar=np.array([1.0, 0.5, 0.25]))
