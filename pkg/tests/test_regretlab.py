import math

import numpy as np
import pytest
from scipy.special import erf

from mpcpsrl.bayes import GaussianLinearPrior, posterior_from_data, prior_posterior
from mpcpsrl.envs import MdpSpec, SyntheticLinearMdp
from mpcpsrl.regretlab import (
    GridSpec,
    LinearMdpPrior,
    SymmetricNoiseSpec,
    bayes_regret_experiment,
    concentration_check,
    evaluate_policy,
    grid_dp_oracle,
    l1_gaussian_shared_cov,
    lemma1_bound_check,
    lemma1_suite,
    tv_agreement_suite,
    tv_gaussian_shared_cov,
    variance_sum_experiment,
)
from mpcpsrl.regretlab.concentration import concentration_radius
from mpcpsrl.regretlab.information import log_bound_constant, orthonormal_closed_form, unit_ball
from mpcpsrl.regretlab.regret import aggregate, run_single_mdp
from mpcpsrl.regretlab.tv import l1_numeric_1d, l1_uniform_product

# ---- total variation and the Lipschitz bound --------------------------------


def test_tv_unit_shift_example():
    x = np.arange(-12.0, 13.0 + 5e-5, 1e-4)
    p = np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi)
    q = np.exp(-0.5 * (x - 1) ** 2) / math.sqrt(2 * math.pi)
    trapezoid = 0.5 * np.trapezoid(np.abs(p - q), x)
    assert trapezoid == pytest.approx(0.382925, abs=1e-6)
    assert tv_gaussian_shared_cov([0.0], [1.0], 1.0) == pytest.approx(trapezoid, abs=1e-8)
    assert l1_gaussian_shared_cov([0.0], [1.0], 1.0) == pytest.approx(2 * trapezoid, abs=1e-8)


def test_tv_depends_only_on_distance():
    rng = np.random.default_rng(0)
    mu1, mu2 = rng.normal(size=4), rng.normal(size=4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = tv_gaussian_shared_cov(mu1, mu2, 0.7)
    b = tv_gaussian_shared_cov(q @ mu1, q @ mu2, 0.7)
    assert a == pytest.approx(b, abs=1e-12)
    assert tv_gaussian_shared_cov(mu1, mu1, 0.7) == 0.0
    with pytest.raises(ValueError):
        tv_gaussian_shared_cov(mu1, mu2, 0.0)


def test_tv_agreement_suite_small():
    out = tv_agreement_suite(20, np.random.default_rng(1))
    assert out["max_abs_error"] < 1e-7


@pytest.mark.parametrize(
    "family, constant",
    [
        ("gaussian", math.sqrt(2 / (math.pi * 0.49))),
        ("laplace", math.sqrt(2) / 0.7),
        ("uniform", 1 / (0.7 * math.sqrt(3))),
    ],
)
def test_lipschitz_constants(family, constant):
    assert SymmetricNoiseSpec(family, 0.7).lipschitz_constant == pytest.approx(constant, rel=1e-12)


def test_bound_holds_on_examples():
    gauss = lemma1_bound_check(SymmetricNoiseSpec("gaussian", 1.0, 3), [0, 0, 0], [0.3, -0.4, 1.2])
    assert gauss.holds and not gauss.flagged
    assert gauss.numeric_l1 == pytest.approx(l1_gaussian_shared_cov([0, 0, 0], [0.3, -0.4, 1.2], 1.0), abs=1e-8)
    lap = lemma1_bound_check(SymmetricNoiseSpec("laplace", 0.5, 2), [0, 0], [0, 0.8])
    b = 0.5 / math.sqrt(2)
    # shifted Laplace densities: L1 = 2 (1 - exp(-d / (2b)))
    expected = 2 * (1 - math.exp(-0.8 / (2 * b)))
    assert lap.holds and lap.numeric_l1 == pytest.approx(expected, abs=1e-8)
    assert lemma1_bound_check(SymmetricNoiseSpec("gaussian", 1.0), [2.0], [2.0]).bound == 0.0


def test_uniform_bound_is_tight_below_width_and_saturates_above():
    noise = SymmetricNoiseSpec("uniform", 1.0)
    width = 2 * math.sqrt(3)
    inside = lemma1_bound_check(noise, [0.0], [1.0])
    assert inside.numeric_l1 == pytest.approx(inside.bound, rel=1e-9)
    assert inside.holds
    assert l1_numeric_1d(noise, 0.0, width + 0.5) == pytest.approx(2.0, abs=1e-9)


def test_uniform_diagonal_shift_exceeds_bound():
    noise = SymmetricNoiseSpec("uniform", 1.0, 2)
    with pytest.raises(ValueError):
        lemma1_bound_check(noise, [0, 0], [1, 1])
    exact = l1_uniform_product(noise, [0, 0], [1, 1])
    half = math.sqrt(3)
    rng = np.random.default_rng(2)
    x = rng.uniform(-half, half + 1, (400_000, 2))
    in_p = np.all(np.abs(x) <= half, axis=1)
    in_q = np.all(np.abs(x - 1) <= half, axis=1)
    area = (2 * half + 1) ** 2
    mc = area * np.mean(in_p ^ in_q) / (2 * half) ** 2
    assert exact == pytest.approx(mc, abs=0.01)
    assert exact > noise.lipschitz_constant * math.sqrt(2)


def test_lemma1_suite_has_no_violations():
    out = lemma1_suite(10, np.random.default_rng(3))
    assert out["violations"] == 0
    assert len(out["rows"]) == 30
    assert all(v["max_ratio"] <= 1.0 + 1e-8 for v in out["families"].values())


# ---- posterior concentration -----------------------------------------------


def test_concentration_radius_example():
    assert concentration_radius(1.0, 1, 0.05) == pytest.approx(2 * math.sqrt(2 * math.log(40)))


def test_single_output_coverage_matches_erf():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=(20, 3))
    post = posterior_from_data(GaussianLinearPrior.isotropic(3, 1.0, 0.1), phi, rng.normal(size=(20, 1)))
    delta = 0.1
    res = concentration_check(post, rng.normal(size=(4, 3)), delta, 100_000, rng)
    # the paired gap is N(0, 2v), so coverage is erf(sqrt(2 log(2/delta)))
    exact = erf(math.sqrt(2 * math.log(2 / delta)))
    assert np.all(np.abs(res.coverage - exact) <= 4 * math.sqrt(exact * (1 - exact) / 100_000))
    assert res.holds


def test_trivial_coverage_cases():
    rng = np.random.default_rng(8)
    loose = posterior_from_data(GaussianLinearPrior.isotropic(2, 1.0, 1.0), rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    res = concentration_check(loose, [[1.0, 0.0]], 0.5, 1000, rng)
    assert 0.0 <= res.coverage[0] <= 1.0 and res.holds
    tight = GaussianLinearPrior(np.eye(2) * 1e-12, 1.0)
    res = concentration_check(prior_posterior(tight, 3), [[0.6, 0.8]], 0.05, 10_000, rng)
    assert res.coverage[0] == 1.0


def test_multi_output_coverage_holds():
    rng = np.random.default_rng(5)
    phi = rng.normal(size=(20, 4))
    post = posterior_from_data(GaussianLinearPrior.isotropic(4, 1.0, 0.01), phi, rng.normal(size=(20, 3)))
    res = concentration_check(post, rng.normal(size=(5, 4)), 0.05, 50_000, rng)
    assert res.holds and np.all(res.coverage >= 0.9)
    with pytest.raises(ValueError):
        concentration_check(post, phi[:1], 1.5, 10, rng)


# ---- variance sum ------------------------------------------------------------


def test_log_bound_constant_example():
    assert log_bound_constant(1.0, 0.01) == pytest.approx(100 / math.log(101))


def test_single_episode_picks_largest_prior_variance():
    rng = np.random.default_rng(6)
    res = variance_sum_experiment(3, 1, rng, points_per_episode=10)
    points = np.random.default_rng(6)
    offered = unit_ball(10, 3, points)
    assert res.variances[0] == pytest.approx(np.max(np.sum(offered**2, axis=1)))
    assert res.pointwise_violations == 0


def test_orthonormal_stream_is_harmonic():
    n = 500
    res = variance_sum_experiment(1, n, np.random.default_rng(0), noise_variance=1.0, stream="orthonormal")
    np.testing.assert_allclose(res.variances, 1.0 / np.arange(1, n + 1), rtol=1e-12)
    assert res.cumulative[-1] == pytest.approx(sum(1.0 / k for k in range(1, n + 1)), rel=1e-12)
    closed = orthonormal_closed_form(4, 40, 0.5, 2.0)
    got = variance_sum_experiment(4, 40, np.random.default_rng(0), noise_variance=0.5, prior_scale=2.0, stream="orthonormal")
    np.testing.assert_allclose(got.variances, closed, rtol=1e-12)


@pytest.mark.parametrize("d", [2, 4])
def test_variance_sum_bound_and_log_growth(d):
    res = variance_sum_experiment(d, 1000, np.random.default_rng(d))
    assert res.pointwise_violations == 0 and res.curve_violations == 0
    assert res.ratio(1000) < res.ratio(100)
    with pytest.raises(ValueError):
        res.ratio(1)


# ---- grid DP -----------------------------------------------------------------


class QuadraticMdp:
    """s' = s + a + eps, r = -(s + a)^2."""

    def __init__(self, horizon, sigma_f=0.1):
        self.spec = MdpSpec("quad", 1, 1, horizon, 0.0, sigma_f, 100.0, (-1.0,), (1.0,))
        self.init_state = np.array([1.5])

    def oracle_mean_dynamics(self, states, actions):
        nxt = states + actions
        return nxt, -(nxt[:, 0] ** 2)


def test_zero_reward_has_zero_value():
    env = SyntheticLinearMdp([[0.8, 0.5]], [0.0, 0.0], horizon=6)
    sol = grid_dp_oracle(env, GridSpec((-3.0,), (3.0,), 51, 11))
    assert np.all(sol.values == 0.0)


@pytest.mark.parametrize("s0, expected", [(1.5, -0.25), (0.4, 0.0), (-1.8, -0.64)])
def test_quadratic_reward_closed_form(s0, expected):
    env = QuadraticMdp(horizon=2)
    sol = grid_dp_oracle(env, GridSpec((-2.0,), (2.0,), 101, 41), init_state=[s0])
    # V(s) = -(|s| - 1)_+^2; grid error from the action step 0.05 is below 1e-3
    assert sol.initial_value == pytest.approx(expected, abs=1e-3)


def test_one_step_quadratic_optimum_on_grid():
    env = QuadraticMdp(horizon=1, sigma_f=0.0)
    sol = grid_dp_oracle(env, GridSpec((-2.0,), (2.0,), 101, 41), init_state=[0.4])
    assert sol.initial_value == pytest.approx(0.0, abs=1e-12)
    assert sol.policy.act(0, [[0.4]])[0, 0] == pytest.approx(-0.4)


def test_one_step_linear_reward_picks_bound():
    env = SyntheticLinearMdp([[0.5, 1.0]], [0.3, -2.0], horizon=1)
    assert grid_dp_oracle(env, GridSpec((-2.0,), (2.0,), 41, 21)).initial_value == pytest.approx(2.0)
    env2 = SyntheticLinearMdp([[0.5, 0.0, 1.0], [0.1, 0.4, 0.0]], [0.3, 0.1, 1.5], horizon=1)
    assert grid_dp_oracle(env2, GridSpec((-2.0, -2.0), (2.0, 2.0), 21, 11)).initial_value == pytest.approx(1.5)


def test_grid_refinement_changes_value_by_under_one_percent():
    env = SyntheticLinearMdp([[0.9, 0.6]], [1.0, -0.2], horizon=10)
    grid = GridSpec((-8.0,), (8.0,), 101, 41)
    v = grid_dp_oracle(env, grid).initial_value
    v_fine = grid_dp_oracle(env, grid.refined()).initial_value
    assert abs(v - v_fine) <= 0.01 * abs(v_fine)


def test_rollout_value_matches_dp_value():
    env = SyntheticLinearMdp([[0.9, 0.6]], [1.0, -0.2], horizon=10)
    sol = grid_dp_oracle(env, GridSpec((-8.0,), (8.0,), 101, 41))
    returns = evaluate_policy(env, sol.policy, np.random.default_rng(7).standard_normal((4000, 10, 1)))
    assert abs(returns.mean() - sol.initial_value) < 4 * returns.std() / math.sqrt(4000) + 0.01 * abs(sol.initial_value)
    assert sol.policy.escape_rate == 0.0


def test_grid_policy_counts_escapes():
    env = SyntheticLinearMdp([[0.9, 0.6]], [1.0, -0.2], horizon=2)
    policy = grid_dp_oracle(env, GridSpec((-1.0,), (1.0,), 11, 5)).policy
    policy.act(0, np.array([[0.0], [5.0]]))
    assert policy.escape_rate == 0.5
    with pytest.raises(ValueError):
        GridSpec((-1.0,), (-2.0,))


# ---- Bayesian regret ---------------------------------------------------------


def test_aggregate_hand_example():
    rec = aggregate(5, [np.array([1.0, 2.0]), np.array([3.0, 4.0])])
    assert [r.regret for r in rec] == [2.0, 3.0]
    assert [r.cumulative for r in rec] == [2.0, 5.0]
    assert [r.T for r in rec] == [5, 10]
    assert rec[0].stderr == pytest.approx(1.0)
    assert rec[1].cumulative_stderr == pytest.approx(2.0)


SMALL = dict(n_rollouts=200, n_states=41, n_actions=21)


def test_known_mdp_has_zero_regret():
    run = run_single_mdp(LinearMdpPrior(), 5, 6, 0, known_mdp=True, **SMALL)
    assert np.all(run.delta == 0.0)
    assert abs(run.delta_oracle.mean()) < 5 * max(run.delta_oracle.std(), 1e-3)


def test_regret_is_nonnegative_on_average_and_shrinks():
    tables = bayes_regret_experiment(LinearMdpPrior(), [5], 300, 4, 11, **SMALL)
    table = tables[5]
    assert table.n_mdps == 4 and len(table.records) == 60
    per_episode = np.array([r.regret for r in table.records])
    assert per_episode[:10].sum() > per_episode[-10:].sum()
    assert table.cumulative_at(300) >= -3 * table.records[-1].cumulative_stderr
    assert table.growth_ratio(50, 4) < 4
    with pytest.raises(ValueError):
        table.cumulative_at(305 * 5)


def test_regret_is_independent_of_worker_count():
    a = bayes_regret_experiment(LinearMdpPrior(), [4], 24, 2, 3, workers=1, **SMALL)[4]
    b = bayes_regret_experiment(LinearMdpPrior(), [4], 24, 2, 3, workers=2, **SMALL)[4]
    assert [r.cumulative for r in a.records] == [r.cumulative for r in b.records]


def test_horizon_longer_than_budget_is_rejected():
    with pytest.raises(ValueError):
        bayes_regret_experiment(LinearMdpPrior(), [50], 10, 1, 0, **SMALL)
