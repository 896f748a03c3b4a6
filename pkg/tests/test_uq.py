import numpy as np
import pytest

from chfuq import nn, uq
from chfuq.data import synth_generate


def oracle_pairs(n, seed):
    """Synthetic rows as (X, y) with X holding the true mean and noise scale."""
    df = synth_generate(n, seed=seed)
    return df[["mu_true", "sigma_true"]].to_numpy(), df["chf"].to_numpy()


def true_mean(X):
    return X[:, 0]


def true_sigma(X):
    return X[:, 1]


def test_empirical_quantile_examples():
    assert uq.empirical_quantile(np.arange(1, 11), 0.5).quantile == 6
    r = uq.empirical_quantile(np.arange(100, 0, -1), 0.05)
    assert (r.rank, r.quantile) == (96, 96)
    inf = uq.empirical_quantile(np.arange(10), 0.05)
    assert inf.infinite and inf.quantile == np.inf and inf.rank == 11
    with pytest.raises(ValueError):
        uq.empirical_quantile([], 0.1)
    with pytest.raises(ValueError):
        uq.empirical_quantile([1.0], 1.5)


def test_quantile_monotone_in_level(rng):
    values = rng.exponential(size=200)
    qs = [uq.empirical_quantile(values, a).quantile for a in (0.5, 0.2, 0.1, 0.05, 0.01)]
    assert qs == sorted(qs)


def test_vanilla_calibration_examples(rng):
    X = rng.normal(size=(50, 2))
    y = X[:, 0] * 3
    assert uq.cp_calibrate_vanilla(lambda X: X[:, 0] * 3, X, y, 0.1).quantile == 0.0
    assert uq.cp_calibrate_vanilla(lambda X: X[:, 0] * 3 - 2.5, X, y, 0.1).quantile == 2.5
    noise = rng.normal(size=1000)
    q = uq.cp_calibrate_vanilla(lambda X: np.zeros(len(X)), np.zeros((1000, 1)), noise, 0.05)
    assert q.quantile == pytest.approx(1.96, abs=0.1)


def test_vanilla_interval_examples():
    r = uq.CalibrationResult("vanilla", 302.0, 300, 0.05, 286)
    lo, up = uq.cp_interval_vanilla(np.array([500.0]), r)
    assert (lo[0], up[0]) == (198.0, 802.0)
    zero = uq.CalibrationResult("vanilla", 0.0, 300, 0.05, 286)
    assert uq.cp_interval_vanilla(np.array([7.0]), zero)[1][0] == 7.0
    inf = uq.empirical_quantile(np.arange(5), 0.05)
    lo, up = uq.cp_interval_vanilla(np.array([7.0]), inf)
    assert lo[0] == -np.inf and up[0] == np.inf
    with pytest.raises(ValueError):
        uq.cp_interval_adaptive(np.array([1.0]), np.array([1.0]), r)


def test_adaptive_examples(rng):
    X = rng.normal(size=(200, 1))
    y = rng.normal(size=200)
    zero = lambda X: np.zeros(len(X))  # noqa: E731
    ones = lambda X: np.ones(len(X))  # noqa: E731
    van = uq.cp_calibrate_vanilla(zero, X, y, 0.1)
    ada = uq.cp_calibrate_adaptive(zero, ones, X, y, 0.1)
    assert ada.quantile == van.quantile
    lo_v, up_v = uq.cp_interval_vanilla(np.zeros(5), van)
    lo_a, up_a = uq.cp_interval_adaptive(np.zeros(5), np.ones(5), ada)
    np.testing.assert_allclose(lo_v, lo_a, atol=1e-12)
    np.testing.assert_allclose(up_v, up_a, atol=1e-12)

    sig = np.exp(X[:, 0])
    signs = np.where(np.arange(200) % 2 == 0, 1.0, -1.0)
    exact = uq.cp_calibrate_adaptive(zero, lambda X: np.exp(X[:, 0]), X, 1.7 * sig * signs, 0.1)
    assert exact.quantile == pytest.approx(1.7, rel=1e-12)
    with pytest.raises(ValueError):
        uq.cp_calibrate_adaptive(zero, zero, X, y, 0.1)


def test_adaptive_interval_arithmetic():
    r = uq.CalibrationResult("adaptive", 2.0, 300, 0.05, 286)
    lo, up = uq.cp_interval_adaptive(np.array([1000.0, 1000.0]), np.array([100.0, 0.5]), r)
    assert (lo[0], up[0]) == (800.0, 1200.0)
    _, up2 = uq.cp_interval_adaptive(np.array([0.0]), np.array([2.0]), r)
    assert up2[0] / (up[1] - 1000.0) == 4.0


def test_adaptive_coverage_over_seeds():
    X_test, y_test = oracle_pairs(20000, seed=999)
    coverage = []
    for seed in range(50):
        X_cal, y_cal = oracle_pairs(300, seed=seed)
        r = uq.cp_calibrate_adaptive(true_mean, true_sigma, X_cal, y_cal, 0.05)
        lo, up = uq.cp_interval_adaptive(true_mean(X_test), true_sigma(X_test), r)
        coverage.append(np.mean((lo <= y_test) & (y_test <= up)))
    coverage = np.array(coverage)
    assert 0.93 <= coverage.mean() <= 0.99
    assert np.mean((coverage >= 0.93) & (coverage <= 0.99)) >= 0.9


def test_adaptive_narrower_on_heteroscedastic_data():
    X_cal, y_cal = oracle_pairs(2000, seed=1)
    X_test, y_test = oracle_pairs(20000, seed=2)
    mu = true_mean(X_test)
    ada = uq.cp_calibrate_adaptive(true_mean, true_sigma, X_cal, y_cal, 0.05)
    lo, up = uq.cp_interval_adaptive(mu, true_sigma(X_test), ada)
    achieved = np.mean((lo <= y_test) & (y_test <= up))
    # vanilla half-width giving exactly the same empirical coverage on the test rows
    q = np.quantile(np.abs(y_test - mu), achieved)
    assert np.mean((up - lo) / mu) < np.mean(2 * q / mu)


def test_beta_law_examples():
    law = uq.beta_coverage_params(100, 0.05)
    assert (law.l, law.a, law.b) == (96, 96, 5)
    assert law.mean == pytest.approx(0.9505, abs=1e-4)
    assert (uq.beta_coverage_params(19, 0.05).a, uq.beta_coverage_params(19, 0.05).b) == (19, 1)
    with pytest.raises(ValueError):
        uq.beta_coverage_params(0, 0.05)


def _generator(n, rng):
    X = rng.uniform(0, 1, size=(n, 1))
    return X, X[:, 0] + rng.normal(size=n)


def test_coverage_simulation_determinism_and_infinite():
    model = lambda X: X[:, 0]  # noqa: E731
    a = uq.coverage_simulation(_generator, model, m=50, alpha=0.1, trials=100, seed=3,
                               test_size=2000)
    b = uq.coverage_simulation(_generator, model, m=50, alpha=0.1, trials=100, seed=3,
                               test_size=2000)
    assert np.array_equal(a.coverage, b.coverage)
    tiny = uq.coverage_simulation(_generator, model, m=5, alpha=0.01, trials=100, seed=0,
                                  test_size=500)
    assert tiny.infinite_trials == 100 and np.all(tiny.coverage == 1.0)
    with pytest.raises(ValueError):
        uq.coverage_simulation(_generator, model, m=5, alpha=0.1, trials=10)


def test_coverage_simulation_summary_keys():
    sim = uq.coverage_simulation(_generator, lambda X: X[:, 0], m=100, alpha=0.05, trials=100,
                                 test_size=2000)
    summary = sim.summary()
    assert summary["a"] == 96 and summary["b"] == 5 and summary["trials"] == 100
    assert 0 <= summary["ks_distance"] <= 1


def test_hr_interval_examples():
    lo, up = uq.hr_interval(np.array([0.0]), np.array([100.0]), 0.05)
    assert up[0] == pytest.approx(195.9964, abs=1e-4)
    assert -lo[0] == up[0]
    lo1, up1 = uq.hr_interval(np.array([3.0]), np.array([100.0]), 1.0)
    assert abs(up1[0] - 3.0) < 1e-12 and abs(lo1[0] - 3.0) < 1e-12
    _, half = uq.hr_interval(np.array([0.0]), np.array([50.0]), 0.05)
    assert half[0] == pytest.approx(up[0] / 2, rel=1e-14)
    with pytest.raises(ValueError):
        uq.hr_interval(np.array([0.0]), np.array([0.0]), 0.05)


def _bayes_net(seed=0):
    spec = nn.NetworkSpec(n_features=2, width=6, depth=1, head="double", bayesian=True)
    return spec, nn.init_parameters(spec, seed=seed)


def test_bnn_predict_decomposition(rng):
    spec, params = _bayes_net()
    x = rng.normal(size=(30, 2))
    a = uq.bnn_predict(spec, params, x, samples=10, alpha=0.05, seed=4)
    b = uq.bnn_predict(spec, params, x, samples=10, alpha=0.05, seed=4)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma_pred2, b.sigma_pred2)
    assert np.array_equal(a.sigma_pred2, a.sigma_model2 + a.sigma_data2)
    assert np.all(a.sigma_model2 >= 0) and np.all(a.sigma_data2 > 0)
    assert np.all(a.sigma_model2 > 0)
    np.testing.assert_allclose(a.mu - a.lower, a.upper - a.mu, rtol=1e-12)
    with pytest.raises(ValueError):
        uq.bnn_predict(spec, params, x, samples=1, alpha=0.05)


def test_bnn_predict_degenerate_posterior(rng):
    spec, params = _bayes_net()
    for name in params.values:
        if name.endswith("_rho"):
            params.values[name][:] = -60.0
    out = uq.bnn_predict(spec, params, rng.normal(size=(20, 2)), samples=8, alpha=0.05)
    assert np.max(out.sigma_model2 / out.mu ** 2) < 1e-25  # rounding only
    np.testing.assert_allclose(out.sigma_pred2, out.sigma_data2, rtol=1e-12)


def test_qd_extract():
    out = uq.qd_extract(np.array([5.0, 5.0, 5.0]), np.array([4.0, 4.0, 5.1]),
                        np.array([7.0, 4.9, 6.0]))
    assert out.reliable.tolist() == [True, False, False]


def test_bundle_scaling():
    b = uq.PredictionBundle(mu=np.array([2.0]), sigma=np.array([1.0]), lower=np.array([1.0]),
                            upper=np.array([3.0]), sigma_pred2=np.array([1.0]))
    s = b.scaled(10.0)
    assert (s.mu[0], s.sigma[0], s.upper[0], s.sigma_pred2[0]) == (20.0, 10.0, 30.0, 100.0)
    assert b.picp(np.array([2.5])) == 1.0
    with pytest.raises(ValueError):
        uq.PredictionBundle(mu=np.array([1.0])).picp(np.array([1.0]))


def test_calibration_result_round_trip():
    r = uq.empirical_quantile(np.arange(1, 301), 0.05, kind="adaptive")
    assert uq.CalibrationResult.from_dict(r.to_dict()) == r
