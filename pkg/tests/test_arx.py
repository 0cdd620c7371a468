import numpy as np
import pytest

from wnsfid import (
    InsufficientDataError,
    RankDeficiencyError,
    TimeSeriesDataset,
    build_regressors,
    estimate_arx,
    gaussian_white,
    simulate_closed_loop,
    true_arx_coefficients,
)
from wnsfid.arx import default_order, load_arx_estimate, save_arx_estimate


def make_dataset(u, y, **kw):
    return TimeSeriesDataset(u=np.asarray(u, float), y=np.asarray(y, float), **kw)


def closed_loop_data(bench_system, N, seed, known_initial=True):
    G, H, K = bench_system
    r = gaussian_white(seed, N, 1.0, key=(1,))
    e = gaussian_white(seed, N, 1.0, key=(2,))
    return simulate_closed_loop(G, H, K, r, e, known_initial=known_initial)


# ---------------------------------------------------------------------------
# build_regressors
# ---------------------------------------------------------------------------

def test_regressors_first_order_row():
    Phi, target = build_regressors(make_dataset([3.0, 4.0], [1.0, 2.0]), 1,
                                   known_initial=False)
    np.testing.assert_array_equal(Phi, [[-1.0, 3.0]])
    np.testing.assert_array_equal(target, [2.0])


def test_regressors_known_initial_zero_pads():
    Phi, target = build_regressors(make_dataset([3.0, 4.0], [1.0, 2.0]), 1,
                                   known_initial=True)
    np.testing.assert_array_equal(Phi, [[0.0, 0.0], [-1.0, 3.0]])
    np.testing.assert_array_equal(target, [1.0, 2.0])


def test_regressor_gram_matches_stored_matrix(bench_system):
    data = closed_loop_data(bench_system, 10 ** 4, seed=5)
    n = 50
    Phi, _ = build_regressors(data, n)
    est = estimate_arx(data, n)
    np.testing.assert_allclose(Phi.T @ Phi, data.n_samples * est.R,
                               rtol=1e-10, atol=1e-10)


def test_regressors_need_enough_samples():
    with pytest.raises(InsufficientDataError):
        build_regressors(make_dataset(np.ones(5), np.ones(5)), 5)
    with pytest.raises(InsufficientDataError):
        estimate_arx(make_dataset(np.ones(10), np.ones(10)), 5)


# ---------------------------------------------------------------------------
# estimate_arx
# ---------------------------------------------------------------------------

def test_noise_free_fir_recovered_exactly():
    u = gaussian_white(0, 500, 1.0)
    y = np.concatenate([[0.0], 0.5 * u[:-1]])
    est = estimate_arx(make_dataset(u, y), 1)
    np.testing.assert_allclose(est.eta, [0.0, 0.5], atol=1e-12)
    assert est.sigma2_hat < 1e-24


def test_arx11_consistency():
    # y_t = 0.5 y_{t-1} + u_{t-1} + e_t, i.e. a_1 = -0.5, b_1 = 1
    N = 10 ** 5
    u = gaussian_white(1, N, 1.0, key=(1,))
    e = gaussian_white(1, N, 1.0, key=(2,))
    y = np.zeros(N)
    for t in range(1, N):
        y[t] = 0.5 * y[t - 1] + u[t - 1] + e[t]
    est = estimate_arx(make_dataset(u, y), 1)
    assert np.linalg.norm(est.eta - np.array([-0.5, 1.0])) < 0.02


def test_high_order_arx_approaches_truncated_truth(bench_system):
    G, H, _ = bench_system
    data = closed_loop_data(bench_system, 10 ** 4, seed=11)
    est = estimate_arx(data, 50)
    eta_true = true_arx_coefficients(G, H, 50)
    np.testing.assert_allclose(est.a[:10], eta_true[:50][:10], atol=0.05)
    np.testing.assert_allclose(est.b[:10], eta_true[50:][:10], atol=0.05)


def test_normal_equation_residual(bench_system):
    data = closed_loop_data(bench_system, 3000, seed=2)
    est = estimate_arx(data, 50)
    Phi, target = build_regressors(data, 50)
    r_vec = Phi.T @ target / data.n_samples
    resid = np.linalg.norm(est.R @ est.eta - r_vec)
    assert resid <= 1e-8 * np.linalg.norm(r_vec)


def test_consistency_curve_nonincreasing(bench_system):
    G, H, _ = bench_system
    n = 50
    eta_limit = estimate_arx(closed_loop_data(bench_system, 10 ** 6, seed=999), n).eta
    errs = {N: [] for N in (10 ** 3, 10 ** 4, 10 ** 5)}
    for seed in range(20):
        for N in errs:
            est = estimate_arx(closed_loop_data(bench_system, N, seed=seed), n)
            errs[N].append(np.linalg.norm(est.eta - eta_limit))
    means = [np.mean(errs[N]) for N in sorted(errs)]
    assert means[0] >= means[1] >= means[2]


def test_scaling_invariance(bench_system):
    data = closed_loop_data(bench_system, 2000, seed=3)
    est = estimate_arx(data, 20)
    scaled = TimeSeriesDataset(u=5.0 * data.u, y=5.0 * data.y,
                               known_initial=data.known_initial)
    est_scaled = estimate_arx(scaled, 20)
    np.testing.assert_allclose(est_scaled.eta, est.eta, rtol=1e-10, atol=1e-12)


def test_rank_deficiency_reports_condition():
    u = np.zeros(100)
    y = gaussian_white(4, 100, 1.0)
    with pytest.raises(RankDeficiencyError) as err:
        estimate_arx(make_dataset(u, y), 2)
    assert err.value.condition_estimate > 1e12


def test_ridge_rescue_is_reported():
    u = np.zeros(100)
    y = gaussian_white(4, 100, 1.0)
    est = estimate_arx(make_dataset(u, y), 2, ridge=1e-6)
    assert est.ridge == 1e-6


def test_default_order_rule():
    assert default_order(1000) == 20
    assert default_order(10 ** 9) == 200  # capped


def test_arx_estimate_csv_round_trip(tmp_path, bench_system):
    data = closed_loop_data(bench_system, 2000, seed=8)
    est = estimate_arx(data, 10)
    path = tmp_path / "est.csv"
    r_path = tmp_path / "R.csv"
    save_arx_estimate(est, path, r_path=r_path)
    assert path.read_text().splitlines()[0] == "n,sigma2_hat"
    loaded = load_arx_estimate(path, r_path=r_path)
    np.testing.assert_array_equal(loaded.eta, est.eta)
    assert loaded.sigma2_hat == est.sigma2_hat
    np.testing.assert_allclose(loaded.R, est.R, rtol=1e-12, atol=1e-15)
