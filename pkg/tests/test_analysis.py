import numpy as np
import pytest

from wnsfid import (
    IdentifiabilityError,
    ModelStructure,
    RationalTransferFunction,
    SingularFrequencyError,
    UndefinedFitError,
    UnstableLoopError,
    asymptotic_covariance,
    estimate_arx,
    finite_order_information,
    fit_metric,
    frequency_response,
    gaussian_white,
    impulse_fit,
    impulse_response,
    mse_metric,
    regressor_covariance_limit,
    sensitivity,
    simulate_closed_loop,
)
from wnsfid.wnsf import ThetaParams


@pytest.fixture(scope="module")
def long_closed_loop(bench_system):
    G, H, K = bench_system
    N = 10 ** 6
    r = gaussian_white(400, N, 1.0, key=(1,))
    e = gaussian_white(400, N, 1.0, key=(2,))
    return simulate_closed_loop(G, H, K, r, e)


# ---------------------------------------------------------------------------
# sensitivity
# ---------------------------------------------------------------------------

def test_sensitivity_open_loop(bench_system):
    G, _, _ = bench_system
    S = sensitivity(G, RationalTransferFunction.from_coeffs([0.0]))
    w = np.linspace(-np.pi, np.pi, 64)
    np.testing.assert_allclose(frequency_response(S, w), np.ones(64), atol=1e-12)


def test_sensitivity_first_order():
    G = RationalTransferFunction.from_coeffs([0.0, 0.5])
    K = RationalTransferFunction.from_coeffs([1.0])
    S = sensitivity(G, K)
    np.testing.assert_allclose(S.den.coeffs, [1.0, 0.5])
    np.testing.assert_allclose(S.num.coeffs[0], 1.0)


def test_sensitivity_identity_on_grid(bench_system):
    G, _, K = bench_system
    S = sensitivity(G, K)
    w = 2 * np.pi * np.arange(2 ** 10) / 2 ** 10
    lhs = frequency_response(S, w) * (1.0 + frequency_response(K, w)
                                      * frequency_response(G, w))
    np.testing.assert_allclose(lhs, np.ones_like(lhs), atol=1e-10)


def test_sensitivity_rejects_unstable_loop():
    G = RationalTransferFunction.from_coeffs([0.0, 2.0])
    K = RationalTransferFunction.from_coeffs([1.0])  # char 1 + 2 q^-1
    with pytest.raises(UnstableLoopError):
        sensitivity(G, K)


# ---------------------------------------------------------------------------
# asymptotic_covariance
# ---------------------------------------------------------------------------

def test_covariance_unit_fir_case():
    G = RationalTransferFunction.from_coeffs([0.0, 1.0])
    H = RationalTransferFunction.from_coeffs([1.0])
    K = RationalTransferFunction.from_coeffs([0.0])
    report = asymptotic_covariance(G, H, K, grid_size=2 ** 10)
    np.testing.assert_allclose(report.M, [[1.0]], atol=1e-12)
    assert abs(report.M_inv_trace - 1.0) < 1e-10


def test_covariance_trace_reference_value(bench_system):
    G, H, K = bench_system
    report = asymptotic_covariance(G, H, K, grid_size=2 ** 14)
    assert abs(report.M_inv_trace - 1.9572) / 1.9572 < 0.01
    assert abs(report.asymptotic_mse_at(10 ** 4) - 1.9572e-4) / 1.9572e-4 < 0.01


def test_covariance_same_for_shaped_open_loop(bench_system):
    # open-loop experiment with the closed-loop-shaped input spectrum
    G, H, K = bench_system
    closed = asymptotic_covariance(G, H, K, grid_size=2 ** 14)
    K0 = RationalTransferFunction.from_coeffs([0.0])
    shaped = asymptotic_covariance(G, H, K0, grid_size=2 ** 14,
                                   r_shaping=sensitivity(G, K))
    np.testing.assert_allclose(shaped.M, closed.M, rtol=1e-8, atol=1e-12)


def test_covariance_grid_convergence(bench_system):
    G, H, K = bench_system
    t14 = asymptotic_covariance(G, H, K, grid_size=2 ** 14).M_inv_trace
    t15 = asymptotic_covariance(G, H, K, grid_size=2 ** 15).M_inv_trace
    assert abs(t15 - t14) / t14 < 1e-4


def test_covariance_rejects_uninformative_experiment(bench_system):
    G, H, K = bench_system
    with pytest.raises(IdentifiabilityError):
        asymptotic_covariance(G, H, K, lambda_r=0.0)


def test_covariance_rejects_unit_circle_noise_zero(bench_system):
    G, _, K = bench_system
    H_bad = RationalTransferFunction.from_coeffs([1.0, -1.0], [1.0, -0.5])
    with pytest.raises(SingularFrequencyError):
        asymptotic_covariance(G, H_bad, K)


# ---------------------------------------------------------------------------
# regressor_covariance_limit
# ---------------------------------------------------------------------------

def test_rbar_white_case():
    G = RationalTransferFunction.from_coeffs([0.0])
    H = RationalTransferFunction.from_coeffs([1.0])
    K = RationalTransferFunction.from_coeffs([0.0])
    R = regressor_covariance_limit(G, H, K, 1.0, 1.0, 6)
    np.testing.assert_allclose(R, np.eye(12), atol=1e-12)


def test_rbar_matches_sample_gram(bench_system, long_closed_loop):
    G, H, K = bench_system
    n = 10
    Rbar = regressor_covariance_limit(G, H, K, 1.0, 1.0, n)
    est = estimate_arx(long_closed_loop, n)
    dev = np.abs(est.R - Rbar).max() / np.abs(Rbar).max()
    assert dev < 0.01


def test_rbar_sample_deviation_decreases(bench_system):
    G, H, K = bench_system
    n = 10
    Rbar = regressor_covariance_limit(G, H, K, 1.0, 1.0, n)
    devs = []
    for N in (10 ** 4, 10 ** 5, 10 ** 6):
        r = gaussian_white(77, N, 1.0, key=(1,))
        e = gaussian_white(77, N, 1.0, key=(2,))
        data = simulate_closed_loop(G, H, K, r, e)
        est = estimate_arx(data, n)
        devs.append(np.linalg.norm(est.R - Rbar) / np.linalg.norm(Rbar))
    assert devs[0] > devs[1] > devs[2]


def test_rbar_output_variance_block(bench_system):
    # (1,1) block diagonal equals the output variance spectral integral
    G, H, K = bench_system
    n = 5
    Rbar = regressor_covariance_limit(G, H, K, 1.0, 1.0, n)
    grid = 2 ** 14
    w = 2 * np.pi * np.arange(grid) / grid
    S = 1.0 / (1.0 + frequency_response(K, w) * frequency_response(G, w))
    Gw = frequency_response(G, w)
    Hw = frequency_response(H, w)
    var_y = np.mean(np.abs(Gw * S) ** 2 + np.abs(Hw * S) ** 2)
    np.testing.assert_allclose(np.diag(Rbar)[:n], var_y * np.ones(n), rtol=1e-8)


# ---------------------------------------------------------------------------
# finite_order_information
# ---------------------------------------------------------------------------

def test_mbar_converges_to_m(bench_system):
    G, H, K = bench_system
    M = asymptotic_covariance(G, H, K, grid_size=2 ** 14).M
    errs = []
    for n in (20, 80):
        Mbar = finite_order_information(G, H, K, 1.0, 1.0, n)
        errs.append(np.linalg.norm(Mbar - M) / np.linalg.norm(M))
    assert errs[1] < errs[0]
    M100 = finite_order_information(G, H, K, 1.0, 1.0, 100)
    assert np.linalg.norm(M100 - M) / np.linalg.norm(M) < 0.05


def test_mbar_exact_for_fir_truth():
    G = RationalTransferFunction.from_coeffs([0.0, 0.5, 0.25])
    H = RationalTransferFunction.from_coeffs([1.0])
    K = RationalTransferFunction.from_coeffs([0.0])
    M = asymptotic_covariance(G, H, K, grid_size=2 ** 12,
                              ms=ModelStructure(m_l=2, m_f=0)).M
    for n in (2, 5, 20):
        Mbar = finite_order_information(G, H, K, 1.0, 1.0, n,
                                        ms=ModelStructure(m_l=2, m_f=0))
        np.testing.assert_allclose(Mbar, M, rtol=1e-8, atol=1e-10)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _theta(vals):
    return ThetaParams(f=np.array(vals[:2]), l=np.array(vals[2:]))


def test_mse_metric_examples():
    a = _theta([0.1, 0.2, 0.3, 0.4])
    assert mse_metric(a, a) == 0.0
    b = _theta([0.1, 0.2, 0.3, 0.5])
    assert abs(mse_metric(a, b) - 0.01) < 1e-15
    assert mse_metric(a, b) == mse_metric(b, a)


def test_mse_metric_structure_mismatch():
    a = _theta([0.1, 0.2, 0.3, 0.4])
    b = ThetaParams(f=np.array([0.1]), l=np.array([0.3]))
    with pytest.raises(ValueError):
        mse_metric(a, b)


def test_fit_metric_examples(bench_system):
    G, _, _ = bench_system
    g = impulse_response(G, 300)
    assert fit_metric(g, g) == 100.0
    mean_pred = np.full_like(g, g.mean())
    assert abs(fit_metric(mean_pred, g)) < 1e-9
    mirrored = 2.0 * g - g.mean()
    assert abs(fit_metric(mirrored, g)) < 1e-9


def test_fit_metric_undefined_for_constant_reference():
    with pytest.raises(UndefinedFitError):
        fit_metric(np.ones(10), np.ones(10))


def test_impulse_fit_adaptive_length(bench_system):
    G, _, _ = bench_system
    assert impulse_fit(G, G) == 100.0
    G2 = RationalTransferFunction.from_coeffs([0.0, 1.0, 0.11],
                                              [1.0, -0.5, 0.75])
    score = impulse_fit(G2, G)
    assert 0.0 < score < 100.0
