"""Theoretical accuracy quantities and performance metrics.

Frequency-domain integrals are evaluated on uniform power-of-two grids over
the full circle; the integrands are smooth rational spectra, so the uniform
rule converges spectrally fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    GridResolutionError,
    IdentifiabilityError,
    InvalidModelError,
    SingularFrequencyError,
    UndefinedFitError,
)
from .lti import (
    NoiseModelSpec,
    RationalTransferFunction,
    check_loop_stable,
    impulse_response,
)
from .wnsf import ModelStructure, ThetaParams, nullspace_regressor, residual_jacobian

DEFAULT_GRID = 2 ** 14
FIT_TAIL_TOL = 1e-9


def _noise_tf(H) -> RationalTransferFunction:
    if isinstance(H, NoiseModelSpec):
        return H.to_transfer_function()
    return H


def sensitivity(G: RationalTransferFunction,
                K: RationalTransferFunction) -> RationalTransferFunction:
    """Loop attenuation (1 + K G)^-1 as a rational function, checked stable."""
    char = check_loop_stable(G, K)
    return RationalTransferFunction(G.den * K.den, char)


def theta_from_model(G: RationalTransferFunction) -> ThetaParams:
    """Dynamic-model parameters (f, l) read off a strictly proper G = L/F."""
    if G.num.coeffs[0] != 0.0:
        raise InvalidModelError("dynamic model must be strictly proper "
                                "(numerator starts at q^-1)")
    return ThetaParams(f=G.den.coeffs[1:].copy(), l=G.num.coeffs[1:].copy())


def true_arx_coefficients(G: RationalTransferFunction, H, n: int) -> np.ndarray:
    """First n coefficients of A = 1/H and B = G/H, stacked like an ARX
    estimate (a_1..a_n, b_1..b_n).

    Computed by polynomial long division (running the inverse-filter
    recursion on an impulse).
    """
    Htf = _noise_tf(H)
    if Htf.num.coeffs[0] != 1.0:
        raise InvalidModelError("noise model numerator must be monic")
    A = RationalTransferFunction(Htf.den, Htf.num)
    B = RationalTransferFunction(G.num * Htf.den, G.den * Htf.num)
    a_seq = impulse_response(A, n + 1)
    b_seq = impulse_response(B, n + 1)
    return np.concatenate([a_seq[1:], b_seq[1:]])


# ---------------------------------------------------------------------------
# Asymptotic covariance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceReport:
    """Asymptotic accuracy summary for the dynamic-model estimate.

    ``M`` is the information-style matrix whose inverse, scaled by
    sigma^2 / N, gives the asymptotic parameter MSE.
    """

    M: np.ndarray
    M_inv_trace: float
    grid_size: int
    noise_variance: float

    def asymptotic_mse_at(self, N: int) -> float:
        return self.noise_variance * self.M_inv_trace / N


def _grid(grid_size: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(grid_size) / grid_size)


def _validate_grid(grid_size: int, minimum: int):
    if grid_size < minimum:
        raise GridResolutionError(
            f"grid size {grid_size} below required minimum {minimum}")
    if grid_size & (grid_size - 1):
        raise GridResolutionError(f"grid size {grid_size} must be a power of two")


def asymptotic_covariance(G: RationalTransferFunction,
                          H,
                          K: RationalTransferFunction,
                          lambda_r: float = 1.0,
                          sigma2: float = 1.0,
                          ms: ModelStructure | None = None,
                          grid_size: int = DEFAULT_GRID,
                          r_shaping: RationalTransferFunction | None = None) -> CovarianceReport:
    """Frequency-domain integral for the asymptotic accuracy matrix.

    M = (1/2pi) * integral of Omega * Phi_u^r * Omega^atop, where the rows of
    Omega are -(G/(H F)) Gamma_mf and (1/(H F)) Gamma_ml and Phi_u^r is the
    spectrum of the reference contribution to the input, lambda_r |S|^2
    (optionally shaped by ``r_shaping``).
    """
    _validate_grid(grid_size, 2 ** 8)
    Htf = _noise_tf(H)
    if not G.is_stable():
        raise InvalidModelError("dynamic model must be stable")
    if not Htf.is_stable():
        raise InvalidModelError("noise model must be stable")
    if not Htf.is_inverse_stable():
        raise SingularFrequencyError(
            "noise model has zeros on or outside the unit circle; "
            "the inverse-noise weight is singular")
    if ms is None:
        ms = ModelStructure(m_l=G.num.degree, m_f=G.den.degree)

    z = _grid(grid_size)
    Fz = G.den.eval_at(z)
    Gz = G.num.eval_at(z) / Fz
    Hz = Htf.num.eval_at(z) / Htf.den.eval_at(z)
    Kz = K.num.eval_at(z) / K.den.eval_at(z)
    S = 1.0 / (1.0 + Kz * Gz)
    phi_ur = lambda_r * np.abs(S) ** 2
    if r_shaping is not None:
        shape = r_shaping.num.eval_at(z) / r_shaping.den.eval_at(z)
        phi_ur = phi_ur * np.abs(shape) ** 2

    k_f = np.arange(1, ms.m_f + 1)
    k_l = np.arange(1, ms.m_l + 1)
    gam_f = z[None, :] ** (-k_f[:, None])
    gam_l = z[None, :] ** (-k_l[:, None])
    omega = np.vstack([-(Gz / (Hz * Fz))[None, :] * gam_f,
                       (1.0 / (Hz * Fz))[None, :] * gam_l])
    M_c = (omega * phi_ur[None, :]) @ omega.conj().T / grid_size
    imag_resid = np.abs(M_c.imag).max()
    M = M_c.real
    M = 0.5 * (M + M.T)
    if imag_resid > 1e-8 * max(np.linalg.norm(M), np.finfo(float).tiny):
        raise GridResolutionError(
            f"imaginary residue {imag_resid:.3e} too large for the grid")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise IdentifiabilityError(
            "accuracy matrix is singular: the experiment is not informative "
            "for this structure (zero reference power or shared factors)") from exc
    return CovarianceReport(M=M, M_inv_trace=float(np.trace(np.linalg.inv(M))),
                            grid_size=grid_size, noise_variance=sigma2)


# ---------------------------------------------------------------------------
# Limiting regressor covariance and the finite-truncation information matrix
# ---------------------------------------------------------------------------

def regressor_covariance_limit(G: RationalTransferFunction,
                               H,
                               K: RationalTransferFunction,
                               lambda_r: float,
                               sigma2: float,
                               n: int,
                               grid_size: int | None = None,
                               r_shaping: RationalTransferFunction | None = None) -> np.ndarray:
    """Limit of the averaged ARX Gram matrix for sample size to infinity.

    Assembled from the 2x2 spectrum of (-y, u) driven by unit-white reference
    and noise channels through (G S F_r, H S sigma; S F_r, -K H S sigma),
    integrated against the lag stacks: each n-by-n block is Toeplitz in the
    corresponding cross-covariance sequence, recovered by FFT.
    """
    if grid_size is None:
        grid_size = 1 << max(int(np.ceil(np.log2(max(8 * n, 4096)))), 1)
    _validate_grid(grid_size, 2 * n)
    Htf = _noise_tf(H)
    z = _grid(grid_size)
    Gz = G.num.eval_at(z) / G.den.eval_at(z)
    Hz = Htf.num.eval_at(z) / Htf.den.eval_at(z)
    Kz = K.num.eval_at(z) / K.den.eval_at(z)
    S = 1.0 / (1.0 + Kz * Gz)
    Fr = np.sqrt(lambda_r) * np.ones_like(z)
    if r_shaping is not None:
        Fr = Fr * (r_shaping.num.eval_at(z) / r_shaping.den.eval_at(z))
    sig = np.sqrt(sigma2)

    V = np.empty((2, 2, grid_size), dtype=np.complex128)
    V[0, 0] = -Gz * S * Fr
    V[0, 1] = -Hz * S * sig
    V[1, 0] = S * Fr
    V[1, 1] = -Kz * Hz * S * sig

    R = np.empty((2 * n, 2 * n))
    idx = np.arange(n)
    lag = idx[:, None] - idx[None, :]  # k - l
    for p in range(2):
        for q in range(2):
            spec = V[p, 0] * V[q, 0].conj() + V[p, 1] * V[q, 1].conj()
            c = np.fft.fft(spec) / grid_size
            R[p * n:(p + 1) * n, q * n:(q + 1) * n] = c[lag % grid_size].real
    R = 0.5 * (R + R.T)
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise GridResolutionError(
            f"grid size {grid_size} too coarse: assembled covariance is not "
            f"positive definite") from exc
    return R


def finite_order_information(G: RationalTransferFunction,
                             H,
                             K: RationalTransferFunction,
                             lambda_r: float,
                             sigma2: float,
                             n: int,
                             ms: ModelStructure | None = None,
                             grid_size: int | None = None) -> np.ndarray:
    """Weighted Gram matrix Q' (T Rbar^-1 T')^-1 Q at truncation order n.

    Built at the true coefficients; converges to the asymptotic accuracy
    matrix as n grows, which the tests verify numerically.
    """
    if ms is None:
        ms = ModelStructure(m_l=G.num.degree, m_f=G.den.degree)
    Rbar = regressor_covariance_limit(G, H, K, lambda_r, sigma2, n,
                                      grid_size=grid_size)
    eta_o = true_arx_coefficients(G, H, n)
    theta_o = theta_from_model(G)
    Q = nullspace_regressor(eta_o, ms)
    T = residual_jacobian(theta_o, n)
    try:
        Winv = T @ np.linalg.solve(Rbar, T.T)
        Mbar = Q.T @ np.linalg.solve(0.5 * (Winv + Winv.T), Q)
    except np.linalg.LinAlgError as exc:
        raise IdentifiabilityError(
            f"inner weighting matrix singular at truncation {n}") from exc
    return 0.5 * (Mbar + Mbar.T)


# ---------------------------------------------------------------------------
# Performance metrics
# ---------------------------------------------------------------------------

def mse_metric(theta_hat: ThetaParams, theta_true: ThetaParams) -> float:
    """Squared parameter error |theta_hat - theta_true|^2."""
    if theta_hat.structure != theta_true.structure:
        raise ValueError(
            f"structure mismatch: {theta_hat.structure} vs {theta_true.structure}")
    diff = theta_hat.to_vector() - theta_true.to_vector()
    return float(diff @ diff)


def fit_metric(g_hat: np.ndarray, g_true: np.ndarray) -> float:
    """Impulse-response match 100 * (1 - |g_o - g_hat| / |g_o - mean(g_o)|)."""
    g_hat = np.asarray(g_hat, dtype=np.float64)
    g_true = np.asarray(g_true, dtype=np.float64)
    if g_hat.shape != g_true.shape:
        raise ValueError("impulse responses must have equal length")
    denom = np.linalg.norm(g_true - g_true.mean())
    if denom < 1e-300:
        raise UndefinedFitError("reference impulse response is constant")
    if not np.all(np.isfinite(g_hat)):
        return float("-inf")
    return float(100.0 * (1.0 - np.linalg.norm(g_true - g_hat) / denom))


def impulse_fit(G_hat: RationalTransferFunction,
                G_true: RationalTransferFunction,
                tail_tol: float = FIT_TAIL_TOL,
                max_length: int = 1 << 20) -> float:
    """FIT score with the comparison length doubled until the appended tail
    of the true response carries less than ``tail_tol`` of its norm."""
    length = 256
    while True:
        g2 = impulse_response(G_true, 2 * length)
        tail = np.linalg.norm(g2[length:])
        if tail <= tail_tol * np.linalg.norm(g2) or 2 * length >= max_length:
            break
        length *= 2
    return fit_metric(impulse_response(G_hat, length), g2[:length])
