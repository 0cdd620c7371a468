"""Step 1: least-squares estimation of the high-order ARX model
A(q) y = B(q) u + e together with its averaged normal-equation matrix."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import qr, solve_triangular

from .errors import InsufficientDataError, RankDeficiencyError
from .lti import TimeSeriesDataset

# Regressions with an estimated condition number beyond this are rejected
# outright instead of silently regularized.
CONDITION_LIMIT = 1e12

MAX_DEFAULT_ORDER = 200


def _icbrt(n: int) -> int:
    k = int(round(n ** (1.0 / 3.0)))
    while (k + 1) ** 3 <= n:
        k += 1
    while k ** 3 > n:
        k -= 1
    return k


def default_order(n_samples: int) -> int:
    """Order rule 2*floor(N^(1/3)) capped at 200, keeping n^4/N -> 0."""
    return max(1, min(2 * _icbrt(n_samples), MAX_DEFAULT_ORDER))


@dataclass(frozen=True)
class ArxEstimate:
    """High-order ARX estimate.

    ``eta`` stacks (a_1..a_n, b_1..b_n); ``R`` is the averaged regressor Gram
    matrix Phi' Phi / N kept for the weighting stage; ``sigma2_hat`` is the
    residual variance with divisor (rows - 2n).
    """

    n: int
    eta: np.ndarray
    R: np.ndarray
    sigma2_hat: float
    condition_estimate: float
    ridge: float = 0.0

    def __post_init__(self):
        if self.eta.shape != (2 * self.n,):
            raise ValueError(f"eta must have length {2 * self.n}")
        if self.R.shape != (2 * self.n, 2 * self.n):
            raise ValueError("R has inconsistent shape")

    @property
    def a(self) -> np.ndarray:
        return self.eta[: self.n]

    @property
    def b(self) -> np.ndarray:
        return self.eta[self.n:]


def _resolve_known_initial(data: TimeSeriesDataset, known_initial) -> bool:
    return data.known_initial if known_initial is None else bool(known_initial)


def build_regressors(data: TimeSeriesDataset, n: int,
                     known_initial: bool | None = None):
    """Regressor matrix with rows (-y_{t-1}..-y_{t-n}, u_{t-1}..u_{t-n}).

    Rows start at t = n+1; with ``known_initial`` they start at t = 1 with
    zero-padded lags (valid when the data were generated from zero state).
    Returns (Phi, target).  At least one row must exist; the stricter
    determinedness requirement N > 2n is enforced by estimate_arx.
    """
    if n < 1:
        raise ValueError("order must be at least 1")
    N = data.n_samples
    known_initial = _resolve_known_initial(data, known_initial)
    if not known_initial and N <= n:
        raise InsufficientDataError(
            f"need more than {n} samples for order {n}, got {N}")
    if known_initial:
        y = np.concatenate([np.zeros(n), data.y])
        u = np.concatenate([np.zeros(n), data.u])
        rows = N
    else:
        y, u = data.y, data.u
        rows = N - n
    ylags = sliding_window_view(y, n)[:rows, ::-1]
    ulags = sliding_window_view(u, n)[:rows, ::-1]
    Phi = np.hstack([-ylags, ulags])
    target = data.y if known_initial else data.y[n:]
    return Phi, target


def estimate_arx(data: TimeSeriesDataset, n: int | None = None,
                 known_initial: bool | None = None,
                 ridge: float = 0.0) -> ArxEstimate:
    """Solve the ARX normal equations through an orthogonal factorization.

    The solve uses an economy QR of the regressor matrix (never the explicit
    inverse of the Gram matrix); R = Phi' Phi / N is still materialized from
    the triangular factor because the weighting stage needs it.  A nonzero
    ``ridge`` augments the regression with sqrt(ridge) * identity rows as a
    rescue and is reported in the returned estimate.
    """
    N = data.n_samples
    if n is None:
        n = default_order(N)
    if N <= 2 * n:
        raise InsufficientDataError(
            f"need more than {2 * n} samples for order {n}, got {N}")
    Phi, target = build_regressors(data, n, known_initial)
    rows = Phi.shape[0]
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge > 0:
        Phi_solve = np.vstack([Phi, np.sqrt(ridge) * np.eye(2 * n)])
        target_solve = np.concatenate([target, np.zeros(2 * n)])
    else:
        Phi_solve, target_solve = Phi, target

    Q, Rfac = qr(Phi_solve, mode="economic")
    diag = np.abs(np.diag(Rfac))
    cond_est = float("inf") if diag.min() == 0.0 else float(diag.max() / diag.min())
    if cond_est > CONDITION_LIMIT:
        raise RankDeficiencyError(
            f"ARX regression is rank deficient "
            f"(condition estimate {cond_est:.3e} > {CONDITION_LIMIT:.1e})",
            condition_estimate=cond_est)
    eta = solve_triangular(Rfac, Q.T @ target_solve)

    if ridge > 0:
        R = (Phi.T @ Phi) / N
    else:
        R = (Rfac.T @ Rfac) / N
    R = 0.5 * (R + R.T)

    residuals = target - Phi @ eta
    dof = rows - 2 * n
    sigma2 = float(residuals @ residuals / dof) if dof > 0 else float("nan")
    return ArxEstimate(n=n, eta=eta, R=R, sigma2_hat=sigma2,
                       condition_estimate=cond_est, ridge=ridge)


# ---------------------------------------------------------------------------
# CSV persistence: `n,sigma2_hat` header then labeled a_k / b_k rows
# ---------------------------------------------------------------------------

def save_arx_estimate(est: ArxEstimate, path, r_path=None) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("n,sigma2_hat\n")
        fh.write(f"{est.n},{est.sigma2_hat!r}\n")
        for k in range(est.n):
            fh.write(f"a_{k + 1},{float(est.a[k])!r}\n")
        for k in range(est.n):
            fh.write(f"b_{k + 1},{float(est.b[k])!r}\n")
    if r_path is not None:
        np.savetxt(r_path, est.R, delimiter=",")


def load_arx_estimate(path, r_path=None) -> ArxEstimate:
    """Inverse of save_arx_estimate.

    Without ``r_path`` the Gram matrix is unavailable and replaced by the
    identity, which is sufficient for the unweighted reduction step only.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["n", "sigma2_hat"]:
            raise ValueError(f"unexpected header in {path}")
        n, sigma2 = next(reader)
        n = int(n)
        labeled = {row[0]: float(row[1]) for row in reader if row}
    eta = np.array([labeled[f"a_{k + 1}"] for k in range(n)]
                   + [labeled[f"b_{k + 1}"] for k in range(n)])
    R = np.loadtxt(r_path, delimiter=",") if r_path is not None else np.eye(2 * n)
    return ArxEstimate(n=n, eta=eta, R=R, sigma2_hat=float(sigma2),
                       condition_estimate=float("nan"))
