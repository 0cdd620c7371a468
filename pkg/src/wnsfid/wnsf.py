"""Steps 2-3: reduce the high-order ARX estimate to a parametric model.

The reduction rests on the convolution identity F*B - L*A = 0 between the
parametric model G = L/F and the high-order pair (A, B).  Written with
banded Toeplitz operators this gives b = Q(eta) theta, solved first by
ordinary least squares and then re-solved with the optimal weighting
W = (T(theta) R^-1 T(theta)')^-1 built from the residual Jacobian T and the
ARX Gram matrix R.  The fully parametric variant stacks the analogous noise
identity C*A - D = 0 on top.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, lstsq, solve_triangular

from ._kernels import toeplitz_lower
from .arx import ArxEstimate, CONDITION_LIMIT
from .errors import IdentifiabilityError, WeightingBreakdownError
from .lti import Polynomial, RationalTransferFunction

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class ModelStructure:
    """Orders of the parametric model: numerator m_l, denominator m_f, and
    (fully parametric only) noise numerator m_c and denominator m_d."""

    m_l: int
    m_f: int = 0
    m_c: int = 0
    m_d: int = 0

    def __post_init__(self):
        if self.m_l < 1:
            raise ValueError("m_l must be at least 1")
        if min(self.m_f, self.m_c, self.m_d) < 0:
            raise ValueError("orders must be non-negative")

    @property
    def is_semi_parametric(self) -> bool:
        return self.m_c == 0 and self.m_d == 0

    @property
    def n_dynamic(self) -> int:
        return self.m_f + self.m_l

    @property
    def n_noise(self) -> int:
        return self.m_c + self.m_d


@dataclass(frozen=True)
class ThetaParams:
    """Parameter vector stacked as (f_1..f_mf, l_1..l_ml[, c_1..c_mc, d_1..d_md])."""

    f: np.ndarray
    l: np.ndarray
    c: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        for name in ("f", "l", "c", "d"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=np.float64))

    @property
    def structure(self) -> ModelStructure:
        return ModelStructure(
            m_l=self.l.size, m_f=self.f.size,
            m_c=0 if self.c is None else self.c.size,
            m_d=0 if self.d is None else self.d.size)

    def to_vector(self) -> np.ndarray:
        parts = [self.f, self.l]
        if self.c is not None:
            parts.append(self.c)
        if self.d is not None:
            parts.append(self.d)
        return np.concatenate([np.atleast_1d(p) for p in parts])

    @classmethod
    def from_vector(cls, vec, ms: ModelStructure) -> "ThetaParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != ms.n_dynamic + ms.n_noise:
            raise ValueError("parameter vector does not match the structure")
        f = vec[: ms.m_f]
        l = vec[ms.m_f: ms.n_dynamic]
        c = d = None
        if not ms.is_semi_parametric:
            c = vec[ms.n_dynamic: ms.n_dynamic + ms.m_c]
            d = vec[ms.n_dynamic + ms.m_c:]
        return cls(f=f, l=l, c=c, d=d)

    def dynamic_only(self) -> "ThetaParams":
        """Drop the noise block, keeping (f, l) only."""
        return ThetaParams(f=self.f, l=self.l)

    def to_transfer_function(self) -> RationalTransferFunction:
        """Dynamic model L/F with implicit monic leading one in F."""
        num = Polynomial(np.concatenate([[0.0], self.l]))
        den = Polynomial(np.concatenate([[1.0], self.f]))
        return RationalTransferFunction(num, den)

    def noise_transfer_function(self) -> RationalTransferFunction:
        if self.c is None or self.d is None:
            return RationalTransferFunction.from_coeffs([1.0])
        num = Polynomial(np.concatenate([[1.0], self.c]))
        den = Polynomial(np.concatenate([[1.0], self.d]))
        return RationalTransferFunction(num, den)


@dataclass(frozen=True)
class WnsfResult:
    """Parametric estimate with stage provenance and diagnostics."""

    theta: ThetaParams
    stage: str  # "step2" | "step3" | "iterated"
    weighting_condition: float = float("nan")
    converged: bool = True
    iterations: int = 0
    diagnostic: str | None = None

    def __post_init__(self):
        if self.stage not in ("step2", "step3", "iterated"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == "step2" and self.iterations != 0:
            raise ValueError("step2 results carry no iterations")
        if self.stage == "iterated" and self.iterations < 1:
            raise ValueError("iterated results need at least one pass")


# ---------------------------------------------------------------------------
# Toeplitz building blocks
# ---------------------------------------------------------------------------

def toeplitz_from_series(x, n: int, m: int) -> np.ndarray:
    """n-by-m lower-triangular Toeplitz operator of the series x_0, x_1, ...

    Entry (i, j) is x_{i-j} for i >= j and zero above the diagonal; the
    series is zero-padded beyond its length.  Multiplying a coefficient
    vector by this matrix realizes truncated convolution with X(q).
    """
    if m > n:
        raise ValueError(f"need m <= n, got n={n}, m={m}")
    x = np.asarray(x, dtype=np.float64).ravel()
    col = np.zeros(n)
    take = min(n, x.size)
    col[:take] = x[:take]
    return toeplitz_lower(col, m)


def _eta_vector(eta) -> np.ndarray:
    if isinstance(eta, ArxEstimate):
        return eta.eta
    return np.asarray(eta, dtype=np.float64)


def _split_eta(eta) -> tuple[np.ndarray, np.ndarray, int]:
    vec = _eta_vector(eta)
    if vec.size % 2:
        raise ValueError("eta must stack (a_1..a_n, b_1..b_n)")
    n = vec.size // 2
    return vec[:n], vec[n:], n


def nullspace_regressor(eta, ms: ModelStructure) -> np.ndarray:
    """Matrix Q with b = Q(eta) theta for the dynamic parameters.

    Columns are [-T_{n,mf}(B) | T_{n,ml}(A)] with A = (1, a_1, ...) and
    B = (0, b_1, ...) taken from the ARX estimate.
    """
    a, b, n = _split_eta(eta)
    if n < max(ms.m_f, ms.m_l):
        raise ValueError(f"ARX order {n} is below the model orders "
                         f"({ms.m_f}, {ms.m_l})")
    a_seq = np.concatenate([[1.0], a])
    b_seq = np.concatenate([[0.0], b])
    return np.hstack([-toeplitz_from_series(b_seq, n, ms.m_f),
                      toeplitz_from_series(a_seq, n, ms.m_l)])


def residual_jacobian(theta: ThetaParams, n: int) -> np.ndarray:
    """Matrix T with residual b - Q(eta) theta = T(theta) (eta - eta_true).

    Columns are [-T_{n,n}(L) | T_{n,n}(F)] acting on the stacked (a, b)
    estimation error; L = (0, l_1, ..) and F = (1, f_1, ..) zero-padded.
    """
    ms = theta.structure
    if n < max(ms.m_f, ms.m_l):
        raise ValueError("n must be at least the model orders")
    l_seq = np.concatenate([[0.0], theta.l])
    f_seq = np.concatenate([[1.0], theta.f])
    return np.hstack([-toeplitz_from_series(l_seq, n, n),
                      toeplitz_from_series(f_seq, n, n)])


def nullspace_regressor_full(eta, ms: ModelStructure) -> np.ndarray:
    """Stacked regressor for the fully parametric variant.

    Row blocks are (noise rows a = [-T_{n,mc}(A) | E_md] (c, d), then dynamic
    rows b = Q theta); columns follow the (f, l, c, d) parameter order.
    """
    a, b, n = _split_eta(eta)
    if n < max(ms.m_f, ms.m_l, ms.m_c, ms.m_d):
        raise ValueError("ARX order is below the model orders")
    a_seq = np.concatenate([[1.0], a])
    Qn = np.hstack([-toeplitz_from_series(a_seq, n, ms.m_c),
                    toeplitz_from_series([1.0], n, ms.m_d)])
    Qd = nullspace_regressor(eta, ms)
    out = np.zeros((2 * n, ms.n_dynamic + ms.n_noise))
    out[:n, ms.n_dynamic:] = Qn
    out[n:, : ms.n_dynamic] = Qd
    return out


def residual_jacobian_full(theta: ThetaParams, n: int) -> np.ndarray:
    """Stacked residual Jacobian [[T_{n,n}(C), 0], [-T_{n,n}(L), T_{n,n}(F)]].

    Rows are ordered (noise block, dynamic block) and columns (a block,
    b block); the noise identity C*A - D = 0 contributes T_{n,n}(C) acting on
    the a-error only.
    """
    c = theta.c if theta.c is not None else np.zeros(0)
    c_seq = np.concatenate([[1.0], c])
    l_seq = np.concatenate([[0.0], theta.l])
    f_seq = np.concatenate([[1.0], theta.f])
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = toeplitz_from_series(c_seq, n, n)
    out[n:, :n] = -toeplitz_from_series(l_seq, n, n)
    out[n:, n:] = toeplitz_from_series(f_seq, n, n)
    return out


# ---------------------------------------------------------------------------
# Least-squares machinery
# ---------------------------------------------------------------------------

def _checked_lstsq(A: np.ndarray, y: np.ndarray, context: str) -> np.ndarray:
    sol, _, rank, sv = lstsq(A, y)
    if rank < A.shape[1] or sv[0] > CONDITION_LIMIT * sv[-1]:
        raise IdentifiabilityError(
            f"{context}: regressor is rank deficient (shared factors between "
            f"the model polynomials make the structure unidentifiable)")
    return sol


def _weighting_inverse(T: np.ndarray, R: np.ndarray,
                       chol_R: np.ndarray | None = None) -> np.ndarray:
    """Form T R^-1 T' through the Cholesky factor of R (no explicit inverse)."""
    if chol_R is None:
        try:
            chol_R = cholesky(R, lower=True)
        except np.linalg.LinAlgError as exc:
            raise WeightingBreakdownError(
                f"ARX Gram matrix is not positive definite: {exc}") from exc
    Y = solve_triangular(chol_R, T.T, lower=True)
    Winv = Y.T @ Y
    return 0.5 * (Winv + Winv.T)


def _weighting_factor(Winv: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor D of W^-1 (so that |D^-1 r|^2 = r' W r) plus a
    condition estimate from the factor's diagonal spread."""
    try:
        D = cholesky(Winv, lower=True)
    except np.linalg.LinAlgError as exc:
        raise WeightingBreakdownError(
            "weighting matrix is numerically singular "
            f"(condition estimate {np.linalg.cond(Winv):.3e})") from exc
    diag = np.diag(D)
    cond_est = float((diag.max() / diag.min()) ** 2)
    if cond_est > CONDITION_LIMIT:
        raise WeightingBreakdownError(
            f"weighting condition estimate {cond_est:.3e} exceeds "
            f"{CONDITION_LIMIT:.1e}", condition_estimate=cond_est)
    return D, cond_est


def build_weighting(theta: ThetaParams, R: np.ndarray) -> np.ndarray:
    """Optimal weighting W = (T(theta) R^-1 T(theta)')^-1, symmetric PD.

    Computed through Cholesky factorizations of R and of the inner product;
    no inverse of a nonsymmetric product is ever formed.
    """
    n = R.shape[0] // 2
    T = residual_jacobian(theta, n)
    Winv = _weighting_inverse(T, R)
    D, _ = _weighting_factor(Winv)
    W = cho_solve((D, True), np.eye(n))
    return 0.5 * (W + W.T)


def _solve_weighted(D: np.ndarray, A: np.ndarray, y: np.ndarray,
                    context: str) -> np.ndarray:
    """Solve min_x |W^(1/2) (y - A x)| given the Cholesky factor D of W^-1."""
    At = solve_triangular(D, A, lower=True)
    yt = solve_triangular(D, y, lower=True)
    return _checked_lstsq(At, yt, context)


# ---------------------------------------------------------------------------
# The estimation steps
# ---------------------------------------------------------------------------

def _require_semi_parametric(ms: ModelStructure):
    if not ms.is_semi_parametric:
        raise ValueError("noise orders are set; use fully_parametric_wnsf")


def step2_ls(eta, ms: ModelStructure) -> WnsfResult:
    """Unweighted reduction: theta = argmin |b - Q(eta) theta|."""
    _require_semi_parametric(ms)
    _, b, _ = _split_eta(eta)
    Q = nullspace_regressor(eta, ms)
    sol = _checked_lstsq(Q, b, "step 2")
    dyn = ModelStructure(m_l=ms.m_l, m_f=ms.m_f)
    return WnsfResult(theta=ThetaParams.from_vector(sol, dyn), stage="step2")


def step3_wls(eta, theta_prev: ThetaParams, ms: ModelStructure,
              weighting: np.ndarray | None = None) -> WnsfResult:
    """Weighted re-estimation with W built at ``theta_prev``.

    ``weighting`` overrides the computed W^-1 factor source matrix (test
    hook); passing the identity reproduces the unweighted step.
    """
    _require_semi_parametric(ms)
    _, b, n = _split_eta(eta)
    Q = nullspace_regressor(eta, ms)
    if weighting is not None:
        Winv_src = np.linalg.inv(weighting)  # small hook path only
        D, cond_est = _weighting_factor(0.5 * (Winv_src + Winv_src.T))
    else:
        R = eta.R if isinstance(eta, ArxEstimate) else np.eye(2 * n)
        T = residual_jacobian(theta_prev, n)
        D, cond_est = _weighting_factor(_weighting_inverse(T, R))
    sol = _solve_weighted(D, Q, b, "step 3")
    dyn = ModelStructure(m_l=ms.m_l, m_f=ms.m_f)
    return WnsfResult(theta=ThetaParams.from_vector(sol, dyn), stage="step3",
                      weighting_condition=cond_est, iterations=1)


def iterate_wnsf(eta, ms: ModelStructure, max_iter: int = DEFAULT_MAX_ITER,
                 tol: float = DEFAULT_TOL) -> WnsfResult:
    """Repeat the weighted step, feeding each estimate back into the weighting.

    Stops when the normalized change |theta_k+1 - theta_k| / |theta_k| drops
    below ``tol`` or after ``max_iter`` passes; a weighting breakdown returns
    the last valid iterate with ``converged=False``.
    """
    _require_semi_parametric(ms)
    _, b, n = _split_eta(eta)
    R = eta.R if isinstance(eta, ArxEstimate) else np.eye(2 * n)
    Q = nullspace_regressor(eta, ms)
    sol = _checked_lstsq(Q, b, "step 2")
    try:
        chol_R = cholesky(R, lower=True)
    except np.linalg.LinAlgError as exc:
        raise WeightingBreakdownError(
            f"ARX Gram matrix is not positive definite: {exc}") from exc

    dyn = ModelStructure(m_l=ms.m_l, m_f=ms.m_f)
    theta = ThetaParams.from_vector(sol, dyn)
    cond_est = float("nan")
    for k in range(1, max_iter + 1):
        T = residual_jacobian(theta, n)
        try:
            D, cond_est = _weighting_factor(_weighting_inverse(T, R, chol_R))
            sol_new = _solve_weighted(D, Q, b, f"step 3 (pass {k})")
        except WeightingBreakdownError as exc:
            return WnsfResult(theta=theta, stage="iterated" if k > 1 else "step2",
                              weighting_condition=cond_est, converged=False,
                              iterations=k - 1, diagnostic=str(exc))
        change = np.linalg.norm(sol_new - sol) / max(np.linalg.norm(sol), np.finfo(float).tiny)
        sol = sol_new
        theta = ThetaParams.from_vector(sol, dyn)
        if change < tol:
            return WnsfResult(theta=theta, stage="iterated",
                              weighting_condition=cond_est, converged=True,
                              iterations=k)
    return WnsfResult(theta=theta, stage="iterated",
                      weighting_condition=cond_est, converged=False,
                      iterations=max_iter,
                      diagnostic=f"no convergence within {max_iter} passes")


def fully_parametric_wnsf(eta, ms: ModelStructure,
                          max_iter: int = DEFAULT_MAX_ITER,
                          tol: float = DEFAULT_TOL) -> WnsfResult:
    """Joint dynamic + noise model estimation from both convolution identities.

    With m_c = m_d = 0 the noise block is empty and the call reduces to the
    semi-parametric path (same code, identical output).  Otherwise the noise
    rows a_k + sum_j c_j a_{k-j} - d_k = 0 are stacked above the dynamic rows
    and the weighting is built from the stacked residual Jacobian.
    """
    if ms.is_semi_parametric:
        return iterate_wnsf(eta, ms, max_iter=max_iter, tol=tol)

    a, b, n = _split_eta(eta)
    R = eta.R if isinstance(eta, ArxEstimate) else np.eye(2 * n)
    Qf = nullspace_regressor_full(eta, ms)
    g = np.concatenate([a, b])
    # Unweighted stacked solve separates into the two blocks exactly.
    sol = _checked_lstsq(Qf, g, "step 2 (full)")
    try:
        chol_R = cholesky(R, lower=True)
    except np.linalg.LinAlgError as exc:
        raise WeightingBreakdownError(
            f"ARX Gram matrix is not positive definite: {exc}") from exc

    theta = ThetaParams.from_vector(sol, ms)
    cond_est = float("nan")
    for k in range(1, max_iter + 1):
        T = residual_jacobian_full(theta, n)
        try:
            D, cond_est = _weighting_factor(_weighting_inverse(T, R, chol_R))
            sol_new = _solve_weighted(D, Qf, g, f"step 3 full (pass {k})")
        except WeightingBreakdownError as exc:
            return WnsfResult(theta=theta, stage="iterated" if k > 1 else "step2",
                              weighting_condition=cond_est, converged=False,
                              iterations=k - 1, diagnostic=str(exc))
        change = np.linalg.norm(sol_new - sol) / max(np.linalg.norm(sol), np.finfo(float).tiny)
        sol = sol_new
        theta = ThetaParams.from_vector(sol, ms)
        if change < tol:
            return WnsfResult(theta=theta, stage="iterated",
                              weighting_condition=cond_est, converged=True,
                              iterations=k)
    return WnsfResult(theta=theta, stage="iterated",
                      weighting_condition=cond_est, converged=False,
                      iterations=max_iter,
                      diagnostic=f"no convergence within {max_iter} passes")


# ---------------------------------------------------------------------------
# CSV persistence: stage header then labeled parameter rows
# ---------------------------------------------------------------------------

def save_wnsf_result(result: WnsfResult, path) -> None:
    theta = result.theta
    with open(path, "w", newline="\n") as fh:
        fh.write("stage,iterations,converged\n")
        fh.write(f"{result.stage},{result.iterations},{str(result.converged).lower()}\n")
        for prefix, vec in (("f", theta.f), ("l", theta.l),
                            ("c", theta.c), ("d", theta.d)):
            if vec is None:
                continue
            for k, val in enumerate(vec, start=1):
                fh.write(f"{prefix}_{k},{float(val)!r}\n")


def load_wnsf_result(path) -> WnsfResult:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        stage, iterations, converged = next(reader)
        params: dict[str, list[float]] = {"f": [], "l": [], "c": [], "d": []}
        for row in reader:
            if not row:
                continue
            prefix = row[0].split("_")[0]
            params[prefix].append(float(row[1]))
    theta = ThetaParams(
        f=np.array(params["f"]), l=np.array(params["l"]),
        c=np.array(params["c"]) if params["c"] else None,
        d=np.array(params["d"]) if params["d"] else None)
    return WnsfResult(theta=theta, stage=stage, iterations=int(iterations),
                      converged=converged == "true")
