"""Polynomials in the backward shift q^-1, rational transfer functions,
filtering, and open-/closed-loop data simulation with seeded excitation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    InvalidModelError,
    SingularFrequencyError,
    UnstableLoopError,
)

# Roots with modulus >= 1 - STABILITY_MARGIN are rejected as unstable;
# borderline roots fail on purpose since the estimation theory assumes
# strictly stable filters.
STABILITY_MARGIN = 1e-9

FIR_NOISE_DECAY = 0.2  # lambda_k = w_k * exp(-FIR_NOISE_DECAY * k)


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1:
        raise InvalidModelError(f"{name} must be one-dimensional")
    if arr.size == 0:
        raise InvalidModelError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidModelError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Polynomial:
    """Finite coefficient sequence (c_0, c_1, ..., c_d) of c_0 + c_1 q^-1 + ...

    Coefficients multiply increasing powers of the backward shift q^-1.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.coeffs, "coeffs")
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @property
    def is_monic(self) -> bool:
        return self.coeffs[0] == 1.0

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return poly_mul(self, other)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        n = max(self.coeffs.size, other.coeffs.size)
        out = np.zeros(n)
        out[: self.coeffs.size] += self.coeffs
        out[: other.coeffs.size] += other.coeffs
        return Polynomial(out)

    def scaled(self, alpha: float) -> "Polynomial":
        return Polynomial(alpha * self.coeffs)

    def eval_at(self, z: np.ndarray) -> np.ndarray:
        """Evaluate sum_k c_k z^-k for complex z (typically z = exp(i*omega))."""
        z = np.asarray(z, dtype=np.complex128)
        out = np.zeros_like(z)
        for c in self.coeffs[::-1]:
            out = out / z + c
        return out

    def roots(self) -> np.ndarray:
        """Roots in the z plane of z^d * (c_0 + c_1 z^-1 + ... + c_d z^-d)."""
        if self.degree == 0:
            return np.array([], dtype=np.complex128)
        return np.roots(self.coeffs)

    @classmethod
    def one(cls) -> "Polynomial":
        return cls(np.array([1.0]))

    @classmethod
    def delay(cls, k: int = 1) -> "Polynomial":
        c = np.zeros(k + 1)
        c[k] = 1.0
        return cls(c)


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    """Product of two polynomials in q^-1 (coefficient convolution)."""
    return Polynomial(np.convolve(a.coeffs, b.coeffs))


@dataclass(frozen=True)
class RationalTransferFunction:
    """Ratio num(q)/den(q) of polynomials in q^-1 with monic denominator."""

    num: Polynomial
    den: Polynomial

    def __post_init__(self):
        if not self.den.is_monic:
            raise InvalidModelError(
                f"denominator must be monic, got leading coefficient "
                f"{self.den.coeffs[0]!r}")

    @classmethod
    def from_coeffs(cls, num, den=(1.0,)) -> "RationalTransferFunction":
        return cls(Polynomial(np.asarray(num, dtype=float)),
                   Polynomial(np.asarray(den, dtype=float)))

    @classmethod
    def constant(cls, value: float) -> "RationalTransferFunction":
        return cls.from_coeffs([value])

    def poles(self) -> np.ndarray:
        return self.den.roots()

    def zeros(self) -> np.ndarray:
        return self.num.roots()

    def is_stable(self, margin: float = STABILITY_MARGIN) -> bool:
        p = self.poles()
        return bool(p.size == 0 or np.all(np.abs(p) < 1.0 - margin))

    def is_inverse_stable(self, margin: float = STABILITY_MARGIN) -> bool:
        z = self.zeros()
        return bool(z.size == 0 or np.all(np.abs(z) < 1.0 - margin))

    def __mul__(self, other: "RationalTransferFunction") -> "RationalTransferFunction":
        return RationalTransferFunction(self.num * other.num, self.den * other.den)


@dataclass(frozen=True)
class NoiseModelSpec:
    """Noise shaping filter: either rational C(q)/D(q) (both monic) or an
    explicit FIR sequence (1, lambda_1, ..., lambda_{N-1})."""

    kind: str
    tf: RationalTransferFunction | None = None
    fir_coeffs: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "rational":
            if self.tf is None:
                raise InvalidModelError("rational noise model needs a transfer function")
            if self.tf.num.coeffs[0] != 1.0:
                raise InvalidModelError("rational noise model numerator must be monic")
        elif self.kind == "fir":
            arr = _as_float_array(self.fir_coeffs, "fir_coeffs")
            if arr[0] != 1.0:
                raise InvalidModelError("FIR noise model must have leading coefficient 1")
            arr.flags.writeable = False
            object.__setattr__(self, "fir_coeffs", arr)
        else:
            raise InvalidModelError(f"unknown noise model kind {self.kind!r}")

    @classmethod
    def rational(cls, tf: RationalTransferFunction) -> "NoiseModelSpec":
        return cls(kind="rational", tf=tf)

    @classmethod
    def fir(cls, coeffs) -> "NoiseModelSpec":
        return cls(kind="fir", fir_coeffs=np.asarray(coeffs, dtype=float))

    def to_transfer_function(self) -> RationalTransferFunction:
        if self.kind == "rational":
            return self.tf
        return RationalTransferFunction(Polynomial(self.fir_coeffs), Polynomial.one())


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned input/output records from one experiment.

    ``known_initial`` marks data generated from a known (zero) initial state,
    in which case the ARX stage may regress from the first sample with
    zero-padded lags instead of discarding the first ``n`` rows.
    """

    u: np.ndarray
    y: np.ndarray
    r: np.ndarray | None = None
    e: np.ndarray | None = None
    known_initial: bool = False

    def __post_init__(self):
        u = _as_float_array(self.u, "u")
        y = _as_float_array(self.y, "y")
        if u.size != y.size:
            raise InvalidModelError("u and y must have the same length")
        for name in ("r", "e"):
            val = getattr(self, name)
            if val is not None:
                arr = _as_float_array(val, name)
                if arr.size != u.size:
                    raise InvalidModelError(f"{name} must have the same length as u")
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        u.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.u.size


# ---------------------------------------------------------------------------
# Filtering and responses
# ---------------------------------------------------------------------------

def filter_apply(tf: RationalTransferFunction, x, initial_state=None) -> np.ndarray:
    """Run the difference equation den*y = num*x over ``x``.

    The state defaults to zero; ``initial_state`` provides the direct-form-II
    transposed state vector of length max(deg num, deg den).  Stability is the
    caller's responsibility.
    """
    if not tf.den.is_monic:
        raise InvalidModelError("denominator must be monic")
    x = np.asarray(x, dtype=np.float64)
    return _kernels.iir_filter(tf.num.coeffs, tf.den.coeffs, x, initial_state)


def impulse_response(tf: RationalTransferFunction, length: int) -> np.ndarray:
    """First ``length`` coefficients of the power series of num/den."""
    if length < 1:
        raise ValueError("length must be positive")
    x = np.zeros(length)
    x[0] = 1.0
    return filter_apply(tf, x)


def frequency_response(tf: RationalTransferFunction, grid) -> np.ndarray:
    """Evaluate num(e^{i w})/den(e^{i w}) on the given grid of frequencies."""
    w = np.asarray(grid, dtype=np.float64)
    z = np.exp(1j * w)
    den = tf.den.eval_at(z)
    bad = np.abs(den) < 1e-14
    if np.any(bad):
        raise SingularFrequencyError(
            f"denominator vanishes at {int(np.count_nonzero(bad))} grid point(s)")
    return tf.num.eval_at(z) / den


# ---------------------------------------------------------------------------
# Closed-loop simulation
# ---------------------------------------------------------------------------

def _loop_characteristic(G: RationalTransferFunction,
                         K: RationalTransferFunction) -> Polynomial:
    """Monic characteristic polynomial of 1 + K*G: F*Kd + Kn*L."""
    return G.den * K.den + K.num * G.num


def check_loop_stable(G: RationalTransferFunction, K: RationalTransferFunction,
                      margin: float = STABILITY_MARGIN) -> Polynomial:
    """Raise UnstableLoopError when 1 + K*G has a root with modulus at or
    beyond 1 - margin; returns the monic characteristic polynomial."""
    char = _loop_characteristic(G, K)
    moduli = np.abs(char.roots())
    offending = moduli[moduli >= 1.0 - margin]
    if offending.size:
        raise UnstableLoopError(
            "closed loop is unstable; offending root moduli: "
            + ", ".join(f"{m:.6f}" for m in sorted(offending, reverse=True)),
            root_moduli=offending,
        )
    return char


def simulate_closed_loop(G: RationalTransferFunction,
                         H: NoiseModelSpec | RationalTransferFunction,
                         K: RationalTransferFunction,
                         r,
                         e,
                         known_initial: bool = False) -> TimeSeriesDataset:
    """Simulate u = S r - K H S e and y = G S r + H S e with S = (1+KG)^-1.

    The loop is realized by symbolic rational composition (polynomial
    products), so direct feedthrough in K*G needs no iteration and the
    feedback is exact.
    """
    r = np.asarray(r, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if r.size != e.size:
        raise InvalidModelError("r and e must have the same length")
    # A marginally stable loop still has a well-defined finite simulation,
    # so only genuinely diverging loops are rejected here; the analysis
    # paths keep the strict margin.
    char = check_loop_stable(G, K, margin=-STABILITY_MARGIN)
    Htf = H.to_transfer_function() if isinstance(H, NoiseModelSpec) else H

    # S = F*Kd/char; the compositions below cancel common factors exactly.
    u_r = RationalTransferFunction(G.den * K.den, char)
    y_r = RationalTransferFunction(G.num * K.den, char)
    u_e = RationalTransferFunction(K.num * Htf.num * G.den, Htf.den * char)
    y_e = RationalTransferFunction(K.den * Htf.num * G.den, Htf.den * char)

    u = filter_apply(u_r, r) - filter_apply(u_e, e)
    y = filter_apply(y_r, r) + filter_apply(y_e, e)
    return TimeSeriesDataset(u=u, y=y, r=r, e=e, known_initial=known_initial)


def simulate_open_loop(G: RationalTransferFunction,
                       H: NoiseModelSpec | RationalTransferFunction,
                       K: RationalTransferFunction,
                       r,
                       e,
                       known_initial: bool = False) -> TimeSeriesDataset:
    """Open-loop companion experiment: u = (1+KG)^-1 r, y = G u + H e.

    The reference prefilter reproduces the closed-loop input spectrum from the
    reference path, so both experiments share the same asymptotic accuracy.
    """
    r = np.asarray(r, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if r.size != e.size:
        raise InvalidModelError("r and e must have the same length")
    char = check_loop_stable(G, K, margin=-STABILITY_MARGIN)
    Htf = H.to_transfer_function() if isinstance(H, NoiseModelSpec) else H
    u = filter_apply(RationalTransferFunction(G.den * K.den, char), r)
    y = filter_apply(G, u) + filter_apply(Htf, e)
    return TimeSeriesDataset(u=u, y=y, r=r, e=e, known_initial=known_initial)


# ---------------------------------------------------------------------------
# Seeded stochastic excitation
# ---------------------------------------------------------------------------

def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...) via SeedSequence mixing.

    Streams for different keys are statistically independent; the mapping is
    deterministic on a given platform but not specified bit-exactly across
    numpy versions.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def gaussian_white(seed: int, length: int, variance: float = 1.0,
                   key: tuple = ()) -> np.ndarray:
    """I.i.d. Gaussian draws, deterministic given (seed, key, length, variance)."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    rng = derive_rng(seed, *key)
    return np.sqrt(variance) * rng.standard_normal(length)


def random_fir_noise_model(seed: int, length: int, key: tuple = (),
                           weights=None) -> NoiseModelSpec:
    """FIR noise model 1 + sum_k w_k exp(-0.2 k) q^-k, k = 1..length-1.

    ``weights`` overrides the seeded standard-normal draws (test hook).
    """
    if length < 2:
        raise ValueError("length must be at least 2")
    if weights is None:
        weights = derive_rng(seed, *key).standard_normal(length - 1)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.size != length - 1:
            raise ValueError(f"weights must have length {length - 1}")
    lam = weights * np.exp(-FIR_NOISE_DECAY * np.arange(1, length))
    return NoiseModelSpec.fir(np.concatenate([[1.0], lam]))


# ---------------------------------------------------------------------------
# CSV persistence: header t,u,y,r,e with absent columns omitted
# ---------------------------------------------------------------------------

def save_dataset(data: TimeSeriesDataset, path) -> None:
    cols = [("t", np.arange(1, data.n_samples + 1)), ("u", data.u), ("y", data.y)]
    if data.r is not None:
        cols.append(("r", data.r))
    if data.e is not None:
        cols.append(("e", data.e))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(name for name, _ in cols) + "\n")
        for i in range(data.n_samples):
            fh.write(",".join(
                str(int(col[i])) if name == "t" else repr(float(col[i]))
                for name, col in cols) + "\n")


def load_dataset(path, known_initial: bool = False) -> TimeSeriesDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if "u" not in header or "y" not in header:
        raise InvalidModelError(f"dataset file {path} must contain u and y columns")
    data = {name: np.array([float(row[i]) for row in rows])
            for i, name in enumerate(header)}
    return TimeSeriesDataset(u=data["u"], y=data["y"],
                             r=data.get("r"), e=data.get("e"),
                             known_initial=known_initial)
