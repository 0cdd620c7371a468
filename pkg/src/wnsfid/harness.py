"""Reproducible Monte Carlo experiment driver.

Every run derives its excitation streams deterministically from
(config seed, run index, stream purpose) so that batches are reproducible,
open/closed-loop scenarios are paired per run, and parallel execution gives
byte-identical outputs to serial execution.  Run wall times are emitted to a
separate ``timings.csv`` so that ``runs.csv`` stays deterministic.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .analysis import (
    asymptotic_covariance,
    impulse_fit,
    mse_metric,
    theta_from_model,
)
from .arx import estimate_arx
from .errors import ConfigError, WnsfError
from .lti import (
    RationalTransferFunction,
    derive_rng,
    random_fir_noise_model,
    simulate_closed_loop,
    simulate_open_loop,
)
from .wnsf import (
    ModelStructure,
    ThetaParams,
    fully_parametric_wnsf,
    iterate_wnsf,
    step2_ls,
    step3_wls,
)

# Stream purposes for per-run seed derivation (seed, run, purpose).
STREAM_REFERENCE = 1
STREAM_NOISE = 2
STREAM_NOISE_MODEL = 3

SCENARIO_NAMES = ("fig1_closedloop", "fig1_openloop", "random_noise", "custom")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    g_num: tuple
    g_den: tuple
    k_num: tuple
    k_den: tuple
    h_num: tuple | None = None   # rational noise model; None with random_h
    h_den: tuple | None = None
    random_h: bool = False       # fresh random FIR noise model per run
    open_loop: bool = False
    lambda_r: float = 1.0
    sigma2: float = 1.0
    sample_sizes: tuple = (1000,)
    arx_order: int | None = None  # None = order rule from the sample size
    m_f: int = 2
    m_l: int = 2
    m_c: int = 0
    m_d: int = 0
    runs: int = 1
    seed: int = 0
    iterate: bool = False
    known_initial: bool = False
    max_iter: int = 100
    tol: float = 1e-4
    parallel: int = 1
    out_dir: str | None = None

    def structure(self) -> ModelStructure:
        return ModelStructure(m_l=self.m_l, m_f=self.m_f,
                              m_c=self.m_c, m_d=self.m_d)

    def dynamic_model(self) -> RationalTransferFunction:
        return RationalTransferFunction.from_coeffs(self.g_num, self.g_den)

    def controller(self) -> RationalTransferFunction:
        return RationalTransferFunction.from_coeffs(self.k_num, self.k_den)

    def noise_model(self) -> RationalTransferFunction | None:
        if self.random_h or self.h_num is None:
            return None
        return RationalTransferFunction.from_coeffs(self.h_num, self.h_den or (1.0,))

    def theta_true(self) -> ThetaParams:
        return theta_from_model(self.dynamic_model())

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIO_NAMES:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if not self.sample_sizes:
            raise ConfigError("at least one sample size is required")
        if self.arx_order is not None:
            bad = [N for N in self.sample_sizes if N <= 2 * self.arx_order]
            if bad:
                raise ConfigError(
                    f"sample sizes {bad} are too small for ARX order "
                    f"{self.arx_order} (need N > 2n)")
        if not self.random_h and self.h_num is None:
            raise ConfigError("scenario needs a noise model (h_num/h_den) "
                              "unless random_h is set")
        if self.parallel < 1:
            raise ConfigError("parallel must be at least 1")
        try:
            self.structure()
            self.dynamic_model()
            self.controller()
            self.noise_model()
        except (WnsfError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


_SCENARIO_PRESETS = {
    "fig1_closedloop": dict(
        g_num=(0.0, 1.0, 0.1), g_den=(1.0, -0.5, 0.75),
        h_num=(1.0, 0.7), h_den=(1.0, -0.9),
        k_num=(1.0,), k_den=(1.0,),
        lambda_r=1.0, sigma2=1.0,
        sample_sizes=(300, 600, 1000, 3000, 6000, 10000),
        arx_order=50, m_f=2, m_l=2,
        known_initial=True, open_loop=False),
    "fig1_openloop": dict(
        g_num=(0.0, 1.0, 0.1), g_den=(1.0, -0.5, 0.75),
        h_num=(1.0, 0.7), h_den=(1.0, -0.9),
        k_num=(1.0,), k_den=(1.0,),
        lambda_r=1.0, sigma2=1.0,
        sample_sizes=(300, 600, 1000, 3000, 6000, 10000),
        arx_order=50, m_f=2, m_l=2,
        known_initial=True, open_loop=True),
    "random_noise": dict(
        g_num=(0.0, 1.0, -0.8), g_den=(1.0, -0.95, 0.9),
        k_num=(0.2,), k_den=(1.0,),
        lambda_r=1.0, sigma2=4.0,
        sample_sizes=(1000, 5000, 10000),
        arx_order=200, m_f=2, m_l=2,
        random_h=True, iterate=True, open_loop=False),
    "custom": dict(),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_INT_KEYS = {"arx_order", "m_f", "m_l", "m_c", "m_d", "runs", "seed",
             "max_iter", "parallel"}
_FLOAT_KEYS = {"lambda_r", "sigma2", "tol"}
_BOOL_KEYS = {"random_h", "open_loop", "iterate", "known_initial"}
_FLOAT_LIST_KEYS = {"g_num", "g_den", "h_num", "h_den", "k_num", "k_den"}
_INT_LIST_KEYS = {"sample_sizes"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key == "arx_order":
            return None if raw.lower() == "auto" else int(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _FLOAT_LIST_KEYS:
            return tuple(float(v) for v in raw.split(","))
        if key in _INT_LIST_KEYS:
            return tuple(int(v) for v in raw.split(","))
        if key in ("scenario", "out_dir"):
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    raise ConfigError(f"unknown configuration key {key!r}")


def load_config_file(path) -> dict:
    """Parse a flat `key = value` file; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = line.split("=", 1)
            key = key.strip()
            values[key] = _parse_value(key, raw)
    return values


def build_config(scenario: str | None = None, config_file=None,
                 **overrides) -> ExperimentConfig:
    """Merge scenario preset, config file, and explicit overrides (in that
    order of increasing precedence) into a validated ExperimentConfig."""
    file_values = load_config_file(config_file) if config_file else {}
    name = scenario or file_values.get("scenario")
    if name is None:
        raise ConfigError("a scenario must be given (flag or config file)")
    if name not in _SCENARIO_PRESETS:
        raise ConfigError(f"unknown scenario {name!r}")
    merged = dict(_SCENARIO_PRESETS[name])
    merged.update({k: v for k, v in file_values.items() if k != "scenario"})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    merged["scenario"] = name
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if name == "custom" and "g_num" not in merged:
        raise ConfigError("custom scenario requires the system polynomials")
    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    run: int
    seed: int
    N: int
    n: int
    mse: float
    fit: float
    iterations: int
    converged: bool
    failed: bool = False
    error: str = ""
    # timing is observability metadata, excluded from the determinism
    # contract (and from runs.csv; it goes to timings.csv)
    wall_time_ms: float = field(default=0.0, compare=False)


def simulate_run(cfg: ExperimentConfig, N: int, run: int):
    """Build the dataset for one Monte Carlo cell from its derived streams."""
    r = np.sqrt(cfg.lambda_r) * derive_rng(cfg.seed, run, STREAM_REFERENCE).standard_normal(N)
    e = np.sqrt(cfg.sigma2) * derive_rng(cfg.seed, run, STREAM_NOISE).standard_normal(N)
    if cfg.random_h:
        H = random_fir_noise_model(cfg.seed, N, key=(run, STREAM_NOISE_MODEL))
    else:
        H = cfg.noise_model()
    simulate = simulate_open_loop if cfg.open_loop else simulate_closed_loop
    return simulate(cfg.dynamic_model(), H, cfg.controller(), r, e,
                    known_initial=cfg.known_initial)


def execute_run(cfg: ExperimentConfig, N: int, run: int) -> RunRecord:
    """Simulate and estimate one Monte Carlo cell; estimator errors become
    failed records rather than batch failures."""
    data = simulate_run(cfg, N, run)
    ms = cfg.structure()
    t0 = time.perf_counter()
    try:
        est = estimate_arx(data, cfg.arx_order, known_initial=cfg.known_initial)
        if not ms.is_semi_parametric:
            if cfg.iterate:
                res = fully_parametric_wnsf(est, ms, cfg.max_iter, cfg.tol)
            else:
                res = fully_parametric_wnsf(est, ms, max_iter=1, tol=float("inf"))
        elif cfg.iterate:
            res = iterate_wnsf(est, ms, cfg.max_iter, cfg.tol)
        else:
            res = step3_wls(est, step2_ls(est, ms).theta, ms)
        wall = 1000.0 * (time.perf_counter() - t0)
        mse = mse_metric(res.theta.dynamic_only(), cfg.theta_true())
        fit = impulse_fit(res.theta.to_transfer_function(), cfg.dynamic_model())
        return RunRecord(scenario=cfg.scenario, run=run, seed=cfg.seed, N=N,
                         n=est.n, mse=mse, fit=fit, iterations=res.iterations,
                         converged=res.converged, wall_time_ms=wall)
    except WnsfError as exc:
        wall = 1000.0 * (time.perf_counter() - t0)
        return RunRecord(scenario=cfg.scenario, run=run, seed=cfg.seed, N=N,
                         n=cfg.arx_order or -1, mse=float("nan"),
                         fit=float("nan"), iterations=0, converged=False,
                         failed=True, error=str(exc), wall_time_ms=wall)


def _run_task(args) -> RunRecord:
    cfg, N, run = args
    return execute_run(cfg, N, run)


def run_monte_carlo(cfg: ExperimentConfig) -> list[RunRecord]:
    """One record per (sample size, run), in canonical (N, run) order.

    Records are independent of the execution backend: parallel workers
    re-derive their streams from (seed, run, purpose).
    """
    cfg.validate()
    tasks = [(cfg, N, run) for N in cfg.sample_sizes for run in range(cfg.runs)]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        records = [_run_task(t) for t in tasks]
    records.sort(key=lambda rec: (rec.N, rec.run))
    return records


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate(records: list[RunRecord]) -> list[dict]:
    """Per (scenario, N) summary: MSE mean/median, FIT quartiles, failure and
    low-outlier counts (runs below the lower boxplot whisker)."""
    if not records:
        raise ValueError("no records to aggregate")
    keys = sorted({(rec.scenario, rec.N) for rec in records})
    rows = []
    for scenario, N in keys:
        cell = [rec for rec in records if rec.scenario == scenario and rec.N == N]
        ok = [rec for rec in cell if not rec.failed]
        mses = np.array([rec.mse for rec in ok])
        fits = np.array([rec.fit for rec in ok])
        finite_fits = fits[np.isfinite(fits)]
        if finite_fits.size:
            q1, med, q3 = np.percentile(finite_fits, [25, 50, 75])
            lo_whisker = q1 - 1.5 * (q3 - q1)
            low = int(np.count_nonzero(fits < lo_whisker))
            fmin, fmax = float(fits.min()), float(fits.max())
        else:
            q1 = med = q3 = float("nan")
            low = 0
            fmin = fmax = float("nan")
        rows.append({
            "scenario": scenario,
            "N": N,
            "n_runs": len(cell),
            "n_failed": len(cell) - len(ok),
            "mean_mse": float(mses.mean()) if mses.size else float("nan"),
            "median_mse": float(np.median(mses)) if mses.size else float("nan"),
            "fit_min": fmin,
            "fit_q1": float(q1),
            "fit_median": float(med),
            "fit_q3": float(q3),
            "fit_max": fmax,
            "fit_low_outliers": low,
        })
    return rows


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

RUNS_HEADER = ["scenario", "run", "seed", "N", "n", "mse", "fit",
               "iterations", "converged", "failed", "error"]
SUMMARY_HEADER = ["scenario", "N", "n_runs", "n_failed", "mean_mse",
                  "median_mse", "fit_min", "fit_q1", "fit_median", "fit_q3",
                  "fit_max", "fit_low_outliers"]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def theoretical_mse_curve(cfg: ExperimentConfig,
                          grid_size: int = 2 ** 14) -> dict | None:
    """sigma^2 trace(M^-1) / N per sample size; None when the scenario has no
    fixed rational noise model."""
    H = cfg.noise_model()
    if H is None:
        return None
    G = cfg.dynamic_model()
    K = cfg.controller()
    report = asymptotic_covariance(G, H, K, lambda_r=cfg.lambda_r,
                                   sigma2=cfg.sigma2,
                                   ms=ModelStructure(m_l=cfg.m_l, m_f=cfg.m_f),
                                   grid_size=grid_size)
    return {N: report.asymptotic_mse_at(N) for N in cfg.sample_sizes}


def emit_outputs(summary: list[dict], records: list[RunRecord], out_dir,
                 theoretical: dict | None = None) -> dict:
    """Write runs.csv, timings.csv, summary.csv and the two plot-data files.

    Returns the mapping of logical name to path.  Output bytes depend only on
    (records, summary, theoretical), not on timing or execution backend;
    wall times go to timings.csv, which is excluded from that guarantee.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv"
             for name in ("runs", "timings", "summary",
                          "plotdata_mse_vs_N", "plotdata_fit_box")}

    with open(paths["runs"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUNS_HEADER)
        for rec in records:
            writer.writerow([rec.scenario, rec.run, rec.seed, rec.N, rec.n,
                             _fmt(rec.mse), _fmt(rec.fit), rec.iterations,
                             _fmt(rec.converged), _fmt(rec.failed), rec.error])

    with open(paths["timings"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "run", "N", "wall_time_ms"])
        for rec in records:
            writer.writerow([rec.scenario, rec.run, rec.N, _fmt(rec.wall_time_ms)])

    with open(paths["summary"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for row in summary:
            writer.writerow([_fmt(row[k]) for k in SUMMARY_HEADER])

    with open(paths["plotdata_mse_vs_N"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "N", "mean_mse", "theoretical"])
        for row in summary:
            theo = ""
            if theoretical is not None and row["N"] in theoretical:
                theo = _fmt(theoretical[row["N"]])
            writer.writerow([row["scenario"], row["N"], _fmt(row["mean_mse"]), theo])

    with open(paths["plotdata_fit_box"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "N", "fit_min", "fit_q1", "fit_median",
                         "fit_q3", "fit_max", "fit_low_outliers"])
        for row in summary:
            writer.writerow([row["scenario"], row["N"], _fmt(row["fit_min"]),
                             _fmt(row["fit_q1"]), _fmt(row["fit_median"]),
                             _fmt(row["fit_q3"]), _fmt(row["fit_max"]),
                             row["fit_low_outliers"]])
    return paths


def load_runs(path) -> list[RunRecord]:
    """Parse runs.csv back into records (wall times live in timings.csv)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RUNS_HEADER:
            raise ValueError(f"unexpected runs.csv header in {path}")
        for row in reader:
            if not row:
                continue
            records.append(RunRecord(
                scenario=row[0], run=int(row[1]), seed=int(row[2]),
                N=int(row[3]), n=int(row[4]), mse=float(row[5]),
                fit=float(row[6]), iterations=int(row[7]),
                converged=row[8] == "true", failed=row[9] == "true",
                error=row[10]))
    return records
