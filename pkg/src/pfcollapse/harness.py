"""Replicated Monte Carlo experiments over (spectrum, d', n) grids.

Five report types, all deterministic functions of (config, master seed):

  - collapse sweep: mean max weight, effective sample size, and gap-sum
    statistic per grid cell, showing weight degeneracy grow with the
    effective dimension;
  - scaling check: the mean gap-sum statistic rescaled by the two
    variance-constant conventions, with a per-cell regime ratio saying
    how asymptotic the cell is;
  - no-collapse check: self-normalized posterior estimates against the
    exact Gaussian oracle for summable spectra;
  - normality check: goodness of fit of the standardized scores to the
    normal law at fixed observation;
  - Lyapunov check: decay of the moment quotients that certify the
    normal approximation.

Cells are independent work units executed on a thread pool; results are
reduced in cell order, so worker count never changes any emitted value.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .errors import BudgetError, ValidationError
from .rng import derive_stream, draw_ensemble, draw_observation
from .spectrum import CASE_SUMMABLE, Spectrum, SpectrumFamily, effective_dimension
from .weights import (
    exact_posterior,
    lyapunov_quotient,
    score_statistics,
    tau_squared_unnormalized,
    weight_summary,
)

DEFAULT_BUDGET = 1_000_000_000

OBSERVATION_MODES = ("redraw_per_replicate", "fixed_per_cell")

# Bounded test functions for the no-collapse check, keyed by report id.
# The indicator converges slowly under the quadrature oracle; prefer the
# smooth choices when tight error comparisons matter.
TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "clipped_identity": lambda v: np.clip(v, -1.0, 1.0),
    "indicator_positive": lambda v: (np.asarray(v) > 0.0).astype(np.float64),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid experiment description; one instance drives one report."""

    name: str
    family: SpectrumFamily
    d_prime_grid: tuple
    n_grid: tuple
    replicates: int
    master_seed: int = 0
    observation_mode: str = "redraw_per_replicate"
    tempering_alpha: float = 1.0

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError("experiment name must be a non-empty string")
        if any(ch in self.name for ch in ",\n\r"):
            raise ValidationError("experiment name must not contain commas or newlines")
        if not isinstance(self.family, SpectrumFamily):
            raise ValidationError("family must be a SpectrumFamily")
        d_grid = tuple(int(d) for d in self.d_prime_grid)
        n_grid = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "d_prime_grid", d_grid)
        object.__setattr__(self, "n_grid", n_grid)
        if not d_grid or any(d < 1 for d in d_grid):
            raise ValidationError("d_prime_grid must be non-empty with entries >= 1")
        if not n_grid or any(n < 2 for n in n_grid):
            raise ValidationError("n_grid must be non-empty with entries n >= 2 (the gap-sum statistic needs at least 2 particles)")
        if not isinstance(self.replicates, (int, np.integer)) or self.replicates < 2:
            raise ValidationError("replicates must be an integer >= 2")
        if self.replicates < 30:
            warnings.warn(
                f"replicates = {self.replicates} < 30: standard errors will be unreliable",
                stacklevel=2,
            )
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValidationError("master_seed must fit in an unsigned 64-bit integer")
        if self.observation_mode not in OBSERVATION_MODES:
            raise ValidationError(f"observation_mode must be one of {OBSERVATION_MODES}")
        if not (0.0 < self.tempering_alpha <= 1.0):
            raise ValidationError("tempering_alpha must lie in (0, 1]")

    def spectrum(self, d_prime: int) -> Spectrum:
        """Family spectrum with the tempering exponent folded in.

        A likelihood exponent alpha multiplies every squared scale by
        alpha, so tempered runs reuse the same streams as untempered
        runs of the rescaled spectrum, exactly.
        """
        spec = self.family.spectrum(d_prime)
        if self.tempering_alpha != 1.0:
            spec = spec.scaled(math.sqrt(self.tempering_alpha))
        return spec

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "family": self.family.to_json(),
            "d_prime_grid": list(self.d_prime_grid),
            "n_grid": list(self.n_grid),
            "replicates": int(self.replicates),
            "master_seed": int(self.master_seed),
            "observation_mode": self.observation_mode,
            "tempering_alpha": float(self.tempering_alpha),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExperimentConfig":
        if not isinstance(obj, Mapping):
            raise ValidationError("experiment config must be a JSON object")
        required = {"name", "family", "d_prime_grid", "n_grid", "replicates"}
        missing = required - set(obj)
        if missing:
            raise ValidationError(f"experiment config missing keys: {sorted(missing)}")
        known = required | {"name", "master_seed", "observation_mode", "tempering_alpha"}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(
            name=obj["name"],
            family=SpectrumFamily.from_json(obj["family"]),
            d_prime_grid=tuple(obj["d_prime_grid"]),
            n_grid=tuple(obj["n_grid"]),
            replicates=int(obj["replicates"]),
            master_seed=int(obj.get("master_seed", 0)),
            observation_mode=obj.get("observation_mode", "redraw_per_replicate"),
            tempering_alpha=float(obj.get("tempering_alpha", 1.0)),
        )


@dataclass(frozen=True)
class CellResult:
    """Aggregated replicate statistics for one (d', n) grid cell."""

    name: str
    family: str
    d_prime: int
    n: int
    replicates: int
    effective_dimension: float
    mean_max_weight: float
    se_max_weight: float
    mean_ess: float
    se_ess: float
    mean_T: float
    se_T: float
    median_T: float
    trimmed_mean_T: float
    regime_ratio: float
    ratio_A2: float
    se_ratio_A2: float
    ratio_unnorm: float
    se_ratio_unnorm: float
    seconds: float


@dataclass(frozen=True)
class NoCollapseResult:
    name: str
    family: str
    d_prime: int
    n: int
    replicates: int
    g: str
    mean_abs_err: float
    se_abs_err: float
    mean_max_weight: float
    seconds: float


@dataclass(frozen=True)
class NormalityResult:
    name: str
    family: str
    d_prime: int
    samples: int
    ks_distance: float
    tail_ratio_2: float
    tail_ratio_3: float
    seconds: float


@dataclass(frozen=True)
class LyapunovResult:
    name: str
    family: str
    d_prime: int
    k: int
    median_L: float
    p90_L: float
    seconds: float


SWEEP_COLUMNS = (
    "name,family,d_prime,n,replicates,effective_dimension,mean_max_weight,"
    "se_max_weight,mean_ess,se_ess,mean_T,se_T"
).split(",")
SCALING_COLUMNS = (
    "name,family,d_prime,n,replicates,regime_ratio,ratio_A2,se_ratio_A2,"
    "ratio_unnorm,se_ratio_unnorm"
).split(",")
NO_COLLAPSE_COLUMNS = (
    "name,family,d_prime,n,replicates,g,mean_abs_err,se_abs_err,mean_max_weight"
).split(",")
NORMALITY_COLUMNS = "name,family,d_prime,samples,ks_distance,tail_ratio_2,tail_ratio_3".split(",")
LYAPUNOV_COLUMNS = "name,family,d_prime,k,median_L,p90_L".split(",")


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))


def _parallel(tasks: Sequence[Callable[[], object]], workers: int | None) -> list:
    """Run tasks on a thread pool, results in submission order."""
    if workers is not None and workers < 1:
        raise ValidationError("workers must be >= 1")
    if workers == 1 or len(tasks) == 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


def _check_budget(cfg: ExperimentConfig, cell_draws: Sequence[tuple[int, int, int]], budget: int):
    """Refuse before doing any work if some cell needs too many draws."""
    for d_prime, n, draws in cell_draws:
        if draws > budget:
            raise BudgetError(
                f"cell (d'={d_prime}, n={n}) of {cfg.name!r} needs about {draws:.3g} "
                f"scalar draws, over the budget of {budget:.3g}"
            )


def regime_ratio(cfg: ExperimentConfig, spec: Spectrum, n: int) -> float:
    """How far from asymptopia a cell is: (log n)(log d') over the scale
    that must dominate it, namely d' for constant spectra and the total
    variance constant otherwise."""
    num = math.log(n) * math.log(spec.d_prime) if spec.d_prime > 1 else 0.0
    if cfg.family.kind == "constant":
        return num / spec.d_prime
    return num / tau_squared_unnormalized(spec)


def _grid_cells(cfg: ExperimentConfig):
    index = 0
    for d_prime in cfg.d_prime_grid:
        for n in cfg.n_grid:
            yield index, d_prime, n
            index += 1


def _collapse_cell(cfg: ExperimentConfig, cell_index: int, d_prime: int, n: int) -> CellResult:
    start = time.perf_counter()
    spec = cfg.spectrum(d_prime)
    seed = cfg.master_seed
    fixed_obs = None
    if cfg.observation_mode == "fixed_per_cell":
        fixed_obs = draw_observation(spec, derive_stream(seed, cfg.name, cell_index, 0, "observation"))
    max_w = np.empty(cfg.replicates)
    ess = np.empty(cfg.replicates)
    t_vals = np.empty(cfg.replicates)
    for r in range(cfg.replicates):
        obs = fixed_obs
        if obs is None:
            obs = draw_observation(spec, derive_stream(seed, cfg.name, cell_index, r, "observation"))
        ens = draw_ensemble(spec, obs, n, derive_stream(seed, cfg.name, cell_index, r, "ensemble"))
        summary = weight_summary(spec, obs, ens)
        max_w[r] = summary.max_weight
        ess[r] = summary.ess
        t_vals[r] = summary.t_stat

    mean_max, se_max = _mean_se(max_w)
    mean_ess, se_ess = _mean_se(ess)
    mean_t, se_t = _mean_se(t_vals)
    # Two scaling conventions for the mean gap-sum statistic.  The total
    # variance constant tau2 estimates the squared exponent scale, whose
    # consistent normalization carries the extra factor 2 from the
    # half-exponent in the exact identity; the unnormalized convention
    # omits it, so its limit is 2 rather than 1.
    tau2 = tau_squared_unnormalized(spec)
    const_a2 = math.sqrt(tau2) / (2.0 * math.sqrt(2.0 * math.log(n)))
    const_un = math.sqrt(tau2) / math.sqrt(2.0 * math.log(n))
    return CellResult(
        name=cfg.name,
        family=cfg.family.label(),
        d_prime=d_prime,
        n=n,
        replicates=cfg.replicates,
        effective_dimension=effective_dimension(spec),
        mean_max_weight=mean_max,
        se_max_weight=se_max,
        mean_ess=mean_ess,
        se_ess=se_ess,
        mean_T=mean_t,
        se_T=se_t,
        median_T=float(np.median(t_vals)),
        trimmed_mean_T=float(stats.trim_mean(t_vals, 0.05)),
        regime_ratio=regime_ratio(cfg, spec, n),
        ratio_A2=const_a2 * mean_t,
        se_ratio_A2=const_a2 * se_t,
        ratio_unnorm=const_un * mean_t,
        se_ratio_unnorm=const_un * se_t,
        seconds=time.perf_counter() - start,
    )


def run_collapse_sweep(
    cfg: ExperimentConfig, workers: int | None = None, budget: int = DEFAULT_BUDGET
) -> list[CellResult]:
    """Replicated weight statistics per grid cell."""
    _check_budget(
        cfg, [(d, n, cfg.replicates * n * d) for _, d, n in _grid_cells(cfg)], budget
    )
    tasks = [
        (lambda i=i, d=d, n=n: _collapse_cell(cfg, i, d, n)) for i, d, n in _grid_cells(cfg)
    ]
    return _parallel(tasks, workers)


def run_scaling_check(
    cfg: ExperimentConfig, workers: int | None = None, budget: int = DEFAULT_BUDGET
) -> list[CellResult]:
    """Collapse sweep plus a warning when a cell is far from asymptotic."""
    results = run_collapse_sweep(cfg, workers=workers, budget=budget)
    for cell in results:
        if cell.regime_ratio > 0.5:
            warnings.warn(
                f"cell (d'={cell.d_prime}, n={cell.n}) has regime ratio "
                f"{cell.regime_ratio:.2f} > 0.5: scaled means may be far from their limits",
                stacklevel=2,
            )
    return results


def _no_collapse_cell(
    cfg: ExperimentConfig, g_name: str, cell_index: int, d_prime: int, n: int
) -> NoCollapseResult:
    start = time.perf_counter()
    g_fn = TEST_FUNCTIONS[g_name]
    spec = cfg.spectrum(d_prime)
    seed = cfg.master_seed
    fixed_obs = None
    if cfg.observation_mode == "fixed_per_cell":
        fixed_obs = draw_observation(spec, derive_stream(seed, cfg.name, cell_index, 0, "observation"))
    abs_err = np.empty(cfg.replicates)
    max_w = np.empty(cfg.replicates)
    for r in range(cfg.replicates):
        obs = fixed_obs
        if obs is None:
            obs = draw_observation(spec, derive_stream(seed, cfg.name, cell_index, r, "observation"))
        ens = draw_ensemble(spec, obs, n, derive_stream(seed, cfg.name, cell_index, r, "ensemble"))
        summary = weight_summary(spec, obs, ens)
        # First canonical state coordinate of each particle; the weighted
        # mean of g over it estimates the posterior expectation.
        v_first = obs.mu[0] - ens.w[:, 0]
        estimate = float(np.sum(summary.weights * g_fn(v_first)))
        oracle = exact_posterior(spec, obs).expectation(g_fn, j=0)
        abs_err[r] = abs(estimate - oracle)
        max_w[r] = summary.max_weight
    mean_err, se_err = _mean_se(abs_err)
    return NoCollapseResult(
        name=cfg.name,
        family=cfg.family.label(),
        d_prime=d_prime,
        n=n,
        replicates=cfg.replicates,
        g=g_name,
        mean_abs_err=mean_err,
        se_abs_err=se_err,
        mean_max_weight=float(np.mean(max_w)),
        seconds=time.perf_counter() - start,
    )


def run_no_collapse_check(
    cfg: ExperimentConfig,
    g: str = "tanh",
    workers: int | None = None,
    budget: int = DEFAULT_BUDGET,
) -> list[NoCollapseResult]:
    """Self-normalized posterior estimates vs the exact Gaussian oracle.

    Only defined for summable-spectrum families, where the weights do
    not collapse and the estimator is consistent.
    """
    if g not in TEST_FUNCTIONS:
        raise ValidationError(f"unknown test function {g!r}; expected one of {sorted(TEST_FUNCTIONS)}")
    if cfg.family.case != CASE_SUMMABLE:
        raise ValidationError(
            "no-collapse check needs a summable-spectrum family "
            "(geometric, or power_decay with p > 1)"
        )
    _check_budget(
        cfg, [(d, n, cfg.replicates * n * d) for _, d, n in _grid_cells(cfg)], budget
    )
    tasks = [
        (lambda i=i, d=d, n=n: _no_collapse_cell(cfg, g, i, d, n))
        for i, d, n in _grid_cells(cfg)
    ]
    return _parallel(tasks, workers)


def _normality_cell(
    cfg: ExperimentConfig, cell_index: int, d_prime: int, samples: int
) -> NormalityResult:
    start = time.perf_counter()
    spec = cfg.spectrum(d_prime)
    # Conditional analysis: one fixed observation per cell by design,
    # regardless of observation_mode.
    obs = draw_observation(
        spec, derive_stream(cfg.master_seed, cfg.name, cell_index, 0, "observation")
    )
    ens = draw_ensemble(
        spec, obs, samples, derive_stream(cfg.master_seed, cfg.name, cell_index, 0, "ensemble")
    )
    scores, _ = score_statistics(spec, obs, ens)
    ks = float(stats.kstest(scores, "norm").statistic)

    def tail_ratio(x: float) -> float:
        return float(np.mean(scores > x)) / float(1.0 - ndtr(x))

    return NormalityResult(
        name=cfg.name,
        family=cfg.family.label(),
        d_prime=d_prime,
        samples=samples,
        ks_distance=ks,
        tail_ratio_2=tail_ratio(2.0),
        tail_ratio_3=tail_ratio(3.0),
        seconds=time.perf_counter() - start,
    )


def run_normality_check(
    cfg: ExperimentConfig,
    samples: int = 10_000,
    workers: int | None = None,
    budget: int = DEFAULT_BUDGET,
) -> list[NormalityResult]:
    """Goodness of fit of the standardized scores to the normal law.

    One cell per d' in the grid (n_grid is not used here: the sample
    count is the ``samples`` argument).
    """
    if not (isinstance(samples, (int, np.integer)) and samples >= 2):
        raise ValidationError("samples must be an integer >= 2")
    _check_budget(cfg, [(d, samples, samples * d) for d in cfg.d_prime_grid], budget)
    tasks = [
        (lambda i=i, d=d: _normality_cell(cfg, i, d, int(samples)))
        for i, d in enumerate(cfg.d_prime_grid)
    ]
    return _parallel(tasks, workers)


def _lyapunov_cell(
    cfg: ExperimentConfig, cell_index: int, d_prime: int, k: int, draws: int
) -> LyapunovResult:
    start = time.perf_counter()
    spec = cfg.spectrum(d_prime)
    values = np.empty(draws)
    for r in range(draws):
        obs = draw_observation(
            spec, derive_stream(cfg.master_seed, cfg.name, cell_index, r, "observation")
        )
        values[r] = lyapunov_quotient(spec, obs, k)
    return LyapunovResult(
        name=cfg.name,
        family=cfg.family.label(),
        d_prime=d_prime,
        k=k,
        median_L=float(np.median(values)),
        p90_L=float(np.quantile(values, 0.9)),
        seconds=time.perf_counter() - start,
    )


def run_lyapunov_check(
    cfg: ExperimentConfig,
    ks: Sequence[int] = (3, 4),
    draws: int = 50,
    workers: int | None = None,
    budget: int = DEFAULT_BUDGET,
) -> list[LyapunovResult]:
    """Median and 90th-percentile Lyapunov quotients over observation draws.

    For constant spectra the median order-3 quotient must halve (up to
    tolerance) when d' quadruples; grids containing such pairs are
    checked and a warning is emitted on violation.
    """
    ks = tuple(int(k) for k in ks)
    if any(k not in (3, 4, 5) for k in ks) or not ks:
        raise ValidationError("Lyapunov orders must be drawn from {3, 4, 5}")
    if not (isinstance(draws, (int, np.integer)) and draws >= 1):
        raise ValidationError("draws must be an integer >= 1")
    _check_budget(cfg, [(d, draws, 2 * d * draws) for d in cfg.d_prime_grid], budget)
    tasks = [
        (lambda i=i, d=d, k=k: _lyapunov_cell(cfg, i, d, k, int(draws)))
        for i, d in enumerate(cfg.d_prime_grid)
        for k in ks
    ]
    results = _parallel(tasks, workers)
    if cfg.family.kind == "constant" and 3 in ks:
        medians = {row.d_prime: row.median_L for row in results if row.k == 3}
        for d in sorted(medians):
            if 4 * d in medians:
                factor = medians[d] / medians[4 * d]
                if not (1.8 <= factor <= 2.2):
                    warnings.warn(
                        f"median order-3 quotient decay factor {factor:.2f} from "
                        f"d'={d} to d'={4 * d} falls outside [1.8, 2.2]",
                        stacklevel=2,
                    )
    return results


# ------------------------------------------------------------------ CSV output


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], value_rows: Sequence[Sequence]) -> None:
    """Write pre-formatted rows to CSV atomically (temp file, then rename).

    Header row mandatory; UTF-8; '.' decimal; '\\n' line ends.
    """
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in value_rows:
                writer.writerow([_format(v) for v in row])
        os.chmod(tmp_path, 0o644)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def write_report_csv(path: str, columns: Sequence[str], rows: Sequence) -> None:
    """Write dataclass rows to CSV; column names must be row attributes."""
    write_csv(path, columns, [[getattr(row, col) for col in columns] for row in rows])


def rows_as_dicts(rows: Sequence) -> list[dict]:
    """Dataclass rows as plain dicts (all fields, including diagnostics)."""
    return [{f.name: getattr(row, f.name) for f in fields(row)} for row in rows]
