"""
Return statistics of simulated (or external) price series: moments, the
Jarque-Bera normality test, tail frequencies against the Gaussian benchmark,
excursion and jump accounting, and variance growth across an ensemble.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 8
MAD_SCALE = 1.4826

BUBBLE = "Bubble"
DEPRESSION = "Depression"
HALTED = "Halted"


@dataclass(frozen=True)
class ReturnSeries:
    diffs: np.ndarray

    @property
    def n(self):
        return len(self.diffs)

    @classmethod
    def from_prices(cls, prices, halted=None, mode="diff"):
        """
        Builds per-step changes, dropping any change that touches a Halted
        step. ``mode`` is ``diff`` or ``log``; in log mode a step with a
        nonpositive price is dropped the same way.
        """
        prices = np.asarray(prices, dtype=float)
        if halted is None:
            halted = np.isnan(prices)
        halted = np.asarray(halted, dtype=bool) | np.isnan(prices)
        if mode == "log":
            nonpositive = ~halted & (prices <= 0)
            if np.any(nonpositive):
                logger.debug(
                    "Dropping %d nonpositive prices from log returns", int(nonpositive.sum())
                )
            halted = halted | nonpositive
            levels = np.log(np.where(halted, 1.0, prices))
        elif mode == "diff":
            levels = prices
        else:
            raise ValueError("returns mode must be 'diff' or 'log', got %r" % mode)
        keep = ~(halted[1:] | halted[:-1])
        return cls(np.diff(levels)[keep])

    @classmethod
    def pooled(cls, series):
        parts = [s.diffs for s in series]
        return cls(np.concatenate(parts) if parts else np.zeros(0))


def _checked(series):
    diffs = np.asarray(getattr(series, "diffs", series), dtype=float)
    if len(diffs) < MIN_OBSERVATIONS:
        raise ValueError(
            "need at least %d returns, got %d" % (MIN_OBSERVATIONS, len(diffs))
        )
    if np.ptp(diffs) == 0:
        raise ValueError("return series is constant (zero variance)")
    return diffs


def excess_kurtosis(series) -> float:
    return float(stats.kurtosis(_checked(series), fisher=True, bias=True))


def skewness(series) -> float:
    return float(stats.skew(_checked(series), bias=True))


@dataclass(frozen=True)
class JarqueBera:
    statistic: float
    p_value: float
    skewness: float
    excess_kurtosis: float
    n: int


def jb_from_moments(n, skew, kurt):
    """
    JB = n/6 (S^2 + K^2/4) with its chi-square(2) tail probability exp(-JB/2).
    """
    statistic = n / 6.0 * (skew * skew + kurt * kurt / 4.0)
    return statistic, float(stats.chi2.sf(statistic, df=2))


def jarque_bera(series) -> JarqueBera:
    diffs = _checked(series)
    skew = skewness(diffs)
    kurt = excess_kurtosis(diffs)
    statistic, p_value = jb_from_moments(len(diffs), skew, kurt)
    return JarqueBera(statistic, p_value, skew, kurt, len(diffs))


@dataclass(frozen=True)
class TailExceedance:
    threshold: float
    frequency: float
    gaussian: float
    count: int
    n: int

    @property
    def standard_error(self):
        return math.sqrt(self.gaussian * (1 - self.gaussian) / self.n)


def tail_exceedance(series, z: float) -> TailExceedance:
    """
    Fraction of standardised changes beyond +-z against 2(1 - Phi(z)).
    """
    diffs = _checked(series)
    standardised = (diffs - diffs.mean()) / diffs.std(ddof=1)
    count = int(np.count_nonzero(np.abs(standardised) > z))
    return TailExceedance(
        threshold=z,
        frequency=count / len(diffs),
        gaussian=float(2 * stats.norm.sf(z)),
        count=count,
        n=len(diffs),
    )


def mad_jumps(series, threshold: float = 6.0) -> np.ndarray:
    """
    Indices of changes larger than ``threshold`` robust standard deviations
    (1.4826 * median absolute deviation). For data without clearing records.
    """
    diffs = np.asarray(getattr(series, "diffs", series), dtype=float)
    scale = MAD_SCALE * stats.median_abs_deviation(diffs, scale=1.0)
    if scale == 0:
        return np.flatnonzero(diffs != np.median(diffs))
    return np.flatnonzero(np.abs(diffs - np.median(diffs)) > threshold * scale)


@dataclass
class ExcursionReport:
    n_bubbles: int = 0
    n_depressions: int = 0
    durations: list = field(default_factory=list)
    time_fraction_outside: float = 0.0
    n_jumps: int = 0
    jump_sizes: list = field(default_factory=list)
    n_cycles: int = 0

    def as_dict(self):
        return asdict(self)


def excursions(conditions: Sequence[str], jumps: Sequence[bool], jump_sizes=None):
    """
    Counts contiguous Bubble/Depression runs and the jumps recorded by the
    clearing engine. A cycle is an excursion whose next step is a jump.

    ``time_fraction_outside`` is measured over steps that were not Halted.
    """
    conditions = [str(c) for c in conditions]
    jumps = [bool(j) for j in jumps]
    if jump_sizes is None:
        jump_sizes = [0.0] * len(jumps)
    report = ExcursionReport()
    open_steps = 0
    outside = 0
    run_label = None
    run_length = 0

    def close_run(next_jump):
        if run_label is None:
            return
        if run_label == BUBBLE:
            report.n_bubbles += 1
        else:
            report.n_depressions += 1
        report.durations.append(run_length)
        if next_jump:
            report.n_cycles += 1

    for label, jumped, size in zip(conditions, jumps, jump_sizes):
        if label != HALTED:
            open_steps += 1
        if jumped:
            report.n_jumps += 1
            report.jump_sizes.append(float(size))
        if label in (BUBBLE, DEPRESSION):
            outside += 1
            if label == run_label:
                run_length += 1
                continue
            close_run(False)
            run_label, run_length = label, 1
        else:
            close_run(jumped)
            run_label, run_length = None, 0
    close_run(False)
    report.time_fraction_outside = outside / open_steps if open_steps else 0.0
    return report


@dataclass(frozen=True)
class VarianceGrowth:
    checkpoints: tuple
    variances: tuple
    slope: float
    intercept: float
    r_squared: float


def variance_growth(
    ensemble,
    checkpoints: Sequence[int],
    times: Optional[Sequence[float]] = None,
    through_origin: bool = False,
) -> VarianceGrowth:
    """
    Across-run variance of price at each checkpoint and its least-squares
    line against time.

    ``ensemble`` is a (runs, steps) array. ``times`` default to the
    checkpoint indices. With ``through_origin`` the intercept is fixed at 0
    and R^2 is the uncentred one.
    """
    ensemble = np.atleast_2d(np.asarray(ensemble, dtype=float))
    if ensemble.shape[0] < 2:
        raise ValueError("variance growth needs at least two runs")
    checkpoints = list(checkpoints)
    t = np.asarray(checkpoints if times is None else times, dtype=float)
    variances = np.var(ensemble[:, checkpoints], axis=0, ddof=1)
    if through_origin:
        slope = float(np.dot(t, variances) / np.dot(t, t))
        intercept = 0.0
        total = float(np.dot(variances, variances))
    else:
        slope, intercept = (float(v) for v in np.polyfit(t, variances, 1))
        total = float(np.sum((variances - variances.mean()) ** 2))
    residual = float(np.sum((variances - (slope * t + intercept)) ** 2))
    if total == 0:
        r_squared = 1.0 if residual == 0 else 0.0
    else:
        r_squared = 1.0 - residual / total
    return VarianceGrowth(
        checkpoints=tuple(checkpoints),
        variances=tuple(float(v) for v in variances),
        slope=slope,
        intercept=intercept,
        r_squared=r_squared,
    )


def summarize(frame, returns="diff", tail_z=3.0):
    """
    Statistics summary of one step table (a mapping or DataFrame with the
    price, condition, halted, jump and jump_size columns).
    """
    prices = np.asarray(frame["price"], dtype=float)
    halted = np.asarray(frame["halted"], dtype=int).astype(bool)
    series = ReturnSeries.from_prices(prices, halted, mode=returns)
    report = excursions(
        list(frame["condition"]),
        np.asarray(frame["jump"], dtype=int).astype(bool),
        np.asarray(frame["jump_size"], dtype=float),
    )
    summary = {
        "n_returns": series.n,
        "excursions": report.as_dict(),
        "bound_violations": bound_violations(frame),
        "jump_violations": jump_violations(frame),
    }
    summary.update(moment_summary(series, tail_z))
    return summary


def moment_summary(series, tail_z=3.0):
    """
    Kurtosis, skewness, Jarque-Bera and tail frequency, or None for each when
    the series is too short or constant.
    """
    try:
        jb = jarque_bera(series)
        tail = tail_exceedance(series, tail_z)
    except ValueError as e:
        logger.info("Skipping moment statistics: %s", e)
        return {
            "excess_kurtosis": None,
            "skewness": None,
            "jarque_bera": None,
            "tail": None,
        }
    return {
        "excess_kurtosis": jb.excess_kurtosis,
        "skewness": jb.skewness,
        "jarque_bera": {"statistic": jb.statistic, "p_value": jb.p_value},
        "tail": {
            "threshold": tail.threshold,
            "frequency": tail.frequency,
            "gaussian": tail.gaussian,
            "count": tail.count,
        },
    }


def bound_violations(frame, tol=1e-12):
    """
    Steps that cleared with fundamentals alone at a price outside E_t.
    """
    price = np.asarray(frame["price"], dtype=float)
    lo = np.asarray(frame["pareto_lo"], dtype=float)
    hi = np.asarray(frame["pareto_hi"], dtype=float)
    open_steps = ~np.asarray(frame["halted"], dtype=int).astype(bool)
    fundamental_only = (
        np.asarray(frame["n_tb"], dtype=int) + np.asarray(frame["n_ts"], dtype=int)
    ) == 0
    outside = (price < lo - tol) | (price > hi + tol)
    return int(np.count_nonzero(open_steps & fundamental_only & outside))


def jump_violations(frame, tol=1e-12):
    """
    Jumps that did not land in E_t, or that did not come from an excursion
    whose sustaining technical side had emptied.
    """
    conditions = [str(c) for c in frame["condition"]]
    jumps = np.asarray(frame["jump"], dtype=int).astype(bool)
    price = np.asarray(frame["price"], dtype=float)
    lo = np.asarray(frame["pareto_lo"], dtype=float)
    hi = np.asarray(frame["pareto_hi"], dtype=float)
    n_tb = np.asarray(frame["n_tb"], dtype=int)
    n_ts = np.asarray(frame["n_ts"], dtype=int)
    violations = 0
    previous = None
    for i, label in enumerate(conditions):
        if jumps[i]:
            inside = lo[i] - tol <= price[i] <= hi[i] + tol
            sustaining = n_tb[i] if previous == BUBBLE else n_ts[i]
            from_excursion = previous in (BUBBLE, DEPRESSION)
            if not (inside and from_excursion and (sustaining == 0 or n_tb[i] + n_ts[i] == 0)):
                violations += 1
        if label != HALTED:
            previous = label
    return violations
