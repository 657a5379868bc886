"""
Runs markets and turns their step rows into summaries: single runs, seeded
ensembles, parameter sweeps, re-analysis of persisted CSVs and the
measure-change diagnostic.
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from .market import Market, RunRecord
from .recorder import COLUMNS, StepRecorder
from .statistics import (
    ReturnSeries,
    bound_violations,
    jump_violations,
    mad_jumps,
    moment_summary,
    summarize,
    variance_growth,
)
from .stochastic import (
    TimeGrid,
    gen_semimartingale,
    martingale_diagnostic,
    novikov_holds,
    novikov_value,
    stochastic_exponential,
)
from .utils import RUN_STREAM, derive_seed

logger = logging.getLogger(__name__)

JB_LEVEL = 0.01
EXCURSION_COUNTS = ("n_bubbles", "n_depressions", "n_jumps", "n_cycles")


class NumericalError(ArithmeticError):
    pass


class AnalysisError(ValueError):
    pass


def check_finite(value, where="result"):
    """
    Raises NumericalError if any float nested in ``value`` is NaN.
    """
    if isinstance(value, float):
        if math.isnan(value):
            raise NumericalError("NaN in %s" % where)
    elif isinstance(value, dict):
        for key, item in value.items():
            check_finite(item, "%s.%s" % (where, key))
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            check_finite(item, "%s[%d]" % (where, i))


def write_json(path, data):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True, indent=2)
        fh.write("\n")
    logger.info("Wrote %s", path)


def ensemble_threads():
    if "EQUIL_THREADS" in os.environ:
        return max(1, int(os.environ["EQUIL_THREADS"]))
    return 1


def _frame(rows):
    return pd.DataFrame(rows, columns=COLUMNS)


def _mean(values):
    return float(np.mean(values)) if values else None


class Harness:
    """
    Entry point for everything the command line can ask for.
    """

    market_class = Market

    def __init__(self, threads=None):
        self.threads = threads if threads is not None else ensemble_threads()

    def run_simulation(self, config, seed=None, out_dir=None) -> RunRecord:
        """
        Runs one market and attaches its summary. With ``out_dir`` the step
        CSVs and summary.json are written there.
        """
        seed = config.seed if seed is None else seed
        recorder = StepRecorder(out_dir) if out_dir else None
        market = self.market_class(config, seed, action_logger=recorder)
        try:
            record = market.run()
        finally:
            if recorder:
                recorder.close()
        record.summary = {
            "config_hash": record.config_hash,
            "seed": record.seed,
            "run": {
                "n_steps": config.grid.n_steps,
                "solver_failures": record.solver_failures,
                "bankruptcies": record.bankruptcies,
                "max_cash_drift": record.max_cash_drift,
            },
            "securities": {
                security_id: summarize(_frame(rows), config.returns, config.tail_z)
                for security_id, rows in record.rows.items()
            },
            "audit": record.audit,
        }
        check_finite(record.summary, "summary")
        if out_dir:
            write_json(os.path.join(out_dir, "summary.json"), record.summary)
        logger.info(
            "Run finished (seed %d): %d solver failures, %d bankruptcies",
            seed,
            record.solver_failures,
            record.bankruptcies,
        )
        return record

    def run_ensemble(self, config, n_runs, out=None):
        """
        Runs ``n_runs`` markets with seeds derived from the master seed and
        aggregates them. Results are collected in run-index order.
        """
        if n_runs < 1:
            raise ValueError("n_runs must be >= 1, got %r" % n_runs)
        seeds = [derive_seed(config.seed, RUN_STREAM, i) for i in range(n_runs)]

        def one(i):
            out_dir = os.path.join(out, "run-%04d" % i) if out else None
            record = self.run_simulation(config, seeds[i], out_dir)
            logger.info("Ensemble run %d/%d done", i + 1, n_runs)
            return record

        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            records = list(executor.map(one, range(n_runs)))
        aggregate = self.aggregate(config, records)
        if out:
            write_json(os.path.join(out, "ensemble.json"), aggregate)
        return aggregate

    def aggregate(self, config, records):
        securities = {}
        for spec in config.securities:
            summaries = [r.summary["securities"][spec.id] for r in records]
            frames = [_frame(r.rows[spec.id]) for r in records]
            securities[spec.id] = self.aggregate_security(config, summaries, frames)
        aggregate = {
            "config_hash": config.hash,
            "seed": config.seed,
            "n_runs": len(records),
            "seeds": [r.seed for r in records],
            "solver_failures": sum(r.solver_failures for r in records),
            "bankruptcies": sum(r.bankruptcies for r in records),
            "securities": securities,
            "runs": [r.summary for r in records],
        }
        check_finite(aggregate, "ensemble")
        return aggregate

    def aggregate_security(self, config, summaries, frames):
        n_runs = len(summaries)
        excursions = [s["excursions"] for s in summaries]
        kurtoses = [s["excess_kurtosis"] for s in summaries if s["excess_kurtosis"] is not None]
        tests = [s["jarque_bera"] for s in summaries if s["jarque_bera"] is not None]
        pooled = ReturnSeries.pooled(
            [
                ReturnSeries.from_prices(f["price"], f["halted"].astype(bool), config.returns)
                for f in frames
            ]
        )
        result = {
            "excursions": {
                name: sum(e[name] for e in excursions) for name in EXCURSION_COUNTS
            },
            "runs_with_excursion": sum(
                1 for e in excursions if e["n_bubbles"] + e["n_depressions"]
            )
            / n_runs,
            "time_fraction_outside_mean": _mean(
                [e["time_fraction_outside"] for e in excursions]
            ),
            "excess_kurtosis": {
                "n": len(kurtoses),
                "mean": _mean(kurtoses),
                "min": min(kurtoses) if kurtoses else None,
                "max": max(kurtoses) if kurtoses else None,
            },
            "jb_rejection_rate": (
                sum(1 for t in tests if t["p_value"] < JB_LEVEL) / len(tests)
                if tests
                else None
            ),
            "pooled": dict(moment_summary(pooled, config.tail_z), n_returns=pooled.n),
            "bound_violations": sum(s["bound_violations"] for s in summaries),
            "jump_violations": sum(s["jump_violations"] for s in summaries),
            "variance_growth": self.variance_report(config, frames),
        }
        return result

    def variance_report(self, config, frames):
        """
        Variance of price across runs at each checkpoint, fitted against time
        with and without an intercept. Runs without a price at a checkpoint
        are left out.
        """
        checkpoints = list(config.checkpoints)
        columns = [c - 1 for c in checkpoints]
        prices = np.array([np.asarray(f["price"], dtype=float)[columns] for f in frames])
        complete = prices[~np.isnan(prices).any(axis=1)]
        report = {"checkpoints": checkpoints, "n_runs": len(complete)}
        if len(complete) < 2:
            logger.info("Variance growth needs two complete runs, have %d", len(complete))
            return dict(report, fit=None, fit_through_origin=None)
        times = [c * config.grid.dt for c in checkpoints]
        for key, through_origin in (("fit", False), ("fit_through_origin", True)):
            growth = variance_growth(
                complete,
                range(len(checkpoints)),
                times=times,
                through_origin=through_origin,
            )
            report[key] = {
                "variances": list(growth.variances),
                "slope": growth.slope,
                "intercept": growth.intercept,
                "r_squared": growth.r_squared,
            }
        return report

    def sweep(self, config, param, values, n_runs, out=None):
        """
        One ensemble per value of ``param``; returns the table as a DataFrame
        with one row per (value, security).
        """
        table = []
        for i, value in enumerate(values):
            swept = config.with_values(**{param: value})
            logger.info("Sweep point %s = %s", param, value)
            aggregate = self.run_ensemble(
                swept, n_runs, os.path.join(out, "value-%d" % i) if out else None
            )
            for security_id, agg in aggregate["securities"].items():
                table.append(
                    {
                        "param": param,
                        "value": value,
                        "config_hash": swept.hash,
                        "security": security_id,
                        "n_runs": n_runs,
                        "n_bubbles": agg["excursions"]["n_bubbles"],
                        "n_depressions": agg["excursions"]["n_depressions"],
                        "n_jumps": agg["excursions"]["n_jumps"],
                        "runs_with_excursion": agg["runs_with_excursion"],
                        "time_fraction_outside_mean": agg["time_fraction_outside_mean"],
                        "excess_kurtosis_mean": agg["excess_kurtosis"]["mean"],
                        "jb_rejection_rate": agg["jb_rejection_rate"],
                        "pooled_excess_kurtosis": agg["pooled"]["excess_kurtosis"],
                    }
                )
        frame = pd.DataFrame(table)
        if out:
            os.makedirs(out, exist_ok=True)
            path = os.path.join(out, "sweep.csv")
            frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
            logger.info("Wrote %s", path)
        return frame

    def analyze(self, paths, returns="diff", tail_z=3.0):
        """
        Recomputes statistics from persisted CSVs. Step tables get the full
        summary; a CSV with only a price column is treated as external data
        and gets moments plus the robust jump count.
        """
        if not paths:
            raise AnalysisError("no input files")
        files = {}
        series = []
        for path in paths:
            frame = self.read_table(path)
            if set(COLUMNS) <= set(frame.columns):
                files[path] = summarize(frame, returns, tail_z)
                halted = frame["halted"].astype(bool)
            else:
                halted = None
            try:
                returns_series = ReturnSeries.from_prices(frame["price"], halted, returns)
            except ValueError as e:
                raise AnalysisError("%s: %s" % (path, e)) from e
            if halted is None:
                files[path] = dict(
                    moment_summary(returns_series, tail_z),
                    n_returns=returns_series.n,
                    mad_jumps=len(mad_jumps(returns_series)),
                )
            series.append(returns_series)
        pooled = ReturnSeries.pooled(series)
        result = {
            "files": files,
            "pooled": dict(moment_summary(pooled, tail_z), n_returns=pooled.n),
        }
        check_finite(result, "analysis")
        return result

    def read_table(self, path):
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except FileNotFoundError as e:
            raise AnalysisError("%s: no such file" % path) from e
        except pd.errors.EmptyDataError as e:
            raise AnalysisError("%s: file is empty" % path) from e
        if "price" not in frame.columns:
            raise AnalysisError("%s: no price column" % path)
        if frame.empty:
            raise AnalysisError("%s: no rows" % path)
        return frame

    def girsanov_check(self, drift, h, n_paths, n_steps, seed, horizon=1.0, z0=5.0, sigma=1.0):
        """
        Samples paths under P, reweights them by the stochastic exponential
        of -h B and checks the reweighted mean of Z at T/2 and T.
        """
        grid = TimeGrid(horizon=horizon, n_steps=n_steps)
        paths = gen_semimartingale(grid, z0, drift, sigma, n_paths, seed)
        mc = stochastic_exponential(h, paths.b, grid)
        checkpoints = sorted({max(1, n_steps // 2), n_steps})
        diagnostic = martingale_diagnostic(paths, mc, checkpoints)
        for c in diagnostic.checkpoints:
            if math.isnan(c.weighted_mean) or math.isnan(c.mean_density):
                raise NumericalError("NaN in measure-change diagnostic at %d" % c.index)
        return {
            "novikov_value": novikov_value(h, horizon),
            "novikov_holds": novikov_holds(h, horizon),
            "diagnostic": diagnostic,
        }
