"""
Discretised semimartingale paths for the underlying process and the
measure-change diagnostics used to check drift removal.

Paths are arithmetic Brownian motions with constant drift sampled on a
uniform grid. Every path or scenario batch draws from its own derived
stream (see ``equil.utils.stream_rng``) so results never depend on the
order in which they are produced.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .utils import PATH_STREAM, SCENARIO_STREAM, stream_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """
    Uniform trading grid t_k = k * dt, k = 0..n_steps, starting at t0 = 0.
    """

    horizon: float
    n_steps: int
    t0 = 0.0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be an integer >= 1, got %r" % self.n_steps)
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be finite and > 0, got %r" % self.horizon)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def time(self, k: int) -> float:
        return k * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def check_index(self, k: int):
        if not 0 <= k <= self.n_steps:
            raise ValueError(
                "grid index %r outside 0..%d" % (k, self.n_steps),
            )


@dataclass(frozen=True)
class UnderlyingParams:
    z0: float = 5.0
    drift: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0, got %r" % self.sigma)


@dataclass(frozen=True)
class SemimartingalePath:
    """
    One path z[k] = z[0] + sigma * b[k] + drift_rate * t_k.
    """

    z: np.ndarray
    b: np.ndarray
    drift_rate: float
    sigma: float


@dataclass(frozen=True)
class SemimartingalePaths:
    """
    A set of paths stored row-wise: ``z[i]`` and ``b[i]`` belong to path i.
    """

    z: np.ndarray
    b: np.ndarray
    drift_rate: float
    sigma: float
    grid: TimeGrid

    def __len__(self) -> int:
        return self.z.shape[0]

    def __getitem__(self, i: int) -> SemimartingalePath:
        return SemimartingalePath(self.z[i], self.b[i], self.drift_rate, self.sigma)

    def __iter__(self) -> Iterator[SemimartingalePath]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class MeasureChange:
    """
    L_t = -h B_t, its quadratic variation h^2 t and the stochastic exponential
    exp(L_t - <L>_t / 2). Arrays have the shape of the Brownian input.
    """

    l: np.ndarray  # noqa: E741
    qv_l: np.ndarray
    density: np.ndarray


@dataclass(frozen=True)
class ScenarioSet:
    """
    M continuations of the underlying from (t_k, z_k) to the horizon, observed
    at the grid indices in ``indices`` (``indices[0] == anchor_time``).
    """

    anchor_time: int
    anchor_value: float
    indices: np.ndarray
    paths: np.ndarray
    measure_weights: np.ndarray

    def __post_init__(self):
        if self.paths.ndim != 2 or self.paths.shape[0] < 1:
            raise ValueError("scenario set needs at least one path")
        if abs(float(np.sum(self.measure_weights)) - 1.0) > 1e-12:
            raise ValueError("measure weights must sum to 1")
        if np.any(self.measure_weights < 0):
            raise ValueError("measure weights must be nonnegative")

    def __len__(self) -> int:
        return self.paths.shape[0]

    def values_at(self, index: int) -> np.ndarray:
        """
        Returns the scenario values of Z at grid index ``index``.
        """
        position = np.searchsorted(self.indices, index)
        if position >= len(self.indices) or self.indices[position] != index:
            raise KeyError("grid index %d is not observed by this scenario set" % index)
        return self.paths[:, position]

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1]


def gen_brownian(grid: TimeGrid, n_paths: int, seed: int) -> np.ndarray:
    """
    Returns an (n_paths, n_steps + 1) array of Brownian paths with b[:, 0] = 0.

    Path i draws its increments from the stream (seed, PATH_STREAM, i).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1, got %r" % n_paths)
    scale = math.sqrt(grid.dt)
    paths = np.zeros((n_paths, grid.n_steps + 1))
    for i in range(n_paths):
        increments = stream_rng(seed, PATH_STREAM, i).standard_normal(grid.n_steps)
        np.cumsum(increments * scale, out=paths[i, 1:])
    return paths


def gen_semimartingale(
    grid: TimeGrid,
    z0: float,
    drift_rate: float,
    sigma: float,
    n_paths: int,
    seed: int,
) -> SemimartingalePaths:
    if sigma < 0:
        raise ValueError("sigma must be >= 0, got %r" % sigma)
    b = gen_brownian(grid, n_paths, seed)
    z = z0 + sigma * b + drift_rate * grid.times()
    # Keep the initial condition exact rather than z0 + 0.0 * b[0].
    z[:, 0] = z0
    return SemimartingalePaths(z=z, b=b, drift_rate=drift_rate, sigma=sigma, grid=grid)


def conditional_scenarios(
    path_so_far: Sequence[float],
    grid: TimeGrid,
    k: int,
    params: UnderlyingParams,
    n_scenarios: int,
    seed: int,
    indices: Optional[Sequence[int]] = None,
) -> ScenarioSet:
    """
    Re-simulates the underlying from the realised value at t_k to the horizon.

    Only the grid points in ``indices`` are sampled (all remaining points by
    default). Gaussian increments over a gap of g steps are exact for an
    arithmetic Brownian motion, so the sparse sample has the same law as the
    dense one at the observed points. The batch draws from the stream
    (seed, SCENARIO_STREAM, k).
    """
    grid.check_index(k)
    if n_scenarios < 1:
        raise ValueError("scenario count must be >= 1, got %r" % n_scenarios)
    if len(path_so_far) <= k:
        raise ValueError("realised path has no value at grid index %d" % k)
    anchor_value = float(path_so_far[k])
    if indices is None:
        observed = np.arange(k, grid.n_steps + 1)
    else:
        observed = np.unique(np.asarray(list(indices) + [k], dtype=int))
        if observed[0] < k or observed[-1] > grid.n_steps:
            raise ValueError("observation indices must lie in %d..%d" % (k, grid.n_steps))
    gaps = np.diff(observed) * grid.dt
    paths = np.empty((n_scenarios, len(observed)))
    paths[:, 0] = anchor_value
    if len(gaps):
        normals = stream_rng(seed, SCENARIO_STREAM, k).standard_normal(
            (n_scenarios, len(gaps))
        )
        increments = params.drift * gaps + params.sigma * np.sqrt(gaps) * normals
        paths[:, 1:] = anchor_value + np.cumsum(increments, axis=1)
    return ScenarioSet(
        anchor_time=k,
        anchor_value=anchor_value,
        indices=observed,
        paths=paths,
        measure_weights=np.full(n_scenarios, 1.0 / n_scenarios),
    )


def stochastic_exponential(h: float, b: np.ndarray, grid: TimeGrid) -> MeasureChange:
    b = np.asarray(b, dtype=float)
    times = grid.times()
    l = -h * b  # noqa: E741
    qv_l = np.broadcast_to(h * h * times, b.shape).copy()
    density = np.exp(l - 0.5 * qv_l)
    return MeasureChange(l=l, qv_l=qv_l, density=density)


def novikov_value(h: float, horizon: float) -> float:
    """
    E[exp(<L>_T / 2)] for constant h, i.e. exp(h^2 T / 2).
    """
    try:
        return math.exp(0.5 * h * h * horizon)
    except OverflowError:
        return math.inf


def novikov_holds(h: float, horizon: float) -> bool:
    return math.isfinite(novikov_value(h, horizon))


@dataclass(frozen=True)
class CheckpointResult:
    index: int
    time: float
    weighted_mean: float
    standard_error: float
    mean_density: float
    density_standard_error: float
    passed: bool
    density_passed: bool


@dataclass(frozen=True)
class MartingaleDiagnostic:
    z0: float
    checkpoints: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checkpoints)

    @property
    def density_passed(self) -> bool:
        return all(c.density_passed for c in self.checkpoints)


def martingale_diagnostic(
    paths: SemimartingalePaths, mc: MeasureChange, checkpoints: Sequence[int]
) -> MartingaleDiagnostic:
    """
    Checks that Z reweighted by the density has constant expectation z0.

    At each checkpoint reports mean(density * z) with its standard error and
    whether it lies within 3 standard errors of z0. The mean density itself is
    checked against 1 the same way.
    """
    density = np.atleast_2d(mc.density)
    if density.shape != paths.z.shape:
        raise ValueError(
            "measure change covers %d paths of length %d, paths are %d of length %d"
            % (density.shape + paths.z.shape)
        )
    n_paths = len(paths)
    z0 = float(paths.z[0, 0])
    results = []
    for index in checkpoints:
        paths.grid.check_index(index)
        weighted = density[:, index] * paths.z[:, index]
        mean = float(np.mean(weighted))
        se = float(np.std(weighted, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        mean_density = float(np.mean(density[:, index]))
        density_se = (
            float(np.std(density[:, index], ddof=1) / math.sqrt(n_paths))
            if n_paths > 1
            else 0.0
        )
        results.append(
            CheckpointResult(
                index=index,
                time=paths.grid.time(index),
                weighted_mean=mean,
                standard_error=se,
                mean_density=mean_density,
                density_standard_error=density_se,
                passed=abs(mean - z0) <= 3 * se,
                density_passed=abs(mean_density - 1.0) <= 3 * density_se,
            )
        )
        logger.debug(
            "Checkpoint %d: weighted mean %.6f (se %.6f), mean density %.6f",
            index,
            mean,
            se,
            mean_density,
        )
    return MartingaleDiagnostic(z0=z0, checkpoints=results)
