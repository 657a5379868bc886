"""
Tradable vectors: the underlying and its derivatives as payoff functionals
of the underlying path.

Cash flows are indexed by grid step: the amount paid for step k -> k+1 is
settled at t_{k+1}. A stream observed from grid index k covers (t_k, T].
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .stochastic import ScenarioSet

logger = logging.getLogger(__name__)


class Kind(enum.Enum):
    UNDERLYING = "underlying"
    FORWARD = "forward"
    CALL = "call"
    PUT = "put"
    STEP = "step"


EXPIRY_KINDS = (Kind.FORWARD, Kind.CALL, Kind.PUT)


@dataclass(frozen=True)
class PayoutRow:
    """
    Pays slope * z_step + intercept at t_step, floored at zero if ``floor``.
    """

    step: int
    slope: float
    intercept: float
    floor: bool = False

    def __call__(self, z):
        value = self.slope * z + self.intercept
        if self.floor:
            value = np.maximum(value, 0.0)
        return value

    @classmethod
    def parse(cls, text):
        """
        Parses ``step:slope:intercept[:floor]``.
        """
        bits = [bit.strip() for bit in text.split(":")]
        if len(bits) not in (3, 4):
            raise ValueError("payout row %r is not step:slope:intercept[:floor]" % text)
        floor = False
        if len(bits) == 4:
            if bits[3] not in ("floor", "0", "1"):
                raise ValueError("payout row flag must be 'floor', '0' or '1', got %r" % bits[3])
            floor = bits[3] in ("floor", "1")
        return cls(int(bits[0]), float(bits[1]), float(bits[2]), floor)


@dataclass(frozen=True)
class SecuritySpec:
    id: str
    kind: Kind
    strike: float = 0.0
    expiry: Optional[int] = None
    table: Tuple[PayoutRow, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("security id must not be empty")
        if not math.isfinite(self.strike):
            raise ValueError("security %s: strike must be finite" % self.id)
        if self.kind in EXPIRY_KINDS:
            if self.expiry is None or self.expiry < 1:
                raise ValueError("security %s: expiry index must be >= 1" % self.id)
        if self.kind is Kind.STEP:
            if not self.table:
                raise ValueError("security %s: step payout needs at least one row" % self.id)
            if any(row.step < 1 for row in self.table):
                raise ValueError("security %s: payout rows start at step 1" % self.id)

    def validate(self, n_steps):
        """
        Checks the grid-dependent invariants.
        """
        if self.last_index(n_steps) > n_steps:
            raise ValueError(
                "security %s pays at step %d beyond the horizon %d"
                % (self.id, self.last_index(n_steps), n_steps)
            )

    def last_index(self, n_steps):
        """
        Last grid index at which this security pays; it trades strictly before.
        """
        if self.kind is Kind.UNDERLYING:
            return n_steps
        if self.kind is Kind.STEP:
            return max(row.step for row in self.table)
        return self.expiry

    def terminal_payoff(self, z):
        if self.kind is Kind.FORWARD:
            return z - self.strike
        if self.kind is Kind.CALL:
            return np.maximum(z - self.strike, 0.0)
        if self.kind is Kind.PUT:
            return np.maximum(self.strike - z, 0.0)
        raise ValueError("security %s has no terminal payoff" % self.id)

    def observation_indices(self, from_k, n_steps):
        """
        Grid indices after ``from_k`` whose underlying values the remaining
        cash flows depend on.
        """
        if self.kind is Kind.UNDERLYING:
            return [n_steps] if n_steps > from_k else []
        if self.kind is Kind.STEP:
            return sorted({row.step for row in self.table if row.step > from_k})
        return [self.expiry] if self.expiry > from_k else []


@dataclass(frozen=True)
class CashflowStream:
    from_k: int
    increments: np.ndarray

    @property
    def total(self):
        return float(np.sum(self.increments))


@dataclass(frozen=True)
class PayoffEstimate:
    mean: float
    standard_error: float


def step_cashflow(spec: SecuritySpec, z: Sequence[float], k: int) -> float:
    """
    Amount one unit of ``spec`` pays for the realised step k -> k+1.
    """
    if spec.kind is Kind.UNDERLYING:
        return float(z[k + 1] - z[k])
    if spec.kind is Kind.STEP:
        return float(sum(row(z[k + 1]) for row in spec.table if row.step == k + 1))
    if spec.expiry == k + 1:
        return float(spec.terminal_payoff(z[k + 1]))
    return 0.0


def payoff_stream(spec: SecuritySpec, path, from_k: int) -> CashflowStream:
    """
    Realised cash flows of one unit held over (t_from_k, T].
    """
    z = np.asarray(getattr(path, "z", path), dtype=float)
    n_steps = len(z) - 1
    if not 0 <= from_k <= n_steps:
        raise ValueError("from_k %d outside 0..%d" % (from_k, n_steps))
    if spec.kind in EXPIRY_KINDS and spec.expiry < from_k:
        raise ValueError(
            "security %s expired at step %d before %d" % (spec.id, spec.expiry, from_k)
        )
    increments = np.array([step_cashflow(spec, z, j) for j in range(from_k, n_steps)])
    return CashflowStream(from_k=from_k, increments=increments)


def scenario_totals(spec: SecuritySpec, scenarios: ScenarioSet) -> np.ndarray:
    """
    Total remaining cash flow of one unit in every scenario.
    """
    k = scenarios.anchor_time
    if spec.kind is Kind.UNDERLYING:
        return scenarios.terminal - scenarios.anchor_value
    if spec.kind is Kind.STEP:
        totals = np.zeros(len(scenarios))
        for row in spec.table:
            if row.step > k:
                totals = totals + row(scenarios.values_at(row.step))
        return totals
    if spec.expiry > k:
        return spec.terminal_payoff(scenarios.values_at(spec.expiry))
    return np.zeros(len(scenarios))


def weighted_estimate(values: np.ndarray, weights: np.ndarray) -> PayoffEstimate:
    mean = float(np.dot(weights, values))
    sum_sq = float(np.dot(weights, weights))
    if sum_sq >= 1.0:
        return PayoffEstimate(mean, 0.0)
    spread = float(np.dot(weights, (values - mean) ** 2))
    return PayoffEstimate(mean, math.sqrt(spread * sum_sq / (1.0 - sum_sq)))


def expected_payoff(spec: SecuritySpec, scenarios: ScenarioSet) -> PayoffEstimate:
    return weighted_estimate(scenario_totals(spec, scenarios), scenarios.measure_weights)


def check_issuance(spec: SecuritySpec, scenarios: ScenarioSet) -> PayoffEstimate:
    """
    Rejects securities whose conditional expected payoff is not positive.
    """
    estimate = expected_payoff(spec, scenarios)
    if not estimate.mean > 0:
        raise ValueError(
            "security %s has nonpositive expected payoff %.6g at issuance"
            % (spec.id, estimate.mean)
        )
    return estimate


def accrue(
    spec: SecuritySpec, holders: Mapping[object, float], z: Sequence[float], k: int
) -> dict:
    """
    Numeraire transfer to each holder for the realised step k -> k+1.
    """
    increment = step_cashflow(spec, z, k)
    return {holder: position * increment for holder, position in holders.items()}


def payoff_identical(a: SecuritySpec, b: SecuritySpec, paths, tol=1e-12) -> bool:
    """
    Brute-force comparison of the cash flows of two specs on probe paths.
    """
    for z in np.atleast_2d(paths):
        stream_a = payoff_stream(a, z, 0).increments
        stream_b = payoff_stream(b, z, 0).increments
        if not np.allclose(stream_a, stream_b, rtol=0.0, atol=tol):
            return False
    return True
