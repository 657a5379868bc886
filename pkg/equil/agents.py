"""
Market participants: expected utility, preference between consumption
bundles, reservation prices of fundamental traders and the random
buy/sell/idle strategy of technical traders.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple

import numpy as np
from scipy import optimize, special

from .securities import SecuritySpec, scenario_totals
from .stochastic import ScenarioSet

logger = logging.getLogger(__name__)

TOL_U = 1e-10
TOL_PRICE = 1e-9
MAX_BRACKET = 1e6
MAX_ITERATIONS = 200
MAX_EXPONENT = 700.0


class NoBracketError(ArithmeticError):
    """
    The indifference equation has no root in (0, MAX_BRACKET].
    """


class Family(enum.Enum):
    LINEAR = "linear"
    CARA = "cara"
    CRRA = "crra"


class Side(enum.Enum):
    FB = "FB"
    FS = "FS"


class Regime(enum.Enum):
    IDLE = "IdleFlat"
    BUYER = "Buyer"
    SELLER = "Seller"


class Preference(enum.Enum):
    A = "A"
    B = "B"
    INDIFFERENT = "indifferent"


@dataclass(frozen=True)
class UtilityFn:
    """
    Strictly increasing von Neumann-Morgenstern utility of wealth.

    Linear is the risk neutral member; CARA uses -exp(-gamma w); CRRA uses
    ((w + w0)^(1 - eta) - 1) / (1 - eta), log(w + w0) at eta = 1, and is
    undefined at or below the wealth floor w = -w0.
    """

    family: Family
    gamma: Optional[float] = None
    eta: Optional[float] = None
    w0: Optional[float] = None

    def __post_init__(self):
        if self.family is Family.CARA:
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("CARA utility needs gamma > 0, got %r" % self.gamma)
        elif self.family is Family.CRRA:
            if self.eta is None or not self.eta > 0:
                raise ValueError("CRRA utility needs eta > 0, got %r" % self.eta)
            if self.w0 is None or not self.w0 > 0:
                raise ValueError("CRRA utility needs a wealth floor w0 > 0, got %r" % self.w0)

    @classmethod
    def linear(cls):
        return cls(Family.LINEAR)

    @classmethod
    def cara(cls, gamma):
        return cls(Family.CARA, gamma=gamma)

    @classmethod
    def crra(cls, eta, w0):
        return cls(Family.CRRA, eta=eta, w0=w0)

    @property
    def wealth_independent(self):
        """
        True when reservation prices do not depend on cash.
        """
        return self.family in (Family.LINEAR, Family.CARA)

    def evaluate(self, wealth, strict=True):
        """
        Utility of each wealth level. Below the CRRA floor raises ValueError
        when ``strict`` and returns -inf otherwise.
        """
        wealth = np.asarray(wealth, dtype=float)
        if self.family is Family.LINEAR:
            return wealth
        if self.family is Family.CARA:
            return -np.exp(-self.gamma * wealth)
        shifted = wealth + self.w0
        feasible = shifted > 0
        if not np.all(feasible):
            if strict:
                raise ValueError(
                    "CRRA utility undefined for wealth <= -%g (floor)" % self.w0
                )
            shifted = np.where(feasible, shifted, 1.0)
        if self.eta == 1:
            values = np.log(shifted)
        else:
            values = (shifted ** (1 - self.eta) - 1) / (1 - self.eta)
        if not strict:
            values = np.where(feasible, values, -np.inf)
        return values

    __call__ = evaluate


@dataclass(frozen=True)
class Bundle:
    """
    Certain consumption ``cash`` plus contingent consumption with the given
    scenario totals.
    """

    cash: float
    samples: np.ndarray = field(default_factory=lambda: np.zeros(1))


@dataclass(frozen=True)
class Endowment:
    cash: float
    holdings: Mapping[str, float]


@dataclass
class FundamentalTrader:
    id: int
    side: Side
    cash: float
    holdings: dict
    utility: UtilityFn
    alive: bool = True
    endowment: Optional[Endowment] = None

    def __post_init__(self):
        if self.endowment is None:
            self.endowment = Endowment(self.cash, dict(self.holdings))

    def pricing_state(self, mode="fixed") -> Tuple[float, Mapping[str, float]]:
        """
        Cash and holdings the trader quotes against: its date-t endowment in
        ``fixed`` mode, its realised ledger in ``ledger`` mode.
        """
        if mode == "ledger":
            return self.cash, self.holdings
        return self.endowment.cash, self.endowment.holdings


@dataclass
class TechnicalTrader:
    id: int
    epsilon: float
    switch_probs: Tuple[float, float, float]
    regime: Regime = Regime.IDLE
    cash: float = 0.0
    holdings: dict = field(default_factory=dict)
    alive: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("technical trader %d: epsilon must be > 0" % self.id)
        probs = tuple(float(p) for p in self.switch_probs)
        if len(probs) != 3 or any(not 0 <= p <= 1 for p in probs):
            raise ValueError(
                "technical trader %d: switch probabilities must be three values in [0, 1]"
                % self.id
            )
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(
                "technical trader %d: switch probabilities sum to %r, not 1"
                % (self.id, sum(probs))
            )
        self.switch_probs = probs


def expected_utility(u: UtilityFn, cash, samples, weights=None) -> float:
    """
    Mean over scenarios of u(cash + contingent consumption).
    """
    utilities = u.evaluate(cash + np.asarray(samples, dtype=float))
    if weights is None:
        return float(np.mean(utilities))
    return float(np.dot(weights, utilities))


def prefer(u: UtilityFn, a: Bundle, b: Bundle, tol=TOL_U) -> Preference:
    difference = expected_utility(u, a.cash, a.samples) - expected_utility(
        u, b.cash, b.samples
    )
    if abs(difference) <= tol:
        return Preference.INDIFFERENT
    return Preference.A if difference > 0 else Preference.B


def _payoffs(trader, spec, scenarios, payoffs, holdings):
    if payoffs is None:
        payoffs = {spec.id: scenario_totals(spec, scenarios)}
    for security_id, quantity in holdings.items():
        if quantity and security_id not in payoffs:
            raise ValueError(
                "trader %d holds %s but no scenario payoffs were given for it"
                % (trader.id, security_id)
            )
    return payoffs


def _holdings_value(holdings, payoffs, n):
    value = np.zeros(n)
    for security_id, quantity in holdings.items():
        if quantity:
            value = value + quantity * payoffs[security_id]
    return value


def _expected_utility_or_floor(u, wealth, weights):
    utilities = u.evaluate(wealth, strict=False)
    if np.any(np.isneginf(utilities)):
        return -math.inf
    return float(np.dot(weights, utilities))


def _solve_increasing(residual, trader_id):
    """
    Bisection for the root of an increasing residual on (0, hi], doubling hi
    from 1 until the sign changes.
    """
    at_zero = residual(0.0)
    if at_zero >= 0:
        raise NoBracketError(
            "trader %d: indifference price is not positive (residual at 0 is %g)"
            % (trader_id, at_zero)
        )
    hi = 1.0
    while residual(hi) < 0:
        hi *= 2
        if hi > MAX_BRACKET:
            raise NoBracketError(
                "trader %d: indifference not bracketed below %g" % (trader_id, MAX_BRACKET)
            )
    try:
        price, result = optimize.bisect(
            residual,
            0.0,
            hi,
            xtol=TOL_PRICE,
            maxiter=MAX_ITERATIONS,
            full_output=True,
            disp=False,
        )
    except (ValueError, RuntimeError) as e:
        raise NoBracketError("trader %d: %s" % (trader_id, e)) from e
    if not result.converged:
        raise NoBracketError(
            "trader %d: bisection did not converge in %d iterations"
            % (trader_id, MAX_ITERATIONS)
        )
    return price


def _cara_residual(gamma, base, x, weights, sign):
    """
    Utility change of a one-unit trade at ``price``, relative to the current
    expected utility, for CARA utility.

    exp(-gamma * price) factors out of the expectation, so both scenario sums
    are taken once and every evaluation is scalar.
    """
    log_before = float(special.logsumexp(-gamma * base, b=weights))
    if sign > 0:
        log_gap = float(special.logsumexp(-gamma * (base - x), b=weights)) - log_before

        def residual(price):
            return 1.0 - math.exp(min(log_gap - gamma * price, MAX_EXPONENT))

    else:
        log_gap = float(special.logsumexp(-gamma * (base + x), b=weights)) - log_before

        def residual(price):
            return math.exp(min(log_gap + gamma * price, MAX_EXPONENT)) - 1.0

    return residual


def _reservation(trader, spec, scenarios, payoffs, mode, sign):
    cash, holdings = trader.pricing_state(mode)
    payoffs = _payoffs(trader, spec, scenarios, payoffs, holdings)
    weights = scenarios.measure_weights
    x = payoffs[spec.id]
    mean = float(np.dot(weights, x))
    if not mean > 0:
        raise NoBracketError(
            "trader %d: security %s has nonpositive expected payoff %.6g"
            % (trader.id, spec.id, mean)
        )
    u = trader.utility
    if u.family is Family.LINEAR:
        return mean
    if u.wealth_independent:
        # CARA utilities of w and of w - cash differ by a positive factor.
        cash = 0.0
    base = cash + _holdings_value(holdings, payoffs, len(x))
    if u.family is Family.CARA:
        return _solve_increasing(_cara_residual(u.gamma, base, x, weights, sign), trader.id)
    base_utility = _expected_utility_or_floor(u, base, weights)
    if base_utility == -math.inf:
        raise NoBracketError(
            "trader %d: current position is below the utility floor" % trader.id
        )
    if sign > 0:
        # Seller: receives the price, gives up one unit.
        def residual(price):
            return _expected_utility_or_floor(u, base + price - x, weights) - base_utility

    else:
        # Buyer: pays the price, receives one unit; negated to increase in price.
        def residual(price):
            return base_utility - _expected_utility_or_floor(u, base - price + x, weights)

    return _solve_increasing(residual, trader.id)


def reservation_ask(
    trader: FundamentalTrader,
    spec: SecuritySpec,
    scenarios: ScenarioSet,
    payoffs: Optional[Mapping[str, np.ndarray]] = None,
    mode: str = "fixed",
) -> float:
    """
    Lowest price at which a FS trader is indifferent to selling one unit.

    ``payoffs`` maps security ids to scenario totals on ``scenarios``; it must
    cover every security the trader holds. Linear utility returns the
    conditional expectation directly; other families solve
    U(cash + a, holdings - x) = U(cash, holdings) by bisection.
    """
    if trader.side is not Side.FS:
        raise ValueError("trader %d is not a fundamental seller" % trader.id)
    return _reservation(trader, spec, scenarios, payoffs, mode, +1)


def reservation_bid(
    trader: FundamentalTrader,
    spec: SecuritySpec,
    scenarios: ScenarioSet,
    payoffs: Optional[Mapping[str, np.ndarray]] = None,
    mode: str = "fixed",
) -> float:
    """
    Highest price at which a FB trader is indifferent to buying one unit.
    """
    if trader.side is not Side.FB:
        raise ValueError("trader %d is not a fundamental buyer" % trader.id)
    return _reservation(trader, spec, scenarios, payoffs, mode, -1)


def switch_regime(trader: TechnicalTrader, rng: np.random.Generator) -> Regime:
    """
    Draws the trader's regime for this step from its switch probabilities.
    """
    p_buy, p_sell, _ = trader.switch_probs
    draw = rng.random()
    if draw < p_buy:
        return Regime.BUYER
    if draw < p_buy + p_sell:
        return Regime.SELLER
    return Regime.IDLE


def quote_buy(trader: TechnicalTrader, current_price: float) -> float:
    if trader.regime is not Regime.BUYER:
        raise ValueError("technical trader %d is not buying" % trader.id)
    return current_price + trader.epsilon


def quote_sell(trader: TechnicalTrader, current_price: float) -> float:
    if trader.regime is not Regime.SELLER:
        raise ValueError("technical trader %d is not selling" % trader.id)
    return current_price - trader.epsilon
