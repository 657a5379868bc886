"""
Per-step market clearing.

The price function takes the fundamental limit orders (bids from FB, asks
from FS), the technical market orders (TB buys, TS sells) and the previous
price. With fundamentals only the price is the midpoint of the
Pareto-efficient set E_t = [min ask, max bid]. With technicals it moves by
the mean epsilon times the buy/sell imbalance plus an optional pull of weight
kappa toward that midpoint, and may leave E_t. When the side sustaining an
excursion disappears the price jumps back to the midpoint of E_t.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

ISSUER_ID = -1
TOUCH_TOLERANCE = 1e-12


class Condition(enum.Enum):
    NON_SPECULATIVE = "NonSpeculative"
    NORMAL = "Normal"
    BUBBLE = "Bubble"
    DEPRESSION = "Depression"
    HALTED = "Halted"


EXCURSIONS = (Condition.BUBBLE, Condition.DEPRESSION)


class MarketHalted(Exception):
    """
    No fundamental bargain exists this step.
    """


@dataclass(frozen=True)
class Order:
    trader_id: int
    price: float


@dataclass(frozen=True)
class Census:
    n_fb: int = 0
    n_fs: int = 0
    n_tb: int = 0
    n_ts: int = 0

    @property
    def technicals(self):
        return self.n_tb + self.n_ts


@dataclass(frozen=True)
class OrderBookSnapshot:
    bids: Tuple[Order, ...] = ()
    asks: Tuple[Order, ...] = ()
    buys: Tuple[Order, ...] = ()
    sells: Tuple[Order, ...] = ()

    def __post_init__(self):
        seen = set()
        for order in self.bids + self.asks + self.buys + self.sells:
            if order.trader_id in seen:
                raise ValueError("trader %d placed more than one order" % order.trader_id)
            seen.add(order.trader_id)
        for order in self.bids + self.asks:
            if not order.price > 0:
                raise ValueError(
                    "limit price of trader %d must be > 0, got %r"
                    % (order.trader_id, order.price)
                )

    def census(self) -> Census:
        return Census(len(self.bids), len(self.asks), len(self.buys), len(self.sells))


@dataclass(frozen=True)
class ParetoSet:
    lo: Optional[float] = None
    hi: Optional[float] = None

    @property
    def one_sided(self):
        return (self.lo is None) != (self.hi is None)

    @property
    def nonempty(self):
        return self.lo is not None and self.hi is not None and self.hi >= self.lo

    @property
    def midpoint(self):
        if not self.nonempty:
            raise MarketHalted("E_t is empty or one-sided")
        return (self.lo + self.hi) / 2

    def contains(self, price):
        return self.nonempty and self.lo <= price <= self.hi


@dataclass(frozen=True)
class Trade:
    buyer: int
    seller: int
    price: float
    qty: int = 1


@dataclass(frozen=True)
class JumpRecord:
    size: float


@dataclass(frozen=True)
class ClearingParams:
    kappa: float = 0.05
    passive_fundamentals: bool = False


@dataclass(frozen=True)
class ClearingStepResult:
    price: float
    condition: Condition
    census: Census
    pareto: ParetoSet
    trades: Tuple[Trade, ...] = ()
    jump: Optional[JumpRecord] = None

    @property
    def halted(self):
        return self.condition is Condition.HALTED


def pareto_set(book: OrderBookSnapshot) -> ParetoSet:
    lo = min(order.price for order in book.asks) if book.asks else None
    hi = max(order.price for order in book.bids) if book.bids else None
    return ParetoSet(lo=lo, hi=hi)


def clear_nonspeculative(pareto: ParetoSet) -> float:
    """
    Midpoint of E_t; raises MarketHalted when E_t is empty or one-sided.
    """
    return pareto.midpoint


def apply_pressure(
    prev_price: float,
    census: Census,
    epsilon_bar: float,
    kappa: float,
    pareto: ParetoSet,
) -> float:
    """
    prev + epsilon_bar * (|TB| - |TS|) + kappa * (midpoint(E_t) - prev).

    The result is not clamped to E_t.
    """
    if census.technicals == 0:
        raise ValueError("price pressure needs at least one active technical trader")
    price = prev_price + epsilon_bar * (census.n_tb - census.n_ts)
    if kappa:
        price += kappa * (pareto.midpoint - prev_price)
    return price


def classify(price: float, pareto: ParetoSet, census: Census) -> Condition:
    if not pareto.nonempty or math.isnan(price):
        return Condition.HALTED
    if price > pareto.hi:
        return Condition.BUBBLE
    if price < pareto.lo:
        return Condition.DEPRESSION
    if census.technicals == 0:
        return Condition.NON_SPECULATIVE
    return Condition.NORMAL


def detect_jump(
    prev: Optional[ClearingStepResult], new: ClearingStepResult
) -> Optional[JumpRecord]:
    """
    A jump is the re-entry into E_t from a Bubble (Depression) once TB_t
    (TS_t), or every technical trader, has gone.
    """
    if prev is None or prev.condition not in EXCURSIONS or new.halted:
        return None
    if prev.condition is Condition.BUBBLE:
        sustaining = new.census.n_tb
    else:
        sustaining = new.census.n_ts
    if new.census.technicals and sustaining:
        return None
    if not new.pareto.contains(new.price):
        return None
    size = new.price - prev.price
    if size == 0:
        return None
    return JumpRecord(size=size)


def match_orders(
    book: OrderBookSnapshot, price: float, passive_fundamentals: bool = False
) -> Tuple[Trade, ...]:
    """
    Crosses compatible orders at the clearing price, one unit per pair.

    Market orders always execute; limit orders only when the price is within
    their limit (or touches it, with passive fundamentals). Buyers are ranked
    market orders first, then by descending bid; sellers market orders first,
    then by ascending ask; ties go to the lowest trader id.
    """

    def eligible_bid(order):
        if passive_fundamentals:
            return abs(order.price - price) <= TOUCH_TOLERANCE
        return order.price >= price

    def eligible_ask(order):
        if passive_fundamentals:
            return abs(order.price - price) <= TOUCH_TOLERANCE
        return order.price <= price

    buyers = sorted(book.buys, key=lambda o: o.trader_id) + sorted(
        (o for o in book.bids if eligible_bid(o)),
        key=lambda o: (-o.price, o.trader_id),
    )
    sellers = sorted(book.sells, key=lambda o: o.trader_id) + sorted(
        (o for o in book.asks if eligible_ask(o)),
        key=lambda o: (o.price, o.trader_id),
    )
    return tuple(
        Trade(buyer=b.trader_id, seller=s.trader_id, price=price)
        for b, s in zip(buyers, sellers)
    )


def halted_result(
    prev: Optional[ClearingStepResult], pareto: ParetoSet, census: Census
) -> ClearingStepResult:
    price = prev.price if prev is not None else math.nan
    return ClearingStepResult(
        price=price, condition=Condition.HALTED, census=census, pareto=pareto
    )


def clear_step(
    book: OrderBookSnapshot,
    prev: Optional[ClearingStepResult],
    params: ClearingParams,
    epsilon_bar: float = 0.0,
) -> ClearingStepResult:
    """
    One application of the price function.

    ``prev`` is the last result that was not Halted (None before the market
    opens); ``epsilon_bar`` is the mean epsilon of active technical traders.
    """
    pareto = pareto_set(book)
    census = book.census()
    try:
        if prev is None or math.isnan(prev.price) or census.technicals == 0:
            # Opening auction, or fundamentals only.
            price = clear_nonspeculative(pareto)
        elif (prev.condition is Condition.BUBBLE and census.n_tb == 0) or (
            prev.condition is Condition.DEPRESSION and census.n_ts == 0
        ):
            price = clear_nonspeculative(pareto)
        else:
            if not pareto.nonempty:
                raise MarketHalted("E_t is empty or one-sided")
            price = apply_pressure(prev.price, census, epsilon_bar, params.kappa, pareto)
    except MarketHalted:
        logger.debug("Halted: E_t = [%s, %s]", pareto.lo, pareto.hi)
        return halted_result(prev, pareto, census)
    result = ClearingStepResult(
        price=price,
        condition=classify(price, pareto, census),
        census=census,
        pareto=pareto,
        trades=match_orders(book, price, params.passive_fundamentals),
    )
    jump = detect_jump(prev, result)
    if jump is not None:
        logger.debug(
            "Jump of %.6g from %s back into E_t", jump.size, prev.condition.value
        )
        result = replace(result, jump=jump)
    return result


@dataclass
class Issuer:
    """
    Counterparty of endowed inventory: holds the opposite positions, pays and
    receives their accruals, never trades and never goes bankrupt.
    """

    id: int = ISSUER_ID
    cash: float = 0.0
    holdings: dict = field(default_factory=dict)
    alive: bool = True


@dataclass(frozen=True)
class SettlementReport:
    bankrupt: Tuple[int, ...]
    paid: float


def settle_and_bankrupt(
    trades: Mapping[str, Sequence[Trade]],
    accruals: Mapping[int, float],
    traders: Mapping[int, object],
) -> SettlementReport:
    """
    Applies trade payments and positions per security, then accruals, then
    marks every living trader with negative cash bankrupt.

    ``traders`` maps ids to objects with ``cash``, ``holdings`` and ``alive``;
    the issuer is exempt from bankruptcy.
    """
    paid = 0.0
    for security_id, security_trades in trades.items():
        for trade in security_trades:
            buyer = traders[trade.buyer]
            seller = traders[trade.seller]
            amount = trade.price * trade.qty
            buyer.cash -= amount
            seller.cash += amount
            buyer.holdings[security_id] = buyer.holdings.get(security_id, 0) + trade.qty
            seller.holdings[security_id] = seller.holdings.get(security_id, 0) - trade.qty
            paid += amount
    for trader_id, amount in accruals.items():
        traders[trader_id].cash += amount
    bankrupt = []
    for trader_id, trader in traders.items():
        if isinstance(trader, Issuer) or not trader.alive:
            continue
        if trader.cash < 0:
            trader.alive = False
            bankrupt.append(trader_id)
            logger.warning("Trader %d went bankrupt with cash %.6g", trader_id, trader.cash)
    return SettlementReport(bankrupt=tuple(bankrupt), paid=paid)


@dataclass(frozen=True)
class AuditReport:
    applicable: bool
    pairs: Tuple[Tuple[str, str], ...] = ()
    max_reservation_discrepancy: float = 0.0
    max_price_discrepancy: float = 0.0
    tol: float = 1e-6

    @property
    def passed(self):
        if not self.applicable:
            return True
        return max(self.max_reservation_discrepancy, self.max_price_discrepancy) <= self.tol

    def as_dict(self):
        if not self.applicable:
            return {"applicable": False, "status": "not applicable"}
        return {
            "applicable": True,
            "pairs": ["%s:%s" % pair for pair in self.pairs],
            "max_reservation_discrepancy": self.max_reservation_discrepancy,
            "max_price_discrepancy": self.max_price_discrepancy,
            "passed": self.passed,
        }


def _discrepancy(a, b):
    if math.isnan(a) and math.isnan(b):
        return 0.0
    if math.isnan(a) or math.isnan(b):
        return math.inf
    return abs(a - b)


def law_of_one_price_audit(
    pairs: Sequence[Tuple[str, str]],
    reservations: Sequence[Mapping[Tuple[str, int], float]],
    prices: Mapping[str, Sequence[float]],
    technicals_active: bool,
    tol: float = 1e-6,
) -> AuditReport:
    """
    Compares payoff-identical securities agent by agent and step by step.

    ``reservations`` holds, per step, the reservation price quoted by each
    (security id, trader id); ``prices`` the clearing price series per
    security (nan where Halted). Only meaningful with fundamentals alone.
    """
    if technicals_active:
        return AuditReport(applicable=False, tol=tol)
    max_reservation = 0.0
    max_price = 0.0
    for a, b in pairs:
        for step_quotes in reservations:
            for (security_id, trader_id), quote in step_quotes.items():
                if security_id != a:
                    continue
                other = step_quotes.get((b, trader_id), math.nan)
                max_reservation = max(max_reservation, _discrepancy(quote, other))
        for price_a, price_b in zip(prices[a], prices[b]):
            max_price = max(max_price, _discrepancy(price_a, price_b))
    return AuditReport(
        applicable=True,
        pairs=tuple(pairs),
        max_reservation_discrepancy=max_reservation,
        max_price_discrepancy=max_price,
        tol=tol,
    )
