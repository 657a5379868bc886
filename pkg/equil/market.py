"""
The per-step simulation loop of one market run.

Each step advances the underlying, re-simulates the future from the realised
value, collects reservation prices from fundamental traders and epsilon
quotes from technical traders, clears every open security, then settles
trades and accruals and retires bankrupt traders.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import agents
from .agents import (
    FundamentalTrader,
    NoBracketError,
    Regime,
    Side,
    TechnicalTrader,
    UtilityFn,
)
from .clearing import (
    Census,
    ClearingStepResult,
    Issuer,
    Order,
    OrderBookSnapshot,
    ParetoSet,
    clear_step,
    halted_result,
    law_of_one_price_audit,
    settle_and_bankrupt,
)
from .config import RunConfig, SidePopulation, sample_utility_params
from .securities import accrue, scenario_totals
from .stochastic import conditional_scenarios, gen_semimartingale
from .utils import PATH_STREAM, POPULATION_STREAM, REGIME_STREAM, derive_seed, stream_rng

logger = logging.getLogger(__name__)

CASH_TOLERANCE = 1e-9


@dataclass
class RunRecord:
    """
    Everything one run produced: step rows per security plus run-level facts.
    """

    config_hash: str
    seed: int
    rows: Dict[str, List[dict]]
    solver_failures: int = 0
    bankruptcies: int = 0
    max_cash_drift: float = 0.0
    audit: dict = field(default_factory=dict)
    summary: Optional[dict] = None


def _bound(value):
    return math.nan if value is None else value


def _utility(side: SidePopulation, gamma, eta, floor):
    if side.utility is agents.Family.LINEAR:
        return UtilityFn.linear()
    if side.utility is agents.Family.CARA:
        return UtilityFn.cara(gamma)
    return UtilityFn.crra(eta, floor)


class Market:
    """
    One market run, as a sequential state machine over the grid.
    """

    def __init__(self, config: RunConfig, seed: int, action_logger=None):
        self.config = config
        self.seed = seed
        self.action_logger = action_logger
        self.grid = config.grid
        self.securities = config.securities
        self.fundamentals: List[FundamentalTrader] = []
        self.technicals: List[TechnicalTrader] = []
        self.issuer = Issuer()
        self.build_population()
        self.traders = {t.id: t for t in self.fundamentals + self.technicals}
        self.traders[self.issuer.id] = self.issuer
        self.regime_streams = {
            t.id: stream_rng(seed, REGIME_STREAM, t.id) for t in self.technicals
        }
        self.z = gen_semimartingale(
            self.grid,
            config.underlying.z0,
            config.underlying.drift,
            config.underlying.sigma,
            1,
            derive_seed(seed, PATH_STREAM),
        ).z[0]

    def build_population(self):
        """
        Creates traders in id order: FB, then FS, then technicals. Parameter
        draws come from one population stream in that order.
        """
        rng = stream_rng(self.seed, POPULATION_STREAM, 0)
        next_id = 0
        for side, population in ((Side.FB, self.config.fb), (Side.FS, self.config.fs)):
            for _ in range(population.count):
                gamma, eta, floor = sample_utility_params(population, rng)
                holdings = {}
                if population.inventory:
                    for spec in self.securities:
                        holdings[spec.id] = population.inventory
                        self.issuer.holdings[spec.id] = (
                            self.issuer.holdings.get(spec.id, 0) - population.inventory
                        )
                self.fundamentals.append(
                    FundamentalTrader(
                        id=next_id,
                        side=side,
                        cash=population.cash,
                        holdings=holdings,
                        utility=_utility(population, gamma, eta, floor),
                    )
                )
                next_id += 1
        technical = self.config.technical
        if technical.count and technical.epsilon.hi == 0:
            logger.warning(
                "technical.epsilon is 0: %d technical traders exert no pressure and are left out",
                technical.count,
            )
            return
        for _ in range(technical.count):
            self.technicals.append(
                TechnicalTrader(
                    id=next_id,
                    epsilon=technical.epsilon.sample(rng),
                    switch_probs=technical.probs,
                    cash=technical.cash,
                )
            )
            next_id += 1

    def log_action(self, security_id, action, details):
        """
        Dispatches to any registered action logger, if there is one.
        """
        if self.action_logger:
            self.action_logger(security_id, action, details)

    def total_cash(self):
        return sum(trader.cash for trader in self.traders.values())

    def run(self) -> RunRecord:
        config = self.config
        n_steps = self.grid.n_steps
        rows = {spec.id: [] for spec in self.securities}
        last_open: Dict[str, Optional[ClearingStepResult]] = {
            spec.id: None for spec in self.securities
        }
        record = RunRecord(config_hash=config.hash, seed=self.seed, rows=rows)
        reservations = []
        initial_cash = self.total_cash()
        for spec in self.securities:
            self.log_action(spec.id, "open", None)
        logger.info(
            "Running %d steps with %d fundamental and %d technical traders (seed %d)",
            n_steps,
            len(self.fundamentals),
            len(self.technicals),
            self.seed,
        )
        for k in range(n_steps):
            indices = sorted(
                {i for spec in self.securities for i in spec.observation_indices(k, n_steps)}
            )
            scenarios = conditional_scenarios(
                self.z[: k + 1],
                self.grid,
                k,
                config.underlying,
                config.scenarios,
                self.seed,
                indices,
            )
            payoffs = {spec.id: scenario_totals(spec, scenarios) for spec in self.securities}
            for trader in self.technicals:
                if trader.alive:
                    trader.regime = agents.switch_regime(
                        trader, self.regime_streams[trader.id]
                    )
            step_quotes = {}
            results = {}
            for spec in self.securities:
                prev = last_open[spec.id]
                if k >= spec.last_index(n_steps):
                    result = halted_result(prev, ParetoSet(), Census())
                else:
                    result = self.clear_security(
                        spec, prev, scenarios, payoffs, step_quotes, record
                    )
                if not result.halted:
                    last_open[spec.id] = result
                results[spec.id] = result
            reservations.append(step_quotes)

            accruals: Dict[int, float] = {}
            for spec in self.securities:
                holders = {
                    trader_id: trader.holdings.get(spec.id, 0)
                    for trader_id, trader in self.traders.items()
                    if trader.holdings.get(spec.id, 0)
                }
                for trader_id, amount in accrue(spec, holders, self.z, k).items():
                    accruals[trader_id] = accruals.get(trader_id, 0.0) + amount
            report = settle_and_bankrupt(
                {spec_id: result.trades for spec_id, result in results.items()},
                accruals,
                self.traders,
            )
            record.bankruptcies += len(report.bankrupt)
            record.max_cash_drift = max(
                record.max_cash_drift, abs(self.total_cash() - initial_cash)
            )
            if record.max_cash_drift > CASH_TOLERANCE * max(1.0, abs(initial_cash)):
                logger.warning(
                    "Cash drifted by %.3g at step %d", record.max_cash_drift, k
                )

            for spec in self.securities:
                row = self.make_row(k, results[spec.id], len(report.bankrupt))
                rows[spec.id].append(row)
                self.log_action(spec.id, "step", row)
            logger.debug(
                "Step %d: %s",
                k,
                ", ".join(
                    "%s %s @ %.6g" % (spec_id, r.condition.value, r.price)
                    for spec_id, r in results.items()
                ),
            )
        for spec in self.securities:
            self.log_action(spec.id, "close", None)

        prices = {
            spec_id: [math.nan if row["halted"] else row["price"] for row in spec_rows]
            for spec_id, spec_rows in rows.items()
        }
        if config.audit_pairs:
            record.audit = law_of_one_price_audit(
                config.audit_pairs,
                reservations,
                prices,
                technicals_active=bool(self.technicals),
            ).as_dict()
        return record

    def clear_security(self, spec, prev, scenarios, payoffs, step_quotes, record):
        """
        Collects the four order sets for one security and clears them.
        """
        bids, asks, buys, sells = [], [], [], []
        for trader in self.fundamentals:
            if not trader.alive:
                continue
            try:
                if trader.side is Side.FB:
                    price = agents.reservation_bid(
                        trader, spec, scenarios, payoffs, self.config.endowment
                    )
                    bids.append(Order(trader.id, price))
                else:
                    price = agents.reservation_ask(
                        trader, spec, scenarios, payoffs, self.config.endowment
                    )
                    asks.append(Order(trader.id, price))
            except NoBracketError as e:
                record.solver_failures += 1
                logger.warning(
                    "Step %d, %s: no reservation price (%s); halting",
                    scenarios.anchor_time,
                    spec.id,
                    e,
                )
                return halted_result(
                    prev,
                    ParetoSet(),
                    Census(len(bids), len(asks), 0, 0),
                )
            step_quotes[(spec.id, trader.id)] = price
        prev_price = prev.price if prev is not None else math.nan
        epsilons = []
        for trader in self.technicals:
            if not trader.alive:
                continue
            if trader.regime is Regime.BUYER:
                buys.append(Order(trader.id, agents.quote_buy(trader, prev_price)))
                epsilons.append(trader.epsilon)
            elif trader.regime is Regime.SELLER:
                sells.append(Order(trader.id, agents.quote_sell(trader, prev_price)))
                epsilons.append(trader.epsilon)
        book = OrderBookSnapshot(
            bids=tuple(bids), asks=tuple(asks), buys=tuple(buys), sells=tuple(sells)
        )
        epsilon_bar = sum(epsilons) / len(epsilons) if epsilons else 0.0
        return clear_step(book, prev, self.config.clearing, epsilon_bar)

    def make_row(self, k, result: ClearingStepResult, bankruptcies):
        return {
            "step": k,
            "time": self.grid.time(k),
            "underlying": float(self.z[k]),
            "price": result.price,
            "condition": result.condition.value,
            "halted": int(result.halted),
            "jump": int(result.jump is not None),
            "jump_size": result.jump.size if result.jump is not None else 0.0,
            "n_fb_active": result.census.n_fb,
            "n_fs_active": result.census.n_fs,
            "n_tb": result.census.n_tb,
            "n_ts": result.census.n_ts,
            "pareto_lo": _bound(result.pareto.lo),
            "pareto_hi": _bound(result.pareto.hi),
            "trades": len(result.trades),
            "bankruptcies": bankruptcies,
        }
