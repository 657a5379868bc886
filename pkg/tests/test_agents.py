import math
from unittest import TestCase, mock

import numpy as np

from equil.agents import (
    Bundle,
    Family,
    FundamentalTrader,
    NoBracketError,
    Preference,
    Regime,
    Side,
    TechnicalTrader,
    UtilityFn,
    expected_utility,
    prefer,
    quote_buy,
    quote_sell,
    reservation_ask,
    reservation_bid,
    switch_regime,
)
from equil.securities import Kind, SecuritySpec, scenario_totals
from equil.stochastic import TimeGrid, UnderlyingParams, conditional_scenarios
from equil.utils import stream_rng

FORWARD = SecuritySpec("fwd", Kind.FORWARD, strike=0.0, expiry=1)


def gaussian_scenarios(mean=1.0, sigma=1.0, n=20000, seed=5):
    """
    One-step scenarios whose forward payoff is Normal(mean, sigma^2).
    """
    return conditional_scenarios(
        [0.0], TimeGrid(1.0, 1), 0, UnderlyingParams(0.0, mean, sigma), n, seed
    )


def buyer(utility, cash=0.0, holdings=None, id=0):
    return FundamentalTrader(id, Side.FB, cash, dict(holdings or {}), utility)


def seller(utility, cash=0.0, holdings=None, id=1):
    return FundamentalTrader(id, Side.FS, cash, dict(holdings or {}), utility)


class TestUtility(TestCase):
    """
    Tests the utility families.
    """

    def test_validation(self):
        with self.assertRaises(ValueError):
            UtilityFn.cara(0.0)
        with self.assertRaises(ValueError):
            UtilityFn.crra(2.0, 0.0)
        with self.assertRaises(ValueError):
            UtilityFn.crra(0.0, 1.0)

    def test_values(self):
        self.assertEqual(UtilityFn.linear()(3.0), 3.0)
        self.assertAlmostEqual(float(UtilityFn.cara(0.5)(2.0)), -math.exp(-1.0))
        self.assertAlmostEqual(float(UtilityFn.crra(1.0, 1.0)(math.e - 1)), 1.0)
        self.assertAlmostEqual(float(UtilityFn.crra(2.0, 1.0)(1.0)), 0.5)

    def test_crra_floor(self):
        u = UtilityFn.crra(2.0, 1.0)
        with self.assertRaises(ValueError):
            u(-1.0)
        self.assertEqual(float(u.evaluate(-2.0, strict=False)), -math.inf)

    def test_wealth_independence(self):
        self.assertTrue(UtilityFn.cara(1.0).wealth_independent)
        self.assertFalse(UtilityFn.crra(2.0, 1.0).wealth_independent)

    def test_expected_utility_and_preference(self):
        u = UtilityFn.cara(1.0)
        samples = np.array([0.0, 2.0])
        self.assertAlmostEqual(
            expected_utility(u, 1.0, samples), -(math.exp(-1) + math.exp(-3)) / 2
        )
        self.assertIs(prefer(u, Bundle(1.0), Bundle(0.0)), Preference.A)
        self.assertIs(prefer(u, Bundle(0.0), Bundle(1.0)), Preference.B)
        self.assertIs(prefer(u, Bundle(1.0), Bundle(1.0)), Preference.INDIFFERENT)
        # Risk aversion: certain 1 beats a fair coin on 0 or 2.
        self.assertIs(prefer(u, Bundle(1.0), Bundle(0.0, samples)), Preference.A)


class TestReservationPrices(TestCase):
    """
    Tests reservation prices against closed forms.
    """

    def setUp(self):
        self.scenarios = gaussian_scenarios()
        self.x = scenario_totals(FORWARD, self.scenarios)
        self.mean = float(np.mean(self.x))

    def test_linear_is_expectation(self):
        bid = reservation_bid(buyer(UtilityFn.linear()), FORWARD, self.scenarios)
        ask = reservation_ask(seller(UtilityFn.linear()), FORWARD, self.scenarios)
        self.assertAlmostEqual(bid, self.mean, places=12)
        self.assertAlmostEqual(ask, self.mean, places=12)

    def test_cara_gaussian(self):
        u = UtilityFn.cara(0.5)
        bid = reservation_bid(buyer(u), FORWARD, self.scenarios)
        ask = reservation_ask(seller(u, holdings={"fwd": 1}), FORWARD, self.scenarios)
        # Certainty equivalent mu - gamma sigma^2 / 2.
        se = float(np.std(self.x)) / math.sqrt(len(self.x))
        self.assertLess(abs(bid - 0.75), 1e-3 + 3 * se)
        self.assertLess(abs(bid - ask), 1e-6)
        sample_ce = -math.log(float(np.mean(np.exp(-0.5 * self.x)))) / 0.5
        self.assertAlmostEqual(bid, sample_ce, delta=1e-6)

    def test_cara_approaches_mean_as_risk_aversion_vanishes(self):
        asks = [
            reservation_ask(
                seller(UtilityFn.cara(gamma), holdings={"fwd": 1}), FORWARD, self.scenarios
            )
            for gamma in (0.1, 0.01, 0.001)
        ]
        self.assertEqual(asks, sorted(asks))
        self.assertLess(asks[-1], self.mean)
        self.assertLess(self.mean - asks[-1], 1e-3)

    def test_cara_bisection_is_scalar(self):
        u = UtilityFn.cara(0.5)
        with mock.patch("equil.agents._expected_utility_or_floor") as evaluate:
            bid = reservation_bid(buyer(u), FORWARD, self.scenarios)
        evaluate.assert_not_called()
        sample_ce = -math.log(float(np.mean(np.exp(-0.5 * self.x)))) / 0.5
        self.assertAlmostEqual(bid, sample_ce, delta=1e-6)

    def test_cara_cash_invariance(self):
        u = UtilityFn.cara(0.5)
        bids = [
            reservation_bid(buyer(u, cash=cash), FORWARD, self.scenarios)
            for cash in (0.0, 10.0, 1000.0)
        ]
        for bid in bids[1:]:
            self.assertLessEqual(abs(bid - bids[0]), 1e-6 * abs(bids[0]))

    def test_risk_aversion_brackets_mean(self):
        u = UtilityFn.cara(0.5)
        bid = reservation_bid(buyer(u), FORWARD, self.scenarios)
        ask = reservation_ask(seller(u), FORWARD, self.scenarios)
        self.assertLess(bid, self.mean)
        self.assertGreater(ask, self.mean)

    def test_crra_depends_on_wealth(self):
        scenarios = gaussian_scenarios(mean=5.0, sigma=1.0, n=2000)
        u = UtilityFn.crra(2.0, 1.0)
        poor = reservation_bid(buyer(u, cash=10.0), FORWARD, scenarios)
        rich = reservation_bid(buyer(u, cash=1000.0), FORWARD, scenarios)
        mean = float(np.mean(scenario_totals(FORWARD, scenarios)))
        self.assertLess(poor, rich)
        self.assertLess(rich, mean)

    def test_ledger_mode_uses_realised_holdings(self):
        u = UtilityFn.cara(0.5)
        trader = seller(u, holdings={"fwd": 1})
        fixed = reservation_ask(trader, FORWARD, self.scenarios)
        trader.holdings["fwd"] = 0
        self.assertEqual(reservation_ask(trader, FORWARD, self.scenarios), fixed)
        ledger = reservation_ask(trader, FORWARD, self.scenarios, mode="ledger")
        self.assertGreater(ledger, fixed)

    def test_nonpositive_payoff(self):
        scenarios = gaussian_scenarios(mean=0.0, sigma=0.0, n=10)
        with self.assertRaises(NoBracketError):
            reservation_bid(buyer(UtilityFn.cara(0.5)), FORWARD, scenarios)

    def test_not_bracketed(self):
        scenarios = gaussian_scenarios(mean=5e6, sigma=0.0, n=10)
        with self.assertRaises(NoBracketError):
            reservation_bid(buyer(UtilityFn.cara(0.1)), FORWARD, scenarios)

    def test_wrong_side(self):
        with self.assertRaises(ValueError):
            reservation_bid(seller(UtilityFn.linear()), FORWARD, self.scenarios)
        with self.assertRaises(ValueError):
            reservation_ask(buyer(UtilityFn.linear()), FORWARD, self.scenarios)


class TestTechnicalTrader(TestCase):
    """
    Tests regime switching and epsilon quotes.
    """

    def test_validation(self):
        with self.assertRaises(ValueError):
            TechnicalTrader(0, 0.0, (0.3, 0.3, 0.4))
        with self.assertRaises(ValueError):
            TechnicalTrader(0, 0.1, (0.5, 0.5, 0.5))
        with self.assertRaises(ValueError):
            TechnicalTrader(0, 0.1, (0.5, 0.5))

    def test_degenerate_probabilities(self):
        rng = stream_rng(1, 2, 0)
        always_buy = TechnicalTrader(0, 0.1, (1.0, 0.0, 0.0))
        always_idle = TechnicalTrader(1, 0.1, (0.0, 0.0, 1.0))
        for _ in range(20):
            self.assertIs(switch_regime(always_buy, rng), Regime.BUYER)
            self.assertIs(switch_regime(always_idle, rng), Regime.IDLE)

    def test_frequencies(self):
        rng = stream_rng(3, 2, 0)
        trader = TechnicalTrader(0, 0.1, (0.45, 0.45, 0.1))
        n = 10000
        draws = [switch_regime(trader, rng) for _ in range(n)]
        for regime, p in ((Regime.BUYER, 0.45), (Regime.SELLER, 0.45), (Regime.IDLE, 0.1)):
            frequency = draws.count(regime) / n
            self.assertLess(abs(frequency - p), 4 * math.sqrt(p * (1 - p) / n))

    def test_quotes(self):
        trader = TechnicalTrader(0, 0.25, (0.3, 0.3, 0.4), regime=Regime.BUYER)
        self.assertEqual(quote_buy(trader, 5.0), 5.25)
        with self.assertRaises(ValueError):
            quote_sell(trader, 5.0)
        trader.regime = Regime.SELLER
        self.assertEqual(quote_sell(trader, 5.0), 4.75)

    def test_family_values(self):
        self.assertEqual(Family("cara"), Family.CARA)
