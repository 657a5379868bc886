import math
from unittest import TestCase

import numpy as np
from scipy import stats

from equil.securities import (
    Kind,
    PayoutRow,
    SecuritySpec,
    accrue,
    check_issuance,
    expected_payoff,
    payoff_identical,
    payoff_stream,
    scenario_totals,
    weighted_estimate,
)
from equil.stochastic import (
    ScenarioSet,
    TimeGrid,
    UnderlyingParams,
    conditional_scenarios,
    gen_semimartingale,
)

PATH = np.array([5.0, 5.5, 4.0, 6.0, 7.0])


def two_point_scenarios(values, anchor_time=0, anchor_value=5.0, at=4):
    values = np.asarray(values, dtype=float)
    paths = np.column_stack([np.full(len(values), anchor_value), values])
    return ScenarioSet(
        anchor_time=anchor_time,
        anchor_value=anchor_value,
        indices=np.array([anchor_time, at]),
        paths=paths,
        measure_weights=np.full(len(values), 1.0 / len(values)),
    )


class TestPayoutRow(TestCase):
    def test_parse(self):
        self.assertEqual(PayoutRow.parse("3:1:-2"), PayoutRow(3, 1.0, -2.0, False))
        self.assertEqual(PayoutRow.parse("3:1:-2:floor"), PayoutRow(3, 1.0, -2.0, True))

    def test_parse_invalid(self):
        for text in ["3:1", "3:1:2:ceil", "x:1:2"]:
            with self.assertRaises(ValueError):
                PayoutRow.parse(text)

    def test_floor(self):
        self.assertEqual(PayoutRow(1, 1.0, -10.0, True)(4.0), 0.0)
        self.assertEqual(PayoutRow(1, 1.0, -10.0, False)(4.0), -6.0)


class TestSecuritySpec(TestCase):
    """
    Tests construction rules of tradable vectors.
    """

    def test_expiry_required(self):
        with self.assertRaises(ValueError):
            SecuritySpec("c", Kind.CALL, strike=5.0)

    def test_table_required(self):
        with self.assertRaises(ValueError):
            SecuritySpec("s", Kind.STEP)

    def test_beyond_horizon(self):
        with self.assertRaises(ValueError):
            SecuritySpec("f", Kind.FORWARD, expiry=5).validate(4)

    def test_last_index(self):
        table = (PayoutRow(2, 1.0, 0.0), PayoutRow(3, 0.0, 1.0))
        self.assertEqual(SecuritySpec("s", Kind.STEP, table=table).last_index(4), 3)
        self.assertEqual(SecuritySpec("u", Kind.UNDERLYING).last_index(4), 4)

    def test_terminal_payoffs(self):
        z = np.array([3.0, 7.0])
        np.testing.assert_array_equal(
            SecuritySpec("f", Kind.FORWARD, 5.0, 4).terminal_payoff(z), [-2, 2]
        )
        np.testing.assert_array_equal(
            SecuritySpec("c", Kind.CALL, 5.0, 4).terminal_payoff(z), [0, 2]
        )
        np.testing.assert_array_equal(
            SecuritySpec("p", Kind.PUT, 5.0, 4).terminal_payoff(z), [2, 0]
        )


class TestPayoffStream(TestCase):
    def test_forward(self):
        stream = payoff_stream(SecuritySpec("f", Kind.FORWARD, 5.0, 4), PATH, 0)
        np.testing.assert_array_equal(stream.increments, [0, 0, 0, 2.0])
        self.assertEqual(stream.total, 2.0)

    def test_underlying(self):
        stream = payoff_stream(SecuritySpec("u", Kind.UNDERLYING), PATH, 1)
        self.assertAlmostEqual(stream.total, 7.0 - 5.5)
        self.assertEqual(stream.from_k, 1)

    def test_step_table(self):
        spec = SecuritySpec(
            "s", Kind.STEP, table=(PayoutRow(2, 1.0, 0.0), PayoutRow(4, 0.0, 3.0))
        )
        np.testing.assert_array_equal(payoff_stream(spec, PATH, 0).increments, [0, 4, 0, 3])

    def test_expired(self):
        with self.assertRaises(ValueError):
            payoff_stream(SecuritySpec("c", Kind.CALL, 5.0, 2), PATH, 3)


class TestScenarioTotals(TestCase):
    def test_forward_and_call(self):
        scenarios = two_point_scenarios([3.0, 8.0])
        forward = SecuritySpec("f", Kind.FORWARD, 4.0, 4)
        call = SecuritySpec("c", Kind.CALL, 4.0, 4)
        np.testing.assert_array_equal(scenario_totals(forward, scenarios), [-1, 4])
        np.testing.assert_array_equal(scenario_totals(call, scenarios), [0, 4])
        self.assertEqual(expected_payoff(call, scenarios).mean, 2.0)

    def test_underlying_is_change(self):
        scenarios = two_point_scenarios([3.0, 8.0])
        underlying = SecuritySpec("u", Kind.UNDERLYING)
        np.testing.assert_array_equal(scenario_totals(underlying, scenarios), [-2, 3])

    def test_weighted_estimate(self):
        estimate = weighted_estimate(np.array([1.0, 3.0]), np.array([0.5, 0.5]))
        self.assertEqual(estimate.mean, 2.0)
        self.assertAlmostEqual(estimate.standard_error, 1.0)
        self.assertEqual(weighted_estimate(np.array([4.0]), np.array([1.0])).standard_error, 0.0)

    def test_issuance(self):
        grid = TimeGrid(1.0, 4)
        scenarios = conditional_scenarios(
            [5.0], grid, 0, UnderlyingParams(5.0, 0.0, 0.0), 10, seed=1
        )
        self.assertAlmostEqual(
            check_issuance(SecuritySpec("f", Kind.FORWARD, 0.0, 4), scenarios).mean, 5.0
        )
        with self.assertRaises(ValueError):
            check_issuance(SecuritySpec("p", Kind.PUT, 0.0, 4), scenarios)

    def test_bachelier_call_and_put(self):
        grid = TimeGrid(1.0, 50)
        params = UnderlyingParams(5.0, 0.2, 1.5)
        scenarios = conditional_scenarios([5.0] * 11, grid, 10, params, 20000, seed=8)
        tau = 40 * grid.dt
        mean = 5.0 + 0.2 * tau
        spread = 1.5 * math.sqrt(tau)
        strike = 5.5
        d = (mean - strike) / spread
        call = (mean - strike) * stats.norm.cdf(d) + spread * stats.norm.pdf(d)
        put = (strike - mean) * stats.norm.cdf(-d) + spread * stats.norm.pdf(d)
        for kind, oracle in ((Kind.CALL, call), (Kind.PUT, put)):
            estimate = expected_payoff(SecuritySpec("o", kind, strike, 50), scenarios)
            self.assertLess(abs(estimate.mean - oracle), 3 * estimate.standard_error, msg=kind)


class TestAccrual(TestCase):
    def test_issuer_offsets_holders(self):
        spec = SecuritySpec("u", Kind.UNDERLYING)
        transfers = accrue(spec, {0: 2.0, 1: 1.0, -1: -3.0}, PATH, 2)
        self.assertEqual(transfers, {0: 4.0, 1: 2.0, -1: -6.0})
        self.assertEqual(sum(transfers.values()), 0.0)

    def test_no_payment_before_expiry(self):
        spec = SecuritySpec("f", Kind.FORWARD, 5.0, 4)
        self.assertEqual(accrue(spec, {0: 1.0}, PATH, 1), {0: 0.0})
        self.assertEqual(accrue(spec, {0: 1.0}, PATH, 3), {0: 2.0})


class TestPayoffIdentity(TestCase):
    def setUp(self):
        self.probes = gen_semimartingale(TimeGrid(1.0, 4), 0.0, 0.0, 1.0, 16, seed=3).z

    def test_forward_equals_step_table(self):
        forward = SecuritySpec("f", Kind.FORWARD, 2.0, 4)
        table = SecuritySpec("s", Kind.STEP, table=(PayoutRow(4, 1.0, -2.0),))
        self.assertTrue(payoff_identical(forward, table, self.probes))

    def test_forward_differs_from_call(self):
        forward = SecuritySpec("f", Kind.FORWARD, 0.0, 4)
        call = SecuritySpec("c", Kind.CALL, 0.0, 4)
        self.assertFalse(payoff_identical(forward, call, self.probes))
