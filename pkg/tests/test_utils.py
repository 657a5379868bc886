from unittest import TestCase

import numpy as np
from hypothesis import given, strategies

import market_strategies
from equil.utils import (
    PATH_STREAM,
    RUN_STREAM,
    SCENARIO_STREAM,
    derive_seed,
    fnv1a_64,
    format_float,
    parse_seed,
    stream_rng,
)


class TestFnv1a(TestCase):
    """
    Tests the 64-bit FNV-1a hash against published vectors.
    """

    def test_empty(self):
        self.assertEqual(fnv1a_64(b""), 0xCBF29CE484222325)

    def test_single_byte(self):
        self.assertEqual(fnv1a_64(b"a"), 0xAF63DC4C8601EC8C)

    def test_word(self):
        self.assertEqual(fnv1a_64(b"foobar"), 0x85944171F73967E8)


class TestStreams(TestCase):
    """
    Tests the (seed, stream-id) split.
    """

    def test_same_stream_same_draws(self):
        a = stream_rng(42, PATH_STREAM, 3).standard_normal(5)
        b = stream_rng(42, PATH_STREAM, 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = stream_rng(42, PATH_STREAM, 3).standard_normal(5)
        b = stream_rng(42, PATH_STREAM, 4).standard_normal(5)
        c = stream_rng(42, SCENARIO_STREAM, 3).standard_normal(5)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_seed_taken_modulo_2_64(self):
        a = stream_rng(-1, RUN_STREAM).random(3)
        b = stream_rng(2**64 - 1, RUN_STREAM).random(3)
        np.testing.assert_array_equal(a, b)

    @given(seed=market_strategies.seed(), index=strategies.integers(0, 10**6))
    def test_derived_seed_is_u64(self, seed, index):
        derived = derive_seed(seed, RUN_STREAM, index)
        self.assertIsInstance(derived, int)
        self.assertTrue(0 <= derived < 2**64)
        self.assertEqual(derived, derive_seed(seed, RUN_STREAM, index))


class TestFormatFloat(TestCase):
    def test_seventeen_digits(self):
        self.assertEqual(format_float(0.1), "0.10000000000000001")

    def test_nan(self):
        self.assertEqual(format_float(float("nan")), "nan")

    @given(value=strategies.floats(allow_nan=False, allow_infinity=False))
    def test_round_trip(self, value):
        self.assertEqual(float(format_float(value)), value)


class TestParseSeed(TestCase):
    def test_decimal_with_leading_zeros(self):
        self.assertEqual(parse_seed("010"), 10)
        self.assertEqual(parse_seed(" 7 "), 7)

    def test_prefixed(self):
        self.assertEqual(parse_seed("0x2A"), 42)
        self.assertEqual(parse_seed("0o17"), 15)
        self.assertEqual(parse_seed("0b11"), 3)

    def test_rejects_words(self):
        with self.assertRaises(ValueError):
            parse_seed("seed")
