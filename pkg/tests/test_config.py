import os
import tempfile
from unittest import TestCase

from equil.agents import Family
from equil.config import (
    DEFAULTS,
    ConfigError,
    Range,
    from_values,
    load,
    parse_text,
    sample_utility_params,
)
from equil.securities import Kind
from equil.utils import fnv1a_64, stream_rng

SAMPLE = """
# two payoff-identical securities
grid.steps = 20
pricing.scenarios = 100
security.fwd.kind = forward
security.fwd.strike = 2
security.tab.kind = step
security.tab.table = 20:1:-2
audit.pairs = fwd:tab
"""


class TestParsing(TestCase):
    """
    Tests the key-value text format.
    """

    def test_comments_and_blanks(self):
        self.assertEqual(
            parse_text("a.b = 1  # note\n\n# skip\nc.d=x\n"), {"a.b": "1", "c.d": "x"}
        )

    def test_malformed(self):
        with self.assertRaises(ConfigError):
            parse_text("grid.steps 10\n")
        with self.assertRaises(ConfigError):
            parse_text("= 10\n")

    def test_duplicate(self):
        with self.assertRaises(ConfigError):
            parse_text("grid.steps = 10\ngrid.steps = 20\n")

    def test_load_with_overrides(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "run.conf")
            with open(path, "w") as fh:
                fh.write(SAMPLE)
            config = load(path, {"run.seed": "0x10"})
        self.assertEqual(config.seed, 16)
        self.assertEqual([s.id for s in config.securities], ["fwd", "tab"])
        self.assertEqual(config.audit_pairs, (("fwd", "tab"),))
        self.assertEqual(config.security("tab").kind, Kind.STEP)


class TestValidation(TestCase):
    """
    Tests cross-field validation and defaults.
    """

    def test_defaults(self):
        config = from_values({"pricing.scenarios": "100"})
        self.assertEqual(config.grid.n_steps, 1000)
        self.assertEqual(config.securities[0].id, "fwd")
        self.assertEqual(config.securities[0].expiry, 1000)
        self.assertEqual(config.fb.utility, Family.CARA)
        self.assertEqual(config.checkpoints, (250, 500, 1000))
        self.assertEqual(config.endowment, "fixed")
        self.assertEqual(config.technical.count, 0)
        for key in DEFAULTS:
            self.assertIn(key, config.values)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            from_values({"grid.stepz": "10"})

    def test_needs_both_sides(self):
        with self.assertRaises(ConfigError):
            from_values({"fb.count": "0", "pricing.scenarios": "10"})

    def test_bad_probabilities(self):
        with self.assertRaises(ConfigError):
            from_values({"technical.probs": "0.5,0.5,0.5", "pricing.scenarios": "10"})
        with self.assertRaises(ConfigError):
            from_values({"technical.probs": "0.5,0.5", "pricing.scenarios": "10"})

    def test_nonpositive_issuance(self):
        with self.assertRaises(ConfigError):
            from_values(
                {
                    "grid.steps": "10",
                    "pricing.scenarios": "10",
                    "underlying.sigma": "0",
                    "security.p.kind": "put",
                    "security.p.strike": "1",
                }
            )

    def test_audit_pair_must_be_identical(self):
        with self.assertRaises(ConfigError):
            from_values(
                {
                    "grid.steps": "10",
                    "underlying.sigma": "3",
                    "security.a.kind": "forward",
                    "security.a.strike": "4",
                    "security.b.kind": "call",
                    "security.b.strike": "4",
                    "audit.pairs": "a:b",
                }
            )

    def test_unknown_kind(self):
        with self.assertRaises(ConfigError):
            from_values({"security.x.kind": "swap", "pricing.scenarios": "10"})

    def test_checkpoints_in_range(self):
        with self.assertRaises(ConfigError):
            from_values({"grid.steps": "10", "stats.checkpoints": "0,5"})

    def test_enumerations(self):
        for key, value in [
            ("pricing.endowment", "floating"),
            ("run.returns", "pct"),
            ("fb.utility", "quadratic"),
            ("clearing.passive_fundamentals", "maybe"),
        ]:
            with self.assertRaises(ConfigError, msg=key):
                from_values({key: value, "pricing.scenarios": "10"})

    def test_epsilon_range_starts_above_zero(self):
        with self.assertRaises(ConfigError):
            from_values({"technical.epsilon": "0:0.1", "pricing.scenarios": "10"})
        with self.assertRaises(ConfigError):
            from_values({"technical.epsilon": "-0.1", "pricing.scenarios": "10"})
        config = from_values({"technical.epsilon": "0", "pricing.scenarios": "10"})
        self.assertEqual(config.technical.epsilon, Range(0.0, 0.0))
        config = from_values({"technical.epsilon": "0.01:0.1", "pricing.scenarios": "10"})
        self.assertEqual(config.technical.epsilon, Range(0.01, 0.1))

    def test_seed_forms(self):
        for text, seed in [("42", 42), ("010", 10), ("0x2a", 42), ("0b101", 5)]:
            config = from_values({"run.seed": text, "pricing.scenarios": "10"})
            self.assertEqual(config.seed, seed, msg=text)
        with self.assertRaises(ConfigError):
            from_values({"run.seed": "forty", "pricing.scenarios": "10"})


class TestHash(TestCase):
    def test_hash_of_canonical_text(self):
        config = from_values({"grid.steps": "10", "pricing.scenarios": "10"})
        text = config.canonical_text()
        self.assertEqual(config.hash, "%016x" % fnv1a_64(text.encode("utf-8")))
        self.assertEqual(text.splitlines(), sorted(text.splitlines()))

    def test_hash_tracks_values(self):
        config = from_values({"grid.steps": "10", "pricing.scenarios": "10"})
        same = from_values({"pricing.scenarios": "10", "grid.steps": "10"})
        other = config.with_values(**{"clearing.kappa": "0"})
        self.assertEqual(config.hash, same.hash)
        self.assertNotEqual(config.hash, other.hash)
        self.assertEqual(other.clearing.kappa, 0.0)


class TestSampling(TestCase):
    def test_range(self):
        self.assertEqual(Range.parse("2"), Range(2.0, 2.0))
        self.assertEqual(Range.parse("0.1:0.5"), Range(0.1, 0.5))
        with self.assertRaises(ValueError):
            Range.parse("0.5:0.1")

    def test_constant_consumes_draw(self):
        rng_a = stream_rng(1, 3, 0)
        rng_b = stream_rng(1, 3, 0)
        Range(2.0, 2.0).sample(rng_a)
        Range(0.0, 1.0).sample(rng_b)
        self.assertEqual(rng_a.random(), rng_b.random())

    def test_utility_params(self):
        config = from_values({"grid.steps": "10", "pricing.scenarios": "10"})
        gamma, eta, floor = sample_utility_params(config.fb, stream_rng(1, 3, 0))
        self.assertTrue(0.1 <= gamma <= 0.5)
        self.assertEqual((eta, floor), (2.0, 1.0))
