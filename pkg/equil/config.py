"""
Run configuration: a flat ``key = value`` text file with dotted keys.

Unknown or duplicate keys are errors. Every key except the per-security ones
has a default in DEFAULTS; the effective configuration (defaults filled in)
is what gets hashed and recorded.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .agents import Family
from .clearing import ClearingParams
from .securities import Kind, PayoutRow, SecuritySpec, check_issuance, payoff_identical
from .stochastic import (
    TimeGrid,
    UnderlyingParams,
    conditional_scenarios,
    gen_semimartingale,
)
from .utils import POPULATION_STREAM, derive_seed, fnv1a_64, parse_seed

logger = logging.getLogger(__name__)

DEFAULTS = {
    "grid.horizon": "1.0",
    "grid.steps": "1000",
    "underlying.z0": "5.0",
    "underlying.drift": "0.0",
    "underlying.sigma": "1.0",
    "fb.count": "5",
    "fb.utility": "cara",
    "fb.gamma": "0.1:0.5",
    "fb.eta": "2",
    "fb.floor": "1.0",
    "fb.cash": "10000",
    "fb.inventory": "0",
    "fs.count": "5",
    "fs.utility": "cara",
    "fs.gamma": "0.5:1.5",
    "fs.eta": "2",
    "fs.floor": "1.0",
    "fs.cash": "10000",
    "fs.inventory": "1",
    "technical.count": "0",
    "technical.epsilon": "0.01",
    "technical.probs": "0.3,0.3,0.4",
    "technical.cash": "20",
    "clearing.kappa": "0.05",
    "clearing.passive_fundamentals": "false",
    "pricing.scenarios": "2000",
    "pricing.endowment": "fixed",
    "run.seed": "0",
    "run.out": "out",
    "run.returns": "diff",
    "audit.pairs": "",
    "stats.tail_z": "3.0",
    "stats.checkpoints": "",
}

DEFAULT_SECURITY = {"security.fwd.kind": "forward", "security.fwd.strike": "0"}

SECURITY_KEY_RE = re.compile(r"^security\.([A-Za-z0-9_-]+)\.(kind|strike|expiry|table)$")

PROBE_PATHS = 16


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Range:
    """
    A constant or a ``lo:hi`` interval sampled uniformly per trader.
    """

    lo: float
    hi: float

    @classmethod
    def parse(cls, text):
        bits = text.split(":")
        if len(bits) == 1:
            value = float(bits[0])
            return cls(value, value)
        if len(bits) == 2:
            lo, hi = float(bits[0]), float(bits[1])
            if hi < lo:
                raise ValueError("range %r has hi < lo" % text)
            return cls(lo, hi)
        raise ValueError("%r is neither a number nor lo:hi" % text)

    def sample(self, rng):
        # Always consume one draw so constants and ranges keep streams aligned.
        return float(rng.uniform(self.lo, self.hi))


@dataclass(frozen=True)
class SidePopulation:
    count: int
    utility: Family
    gamma: Range
    eta: Range
    floor: Range
    cash: float
    inventory: float


@dataclass(frozen=True)
class TechnicalPopulation:
    count: int
    epsilon: Range
    probs: Tuple[float, float, float]
    cash: float


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, str]
    grid: TimeGrid
    underlying: UnderlyingParams
    securities: Tuple[SecuritySpec, ...]
    fb: SidePopulation
    fs: SidePopulation
    technical: TechnicalPopulation
    clearing: ClearingParams
    scenarios: int
    endowment: str
    seed: int
    out: str
    returns: str
    audit_pairs: Tuple[Tuple[str, str], ...]
    tail_z: float
    checkpoints: Tuple[int, ...]

    def canonical_text(self):
        return "".join("%s=%s\n" % (key, self.values[key]) for key in sorted(self.values))

    @property
    def hash(self):
        return "%016x" % fnv1a_64(self.canonical_text().encode("utf-8"))

    def with_values(self, **overrides):
        """
        Returns a new validated config with dotted keys overridden (pass
        them as a mapping: ``config.with_values(**{"clearing.kappa": "0"})``).
        """
        values = dict(self.values)
        values.update({key: str(value) for key, value in overrides.items()})
        return from_values(values)

    def security(self, security_id):
        for spec in self.securities:
            if spec.id == security_id:
                return spec
        raise KeyError(security_id)


def parse_text(text):
    """
    Parses the key-value text into a dict of strings.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value', got %r" % (lineno, raw))
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("line %d: empty key" % lineno)
        if key in values:
            raise ConfigError("line %d: duplicate key %r" % (lineno, key))
        values[key] = value
    return values


def load(path, overrides: Optional[Mapping[str, str]] = None):
    with open(path, encoding="utf-8") as fh:
        values = parse_text(fh.read())
    if overrides:
        values.update(overrides)
    return from_values(values)


def _parse_bool(key, text):
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError("%s: expected a boolean, got %r" % (key, text))


def _convert(key, text, kind):
    try:
        return kind(text)
    except ValueError as e:
        raise ConfigError("%s: %s" % (key, e)) from e


def _count(values, key):
    text = values[key]
    try:
        count = int(text)
    except ValueError:
        raise ConfigError("%s: expected an integer, got %r" % (key, text))
    if count < 0:
        raise ConfigError("%s: must be >= 0, got %d" % (key, count))
    return count


def _family(key, text):
    try:
        return Family(text.lower())
    except ValueError:
        raise ConfigError(
            "%s: unknown utility family %r (linear, cara or crra)" % (key, text)
        )


def _side(values, prefix):
    return SidePopulation(
        count=_count(values, prefix + ".count"),
        utility=_family(prefix + ".utility", values[prefix + ".utility"]),
        gamma=_convert(prefix + ".gamma", values[prefix + ".gamma"], Range.parse),
        eta=_convert(prefix + ".eta", values[prefix + ".eta"], Range.parse),
        floor=_convert(prefix + ".floor", values[prefix + ".floor"], Range.parse),
        cash=_convert(prefix + ".cash", values[prefix + ".cash"], float),
        inventory=_convert(prefix + ".inventory", values[prefix + ".inventory"], float),
    )


def _securities(values, n_steps):
    fields: Dict[str, Dict[str, str]] = {}
    for key, value in values.items():
        match = SECURITY_KEY_RE.match(key)
        if match:
            fields.setdefault(match.group(1), {})[match.group(2)] = value
    specs = []
    for security_id in sorted(fields):
        spec_fields = fields[security_id]
        prefix = "security.%s." % security_id
        if "kind" not in spec_fields:
            raise ConfigError("%skind is required" % prefix)
        try:
            kind = Kind(spec_fields["kind"].lower())
        except ValueError:
            raise ConfigError(
                "%skind: unknown kind %r" % (prefix, spec_fields["kind"])
            )
        if kind in (Kind.FORWARD, Kind.CALL, Kind.PUT):
            spec_fields.setdefault("expiry", str(n_steps))
            spec_fields.setdefault("strike", "0")
            values[prefix + "expiry"] = spec_fields["expiry"]
            values[prefix + "strike"] = spec_fields["strike"]
        table = ()
        if kind is Kind.STEP:
            if "table" not in spec_fields:
                raise ConfigError("%stable is required for step payouts" % prefix)
            table = tuple(
                _convert(prefix + "table", row, PayoutRow.parse)
                for row in spec_fields["table"].split(";")
                if row.strip()
            )
        elif "table" in spec_fields:
            raise ConfigError("%stable only applies to step payouts" % prefix)
        try:
            spec = SecuritySpec(
                id=security_id,
                kind=kind,
                strike=float(spec_fields.get("strike", "0")),
                expiry=int(spec_fields["expiry"]) if "expiry" in spec_fields else None,
                table=table,
            )
            spec.validate(n_steps)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        specs.append(spec)
    return tuple(specs)


def _checkpoints(key, text, n_steps):
    if not text.strip():
        return tuple(sorted({max(1, n_steps // 4), max(1, n_steps // 2), n_steps}))
    try:
        checkpoints = tuple(int(bit) for bit in text.split(",") if bit.strip())
    except ValueError:
        raise ConfigError("%s: expected comma separated step counts" % key)
    if any(not 1 <= c <= n_steps for c in checkpoints):
        raise ConfigError("%s: checkpoints must lie in 1..%d" % (key, n_steps))
    return checkpoints


def _pairs(key, text, ids):
    pairs = []
    for bit in text.split(","):
        if not bit.strip():
            continue
        names = [name.strip() for name in bit.split(":")]
        if len(names) != 2 or any(name not in ids for name in names):
            raise ConfigError("%s: %r is not a pair of known security ids" % (key, bit))
        pairs.append((names[0], names[1]))
    return tuple(pairs)


def from_values(values: Mapping[str, str]) -> RunConfig:
    """
    Validates raw key-value pairs and builds a RunConfig.
    """
    values = {key: str(value).strip() for key, value in values.items()}
    unknown = sorted(
        key for key in values if key not in DEFAULTS and not SECURITY_KEY_RE.match(key)
    )
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(unknown))
    if not any(SECURITY_KEY_RE.match(key) for key in values):
        values.update(DEFAULT_SECURITY)
    for key, default in DEFAULTS.items():
        values.setdefault(key, default)

    try:
        grid = TimeGrid(
            horizon=float(values["grid.horizon"]), n_steps=int(values["grid.steps"])
        )
        underlying = UnderlyingParams(
            z0=float(values["underlying.z0"]),
            drift=float(values["underlying.drift"]),
            sigma=float(values["underlying.sigma"]),
        )
    except ValueError as e:
        raise ConfigError("grid/underlying: %s" % e) from e

    securities = _securities(values, grid.n_steps)
    if not securities:
        raise ConfigError("at least one security is required")
    fb = _side(values, "fb")
    fs = _side(values, "fs")
    if fb.count < 1 or fs.count < 1:
        raise ConfigError("the market needs fb.count >= 1 and fs.count >= 1")

    probs_text = values["technical.probs"]
    try:
        probs = tuple(float(bit) for bit in probs_text.split(","))
    except ValueError:
        raise ConfigError("technical.probs: expected three numbers, got %r" % probs_text)
    if len(probs) != 3 or any(not 0 <= p <= 1 for p in probs):
        raise ConfigError("technical.probs: need three probabilities in [0, 1]")
    if abs(sum(probs) - 1.0) > 1e-12:
        raise ConfigError("technical.probs: probabilities sum to %r, not 1" % sum(probs))
    epsilon = _convert("technical.epsilon", values["technical.epsilon"], Range.parse)
    if epsilon.lo < 0:
        raise ConfigError("technical.epsilon must be >= 0")
    if epsilon.lo == 0 and epsilon.hi > 0:
        raise ConfigError("technical.epsilon: a range must have a positive lower bound")
    technical = TechnicalPopulation(
        count=_count(values, "technical.count"),
        epsilon=epsilon,
        probs=probs,
        cash=_convert("technical.cash", values["technical.cash"], float),
    )

    scenarios = _count(values, "pricing.scenarios")
    if scenarios < 1:
        raise ConfigError("pricing.scenarios must be >= 1")
    endowment = values["pricing.endowment"]
    if endowment not in ("fixed", "ledger"):
        raise ConfigError("pricing.endowment must be 'fixed' or 'ledger'")
    returns = values["run.returns"]
    if returns not in ("diff", "log"):
        raise ConfigError("run.returns must be 'diff' or 'log'")
    try:
        seed = parse_seed(values["run.seed"])
    except ValueError:
        raise ConfigError("run.seed: expected an integer, got %r" % values["run.seed"])

    config = RunConfig(
        values=values,
        grid=grid,
        underlying=underlying,
        securities=securities,
        fb=fb,
        fs=fs,
        technical=technical,
        clearing=ClearingParams(
            kappa=_convert("clearing.kappa", values["clearing.kappa"], float),
            passive_fundamentals=_parse_bool(
                "clearing.passive_fundamentals", values["clearing.passive_fundamentals"]
            ),
        ),
        scenarios=scenarios,
        endowment=endowment,
        seed=seed,
        out=values["run.out"],
        returns=returns,
        audit_pairs=_pairs(
            "audit.pairs", values["audit.pairs"], {s.id for s in securities}
        ),
        tail_z=_convert("stats.tail_z", values["stats.tail_z"], float),
        checkpoints=_checkpoints(
            "stats.checkpoints", values["stats.checkpoints"], grid.n_steps
        ),
    )
    validate_securities(config)
    return config


def validate_securities(config: RunConfig):
    """
    Rejects securities with nonpositive expected payoff at issuance and audit
    pairs whose payoffs differ on probe paths.
    """
    scenarios = conditional_scenarios(
        [config.underlying.z0],
        config.grid,
        0,
        config.underlying,
        config.scenarios,
        derive_seed(config.seed, POPULATION_STREAM, 1),
    )
    for spec in config.securities:
        try:
            check_issuance(spec, scenarios)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if config.audit_pairs:
        probes = gen_semimartingale(
            config.grid,
            config.underlying.z0,
            config.underlying.drift,
            max(config.underlying.sigma, 1.0),
            PROBE_PATHS,
            derive_seed(config.seed, POPULATION_STREAM, 2),
        )
        for a, b in config.audit_pairs:
            if not payoff_identical(config.security(a), config.security(b), probes.z):
                raise ConfigError(
                    "audit pair %s:%s is not payoff-identical" % (a, b)
                )


def sample_utility_params(side: SidePopulation, rng: np.random.Generator):
    """
    Draws (gamma, eta, floor) for one trader in a fixed order so every
    trader consumes the same number of draws.
    """
    return side.gamma.sample(rng), side.eta.sample(rng), side.floor.sample(rng)
