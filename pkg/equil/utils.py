import math

import numpy as np

# Purpose tags for derived random streams. A stream is identified by the
# master seed plus a tuple of small integers starting with one of these.
PATH_STREAM = 0
SCENARIO_STREAM = 1
REGIME_STREAM = 2
POPULATION_STREAM = 3
RUN_STREAM = 4

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK_64 = 0xFFFFFFFFFFFFFFFF


def seed_sequence(seed, *stream_id):
    """
    Deterministic split function (seed, stream-id) -> stream.

    The master seed is taken modulo 2**64 and the stream id becomes the
    SeedSequence spawn key, so two different ids never share state and the
    same pair always yields the same stream.
    """
    return np.random.SeedSequence(
        int(seed) & MASK_64, spawn_key=tuple(int(s) for s in stream_id)
    )


def stream_rng(seed, *stream_id):
    """
    Returns a PCG64 Generator for the given (seed, stream-id).
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *stream_id)))


def derive_seed(seed, *stream_id):
    """
    Returns a fresh 64-bit seed for the given (seed, stream-id), used to seed
    whole runs of an ensemble.
    """
    return int(seed_sequence(seed, *stream_id).generate_state(1, np.uint64)[0])


def fnv1a_64(data):
    """
    64-bit FNV-1a hash of a byte string.
    """
    value = FNV_OFFSET_BASIS
    for byte in data:
        value ^= byte
        value = (value * FNV_PRIME) & MASK_64
    return value


def format_float(value):
    """
    Serializes a float with 17 significant digits (round-trip exact).
    """
    value = float(value)
    if math.isnan(value):
        return "nan"
    return "%.17g" % value


def parse_seed(text):
    """
    Reads a seed written in decimal (leading zeros allowed) or with a 0x, 0o
    or 0b prefix.
    """
    text = str(text).strip()
    digits = text.lstrip("+-")
    if digits[:2].lower() in ("0x", "0o", "0b"):
        return int(text, 0)
    return int(text, 10)
