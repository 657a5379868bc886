from hypothesis import strategies

from equil.clearing import Census, Order, OrderBookSnapshot

CONDITIONS = ["NonSpeculative", "Normal", "Bubble", "Depression", "Halted"]


def limit_price():
    return strategies.floats(min_value=0.01, max_value=1000, allow_nan=False)


def seed():
    """
    Any 64-bit seed, including values the streams must reduce modulo 2**64.
    """
    return strategies.integers(min_value=-(2**63), max_value=2**64 - 1)


def census():
    counts = strategies.integers(min_value=0, max_value=50)
    return strategies.builds(Census, counts, counts, counts, counts)


@strategies.composite
def order_book(draw, max_orders=8, technicals=True):
    """
    Returns an OrderBookSnapshot with distinct trader ids across all four
    order sets.
    """
    sizes = [
        draw(strategies.integers(min_value=0, max_value=max_orders)) for _ in range(2)
    ]
    if technicals:
        sizes += [
            draw(strategies.integers(min_value=0, max_value=max_orders))
            for _ in range(2)
        ]
    else:
        sizes += [0, 0]
    ids = iter(range(sum(sizes)))
    groups = []
    for size in sizes:
        groups.append(
            tuple(Order(next(ids), draw(limit_price())) for _ in range(size))
        )
    return OrderBookSnapshot(*groups)


def condition_labels(min_size=0, max_size=60):
    return strategies.lists(
        strategies.sampled_from(CONDITIONS), min_size=min_size, max_size=max_size
    )


def integer_returns(min_size=8, max_size=200):
    """
    Whole-number price changes, so a nonconstant sample never has a variance
    that underflows.
    """
    return strategies.lists(
        strategies.integers(min_value=-100, max_value=100).map(float),
        min_size=min_size,
        max_size=max_size,
    )
