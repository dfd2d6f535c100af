"""Set partitions and the lower-order chain-rule terms of D^n[F(u)].

For a partition ``{B_1, ..., B_j}`` of the direction labels, the term is
``D^j F(u)(u^(|B_1|)(h_{B_1}), ..., u^(|B_j|)(h_{B_j}))``. The correction
assembled here is the sum over all partitions with at least two blocks, i.e.
everything in ``D^n[F(u)](h_1..h_n)`` except ``DF(u) u^(n)(h_1..h_n)``.
"""

from __future__ import annotations

from collections import Counter
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .coefficients import CoefficientSet, eval_derivative

MAX_ORDER = 8

SetPartition = tuple[tuple[int, ...], ...]


class MissingSensitivity(KeyError):
    def __init__(self, block: tuple[int, ...]):
        super().__init__(f"no sensitivity supplied for block {block}")
        self.block = block


def _check_n(n: int):
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(f"n must lie in 1..{MAX_ORDER}, got {n}")


def _restricted_growth_strings(n: int):
    a = [0] * n
    while True:
        yield tuple(a)
        # next RGS in lexicographic order
        i = n - 1
        while i > 0 and a[i] > max(a[:i]):
            i -= 1
        if i == 0:
            return
        a[i] += 1
        for k in range(i + 1, n):
            a[k] = 0


@lru_cache(maxsize=None)
def set_partitions(n: int) -> tuple[SetPartition, ...]:
    """All partitions of ``{1..n}``; blocks ordered by least element, sorted inside."""
    _check_n(n)
    out = []
    for rgs in _restricted_growth_strings(n):
        blocks: dict[int, list[int]] = {}
        for pos, b in enumerate(rgs, start=1):
            blocks.setdefault(b, []).append(pos)
        out.append(tuple(tuple(blocks[b]) for b in sorted(blocks)))
    return tuple(out)


def term_count(n: int) -> int:
    """Number of correction terms: partitions of ``{1..n}`` with two or more blocks."""
    return sum(1 for part in set_partitions(n) if len(part) >= 2)


def grouped_table(n: int) -> list[dict]:
    """Rows of (partition, block sizes, multiplicity of that block-size multiset)."""
    parts = set_partitions(n)
    shapes = [tuple(sorted((len(b) for b in part), reverse=True)) for part in parts]
    mult = Counter(shapes)
    return [
        {"partition": part, "block_sizes": shape, "multiplicity": mult[shape]}
        for part, shape in zip(parts, shapes)
    ]


def assemble_correction(
    cs: CoefficientSet,
    which: str,
    base,
    sensitivities: Mapping[tuple[int, ...], np.ndarray],
    indices: Sequence[int] | int,
    t=0.0,
    z=None,
):
    """Sum of chain-rule terms of order ``len(indices)`` with at least two blocks.

    ``sensitivities`` maps sorted label tuples ``S`` to the value of
    ``u^(|S|)((h_i)_{i in S})``. ``indices`` is the label tuple being
    differentiated (an int ``n`` means ``1..n``). Returns 0 for a single label.
    """
    if isinstance(indices, (int, np.integer)):
        indices = tuple(range(1, int(indices) + 1))
    indices = tuple(sorted(indices))
    n = len(indices)
    _check_n(n)
    total = None
    for part in set_partitions(n):
        if len(part) < 2:
            continue
        args = []
        for block in part:
            key = tuple(indices[i - 1] for i in block)
            try:
                args.append(sensitivities[key])
            except KeyError:
                raise MissingSensitivity(key) from None
        term = eval_derivative(cs, which, len(part), t, base, args, z)
        total = term if total is None else total + term
    if total is None:
        zero_dir = [np.zeros_like(np.asarray(base, dtype=float))]
        return 0.0 * eval_derivative(cs, which, 1, t, base, zero_dir, z)
    return total
