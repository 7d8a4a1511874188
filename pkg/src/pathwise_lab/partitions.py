"""Refining partition sequences of [0, T]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class PartitionSequence:
    """Nested uniform grids of ``[0, T]``; level ``n`` has ``base**n`` cells.

    Grids are built on demand, so the object itself is tiny and can be shared
    freely between threads.
    """

    T: float
    rule: str = "dyadic"
    max_level: int = 14
    base: int = 2

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise InvalidArgument(f"horizon must be positive, got {self.T}")
        if self.rule not in ("dyadic", "uniform"):
            raise InvalidArgument(f"unknown partition rule {self.rule!r}")
        if self.rule == "dyadic" and self.base != 2:
            raise InvalidArgument("dyadic partitions have base 2")
        if int(self.base) != self.base or self.base < 2:
            raise InvalidArgument(f"base must be an integer >= 2, got {self.base}")
        if int(self.max_level) != self.max_level or self.max_level < 1:
            raise InvalidArgument(f"max_level must be an integer >= 1, got {self.max_level}")

    def _check_level(self, n: int) -> int:
        if int(n) != n or not 0 <= n <= self.max_level:
            raise InvalidArgument(f"level {n} outside [0, {self.max_level}]")
        return int(n)

    def cells(self, n: int) -> int:
        """Number of cells at level ``n``."""
        return self.base ** self._check_level(n)

    def grid(self, n: int) -> np.ndarray:
        n = self._check_level(n)
        m = self.base**n
        # T * (k / m) keeps coarse nodes bit-identical inside finer grids
        return self.T * (np.arange(m + 1) / m)

    def mesh(self, n: int) -> float:
        return self.T / self.cells(n)

    def stride(self, n: int, finer: int | None = None) -> int:
        """Index step between level-``n`` nodes inside the level-``finer`` grid."""
        finer = self.max_level if finer is None else self._check_level(finer)
        n = self._check_level(n)
        if n > finer:
            raise InvalidArgument(f"level {n} is finer than {finer}")
        return self.base ** (finer - n)

    def finest(self) -> np.ndarray:
        return self.grid(self.max_level)


def make_partition_sequence(T: float, rule: str = "dyadic", max_level: int = 14, base: int | None = None) -> PartitionSequence:
    """Build a refining partition sequence.

    ``rule`` is ``"dyadic"`` or ``"uniform"``; the latter takes ``base`` (the
    number of children each cell splits into).
    """
    if base is None:
        base = 2
    return PartitionSequence(T=float(T), rule=rule, max_level=max_level, base=base)


def mesh(p: PartitionSequence, n: int) -> float:
    return p.mesh(n)
