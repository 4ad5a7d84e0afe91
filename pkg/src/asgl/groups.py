"""Contiguous group partitions and active-set bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyPartition, InvalidSize


@dataclass(frozen=True)
class GroupStructure:
    """Partition of ``d`` coefficients into ``m`` contiguous, disjoint blocks."""

    group_sizes: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(c) for c in self.group_sizes)
        if len(sizes) == 0:
            raise EmptyPartition("group partition must contain at least one group")
        bad = [c for c in sizes if c < 1]
        if bad:
            raise InvalidSize(f"group sizes must be >= 1, got {bad}")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "offsets", tuple(int(o) for o in np.cumsum((0,) + sizes[:-1])))

    @property
    def d(self) -> int:
        return self.offsets[-1] + self.group_sizes[-1]

    @property
    def m(self) -> int:
        return len(self.group_sizes)

    def slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k] + self.group_sizes[k])

    def slices(self) -> list[slice]:
        return [self.slice(k) for k in range(self.m)]

    def group_of(self, j: int) -> tuple[int, int]:
        """Map coefficient index ``j`` to ``(group, position within group)``."""
        if not 0 <= j < self.d:
            raise IndexError(j)
        k = int(np.searchsorted(self.offsets, j, side="right")) - 1
        return k, j - self.offsets[k]

    def membership(self) -> np.ndarray:
        """Group index of every coefficient, as an int array of length d."""
        return np.repeat(np.arange(self.m), self.group_sizes)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.asarray(self.offsets, dtype=np.int64),
                np.asarray(self.group_sizes, dtype=np.int64))

    def to_list(self) -> list[int]:
        return list(self.group_sizes)


def build_groups(group_sizes: Sequence[int]) -> GroupStructure:
    if group_sizes is None or len(group_sizes) == 0:
        raise EmptyPartition("group partition must contain at least one group")
    for c in group_sizes:
        if isinstance(c, bool) or int(c) != c:
            raise InvalidSize(f"group sizes must be integers, got {c!r}")
    return GroupStructure(tuple(int(c) for c in group_sizes))


@dataclass(frozen=True)
class ActiveSets:
    """Active groups, active coordinates and their per-group split (0-based)."""

    active_groups: frozenset[int]
    active_coords: frozenset[int]
    per_group_active: Mapping[int, frozenset[int]]
    groups: GroupStructure

    def zero_mask(self) -> np.ndarray:
        mask = np.ones(self.groups.d, dtype=bool)
        mask[list(self.active_coords)] = False
        return mask

    def to_dict(self) -> dict:
        return {
            "active_groups": sorted(self.active_groups),
            "active_coords": sorted(self.active_coords),
        }


def active_sets_from(theta, groups: GroupStructure, zero_tol: float = 0.0) -> ActiveSets:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != groups.d:
        raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({groups.d},)")
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    nonzero = np.abs(theta) > zero_tol
    per_group = {}
    for k, sl in enumerate(groups.slices()):
        within = np.flatnonzero(nonzero[sl])
        if within.size:
            per_group[k] = frozenset(int(i) for i in within)
    coords = frozenset(int(j) for j in np.flatnonzero(nonzero))
    return ActiveSets(frozenset(per_group), coords, per_group, groups)


@dataclass(frozen=True)
class SupportComparison:
    C: int
    IC: int
    exact_recovery: bool


def compare_supports(estimated: ActiveSets, truth: ActiveSets) -> SupportComparison:
    """Count correctly (C) and incorrectly (IC) estimated zeros against the truth."""
    if estimated.groups != truth.groups:
        raise DimensionMismatch("supports were built over different group structures")
    est_zero = estimated.zero_mask()
    true_zero = truth.zero_mask()
    C = int(np.sum(est_zero & true_zero))
    IC = int(np.sum(est_zero & ~true_zero))
    return SupportComparison(C, IC, estimated.active_coords == truth.active_coords)
