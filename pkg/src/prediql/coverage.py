"""Node coverage: unique successfully answered root operations over all root operations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from prediql.schema import NodeKey


class CoverageError(ValueError):
    pass


def coverage_ratio(covered: int, total: int) -> float:
    if total <= 0:
        raise CoverageError("coverage is undefined for an empty node set")
    if not 0 <= covered <= total:
        raise CoverageError(f"covered count {covered} outside [0, {total}]")
    return round(covered / total, 4)


@dataclass
class CoverageState:
    all_nodes: tuple[NodeKey, ...]
    covered: set[NodeKey] = field(default_factory=set)

    def __init__(self, all_nodes: Iterable[NodeKey]):
        self.all_nodes = tuple(tuple(n) for n in all_nodes)
        self._index = set(self.all_nodes)
        self.covered = set()

    def register_success(self, node: NodeKey) -> bool:
        """Mark ``node`` covered; True only the first time."""
        node = tuple(node)
        if node not in self._index:
            raise CoverageError(f"node {node} is not part of the schema")
        if node in self.covered:
            return False
        self.covered.add(node)
        return True

    def coverage(self) -> float:
        return coverage_ratio(len(self.covered), len(self.all_nodes))

    def uncovered(self) -> list[NodeKey]:
        return [n for n in self.all_nodes if n not in self.covered]

    @property
    def complete(self) -> bool:
        return len(self.covered) == len(self.all_nodes)
