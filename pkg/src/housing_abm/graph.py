"""Spatial partition of the city as an undirected area graph.

Edges have unit weight, so hop distances come from one breadth-first search
per source. The full distance matrix is computed once at construction and the
graph is treated as immutable afterwards.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DisconnectedGraph(ValueError):
    """Raised when some pair of areas has no connecting path."""


class UnknownArea(ValueError):
    """Raised when an edge names an area outside the vertex set."""


class TopologyKind(Enum):
    SINGLETON = "singleton"
    ADJACENCY = "adjacency"
    COMPLETE = "complete"


@dataclass(frozen=True)
class Topology:
    """How the area graph is built.

    ``edges`` is only read for :attr:`TopologyKind.ADJACENCY` and holds pairs
    of integer area ids.
    """

    kind: TopologyKind
    edges: tuple[tuple[int, int], ...] = ()

    @classmethod
    def singleton(cls) -> "Topology":
        return cls(TopologyKind.SINGLETON)

    @classmethod
    def complete(cls) -> "Topology":
        return cls(TopologyKind.COMPLETE)

    @classmethod
    def adjacency(cls, edges: Iterable[tuple[int, int]]) -> "Topology":
        return cls(TopologyKind.ADJACENCY, tuple((int(a), int(b)) for a, b in edges))


@dataclass(frozen=True)
class RegionGraph:
    """Connected undirected graph of areas with precomputed hop distances.

    Attributes
    ----------
    n : int
        Number of vertices (areas). Vertices are ``0..n-1``.
    edges : frozenset of tuple
        Unordered pairs stored as ``(min, max)``.
    dist : ndarray of int, shape (n, n)
        Shortest-path hop counts.
    ecc : ndarray of int, shape (n,)
        Eccentricity of each vertex, ``dist.max(axis=1)``.
    names : tuple of str
        Optional human-readable area names, same order as vertex ids.
    """

    n: int
    edges: frozenset
    dist: np.ndarray
    ecc: np.ndarray
    names: tuple[str, ...] = field(default=())

    @property
    def is_singleton(self) -> bool:
        return self.n == 1

    def outreach(self, src: int, dst: int) -> float:
        return float(self.outreach_matrix()[src, dst])

    def outreach_matrix(self) -> np.ndarray:
        """``1 - dist(i, j) / ecc(i)`` for every pair; all ones on a singleton.

        On the complete graph every off-diagonal entry is 0 because
        ``dist == ecc == 1``, so distance carries no information there.
        """
        cached = self.__dict__.get("_outreach")
        if cached is None:
            if self.n == 1:
                cached = np.ones((1, 1))
            else:
                cached = 1.0 - self.dist / self.ecc[:, None].astype(float)
            cached.setflags(write=False)
            object.__setattr__(self, "_outreach", cached)
        return cached

    def neighbours(self, v: int) -> list[int]:
        return sorted({b if a == v else a for a, b in self.edges if v in (a, b)})


def bfs_distances(n: int, adjacency: Sequence[Sequence[int]]) -> np.ndarray:
    """All-pairs hop distances by one BFS per source; ``-1`` marks unreachable."""
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        row = dist[s]
        row[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            du = row[u] + 1
            for w in adjacency[u]:
                if row[w] < 0:
                    row[w] = du
                    queue.append(w)
    return dist


def build_graph(topology: Topology, n_areas: int, names: Sequence[str] = ()) -> RegionGraph:
    """Build a :class:`RegionGraph` for ``n_areas`` areas.

    Raises
    ------
    UnknownArea
        An adjacency edge names an id outside ``0..n_areas-1``.
    DisconnectedGraph
        The resulting graph is not connected.
    """
    if n_areas < 1:
        raise ValueError(f"n_areas must be >= 1, got {n_areas}")
    kind = topology.kind
    if kind is TopologyKind.SINGLETON:
        if n_areas != 1:
            raise ValueError("singleton topology requires exactly one area")
        edges: set[tuple[int, int]] = set()
    elif kind is TopologyKind.COMPLETE:
        edges = {(i, j) for i in range(n_areas) for j in range(i + 1, n_areas)}
    else:
        edges = set()
        for a, b in topology.edges:
            if not (0 <= a < n_areas and 0 <= b < n_areas):
                raise UnknownArea(f"edge ({a}, {b}) outside 0..{n_areas - 1}")
            if a != b:
                edges.add((min(a, b), max(a, b)))

    adjacency: list[list[int]] = [[] for _ in range(n_areas)]
    for a, b in sorted(edges):
        adjacency[a].append(b)
        adjacency[b].append(a)
    dist = bfs_distances(n_areas, adjacency)
    if (dist < 0).any():
        raise DisconnectedGraph("area graph has disconnected components")
    dist.setflags(write=False)
    ecc = dist.max(axis=1)
    ecc.setflags(write=False)
    return RegionGraph(n_areas, frozenset(edges), dist, ecc, tuple(names))


def read_edge_csv(path: str | Path, area_names: Sequence[str] | None = None) -> tuple[list[str], list[tuple[int, int]]]:
    """Parse ``area_a,area_b`` lines into dense ids.

    When ``area_names`` is given those ids are authoritative and an unseen name
    raises :class:`UnknownArea`; otherwise names are numbered in order of first
    appearance. A header row ``area_a,area_b`` is skipped.
    """
    names = list(area_names) if area_names is not None else []
    index = {name: i for i, name in enumerate(names)}
    edges = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if [c.strip() for c in row[:2]] == ["area_a", "area_b"]:
                continue
            a, b = (c.strip() for c in row[:2])
            ids = []
            for name in (a, b):
                if name not in index:
                    if area_names is not None:
                        raise UnknownArea(f"unknown area {name!r} in {path}")
                    index[name] = len(names)
                    names.append(name)
                ids.append(index[name])
            edges.append((ids[0], ids[1]))
    return names, edges
