"""Interaction graphs, leader/follower role splits, and formation geometry."""

from __future__ import annotations

from collections import deque

import numpy as np

from formlab.errors import FormationError
from formlab.geometry import RotationAxis

_PARALLEL_SIN_TOL = 1e-9


class InteractionGraph:
    """Directed sensing topology over ``n`` agents with followers listed first.

    Agent ``i`` senses the agents in ``neighbors[i]``. Indices are 0-based;
    followers occupy ``0 .. n_followers-1`` and leaders fill the tail. Every
    follower must sense at least two other agents, since single-neighbor
    rows can never pin down a position.
    """

    def __init__(self, n: int, n_followers: int, neighbors) -> None:
        if n < 3:
            raise FormationError(f"need at least 3 agents, got {n}")
        if not 0 < n_followers < n:
            raise FormationError(
                f"follower count {n_followers} must be in [1, {n - 1}] for {n} agents"
            )
        if len(neighbors) != n:
            raise FormationError(f"expected {n} neighbor lists, got {len(neighbors)}")
        clean = []
        for i, nbrs in enumerate(neighbors):
            nbrs = tuple(int(j) for j in nbrs)
            if any(j < 0 or j >= n for j in nbrs):
                raise FormationError(f"agent {i}: neighbor index out of range in {nbrs}")
            if i in nbrs:
                raise FormationError(f"agent {i}: self-loop not allowed")
            if len(set(nbrs)) != len(nbrs):
                raise FormationError(f"agent {i}: duplicate neighbors in {nbrs}")
            if i < n_followers and len(nbrs) < 2:
                raise FormationError(
                    f"follower {i} has {len(nbrs)} neighbors, needs at least 2"
                )
            clean.append(nbrs)
        self.n = n
        self.n_followers = n_followers
        self.neighbors = tuple(clean)

    @property
    def n_leaders(self) -> int:
        return self.n - self.n_followers

    @property
    def followers(self) -> range:
        return range(self.n_followers)

    @property
    def leaders(self) -> range:
        return range(self.n_followers, self.n)

    def undirected_adjacency(self) -> list[set]:
        """Symmetrized adjacency: an edge in either direction connects both ends."""
        adj = [set() for _ in range(self.n)]
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                adj[i].add(j)
                adj[j].add(i)
        return adj

    def __repr__(self) -> str:
        return f"InteractionGraph(n={self.n}, n_followers={self.n_followers})"


def _reaches_all(adj, roots, banned, targets) -> bool:
    seen = set(r for r in roots if r not in banned)
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in banned and w not in seen:
                seen.add(w)
                queue.append(w)
    return all(t in seen for t in targets)


def validate_two_rooted(graph: InteractionGraph, roots: tuple[int, int]) -> bool:
    """Check 2-rooted connectivity from a root pair, by brute force.

    Every non-root vertex must stay reachable from the roots (in the
    symmetrized graph) after deleting any single other non-root vertex.
    This is the structural condition that lets two anchors pin down every
    follower even when one intermediate agent drops out.
    """
    r0, r1 = roots
    if r0 == r1:
        raise FormationError("root pair must be two distinct agents")
    for r in roots:
        if r < 0 or r >= graph.n:
            raise FormationError(f"root {r} out of range for {graph.n} agents")
    adj = graph.undirected_adjacency()
    rootset = {r0, r1}
    others = [v for v in range(graph.n) if v not in rootset]
    if not _reaches_all(adj, rootset, set(), others):
        return False
    for banned in others:
        targets = [v for v in others if v != banned]
        if not _reaches_all(adj, rootset, {banned}, targets):
            return False
    return True


class Formation:
    """An interaction graph plus agent positions in a shared frame.

    Positions are stored as an (n, 3) array. Planar formations (``dimension
    == 2``) keep z identically zero; matrix operations then work on the
    stacked xy coordinates only, so the stacked configuration vector has
    length ``n * dimension``.
    """

    def __init__(self, graph: InteractionGraph, positions, dimension: int = 3) -> None:
        pos = np.asarray(positions, dtype=float)
        if pos.shape != (graph.n, 3):
            raise FormationError(f"positions must be ({graph.n}, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise FormationError("positions must be finite")
        if dimension not in (2, 3):
            raise FormationError(f"dimension must be 2 or 3, got {dimension}")
        if dimension == 2 and np.any(pos[:, 2] != 0.0):
            raise FormationError("planar formations must have z == 0 for every agent")
        self.graph = graph
        self.positions = pos.copy()
        self.positions.flags.writeable = False
        self.dimension = dimension

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_followers(self) -> int:
        return self.graph.n_followers

    @property
    def n_leaders(self) -> int:
        return self.graph.n_leaders

    @property
    def config(self) -> np.ndarray:
        """Stacked position vector of length n * dimension."""
        return self.positions[:, : self.dimension].reshape(-1)

    def leader_positions(self) -> np.ndarray:
        return self.positions[self.graph.n_followers :]

    def __repr__(self) -> str:
        return (
            f"Formation(n={self.n}, n_followers={self.n_followers}, "
            f"dimension={self.dimension})"
        )


def centroid(formation: Formation) -> np.ndarray:
    """Mean agent position, shape (3,)."""
    return formation.positions.mean(axis=0)


def validate_leader_axis(leader_positions, axis: RotationAxis) -> bool:
    """True unless every pairwise leader offset is parallel to the axis.

    A rotation about the axis is invisible to the rest of the formation when
    all leaders sit on one line along it, so that geometry is rejected.
    """
    pos = np.asarray(leader_positions, dtype=float).reshape(-1, 3)
    if pos.shape[0] < 2:
        raise FormationError(f"need at least 2 leaders, got {pos.shape[0]}")
    for i in range(pos.shape[0]):
        for j in range(i + 1, pos.shape[0]):
            diff = pos[j] - pos[i]
            norm = np.linalg.norm(diff)
            if norm == 0.0:
                continue
            sine = np.linalg.norm(np.cross(diff / norm, axis.vec))
            if sine > _PARALLEL_SIN_TOL:
                return True
    return False
