"""Exact optimal directed Steiner tree values at desk scale.

Two independent routes: a terminal-subset dynamic program (the workhorse)
and a brute-force edge-subset sweep (the oracle for the oracle). They are
cross-validated against each other in the test suite.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from dstlab.graph import DstInstance, SolutionSubgraph

INF = float("inf")


class OracleLimitError(ValueError):
    """Instance exceeds the size limits of an exact method."""


class NoFeasibleSubsetError(ValueError):
    """No edge subset connects the root to all terminals."""


@dataclass
class DpTable:
    """``best[(mask, v)]``: cheapest out-arborescence rooted at ``v`` covering
    the terminal subset encoded by ``mask``."""

    terminals: tuple[int, ...]
    best: dict[tuple[int, int], float]
    choice: dict[tuple[int, int], tuple]


def _solve_table(inst: DstInstance) -> DpTable:
    g = inst.graph
    terms = tuple(sorted(inst.terminals))
    k = len(terms)
    full = (1 << k) - 1
    best: dict[tuple[int, int], float] = {}
    choice: dict[tuple[int, int], tuple] = {}

    for mask in range(1, full + 1):
        vals = [INF] * g.n
        # Seed: singleton base case, or best split into two covered subsets.
        if mask & (mask - 1) == 0:
            t = terms[mask.bit_length() - 1]
            vals[t] = 0.0
            choice[(mask, t)] = ("base",)
        else:
            sub = (mask - 1) & mask
            while sub:
                rest = mask ^ sub
                if sub < rest:  # each unordered split once
                    for v in range(g.n):
                        a = best.get((sub, v), INF)
                        b = best.get((rest, v), INF)
                        if a + b < vals[v]:
                            vals[v] = a + b
                            choice[(mask, v)] = ("split", sub)
                sub = (sub - 1) & mask
        # Shortest-path relaxation: v may reach the covering tree through an
        # out-edge. Dijkstra-style sweep keeps the update order safe for
        # nonnegative costs.
        heap = [(c, v) for v, c in enumerate(vals) if c < INF]
        heapq.heapify(heap)
        settled = [False] * g.n
        while heap:
            c, u = heapq.heappop(heap)
            if settled[u] or c > vals[u]:
                continue
            settled[u] = True
            for e in g.in_edges[u]:
                v = g.tail(e)
                cand = g.cost(e) + c
                if cand < vals[v]:
                    vals[v] = cand
                    choice[(mask, v)] = ("edge", e)
                    heapq.heappush(heap, (cand, v))
        for v, c in enumerate(vals):
            if c < INF:
                best[(mask, v)] = c
    return DpTable(terms, best, choice)


def exact_dst(inst: DstInstance, limit_k: int = 12,
              limit_n: int = 64) -> tuple[float, SolutionSubgraph]:
    """Exact optimum and a verified witness subgraph.

    Witness ties resolve by smallest edge id, so reruns are deterministic.
    """
    g = inst.graph
    if inst.k > limit_k:
        raise OracleLimitError(f"k={inst.k} exceeds limit {limit_k}")
    if g.n > limit_n:
        raise OracleLimitError(f"n={g.n} exceeds limit {limit_n}")
    table = _solve_table(inst)
    full = (1 << inst.k) - 1
    opt = table.best.get((full, inst.root), INF)
    if opt == INF:
        raise NoFeasibleSubsetError("some terminal unreachable from root")

    edges: set[int] = set()
    stack = [(full, inst.root)]
    while stack:
        mask, v = stack.pop()
        kind = table.choice.get((mask, v))
        if kind is None or kind[0] == "base":
            continue
        if kind[0] == "split":
            sub = kind[1]
            stack.append((sub, v))
            stack.append((mask ^ sub, v))
        else:
            e = kind[1]
            edges.add(e)
            stack.append((mask, g.head(e)))
    witness = SolutionSubgraph.build(g, inst.root, inst.terminals, edges)
    if not witness.is_feasible_for(inst):
        raise AssertionError("oracle witness failed feasibility check")
    return opt, witness


def exhaustive_dst(inst: DstInstance, limit_edges: int = 18) -> float:
    """Minimum cost over all feasible edge subsets, by full enumeration.

    Vectorized over subset ids: reachable-vertex bitmasks for every subset
    are advanced in lockstep for ``n`` rounds.
    """
    g = inst.graph
    m = g.m
    if m > limit_edges:
        raise OracleLimitError(f"|E|={m} exceeds limit {limit_edges}")
    if g.n > 32:
        raise OracleLimitError("vertex bitmask limited to 32 bits")
    subs = np.arange(1 << m, dtype=np.int64)
    present = [((subs >> e) & 1).astype(np.int64) for e in range(m)]
    reach = np.full(1 << m, 1 << inst.root, dtype=np.int64)
    for _ in range(g.n):
        for e in range(m):
            u, v, _ = g.edges[e]
            reach |= (((reach >> u) & 1) & present[e]) << v
    feasible = np.ones(1 << m, dtype=bool)
    for t in inst.terminals:
        feasible &= ((reach >> t) & 1).astype(bool)
    if not feasible.any():
        raise NoFeasibleSubsetError("no feasible subset")
    costs = np.zeros(1 << m, dtype=np.float64)
    for e in range(m):
        costs += present[e] * g.cost(e)
    return float(costs[feasible].min())
