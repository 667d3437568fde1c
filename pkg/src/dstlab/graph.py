"""Graph data model and flow/reachability/metric-closure primitives.

Edge ids are stable integer indices in input order, so seeded experiments
and reports stay reproducible. All types are immutable after construction
and every operation is a pure function.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from dstlab.tolerances import NUM_EPS

INF = float("inf")


class InfeasibleSolutionError(ValueError):
    """A subgraph does not connect the root to every terminal."""


@dataclass(frozen=True)
class Digraph:
    """Simple directed graph with nonnegative edge costs.

    ``edges[i] = (tail, head, cost)``; ``i`` is the edge id. Structural
    sanity (vertex ids in range) is enforced here, while the instance-level
    invariants (no self-loops, no parallel edges, costs >= 0) are reported
    by :func:`validate_instance` as data.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        for i, (u, v, _) in enumerate(self.edges):
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge {i} endpoint out of range: ({u}, {v})")

    @staticmethod
    def from_edges(n: int, edges: Iterable[tuple[int, int, float]]) -> "Digraph":
        return Digraph(n, tuple((int(u), int(v), float(c)) for u, v, c in edges))

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, (u, _, _) in enumerate(self.edges):
            out[u].append(i)
        return tuple(tuple(x) for x in out)

    @cached_property
    def in_edges(self) -> tuple[tuple[int, ...], ...]:
        inc: list[list[int]] = [[] for _ in range(self.n)]
        for i, (_, v, _) in enumerate(self.edges):
            inc[v].append(i)
        return tuple(tuple(x) for x in inc)

    def tail(self, e: int) -> int:
        return self.edges[e][0]

    def head(self, e: int) -> int:
        return self.edges[e][1]

    def cost(self, e: int) -> float:
        return self.edges[e][2]

    @property
    def m(self) -> int:
        return len(self.edges)

    def total_cost(self, edge_ids: Iterable[int]) -> float:
        return sum(self.edges[e][2] for e in set(edge_ids))


@dataclass(frozen=True)
class DstInstance:
    """A rooted directed Steiner tree instance."""

    graph: Digraph
    root: int
    terminals: frozenset[int]

    @staticmethod
    def build(graph: Digraph, root: int, terminals: Iterable[int]) -> "DstInstance":
        return DstInstance(graph, int(root), frozenset(int(t) for t in terminals))

    @property
    def k(self) -> int:
        return len(self.terminals)


@dataclass(frozen=True)
class SolutionSubgraph:
    """An edge subset with its cost and the terminals it actually connects."""

    edges: frozenset[int]
    cost: float
    reachable_terminals: frozenset[int]

    @staticmethod
    def build(graph: Digraph, root: int, terminals: Iterable[int],
              edge_ids: Iterable[int]) -> "SolutionSubgraph":
        chosen = frozenset(int(e) for e in edge_ids)
        reach = reachable_from(graph, root, chosen)
        return SolutionSubgraph(
            edges=chosen,
            cost=graph.total_cost(chosen),
            reachable_terminals=frozenset(t for t in terminals if t in reach),
        )

    def is_feasible_for(self, inst: DstInstance) -> bool:
        return inst.terminals <= self.reachable_terminals


@dataclass(frozen=True)
class FlowAssignment:
    """Edge flow values for one source/sink pair."""

    values: Mapping[int, float]
    source: int
    sink: int

    def respects_capacities(self, capacities: Mapping[int, float],
                            eps: float = NUM_EPS) -> bool:
        return all(v <= capacities.get(e, 0.0) + eps and v >= -eps
                   for e, v in self.values.items())

    def net_flow_into(self, g: Digraph, vertex: int) -> float:
        into = sum(v for e, v in self.values.items() if g.head(e) == vertex)
        out = sum(v for e, v in self.values.items() if g.tail(e) == vertex)
        return into - out


def validate_instance(inst: DstInstance) -> list[str]:
    """Return all invariant violations of an instance (empty list if valid).

    Violations are data, not exceptions: the validator is the tool used to
    reject bad inputs, so it must be able to describe them.
    """
    g = inst.graph
    violations: list[str] = []
    seen_pairs: set[tuple[int, int]] = set()
    for i, (u, v, c) in enumerate(g.edges):
        if u == v:
            violations.append(f"self-loop at edge {i} ({u}->{v})")
        if (u, v) in seen_pairs:
            violations.append(f"parallel edge {i} duplicates ({u}->{v})")
        seen_pairs.add((u, v))
        if c < 0:
            violations.append(f"negative cost on edge {i} ({u}->{v}, cost {c})")
    if not (0 <= inst.root < g.n):
        violations.append(f"root {inst.root} out of range")
        return violations
    if inst.root in inst.terminals:
        violations.append("root listed as a terminal")
    for t in sorted(inst.terminals):
        if not (0 <= t < g.n):
            violations.append(f"terminal {t} out of range")
    if inst.k < 1:
        violations.append("no terminals")
    reach = reachable_from(g, inst.root, None)
    for t in sorted(inst.terminals):
        if 0 <= t < g.n and t not in reach:
            violations.append(f"terminal {t} unreachable from root")
    return violations


def reachable_from(g: Digraph, src: int, allowed_edges: Iterable[int] | None) -> set[int]:
    """Vertices with a directed path from ``src`` using only ``allowed_edges``.

    ``allowed_edges=None`` allows every edge. Monotone in the allowed set.
    """
    if not (0 <= src < g.n):
        raise ValueError(f"unknown vertex {src}")
    if allowed_edges is None:
        allowed = None
    else:
        allowed = set(allowed_edges)
        for e in allowed:
            if not (0 <= e < g.m):
                raise ValueError(f"unknown edge id {e}")
    seen = {src}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for e in g.out_edges[u]:
            if allowed is not None and e not in allowed:
                continue
            v = g.head(e)
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def max_flow(g: Digraph, capacities: Mapping[int, float], src: int,
             sink: int) -> tuple[float, FlowAssignment]:
    """Maximum feasible ``src -> sink`` flow value plus a witness assignment.

    Edmonds-Karp on the residual graph; capacities below NUM_EPS are treated
    as saturated to keep augmentation finite on float data.
    """
    if src == sink:
        raise ValueError("source equals sink")
    if not (0 <= src < g.n and 0 <= sink < g.n):
        raise ValueError("unknown vertex id")
    for e in capacities:
        if not (0 <= e < g.m):
            raise ValueError(f"unknown edge id {e}")
        if capacities[e] < -NUM_EPS:
            raise ValueError(f"negative capacity on edge {e}")

    flow = {e: 0.0 for e in range(g.m)}
    cap = {e: max(0.0, capacities.get(e, 0.0)) for e in range(g.m)}
    total = 0.0
    while True:
        # BFS over residual arcs: forward slack or backward cancellation.
        parent: dict[int, tuple[int, bool]] = {}
        seen = {src}
        queue = deque([src])
        while queue and sink not in seen:
            u = queue.popleft()
            for e in g.out_edges[u]:
                v = g.head(e)
                if v not in seen and cap[e] - flow[e] > NUM_EPS:
                    seen.add(v)
                    parent[v] = (e, True)
                    queue.append(v)
            for e in g.in_edges[u]:
                v = g.tail(e)
                if v not in seen and flow[e] > NUM_EPS:
                    seen.add(v)
                    parent[v] = (e, False)
                    queue.append(v)
        if sink not in seen:
            break
        bottleneck = INF
        v = sink
        while v != src:
            e, forward = parent[v]
            bottleneck = min(bottleneck, cap[e] - flow[e] if forward else flow[e])
            v = g.tail(e) if forward else g.head(e)
        v = sink
        while v != src:
            e, forward = parent[v]
            flow[e] += bottleneck if forward else -bottleneck
            v = g.tail(e) if forward else g.head(e)
        total += bottleneck
    witness = FlowAssignment(values={e: f for e, f in flow.items() if f > NUM_EPS},
                             source=src, sink=sink)
    return total, witness


def max_flow_value(g: Digraph, capacities: Mapping[int, float], src: int,
                   sink: int) -> float:
    return max_flow(g, capacities, src, sink)[0]


def dijkstra(g: Digraph, src: int,
             allowed_edges: Iterable[int] | None = None
             ) -> tuple[dict[int, float], dict[int, int], dict[int, int]]:
    """Shortest distances from ``src`` with parent-edge witnesses.

    Returns ``(dist, hops, parent_edge)``; ties broken toward fewer hops and
    then smaller edge id, so witnesses are deterministic.
    """
    allowed = None if allowed_edges is None else set(allowed_edges)
    dist: dict[int, float] = {src: 0.0}
    hops: dict[int, int] = {src: 0}
    parent: dict[int, int] = {}
    done: set[int] = set()
    heap: list[tuple[float, int, int]] = [(0.0, 0, src)]
    while heap:
        d, h, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for e in g.out_edges[u]:
            if allowed is not None and e not in allowed:
                continue
            v = g.head(e)
            if v in done:
                continue
            nd, nh = d + g.cost(e), h + 1
            if (nd, nh) < (dist.get(v, INF), hops.get(v, -1)):
                dist[v], hops[v], parent[v] = nd, nh, e
                heapq.heappush(heap, (nd, nh, v))
    return dist, hops, parent


@dataclass(frozen=True)
class MetricClosure:
    """Closure graph plus one shortest-path witness per closure edge."""

    graph: Digraph
    witness: dict[int, tuple[int, ...]] = field(hash=False)


def metric_closure(g: Digraph) -> MetricClosure:
    """Complete reachability graph with shortest-path costs and witnesses.

    Edge ``u -> v`` exists iff ``v`` is reachable from ``u`` (``u != v``);
    its cost is the shortest-path distance and the witness lists one
    shortest path's original edge ids. Idempotent on costs.
    """
    edges: list[tuple[int, int, float]] = []
    witness: dict[int, tuple[int, ...]] = {}
    for u in range(g.n):
        dist, _, parent = dijkstra(g, u)
        for v in sorted(dist):
            if v == u:
                continue
            path: list[int] = []
            w = v
            while w != u:
                e = parent[w]
                path.append(e)
                w = g.tail(e)
            witness[len(edges)] = tuple(reversed(path))
            edges.append((u, v, dist[v]))
    return MetricClosure(Digraph.from_edges(g.n, edges), witness)


def prune_to_minimal(inst: DstInstance, h: SolutionSubgraph) -> SolutionSubgraph:
    """Reduce a feasible subgraph so every used non-root vertex has in-degree one.

    Reverse traversal from the terminals: each needed vertex keeps its
    cheapest in-edge among those whose tail precedes it in shortest-path
    order, which guarantees the kept parent chain reaches the root without
    cycles. Output cost never exceeds ``h``'s cost.
    """
    g = inst.graph
    if not h.is_feasible_for(inst):
        raise InfeasibleSolutionError("subgraph does not connect all terminals")
    dist, hops, _ = dijkstra(g, inst.root, h.edges)

    def order(v: int) -> tuple[float, int]:
        return (dist.get(v, INF), hops.get(v, -1))

    parent_edge: dict[int, int] = {}
    kept: set[int] = set()
    stack = [t for t in sorted(inst.terminals)]
    needed: set[int] = set(stack)
    while stack:
        v = stack.pop()
        if v == inst.root or v in parent_edge:
            continue
        candidates = [e for e in g.in_edges[v]
                      if e in h.edges and order(g.tail(e)) < order(v)]
        if not candidates:
            raise InfeasibleSolutionError(f"no usable in-edge for vertex {v}")
        best = min(candidates, key=lambda e: (g.cost(e), e))
        parent_edge[v] = best
        kept.add(best)
        u = g.tail(best)
        if u not in needed:
            needed.add(u)
            stack.append(u)
    return SolutionSubgraph.build(g, inst.root, inst.terminals, kept)
