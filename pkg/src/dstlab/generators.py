"""Instance generators for seeded desk-scale experiments.

Every generator is deterministic in its seed and returns instances that
pass :func:`dstlab.graph.validate_instance`. Feasibility fallbacks draw
their costs from the same range as ordinary edges, so no generator plants
trivially cheap backdoor paths.
"""

from __future__ import annotations

import random

from dstlab.graph import Digraph, DstInstance, validate_instance
from dstlab.lp import StrengthenedLpSolution


def _check(inst: DstInstance) -> DstInstance:
    problems = validate_instance(inst)
    if problems:
        raise AssertionError("generator produced invalid instance: " + "; ".join(problems))
    return inst


def gen_layered_random(n_per_layer: int, num_layers: int, k: int,
                       edge_prob: float, cost_range: tuple[float, float],
                       seed: int) -> DstInstance:
    """Random layered DAG: layer 1 = {root}, middle layers of ``n_per_layer``
    vertices, top layer = the k terminals. A random root-to-terminal path is
    filled in wherever a terminal would otherwise be unreachable."""
    if num_layers < 2 or n_per_layer < 1 or k < 1:
        raise ValueError("parameters must be positive and num_layers >= 2")
    rng = random.Random(seed)
    lo, hi = cost_range
    layers: list[list[int]] = [[0]]
    next_id = 1
    for _ in range(2, num_layers):
        layers.append(list(range(next_id, next_id + n_per_layer)))
        next_id += n_per_layer
    layers.append(list(range(next_id, next_id + k)))
    next_id += k
    terminals = layers[-1]

    present: set[tuple[int, int]] = set()
    edges: list[tuple[int, int, float]] = []

    def add(u: int, v: int):
        if (u, v) not in present:
            present.add((u, v))
            edges.append((u, v, rng.uniform(lo, hi)))

    for a, b in zip(layers, layers[1:]):
        for u in a:
            for v in b:
                if rng.random() < edge_prob:
                    add(u, v)
        # No orphans: every vertex keeps an in-edge from the previous layer,
        # so the whole graph stays reachable from the root.
        covered = {v for (u, v) in present if u in set(a)}
        for v in b:
            if v not in covered:
                add(rng.choice(a), v)
    return _check(DstInstance.build(Digraph.from_edges(next_id, edges), 0, terminals))


def gen_random_digraph(n: int, m: int, k: int, seed: int,
                       cost_range: tuple[float, float] = (1.0, 10.0)) -> DstInstance:
    """Random simple digraph with guaranteed terminal reachability.

    At most ``m`` edges: base edges are sampled uniformly among ordered
    pairs, then missing root-to-terminal connectivity is patched with edges
    from already-reachable vertices.
    """
    if n < 2 or k < 1 or k > n - 1:
        raise ValueError("need n >= 2 and 1 <= k <= n-1")
    rng = random.Random(seed)
    lo, hi = cost_range
    root = 0
    terminals = rng.sample(range(1, n), k)
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    rng.shuffle(pairs)
    base = max(0, m - k)
    present = set(pairs[:base])
    edges = [(u, v, rng.uniform(lo, hi)) for u, v in pairs[:base]]

    def reach() -> set[int]:
        out: dict[int, list[int]] = {v: [] for v in range(n)}
        for u, v, _ in edges:
            out[u].append(v)
        seen = {root}
        stack = [root]
        while stack:
            u = stack.pop()
            for v in out[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    for t in terminals:
        seen = reach()
        if t in seen:
            continue
        u = rng.choice(sorted(seen - {t}))
        if (u, t) not in present:
            present.add((u, t))
            edges.append((u, t, rng.uniform(lo, hi)))
    return _check(DstInstance.build(Digraph.from_edges(n, edges), root, terminals))


def gen_relatively_integral(k: int, depth: int, seed: int,
                            cost_range: tuple[float, float] = (1.0, 2.0)
                            ) -> tuple[DstInstance, StrengthenedLpSolution]:
    """Two internally disjoint arborescences sharing root and terminals,
    each carried at capacity 1/2.

    The returned fractional solution routes half a unit to every terminal
    through each tree, so every positive flow value equals its capacity
    exactly (the checker accepts it at tolerance zero). The instance is a
    native layered DAG with terminals at layer depth+1.
    """
    if k < 1 or k & (k - 1):
        raise ValueError("k must be a power of two")
    min_depth = max(2, (k - 1).bit_length())
    if depth < min_depth:
        raise ValueError(f"depth must be >= {min_depth} for k={k}")
    rng = random.Random(seed)
    lo, hi = cost_range
    root = 0
    next_id = 1
    terminals = list(range(next_id, next_id + k))
    next_id += k
    edges: list[tuple[int, int, float]] = []
    edge_index: dict[tuple[int, int], int] = {}
    tree_paths: list[dict[int, list[int]]] = []

    def add(u: int, v: int) -> int:
        edge_index[(u, v)] = len(edges)
        edges.append((u, v, rng.uniform(lo, hi)))
        return edge_index[(u, v)]

    for _tree in range(2):
        prev = [root]
        parent_vertex: dict[int, int] = {}
        for layer in range(2, depth + 1):
            width = max(1, k >> (depth + 1 - layer))
            level = list(range(next_id, next_id + width))
            next_id += width
            for i, v in enumerate(level):
                u = prev[i * len(prev) // width]
                parent_vertex[v] = u
                add(u, v)
            prev = level
        path_edges: dict[int, list[int]] = {}
        for i, t in enumerate(terminals):
            u = prev[i * len(prev) // k]
            path = [add(u, t)]
            while u != root:
                path.append(edge_index[(parent_vertex[u], u)])
                u = parent_vertex[u]
            path_edges[t] = list(reversed(path))
        tree_paths.append(path_edges)

    inst = _check(DstInstance.build(Digraph.from_edges(next_id, edges), root, terminals))

    g = inst.graph
    x = {e: 0.5 for e in range(g.m)}
    f: dict[tuple[int, int], float] = {}
    f_pair: dict[tuple[int, int, int], float] = {}
    for paths in tree_paths:
        for t, path in paths.items():
            for e in path:
                f[(t, e)] = 0.5
            for uv, vw in zip(path, path[1:]):
                f_pair[(t, uv, vw)] = 0.5
    x_pair = {}
    for v in range(g.n):
        for uv in g.in_edges[v]:
            for vw in g.out_edges[v]:
                x_pair[(uv, vw)] = 0.5
    for t in terminals:
        for e in range(g.m):
            f.setdefault((t, e), 0.0)
    objective = sum(0.5 * g.cost(e) for e in range(g.m))
    sol = StrengthenedLpSolution(x, x_pair, f, f_pair, objective)
    return inst, sol
