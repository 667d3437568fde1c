"""Height reduction: turn any instance into a layered DAG over the metric
closure, and lift layered solutions back to the original graph.

Vertex levels run 1..L with level 1 = {root} and level L = terminal copies.
Edge levels run 1..L-1 (an edge's level is its tail's). The auxiliary
level-0 root edge used by the rounding pipeline lives in the LP module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from dstlab.graph import (
    Digraph,
    DstInstance,
    InfeasibleSolutionError,
    SolutionSubgraph,
    metric_closure,
    reachable_from,
)


def choose_num_layers(k: int) -> int:
    """Number of vertex layers for ``k`` terminals: max(2, ceil(log2 k) + 1).

    The clamp keeps a distinct root layer and terminal layer even at k=1.
    """
    if k < 1:
        raise ValueError("need at least one terminal")
    return max(2, (k - 1).bit_length() + 1)


@dataclass(frozen=True)
class LayeredInstance:
    """A layered instance plus the bookkeeping to undo the transform.

    ``back_map`` sends each layered edge to the original edge ids of one
    shortest-path witness (empty for zero-cost stay edges).
    """

    inst: DstInstance
    num_layers: int
    layer_of: dict[int, int] = field(hash=False)
    back_map: dict[int, tuple[int, ...]] = field(hash=False)
    original: DstInstance | None = None

    def edge_level(self, e: int) -> int:
        return self.layer_of[self.inst.graph.tail(e)]

    def edges_at_level(self, level: int) -> list[int]:
        return [e for e in range(self.inst.graph.m) if self.edge_level(e) == level]

    def check_layer_discipline(self) -> list[str]:
        g = self.inst.graph
        bad = [f"edge {e} skips levels ({self.layer_of[u]}->{self.layer_of[v]})"
               for e, (u, v, _) in enumerate(g.edges)
               if self.layer_of[v] != self.layer_of[u] + 1]
        if self.layer_of[self.inst.root] != 1:
            bad.append("root not at level 1")
        top = self.num_layers
        for v, lvl in self.layer_of.items():
            if lvl == top and v not in self.inst.terminals:
                bad.append(f"non-terminal {v} at top level")
        return bad


def build_layered(inst: DstInstance, num_layers: int) -> LayeredInstance:
    """Layered instance over the metric closure of ``inst``.

    Level 1 holds the root, levels 2..L-1 a copy of every vertex, level L a
    copy of each terminal. Closure edges connect consecutive levels; each
    vertex additionally gets a zero-cost stay edge to its next-level copy so
    every original solution embeds. Closure self-edges are never emitted, so
    the layered graph stays simple.
    """
    if num_layers < 2:
        raise ValueError("need at least 2 layers")
    reach = reachable_from(inst.graph, inst.root, None)
    missing = sorted(t for t in inst.terminals if t not in reach)
    if missing:
        raise InfeasibleSolutionError(f"terminals unreachable from root: {missing}")

    mc = metric_closure(inst.graph)
    L = num_layers
    ids: dict[tuple[int, int], int] = {}
    layer_of: dict[int, int] = {}

    def new_vertex(orig: int, level: int) -> int:
        vid = len(layer_of)
        ids[(orig, level)] = vid
        layer_of[vid] = level
        return vid

    new_vertex(inst.root, 1)
    for level in range(2, L):
        for v in range(inst.graph.n):
            new_vertex(v, level)
    for t in sorted(inst.terminals):
        new_vertex(t, L)

    edges: list[tuple[int, int, float]] = []
    back_map: dict[int, tuple[int, ...]] = {}

    def add_edge(u: int, v: int, cost: float, witness: tuple[int, ...]):
        back_map[len(edges)] = witness
        edges.append((u, v, cost))

    for level in range(1, L):
        for e, (u, v, cost) in enumerate(mc.graph.edges):
            src, dst = ids.get((u, level)), ids.get((v, level + 1))
            if src is not None and dst is not None:
                add_edge(src, dst, cost, mc.witness[e])
        for v in range(inst.graph.n):
            src, dst = ids.get((v, level)), ids.get((v, level + 1))
            if src is not None and dst is not None:
                add_edge(src, dst, 0.0, ())

    layered = DstInstance.build(
        Digraph.from_edges(len(layer_of), edges),
        ids[(inst.root, 1)],
        [ids[(t, L)] for t in sorted(inst.terminals)],
    )
    return LayeredInstance(layered, L, layer_of, back_map, inst)


def native_layered(inst: DstInstance) -> LayeredInstance:
    """Wrap an instance that is already a layered DAG (identity back_map).

    Levels are inferred from hop distance to the root; any edge violating
    the level discipline, or a terminal off the top layer, is an error.
    """
    g = inst.graph
    layer_of: dict[int, int] = {inst.root: 1}
    frontier = [inst.root]
    while frontier:
        nxt = []
        for u in frontier:
            for e in g.out_edges[u]:
                v = g.head(e)
                if v not in layer_of:
                    layer_of[v] = layer_of[u] + 1
                    nxt.append(v)
        frontier = nxt
    if len(layer_of) != g.n:
        raise ValueError("graph has vertices unreachable from the root")
    for u, v, _ in g.edges:
        if layer_of[v] != layer_of[u] + 1:
            raise ValueError("graph is not layered: edge skips a level")
    top = max(layer_of.values())
    for v, lvl in layer_of.items():
        if (lvl == top) != (v in inst.terminals):
            raise ValueError("top layer must hold exactly the terminals")
    back_map = {e: (e,) for e in range(g.m)}
    return LayeredInstance(inst, top, layer_of, back_map, inst)


def lift_solution(li: LayeredInstance, h_layered: SolutionSubgraph) -> SolutionSubgraph:
    """Map a feasible layered solution back to original edges.

    Witness edge lists are unioned, so shared prefixes are paid once; the
    result is feasible on the original instance and never costs more.
    """
    if not h_layered.is_feasible_for(li.inst):
        raise InfeasibleSolutionError("layered solution infeasible")
    lifted: set[int] = set()
    for e in h_layered.edges:
        lifted.update(li.back_map[e])
    orig = li.original
    return SolutionSubgraph.build(orig.graph, orig.root, orig.terminals, lifted)
