"""Randomized decomposition tree: unfold a layered LP solution into a
tree-shaped group Steiner instance, with capacity and pseudo-flow
assignments and the measurement tooling for their invariants.

Tree shape: 2L-1 alternating levels. Odd levels hold edge-copy nodes (the
auxiliary root edge at level 1, real edge copies below), even levels hold
subset nodes. An expanded edge-copy node owns exactly ``d`` subsets; a
subset contains at most one copy of any child edge, included independently
with probability ``x_pair / x_parent``. Capacities follow the
``d^-(level+1)`` schedule on both hops of each block, so capacity
telescopes exactly through every edge-copy node.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from dstlab.layering import LayeredInstance
from dstlab.lp import ROOT_EDGE, RelativeIntegralityError, StrengthenedLpSolution
from dstlab.tolerances import FEAS_EPS, RI_TAU

KIND_EDGE = 0
KIND_SUBSET = 1


class TreeBudgetError(RuntimeError):
    """Node budget exhausted before any leaf was grown."""


@dataclass
class DecompositionTree:
    d: int
    num_layers: int                     # vertex layers L of the source instance
    kind: list[int] = field(default_factory=list)
    tree_level: list[int] = field(default_factory=list)
    parent: list[int] = field(default_factory=list)
    children: list[list[int]] = field(default_factory=list)
    edge_of: list[int] = field(default_factory=list)      # -2 for subset nodes
    subset_index: list[int] = field(default_factory=list)
    xhat: list[float] | None = None
    flows: dict[int, dict[int, float]] = field(default_factory=dict)
    groups: dict[int, list[int]] = field(default_factory=dict)
    truncated: bool = False
    complete_levels: int = 1
    overshoot: dict[int, int] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.kind)

    @property
    def leaf_level(self) -> int:
        return 2 * self.num_layers - 1

    def add_node(self, kind: int, level: int, parent: int, edge: int,
                 subset_index: int = -1) -> int:
        nid = len(self.kind)
        self.kind.append(kind)
        self.tree_level.append(level)
        self.parent.append(parent)
        self.children.append([])
        self.edge_of.append(edge)
        self.subset_index.append(subset_index)
        if parent >= 0:
            self.children[parent].append(nid)
        return nid

    def capacity(self, node: int) -> float:
        if self.xhat is None:
            raise ValueError("capacities not assigned")
        return self.xhat[node]

    def flow(self, terminal: int, node: int) -> float:
        return self.flows.get(terminal, {}).get(node, 0.0)

    def nodes_at_level(self, level: int) -> list[int]:
        return [n for n in range(self.num_nodes) if self.tree_level[n] == level]


def grow_tree(sol: StrengthenedLpSolution, li: LayeredInstance, d: int,
              seed: int, budget: int = 2_000_000) -> DecompositionTree:
    """Grow the tree breadth-first from the root copy.

    Requires root-augmented LP values. Each subset includes each child-edge
    copy independently with probability ``x_pair/x_parent``. Growth stops at
    the leaf level or when the node budget is hit (tree returned truncated;
    it is an error if no leaf was reached at all).
    """
    if ROOT_EDGE not in sol.x:
        raise ValueError("solution lacks the auxiliary root edge; augment first")
    if d < 1:
        raise ValueError("d must be >= 1")
    g = li.inst.graph
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0xD3C0]))
    tree = DecompositionTree(d=d, num_layers=li.num_layers)
    tree.add_node(KIND_EDGE, 1, -1, ROOT_EDGE)

    frontier = [0]
    level = 1
    while frontier and level < tree.leaf_level:
        next_frontier: list[int] = []
        expanded_all = True
        for node in frontier:
            uv = tree.edge_of[node]
            head = li.inst.root if uv == ROOT_EDGE else g.head(uv)
            if head in li.inst.terminals:
                continue
            child_edges = list(g.out_edges[head])
            x_uv = sol.x.get(uv, 0.0)
            probs = np.array(
                [min(1.0, max(0.0, sol.x_pair.get((uv, vw), 0.0) / x_uv))
                 if x_uv > 0.0 else 0.0
                 for vw in child_edges])
            if tree.num_nodes + d + d * len(child_edges) > budget:
                tree.truncated = True
                expanded_all = False
                break
            include = rng.random((d, len(child_edges))) < probs if child_edges \
                else np.zeros((d, 0), dtype=bool)
            for j in range(d):
                snode = tree.add_node(KIND_SUBSET, level + 1, node, -2, subset_index=j)
                for ci in np.nonzero(include[j])[0]:
                    vw = child_edges[int(ci)]
                    cnode = tree.add_node(KIND_EDGE, level + 2, snode, vw)
                    next_frontier.append(cnode)
                    if g.head(vw) in li.inst.terminals:
                        tree.groups.setdefault(g.head(vw), []).append(cnode)
        if expanded_all:
            tree.complete_levels = min(level + 2, tree.leaf_level)
        frontier = next_frontier
        level += 2
        if tree.truncated:
            break
    if not tree.truncated:
        tree.complete_levels = tree.leaf_level
    if tree.truncated and not tree.groups:
        raise TreeBudgetError(
            f"budget {budget} exhausted before any leaf layer was reached")
    return tree


def assign_capacities(tree: DecompositionTree, d: int | None = None) -> DecompositionTree:
    """Set the ``d^-(level+1)`` capacity on both hops of every block."""
    if d is None:
        d = tree.d
    elif d != tree.d:
        raise ValueError("capacity schedule must use the growth branching d")
    dd = float(d)
    xhat = []
    for node in range(tree.num_nodes):
        lvl = tree.tree_level[node]
        exponent = (lvl - 1) // 2 if tree.kind[node] == KIND_EDGE else lvl // 2
        xhat.append(dd ** -exponent)
    tree.xhat = xhat
    return tree


def grow_full(sol: StrengthenedLpSolution, li: LayeredInstance, d: int,
              seed: int, budget: int = 2_000_000) -> DecompositionTree:
    return assign_capacities(grow_tree(sol, li, d, seed, budget))


def assign_pseudo_flow(tree: DecompositionTree, sol: StrengthenedLpSolution,
                       li: LayeredInstance, terminal: int, seed: int,
                       tau: float = RI_TAU) -> DecompositionTree:
    """Push one terminal's flow down the grown tree.

    The root copy carries flow 1. At each positive-flow edge-copy node, every
    subset marks at most one of its included children, drawn from the
    categorical law with weights ``f_pair/x_pair``; the marked child receives
    flow equal to its capacity. Conditioned on the parent's positive flow,
    the overall chance a given child copy is marked is ``f_pair/x_parent``.
    When the included children's weights sum above one (possible since the
    inclusion draw is independent of the flow), the law is renormalized and
    the event is counted in ``tree.overshoot``.
    """
    if tree.xhat is None:
        raise ValueError("assign capacities before flow")
    g = li.inst.graph
    rng = random.Random(hash((seed, terminal, 0xF10)))
    flows: dict[int, float] = {0: 1.0}
    tree.overshoot.setdefault(terminal, 0)
    stack = [0]
    while stack:
        node = stack.pop()
        uv = tree.edge_of[node]
        f_uv = sol.f.get((terminal, uv), 0.0)
        x_uv = sol.x.get(uv, 0.0)
        if f_uv <= tau:
            raise RelativeIntegralityError(
                f"node carries flow but edge {uv} has zero flow for terminal {terminal}")
        if abs(f_uv - x_uv) > tau:
            raise RelativeIntegralityError(
                f"edge {uv}: flow {f_uv} is neither 0 nor capacity {x_uv}")
        for snode in tree.children[node]:
            members = tree.children[snode]
            weights = []
            for cnode in members:
                vw = tree.edge_of[cnode]
                xp = sol.x_pair.get((uv, vw), 0.0)
                fp = sol.f_pair.get((terminal, uv, vw), 0.0)
                weights.append(min(1.0, fp / xp) if xp > 0.0 else 0.0)
            total = sum(weights)
            if total > 1.0 + FEAS_EPS:
                tree.overshoot[terminal] += 1
                weights = [w / total for w in weights]
                total = 1.0
            u = rng.random()
            marked = -1
            acc = 0.0
            for i, w in enumerate(weights):
                acc += w
                if u < acc:
                    marked = i
                    break
            if marked >= 0:
                cnode = members[marked]
                flows[snode] = tree.xhat[snode]
                flows[cnode] = tree.xhat[cnode]
                if tree.tree_level[cnode] < tree.leaf_level:
                    head = g.head(tree.edge_of[cnode])
                    if head not in li.inst.terminals:
                        stack.append(cnode)
    tree.flows[terminal] = flows
    return tree


@dataclass(frozen=True)
class PreflowReport:
    is_preflow: bool
    value: float
    violations: tuple[str, ...]


def verify_preflow(tree: DecompositionTree, terminal: int) -> PreflowReport:
    """Check capacity and non-negative net-flow, and total flow into the group.

    Both structural properties hold by construction of the assignment; the
    checks are assertions over the realized tree, and the value is the flow
    arriving at the terminal's leaf group.
    """
    violations: list[str] = []
    flows = tree.flows.get(terminal, {})
    if tree.xhat is None:
        raise ValueError("capacities not assigned")
    for node, fv in flows.items():
        if fv > tree.xhat[node] + FEAS_EPS:
            violations.append(f"capacity exceeded at node {node}")
    for node in range(tree.num_nodes):
        inflow = 1.0 if node == 0 else flows.get(node, 0.0)
        outflow = sum(flows.get(c, 0.0) for c in tree.children[node])
        if node != 0 and outflow > inflow + FEAS_EPS:
            violations.append(f"negative net flow at node {node}")
    value = sum(flows.get(leaf, 0.0) for leaf in tree.groups.get(terminal, []))
    return PreflowReport(not violations, value, tuple(violations))


@dataclass(frozen=True)
class EdgeDistortion:
    edge: int
    level: int
    x: float
    copies: int
    capacity_sum: float            # copies * d^-level
    expected_copies: float         # d^level * x
    lower_threshold: float
    upper_threshold: float
    lower_ok: bool
    upper_ok: bool
    flow_copies: dict[int, int] = field(hash=False, default_factory=dict)
    flow_thresholds: dict[int, float] = field(hash=False, default_factory=dict)


@dataclass(frozen=True)
class DistortionReport:
    d: int
    delta: float
    complete_levels: int
    truncated: bool
    edges: tuple[EdgeDistortion, ...]

    def all_within_bounds(self) -> bool:
        return all(e.lower_ok and e.upper_ok for e in self.edges)


def _damping(level: int, delta: float, sign: float) -> float:
    out = 1.0
    for i in range(1, level + 1):
        out *= 1.0 + sign * delta / (2.0 ** i)
    return out


def measure_distortion(tree: DecompositionTree, sol: StrengthenedLpSolution,
                       li: LayeredInstance, delta: float = 0.25) -> DistortionReport:
    """Copy counts per original edge versus the two-sided capacity envelope
    ``x/2 <= copies * d^-level <= 2x``. Only fully grown levels count.

    The damped thresholds (the per-level concentration targets) are reported
    for reference; the pass/fail envelope is the two-sided bound.
    """
    d = tree.d
    counts: dict[int, int] = {}
    qcounts: dict[tuple[int, int], int] = {}
    for node in range(tree.num_nodes):
        if tree.kind[node] != KIND_EDGE or tree.tree_level[node] > tree.complete_levels:
            continue
        e = tree.edge_of[node]
        counts[e] = counts.get(e, 0) + 1
        for t, flows in tree.flows.items():
            if flows.get(node, 0.0) > 0.0:
                qcounts[(t, e)] = qcounts.get((t, e), 0) + 1

    max_level = (tree.complete_levels - 1) // 2
    records = []
    edges = [ROOT_EDGE] + [e for e in sorted(sol.x) if e != ROOT_EDGE]
    for e in edges:
        level = 0 if e == ROOT_EDGE else li.edge_level(e)
        if level > max_level:
            continue
        x = sol.x.get(e, 0.0)
        if x <= 0.0 and counts.get(e, 0) == 0:
            continue
        z = counts.get(e, 0)
        cap_sum = z * float(d) ** -level
        records.append(EdgeDistortion(
            edge=e,
            level=level,
            x=x,
            copies=z,
            capacity_sum=cap_sum,
            expected_copies=float(d) ** level * x,
            lower_threshold=_damping(level, delta, -1.0) * float(d) ** level * x,
            upper_threshold=_damping(level, delta, +1.0) * float(d) ** level * x,
            lower_ok=cap_sum >= x / 2.0 - FEAS_EPS,
            upper_ok=cap_sum <= 2.0 * x + FEAS_EPS,
            flow_copies={t: qcounts.get((t, e), 0) for t in sorted(tree.flows)},
            flow_thresholds={t: _damping(level, delta, -1.0) * float(d) ** level
                             * sol.f.get((t, e), 0.0)
                             for t in sorted(tree.flows)},
        ))
    return DistortionReport(d, delta, tree.complete_levels, tree.truncated,
                            tuple(records))


def verify_structure(tree: DecompositionTree) -> list[str]:
    """All structural tree invariants; empty list when every one holds."""
    bad: list[str] = []
    if tree.num_nodes == 0 or tree.kind[0] != KIND_EDGE or tree.tree_level[0] != 1:
        bad.append("missing root copy at level 1")
        return bad
    for node in range(tree.num_nodes):
        lvl = tree.tree_level[node]
        if tree.kind[node] == KIND_EDGE and lvl % 2 == 0:
            bad.append(f"edge-copy node {node} at even level {lvl}")
        if tree.kind[node] == KIND_SUBSET and lvl % 2 == 1:
            bad.append(f"subset node {node} at odd level {lvl}")
        if tree.kind[node] == KIND_EDGE:
            kids = tree.children[node]
            if kids and len(kids) != tree.d:
                bad.append(f"edge-copy node {node} has {len(kids)} subsets, not d")
            if any(tree.kind[c] != KIND_SUBSET for c in kids):
                bad.append(f"edge-copy node {node} has a non-subset child")
        else:
            seen: set[int] = set()
            for c in tree.children[node]:
                if tree.kind[c] != KIND_EDGE:
                    bad.append(f"subset node {node} has a non-edge-copy child")
                e = tree.edge_of[c]
                if e in seen:
                    bad.append(f"subset node {node} holds edge {e} twice")
                seen.add(e)
        if tree.xhat is not None and tree.kind[node] == KIND_EDGE and tree.children[node]:
            total = sum(tree.xhat[c] for c in tree.children[node])
            if abs(total - tree.xhat[node]) > 1e-12 * max(1.0, tree.xhat[node]):
                bad.append(f"capacity does not telescope at node {node}")
    return bad


@dataclass
class GstInstance:
    """Group Steiner instance on an explicit tree.

    ``xhat[node]`` and ``cost[node]`` describe the node's incoming edge;
    subset hops cost nothing, edge-copy hops inherit the original edge cost.
    """

    children: list[list[int]]
    root: int
    xhat: list[float]
    cost: list[float]
    groups: dict[int, list[int]]

    def fractional_cost(self) -> float:
        return sum(x * c for x, c in zip(self.xhat, self.cost))


def tree_dump(tree: DecompositionTree) -> str:
    """Line-oriented dump: node id, kind, level, parent, capacity, flows."""
    terminals = sorted(tree.flows)
    header = "# node kind level parent xhat" + "".join(f" f[{t}]" for t in terminals)
    lines = [header]
    for node in range(tree.num_nodes):
        kind = "E" if tree.kind[node] == KIND_EDGE else "S"
        cap = tree.xhat[node] if tree.xhat is not None else float("nan")
        row = (f"{node} {kind}{tree.edge_of[node] if kind == 'E' else ''} "
               f"{tree.tree_level[node]} {tree.parent[node]} {cap!r}")
        for t in terminals:
            row += f" {tree.flows[t].get(node, 0.0)!r}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def export_gst_instance(tree: DecompositionTree, li: LayeredInstance) -> GstInstance:
    if tree.xhat is None:
        raise ValueError("assign capacities before exporting")
    g = li.inst.graph
    cost = []
    for node in range(tree.num_nodes):
        e = tree.edge_of[node]
        if tree.kind[node] == KIND_SUBSET or e == ROOT_EDGE:
            cost.append(0.0)
        else:
            cost.append(g.cost(e))
    return GstInstance(
        children=[list(c) for c in tree.children],
        root=0,
        xhat=list(tree.xhat),
        cost=cost,
        groups={t: list(v) for t, v in tree.groups.items()},
    )
