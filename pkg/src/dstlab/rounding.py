"""Randomized rounding of layered LP solutions.

``decompose_and_round`` unfolds and rounds the decomposition tree on the
fly: each active edge copy spawns ``d`` random child subsets, each subset
is kept with probability ``1/d``, and kept subsets feed the next level's
active set plus the output subgraph. The lazy variant samples how many
subsets are kept first and only materializes those, which leaves the joint
output distribution unchanged (discarded subsets never influence the
output) while supporting astronomically large ``d``.

The main pipeline layers the instance, solves the strengthened LP, gates
on relative integrality, rounds repeatedly, and lifts the union back to
the original graph.

Randomness protocol: every subset's content stream and every copy's
mark/keep stream is derived from (seed, round, level, copy index, subset
index), so runs reproduce exactly and the naive and lazy variants follow
identical sample paths at d=1.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from dstlab.graph import DstInstance, SolutionSubgraph, prune_to_minimal, validate_instance
from dstlab.layering import LayeredInstance, build_layered, choose_num_layers, lift_solution
from dstlab.lp import (
    ROOT_EDGE,
    RelativeIntegralityError,
    StrengthenedLpSolution,
    augment_root_variables,
    check_relatively_integral,
    solve_strengthened,
)

_MARK_STREAM = -1


class MaterializationBudgetError(RuntimeError):
    """d * |E| too large to expand every subset explicitly."""


class FeasibilityNotAchievedError(RuntimeError):
    """Some terminal stayed unreached within the round budget."""


class GkrRatioError(ValueError):
    """Capacity ratio above one: the tree solution is not monotone."""


def rounds_for_terminals(k: int, q: int = 100, log_base: float = 2.0) -> int:
    """Round budget q * log^2 k (base-2 by default), at least 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lg = math.log(k, log_base) if k > 1 else 0.0
    return max(1, math.ceil(q * lg * lg))


@dataclass(frozen=True)
class RoundingConfig:
    d: int
    rounds: int | None = None           # default: rounds_for_terminals(k)
    seed: int = 0
    max_extra_rounds: int | None = None  # default: 10x rounds
    lazy: bool = True
    log_base: float = 2.0
    materialize_budget: int = 5_000_000

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.rounds is not None and self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass
class ActiveSetTrace:
    """Multiset of active edge copies per level; level 0 is the root copy."""

    levels: list[Counter] = field(default_factory=list)

    def copies(self, level: int, edge: int) -> int:
        return self.levels[level].get(edge, 0) if level < len(self.levels) else 0

    def total(self, level: int) -> int:
        return sum(self.levels[level].values()) if level < len(self.levels) else 0


def _rng(*key: int) -> random.Random:
    return random.Random(hash(key))


class _Rounder:
    """Shared machinery for the two decompose-and-round variants."""

    def __init__(self, li: LayeredInstance, sol: StrengthenedLpSolution):
        if ROOT_EDGE not in sol.x:
            raise ValueError("solution lacks the auxiliary root edge; augment first")
        g = li.inst.graph
        self.li = li
        self.num_levels = li.num_layers  # edge levels 0..L-1
        # Per parent edge: (child edge, inclusion probability) with prob > 0.
        self.table: dict[int, list[tuple[int, float]]] = {}
        for uv in list(sol.x):
            head = li.inst.root if uv == ROOT_EDGE else g.head(uv)
            if head in li.inst.terminals:
                self.table[uv] = []
                continue
            x_uv = sol.x.get(uv, 0.0)
            rows = []
            if x_uv > 0.0:
                for vw in g.out_edges[head]:
                    p = min(1.0, sol.x_pair.get((uv, vw), 0.0) / x_uv)
                    if p > 0.0:
                        rows.append((vw, p))
            self.table[uv] = rows

    def run(self, d: int, seed: int, round_index: int,
            lazy: bool) -> tuple[set[int], ActiveSetTrace]:
        trace = ActiveSetTrace([Counter({ROOT_EDGE: 1})])
        chosen: set[int] = set()
        active: list[int] = [ROOT_EDGE]
        binom = (np.random.default_rng(
            np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF,
                                    round_index & 0xFFFFFFFF, 0x1A2])) if lazy else None)
        inv_d = 1.0 / d
        for level in range(self.num_levels - 1):
            nxt: list[int] = []
            for idx, uv in enumerate(active):
                rows = self.table.get(uv, [])
                if lazy:
                    # Only the kept subsets exist; contents of discarded
                    # subsets would never reach the output anyway.
                    for j in range(int(binom.binomial(d, inv_d))):
                        content = _rng(seed, round_index, level, idx, j)
                        subset = [vw for vw, p in rows if content.random() < p]
                        nxt.extend(subset)
                        chosen.update(subset)
                else:
                    mark = _rng(seed, round_index, level, idx, _MARK_STREAM)
                    for j in range(d):
                        content = _rng(seed, round_index, level, idx, j)
                        subset = [vw for vw, p in rows if content.random() < p]
                        if mark.random() < inv_d:
                            nxt.extend(subset)
                            chosen.update(subset)
            trace.levels.append(Counter(nxt))
            active = nxt
            if not active:
                break
        while len(trace.levels) < self.num_levels:
            trace.levels.append(Counter())
        return chosen, trace


def decompose_and_round_naive(li: LayeredInstance, sol: StrengthenedLpSolution,
                              cfg: RoundingConfig, round_index: int = 0
                              ) -> tuple[SolutionSubgraph, ActiveSetTrace]:
    """Explicitly materialize and mark all d subsets of every active copy."""
    if cfg.d * (li.inst.graph.m + 1) > cfg.materialize_budget:
        raise MaterializationBudgetError(
            f"d*|E| = {cfg.d * (li.inst.graph.m + 1)} exceeds the materialization budget")
    chosen, trace = _Rounder(li, sol).run(cfg.d, cfg.seed, round_index, lazy=False)
    h = SolutionSubgraph.build(li.inst.graph, li.inst.root, li.inst.terminals, chosen)
    return h, trace


def decompose_and_round_lazy(li: LayeredInstance, sol: StrengthenedLpSolution,
                             cfg: RoundingConfig, round_index: int = 0
                             ) -> tuple[SolutionSubgraph, ActiveSetTrace]:
    """Draw the number of kept subsets per copy (Binomial(d, 1/d)) and only
    materialize those; unmarked subsets never affect the output."""
    chosen, trace = _Rounder(li, sol).run(cfg.d, cfg.seed, round_index, lazy=True)
    h = SolutionSubgraph.build(li.inst.graph, li.inst.root, li.inst.terminals, chosen)
    return h, trace


def decompose_and_round(li: LayeredInstance, sol: StrengthenedLpSolution,
                        cfg: RoundingConfig, round_index: int = 0
                        ) -> tuple[SolutionSubgraph, ActiveSetTrace]:
    fn = decompose_and_round_lazy if cfg.lazy else decompose_and_round_naive
    return fn(li, sol, cfg, round_index)


@dataclass
class MainReport:
    rounds: int
    extra_rounds: int
    lp_objective: float
    ri_holds: bool
    ri_witnesses: int
    per_round_costs: list[float]
    union_cost_layered: float
    lifted_cost: float
    final_cost: float
    reached_terminals: int
    num_terminals: int
    success: bool


@dataclass
class MainResult:
    solution: SolutionSubgraph        # on the original graph, pruned
    layered_solution: SolutionSubgraph
    layered: LayeredInstance
    lp_solution: StrengthenedLpSolution
    report: MainReport


def main_algorithm(inst: DstInstance, cfg: RoundingConfig,
                   sol: StrengthenedLpSolution | None = None,
                   li: LayeredInstance | None = None,
                   force_non_ri: bool = False) -> MainResult:
    """Full pipeline: layer, solve the strengthened LP, gate on relative
    integrality, round R times, union, lift, prune.

    A precomputed layered instance and/or LP solution can be supplied (for
    externally produced fractional solutions). If some terminal is still
    unreached after the R budgeted rounds, up to ``max_extra_rounds``
    additional rounds run one at a time until every terminal connects.
    """
    problems = validate_instance(inst)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))
    if li is None:
        li = build_layered(inst, choose_num_layers(inst.k))
    if sol is None:
        sol = solve_strengthened(li)
    ri = check_relatively_integral(sol)
    if not ri.holds and not force_non_ri:
        raise RelativeIntegralityError(
            f"{len(ri.witnesses)} flow values are fractional relative to their "
            f"capacities (first: t={ri.witnesses[0][0]} e={ri.witnesses[0][1]})")
    aug = sol if ROOT_EDGE in sol.x else augment_root_variables(sol, li)

    rounds = cfg.rounds if cfg.rounds is not None else rounds_for_terminals(
        inst.k, log_base=cfg.log_base)
    max_extra = cfg.max_extra_rounds if cfg.max_extra_rounds is not None else 10 * rounds
    rounder = _Rounder(li, aug)
    union: set[int] = set()
    costs = []
    g = li.inst.graph
    for i in range(rounds):
        chosen, _ = rounder.run(cfg.d, cfg.seed, i, cfg.lazy)
        union |= chosen
        costs.append(g.total_cost(chosen))

    def assemble(edge_ids):
        return SolutionSubgraph.build(g, li.inst.root, li.inst.terminals, edge_ids)

    layered_solution = assemble(union)
    extra = 0
    while not layered_solution.is_feasible_for(li.inst) and extra < max_extra:
        chosen, _ = rounder.run(cfg.d, cfg.seed, rounds + extra, cfg.lazy)
        union |= chosen
        extra += 1
        layered_solution = assemble(union)
    if not layered_solution.is_feasible_for(li.inst):
        missing = sorted(set(li.inst.terminals) - layered_solution.reachable_terminals)
        raise FeasibilityNotAchievedError(
            f"terminals unreached after {rounds}+{extra} rounds: {missing}")

    lifted = lift_solution(li, layered_solution)
    pruned = prune_to_minimal(li.original, lifted)
    report = MainReport(
        rounds=rounds,
        extra_rounds=extra,
        lp_objective=sol.objective,
        ri_holds=ri.holds,
        ri_witnesses=len(ri.witnesses),
        per_round_costs=costs,
        union_cost_layered=layered_solution.cost,
        lifted_cost=lifted.cost,
        final_cost=pruned.cost,
        reached_terminals=len(pruned.reachable_terminals),
        num_terminals=inst.k,
        success=True,
    )
    return MainResult(pruned, layered_solution, li, sol, report)


def gkr_round(children: list[list[int]], root: int, xhat: list[float],
              seed: int) -> set[int]:
    """Level-by-level Markov selection on an explicit capacitated tree.

    A child is kept with probability ``xhat[child]/xhat[parent]`` given its
    parent was kept; the returned set holds the kept nodes (equivalently,
    their incoming edges). Ratios above one are an input error.
    """
    rng = random.Random(hash((seed, 0x6B2)))
    selected: set[int] = set()
    frontier = [root]
    while frontier:
        nxt = []
        for node in frontier:
            cap = xhat[node]
            for child in children[node]:
                ratio = xhat[child] / cap if cap > 0.0 else 0.0
                if ratio > 1.0 + 1e-9:
                    raise GkrRatioError(
                        f"capacity ratio {ratio} > 1 at node {child}")
                if rng.random() < ratio:
                    selected.add(child)
                    nxt.append(child)
        frontier = nxt
    return selected


def covered_groups(selected: set[int], groups: dict[int, list[int]]) -> set[int]:
    return {t for t, leaves in groups.items() if any(v in selected for v in leaves)}


@dataclass
class EquivalenceReport:
    trials: int
    d: int
    per_edge: dict[int, tuple[float, float, float]]     # edge -> (p_naive, p_lazy, z)
    per_outcome: dict[tuple, tuple[float, float, float]]
    max_z: float
    passed: bool


def _two_sample_z(c1: int, c2: int, n: int) -> float:
    p1, p2 = c1 / n, c2 / n
    pooled = (c1 + c2) / (2 * n)
    if pooled in (0.0, 1.0):
        return 0.0 if c1 == c2 else math.inf
    se = math.sqrt(pooled * (1.0 - pooled) * (2.0 / n))
    return abs(p1 - p2) / se


def equivalence_test(li: LayeredInstance, sol: StrengthenedLpSolution,
                     d_small: int, trials: int, seed: int = 0,
                     z_limit: float = 4.0) -> EquivalenceReport:
    """Compare the two variants' output laws on a small instance.

    Runs each variant ``trials`` times and compares per-edge inclusion
    frequencies and the joint distribution over realized edge sets; any gap
    beyond ``z_limit`` standard errors is flagged.
    """
    if li.inst.graph.m > 16:
        raise ValueError("equivalence test is meant for tiny instances")
    aug = sol if ROOT_EDGE in sol.x else augment_root_variables(sol, li)
    rounder = _Rounder(li, aug)
    edge_counts = [Counter(), Counter()]
    outcome_counts = [Counter(), Counter()]
    for v, lazy in enumerate([False, True]):
        for i in range(trials):
            chosen, _ = rounder.run(d_small, hash((seed, v, i)), 0, lazy)
            edge_counts[v].update(chosen)
            outcome_counts[v][tuple(sorted(chosen))] += 1
    per_edge = {}
    max_z = 0.0
    for e in range(li.inst.graph.m):
        c1, c2 = edge_counts[0][e], edge_counts[1][e]
        z = _two_sample_z(c1, c2, trials)
        max_z = max(max_z, z)
        if c1 or c2:
            per_edge[e] = (c1 / trials, c2 / trials, z)
    per_outcome = {}
    for outcome in set(outcome_counts[0]) | set(outcome_counts[1]):
        c1, c2 = outcome_counts[0][outcome], outcome_counts[1][outcome]
        z = _two_sample_z(c1, c2, trials)
        max_z = max(max_z, z)
        per_outcome[outcome] = (c1 / trials, c2 / trials, z)
    return EquivalenceReport(trials, d_small, per_edge, per_outcome,
                             max_z, max_z < z_limit)
