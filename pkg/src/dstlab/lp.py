"""Flow LPs on layered instances.

Two formulations share the per-terminal unit-flow skeleton:

* the basic LP: capacities ``x_e`` supporting a unit root-to-terminal flow
  ``f^t_e`` for every terminal;
* the strengthened LP: adds pair variables ``x_{uv->vw}`` and
  ``f^t_{uv->vw}`` on consecutive edges, with the in-capacity split
  equality (the "star" constraint) forcing the capacity entering a vertex
  to exactly account for each outgoing edge's capacity.

Flow requirements are encoded as explicit conservation equalities, not cut
constraints, so downstream modules can reuse the ``f`` variables directly.
The solver behind :func:`solve_lp` is scipy's HiGHS; any solver honoring
the same contract can be swapped in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from dstlab.graph import max_flow_value
from dstlab.layering import LayeredInstance
from dstlab.tolerances import FEAS_EPS, RI_TAU

# Auxiliary level-0 edge standing in for the root during decomposition.
ROOT_EDGE = -1


class LpInfeasibleError(RuntimeError):
    pass


class LpUnboundedError(RuntimeError):
    pass


class RelativeIntegralityError(ValueError):
    """A per-terminal edge flow is neither zero nor the edge's capacity."""


@dataclass
class LpProgram:
    """Sparse LP container: bounds, equality/inequality rows, objective."""

    names: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)
    lb: list[float] = field(default_factory=list)
    ub: list[float | None] = field(default_factory=list)
    obj: dict[int, float] = field(default_factory=dict)
    eq_rows: list[tuple[dict[int, float], float]] = field(default_factory=list)
    le_rows: list[tuple[dict[int, float], float]] = field(default_factory=list)

    def add_var(self, name: str, lb: float = 0.0, ub: float | None = None,
                obj: float = 0.0) -> int:
        if name in self.index:
            raise ValueError(f"duplicate variable {name}")
        idx = len(self.names)
        self.names.append(name)
        self.index[name] = idx
        self.lb.append(lb)
        self.ub.append(ub)
        if obj:
            self.obj[idx] = obj
        return idx

    def add_eq(self, coeffs: dict[int, float], rhs: float):
        self.eq_rows.append((coeffs, rhs))

    def add_le(self, coeffs: dict[int, float], rhs: float):
        self.le_rows.append((coeffs, rhs))

    @property
    def num_vars(self) -> int:
        return len(self.names)


@dataclass
class LpSolution:
    program: LpProgram
    values: np.ndarray
    objective: float

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.program.index[name]])


def _rows_to_matrix(rows, num_vars):
    data, indices, indptr = [], [], [0]
    rhs = []
    for coeffs, b in rows:
        for idx, c in coeffs.items():
            indices.append(idx)
            data.append(c)
        indptr.append(len(indices))
        rhs.append(b)
    mat = csr_matrix((data, indices, indptr), shape=(len(rows), num_vars))
    return mat, np.array(rhs)


def solve_lp(p: LpProgram) -> LpSolution:
    """Minimize the objective; infeasible and unbounded are reported apart."""
    c = np.zeros(p.num_vars)
    for idx, v in p.obj.items():
        c[idx] = v
    bounds = list(zip(p.lb, p.ub))
    kwargs = {"bounds": bounds, "method": "highs"}
    if p.eq_rows:
        a_eq, b_eq = _rows_to_matrix(p.eq_rows, p.num_vars)
        kwargs.update(A_eq=a_eq, b_eq=b_eq)
    if p.le_rows:
        a_ub, b_ub = _rows_to_matrix(p.le_rows, p.num_vars)
        kwargs.update(A_ub=a_ub, b_ub=b_ub)
    res = linprog(c, **kwargs)
    if res.status == 2:
        raise LpInfeasibleError(res.message)
    if res.status == 3:
        raise LpUnboundedError(res.message)
    if not res.success:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return LpSolution(p, res.x, float(res.fun))


def _var_x(e: int) -> str:
    return f"x[{e}]"


def _var_xp(uv: int, vw: int) -> str:
    return f"xp[{uv}|{vw}]"


def _var_f(t: int, e: int) -> str:
    return f"f[{t}|{e}]"


def _var_fp(t: int, uv: int, vw: int) -> str:
    return f"fp[{t}|{uv}|{vw}]"


def consecutive_pairs(li: LayeredInstance) -> list[tuple[int, int]]:
    """All edge pairs (uv, vw) with head(uv) = tail(vw)."""
    g = li.inst.graph
    pairs = []
    for v in range(g.n):
        for uv in g.in_edges[v]:
            for vw in g.out_edges[v]:
                pairs.append((uv, vw))
    return pairs


def _add_unit_flow_constraints(p: LpProgram, li: LayeredInstance, t: int):
    g = li.inst.graph
    for v in range(g.n):
        coeffs: dict[int, float] = {}
        for e in g.in_edges[v]:
            coeffs[p.index[_var_f(t, e)]] = 1.0
        for e in g.out_edges[v]:
            coeffs[p.index[_var_f(t, e)]] = coeffs.get(p.index[_var_f(t, e)], 0.0) - 1.0
        if v == li.inst.root:
            continue
        p.add_eq(coeffs, 1.0 if v == t else 0.0)


def build_basic_lp(li: LayeredInstance) -> LpProgram:
    """Standard flow relaxation: min sum(c_e x_e) s.t. each terminal gets a
    unit flow with 0 <= f^t_e <= x_e <= 1."""
    g = li.inst.graph
    p = LpProgram()
    for e in range(g.m):
        p.add_var(_var_x(e), 0.0, 1.0, obj=g.cost(e))
    for t in sorted(li.inst.terminals):
        for e in range(g.m):
            p.add_var(_var_f(t, e), 0.0, None)
    for t in sorted(li.inst.terminals):
        _add_unit_flow_constraints(p, li, t)
        for e in range(g.m):
            p.add_le({p.index[_var_f(t, e)]: 1.0, p.index[_var_x(e)]: -1.0}, 0.0)
    return p


def build_strengthened_lp(li: LayeredInstance) -> LpProgram:
    """Basic LP plus pairwise capacity/flow consistency on consecutive edges.

    The in-split equality and flow splits are skipped where a vertex has no
    in-edges (the root; its level-0 pairing is added after solving) and the
    out-split is skipped at an edge's own sink terminal, where flow ends.
    """
    g = li.inst.graph
    root = li.inst.root
    terminals = sorted(li.inst.terminals)
    pairs = consecutive_pairs(li)
    p = build_basic_lp(li)

    for uv, vw in pairs:
        p.add_var(_var_xp(uv, vw), 0.0, None)
    for t in terminals:
        for uv, vw in pairs:
            p.add_var(_var_fp(t, uv, vw), 0.0, None)

    by_head: dict[int, list[tuple[int, int]]] = {}
    by_tail: dict[int, list[tuple[int, int]]] = {}
    for uv, vw in pairs:
        by_head.setdefault(vw, []).append((uv, vw))
        by_tail.setdefault(uv, []).append((uv, vw))

    for vw in range(g.m):
        if g.tail(vw) == root:
            continue
        coeffs = {p.index[_var_xp(uv, w)]: 1.0 for uv, w in by_head.get(vw, [])}
        coeffs[p.index[_var_x(vw)]] = coeffs.get(p.index[_var_x(vw)], 0.0) - 1.0
        p.add_eq(coeffs, 0.0)

    for uv, vw in pairs:
        xp = p.index[_var_xp(uv, vw)]
        p.add_le({xp: 1.0, p.index[_var_x(uv)]: -1.0}, 0.0)
        p.add_le({xp: 1.0, p.index[_var_x(vw)]: -1.0}, 0.0)

    for t in terminals:
        for vw in range(g.m):
            if g.tail(vw) == root:
                continue
            coeffs = {p.index[_var_fp(t, uv, w)]: 1.0 for uv, w in by_head.get(vw, [])}
            fvw = p.index[_var_f(t, vw)]
            coeffs[fvw] = coeffs.get(fvw, 0.0) - 1.0
            p.add_eq(coeffs, 0.0)
        for uv in range(g.m):
            if g.head(uv) == t or not g.out_edges[g.head(uv)]:
                continue
            coeffs = {p.index[_var_fp(t, u, vw)]: 1.0 for u, vw in by_tail.get(uv, [])}
            fuv = p.index[_var_f(t, uv)]
            coeffs[fuv] = coeffs.get(fuv, 0.0) - 1.0
            p.add_eq(coeffs, 0.0)
        for uv, vw in pairs:
            fp = p.index[_var_fp(t, uv, vw)]
            p.add_le({fp: 1.0, p.index[_var_f(t, uv)]: -1.0}, 0.0)
            p.add_le({fp: 1.0, p.index[_var_f(t, vw)]: -1.0}, 0.0)
            p.add_le({fp: 1.0, p.index[_var_xp(uv, vw)]: -1.0}, 0.0)
    return p


@dataclass(frozen=True)
class StrengthenedLpSolution:
    """Values of the strengthened LP (possibly root-augmented).

    Keys: ``x[edge]``, ``x_pair[(uv, vw)]``, ``f[(t, edge)]``,
    ``f_pair[(t, uv, vw)]``. The auxiliary root edge uses id ``ROOT_EDGE``.
    """

    x: dict[int, float] = field(hash=False)
    x_pair: dict[tuple[int, int], float] = field(hash=False)
    f: dict[tuple[int, int], float] = field(hash=False)
    f_pair: dict[tuple[int, int, int], float] = field(hash=False)
    objective: float = 0.0

    def terminals(self) -> list[int]:
        return sorted({t for t, _ in self.f})

    def star_residual(self, li: LayeredInstance) -> float:
        """Largest violation of the in-capacity split equality."""
        g = li.inst.graph
        worst = 0.0
        sums: dict[int, float] = {}
        for (uv, vw), val in self.x_pair.items():
            if uv == ROOT_EDGE:
                continue
            sums[vw] = sums.get(vw, 0.0) + val
        for vw in range(g.m):
            if g.tail(vw) == li.inst.root:
                continue
            worst = max(worst, abs(sums.get(vw, 0.0) - self.x.get(vw, 0.0)))
        return worst

    def to_json(self) -> str:
        doc = {
            "x": {str(e): v for e, v in sorted(self.x.items())},
            "x_pair": {f"{uv}|{vw}": v for (uv, vw), v in sorted(self.x_pair.items())},
            "f": {f"{t}|{e}": v for (t, e), v in sorted(self.f.items())},
            "f_pair": {f"{t}|{uv}|{vw}": v
                       for (t, uv, vw), v in sorted(self.f_pair.items())},
            "objective": self.objective,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "StrengthenedLpSolution":
        doc = json.loads(text)

        def split(key: str) -> list[int]:
            return [int(w) for w in key.split("|")]

        return StrengthenedLpSolution(
            x={int(e): float(v) for e, v in doc.get("x", {}).items()},
            x_pair={tuple(split(k)): float(v) for k, v in doc.get("x_pair", {}).items()},
            f={tuple(split(k)): float(v) for k, v in doc.get("f", {}).items()},
            f_pair={tuple(split(k)): float(v) for k, v in doc.get("f_pair", {}).items()},
            objective=float(doc.get("objective", 0.0)),
        )


def _clip(v: float) -> float:
    return 0.0 if v < 0.0 else float(v)


def extract_strengthened(sol: LpSolution, li: LayeredInstance) -> StrengthenedLpSolution:
    g = li.inst.graph
    terminals = sorted(li.inst.terminals)
    pairs = consecutive_pairs(li)
    return StrengthenedLpSolution(
        x={e: _clip(sol[_var_x(e)]) for e in range(g.m)},
        x_pair={(uv, vw): _clip(sol[_var_xp(uv, vw)]) for uv, vw in pairs},
        f={(t, e): _clip(sol[_var_f(t, e)]) for t in terminals for e in range(g.m)},
        f_pair={(t, uv, vw): _clip(sol[_var_fp(t, uv, vw)])
                for t in terminals for uv, vw in pairs},
        objective=sol.objective,
    )


def solve_strengthened(li: LayeredInstance) -> StrengthenedLpSolution:
    return extract_strengthened(solve_lp(build_strengthened_lp(li)), li)


def solve_basic(li: LayeredInstance) -> tuple[float, dict[int, float], dict[tuple[int, int], float]]:
    """Returns (objective, x values, f values) of the basic LP."""
    g = li.inst.graph
    sol = solve_lp(build_basic_lp(li))
    x = {e: _clip(sol[_var_x(e)]) for e in range(g.m)}
    f = {(t, e): _clip(sol[_var_f(t, e)])
         for t in sorted(li.inst.terminals) for e in range(g.m)}
    return sol.objective, x, f


@dataclass(frozen=True)
class RelativeIntegrality:
    holds: bool
    witnesses: tuple[tuple[int, int, float, float], ...]


def check_relatively_integral(sol: StrengthenedLpSolution,
                              tau: float = RI_TAU) -> RelativeIntegrality:
    """Check that every per-terminal edge flow is 0 or the edge's capacity.

    Reads only x and f, so the verdict is invariant under cost scaling.
    Witnesses list every (terminal, edge, f, x) violation.
    """
    witnesses = []
    for (t, e), fv in sorted(sol.f.items()):
        xv = sol.x.get(e, 0.0)
        if fv > tau and abs(fv - xv) > tau:
            witnesses.append((t, e, fv, xv))
    return RelativeIntegrality(not witnesses, tuple(witnesses))


@dataclass(frozen=True)
class PruneResult:
    solution: StrengthenedLpSolution
    residual_flow: dict[int, float] = field(hash=False)
    removed_edges: frozenset[int] = frozenset()


def prune_small_capacities(sol: StrengthenedLpSolution, li: LayeredInstance,
                           n: int | None = None) -> PruneResult:
    """Drop edges with capacity below 1/n^2 and pair values below 1/n^4.

    Removing the small edges costs each root-terminal cut at most
    |E|/n^2 <= 1/2 of its capacity, so every terminal still receives flow
    value at least 1/2; the per-terminal residual max flow is returned so
    callers can verify.
    """
    g = li.inst.graph
    if n is None:
        n = g.n
    edge_cut = 1.0 / (n * n)
    pair_cut = edge_cut * edge_cut
    removed = {e for e, v in sol.x.items() if e != ROOT_EDGE and v < edge_cut}
    x = {e: v for e, v in sol.x.items() if e not in removed}
    f = {(t, e): (0.0 if e in removed else v) for (t, e), v in sol.f.items()}
    x_pair = {}
    for (uv, vw), v in sol.x_pair.items():
        if uv in removed or vw in removed or v < pair_cut:
            continue
        x_pair[(uv, vw)] = v
    f_pair = {}
    for (t, uv, vw), v in sol.f_pair.items():
        if uv in removed or vw in removed:
            continue
        f_pair[(t, uv, vw)] = 0.0 if v < pair_cut else v
    pruned = StrengthenedLpSolution(x, x_pair, f, f_pair, sol.objective)
    caps = {e: v for e, v in x.items() if e != ROOT_EDGE}
    residual = {t: max_flow_value(g, caps, li.inst.root, t)
                for t in sorted(li.inst.terminals)}
    return PruneResult(pruned, residual, frozenset(removed))


def augment_root_variables(sol: StrengthenedLpSolution,
                           li: LayeredInstance) -> StrengthenedLpSolution:
    """Attach the auxiliary level-0 root edge.

    The root behaves as an always-chosen edge: capacity one, paired with
    each of its outgoing edges at that edge's own capacity, and carrying the
    full unit of every terminal's flow.
    """
    g = li.inst.graph
    root = li.inst.root
    x = dict(sol.x)
    x_pair = dict(sol.x_pair)
    f = dict(sol.f)
    f_pair = dict(sol.f_pair)
    x[ROOT_EDGE] = 1.0
    terminals = sorted(li.inst.terminals)
    for rv in g.out_edges[root]:
        x_pair[(ROOT_EDGE, rv)] = sol.x.get(rv, 0.0)
    for t in terminals:
        f[(t, ROOT_EDGE)] = 1.0
        for rv in g.out_edges[root]:
            f_pair[(t, ROOT_EDGE, rv)] = sol.f.get((t, rv), 0.0)
    return StrengthenedLpSolution(x, x_pair, f, f_pair, sol.objective)


def flow_conservation_residual(sol: StrengthenedLpSolution, li: LayeredInstance,
                               t: int) -> tuple[float, float]:
    """(max conservation residual at internal vertices, net inflow at t)."""
    g = li.inst.graph
    worst = 0.0
    sink_net = 0.0
    for v in range(g.n):
        net = sum(sol.f.get((t, e), 0.0) for e in g.in_edges[v]) \
            - sum(sol.f.get((t, e), 0.0) for e in g.out_edges[v])
        if v == t:
            sink_net = net
        elif v != li.inst.root:
            worst = max(worst, abs(net))
    return worst, sink_net


def assert_feasible(sol: StrengthenedLpSolution, li: LayeredInstance,
                    eps: float = FEAS_EPS) -> list[str]:
    """Constraint-residual report for a claimed-feasible solution."""
    problems = []
    if sol.star_residual(li) > eps:
        problems.append(f"star residual {sol.star_residual(li):.2e}")
    for t in sorted(li.inst.terminals):
        worst, sink = flow_conservation_residual(sol, li, t)
        if worst > eps:
            problems.append(f"terminal {t}: conservation residual {worst:.2e}")
        if abs(sink - 1.0) > eps:
            problems.append(f"terminal {t}: net inflow {sink}")
    for (t, e), fv in sol.f.items():
        if fv > sol.x.get(e, 0.0) + eps:
            problems.append(f"flow exceeds capacity at terminal {t} edge {e}")
            break
    return problems
