"""Experiment runner: wire generators, LPs, oracle, decomposition and
rounding into seeded, reproducible desk-scale checks.

Reports are deterministic functions of (spec, seed, code version): the
canonical JSON payload excludes wall-clock time, which is reported
separately.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from dstlab.decomposition import (
    assign_pseudo_flow,
    grow_full,
    measure_distortion,
    verify_preflow,
    verify_structure,
)
from dstlab.graph import DstInstance, validate_instance
from dstlab.generators import (
    gen_layered_random,
    gen_random_digraph,
    gen_relatively_integral,
)
from dstlab.layering import build_layered, choose_num_layers, native_layered
from dstlab.lp import (
    augment_root_variables,
    check_relatively_integral,
    solve_basic,
    solve_strengthened,
)
from dstlab.oracle import exact_dst
from dstlab.rounding import RoundingConfig, equivalence_test, main_algorithm
from dstlab.stp import read_stp
from dstlab.tolerances import OBJ_REL_EPS

KNOWN_CHECKS = ("sandwich", "ratio", "distortion", "preflow", "equivalence")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run: an instance source, pipeline knobs, and checks."""

    instance: dict
    checks: tuple[str, ...]
    seed: int = 0
    trials: int = 20
    d: int | None = None
    rounds: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = [c for c in self.checks if c not in KNOWN_CHECKS]
        if unknown:
            raise ValueError(f"unknown checks: {unknown}")
        if "file" not in self.instance and "generator" not in self.instance:
            raise ValueError("instance needs a 'file' or 'generator' key")

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentSpec":
        return ExperimentSpec(
            instance=doc["instance"],
            checks=tuple(doc.get("checks", [])),
            seed=int(doc.get("seed", 0)),
            trials=int(doc.get("trials", 20)),
            d=doc.get("d"),
            rounds=doc.get("rounds"),
        )

    @staticmethod
    def from_json(text: str) -> "ExperimentSpec":
        return ExperimentSpec.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "instance": self.instance,
            "checks": list(self.checks),
            "seed": self.seed,
            "trials": self.trials,
            "d": self.d,
            "rounds": self.rounds,
        }


@dataclass
class RunReport:
    schema: int
    seed: int
    spec: dict
    results: dict
    invariants: dict[str, bool] = field(default_factory=dict)
    wall_clock: float | None = None

    def payload(self) -> dict:
        # Wall-clock stays out of the canonical payload so identical
        # (spec, seed) runs serialize byte-identically.
        return {
            "schema": self.schema,
            "seed": self.seed,
            "spec": self.spec,
            "results": self.results,
            "invariants": self.invariants,
        }

    def to_json(self) -> str:
        return json.dumps(self.payload(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        rows = ["check,metric,value"]
        for check in sorted(self.results):
            data = self.results[check]
            if not isinstance(data, dict):
                continue
            for key in sorted(data):
                value = data[key]
                if isinstance(value, (int, float, bool)):
                    rows.append(f"{check},{key},{value}")
        for name in sorted(self.invariants):
            rows.append(f"invariants,{name},{self.invariants[name]}")
        return "\n".join(rows) + "\n"


def _resolve_instance(spec: ExperimentSpec):
    """Returns (instance, certified solution or None, native layered or None)."""
    src = spec.instance
    if "file" in src:
        inst, _ = read_stp(src["file"])
        return inst, None, None
    name = src["generator"]
    params = dict(src.get("params", {}))
    params.setdefault("seed", spec.seed)
    if name == "layered_random":
        params.setdefault("cost_range", (1.0, 5.0))
        params["cost_range"] = tuple(params["cost_range"])
        return gen_layered_random(**params), None, None
    if name == "random_digraph":
        if "cost_range" in params:
            params["cost_range"] = tuple(params["cost_range"])
        return gen_random_digraph(**params), None, None
    if name == "relatively_integral":
        if "cost_range" in params:
            params["cost_range"] = tuple(params["cost_range"])
        inst, sol = gen_relatively_integral(**params)
        return inst, sol, native_layered(inst)
    raise ValueError(f"unknown generator {name}")


def _layered_view(inst, certified_li):
    if certified_li is not None:
        return certified_li
    return build_layered(inst, choose_num_layers(inst.k))


def _stats(values: list[float]) -> dict:
    if not values:
        return {"count": 0}
    return {
        "count": len(values),
        "mean": sum(values) / len(values),
        "min": min(values),
        "max": max(values),
    }


def run_experiment(spec: ExperimentSpec) -> RunReport:
    started = time.monotonic()
    inst, certified_sol, certified_li = _resolve_instance(spec)
    problems = validate_instance(inst)
    if problems:
        raise ValueError("instance invalid: " + "; ".join(problems))
    results: dict = {
        "instance": {
            "n": inst.graph.n,
            "m": inst.graph.m,
            "k": inst.k,
            "certified_solution": certified_sol is not None,
        }
    }
    invariants: dict[str, bool] = {}

    li = None
    sol = None

    def ensure_layered():
        nonlocal li
        if li is None:
            li = _layered_view(inst, certified_li)
        return li

    def ensure_solution():
        nonlocal sol
        if sol is None:
            sol = certified_sol if certified_sol is not None else solve_strengthened(
                ensure_layered())
        return sol

    def default_d() -> int:
        if spec.d is not None:
            return spec.d
        n = ensure_layered().inst.graph.n
        return max(16, n * n)

    if "sandwich" in spec.checks:
        lv = ensure_layered()
        basic_obj, _, _ = solve_basic(lv)
        strong = solve_strengthened(lv)
        opt, _ = exact_dst(lv.inst)
        results["sandwich"] = {
            "basic_objective": basic_obj,
            "strengthened_objective": strong.objective,
            "layered_opt": opt,
            "basic_le_strengthened": basic_obj <= strong.objective + OBJ_REL_EPS * max(1.0, abs(strong.objective)),
            "strengthened_le_opt": strong.objective <= opt + OBJ_REL_EPS * max(1.0, abs(opt)),
            "star_residual": strong.star_residual(lv),
        }
        invariants["sandwich"] = bool(
            results["sandwich"]["basic_le_strengthened"]
            and results["sandwich"]["strengthened_le_opt"])

    if "ratio" in spec.checks:
        lv = ensure_layered()
        sv = ensure_solution()
        opt, _ = exact_dst(inst)
        costs, feasible, errors = [], [], []
        for trial in range(spec.trials):
            cfg = RoundingConfig(d=default_d(), rounds=spec.rounds,
                                 seed=hash((spec.seed, 101, trial)))
            try:
                res = main_algorithm(inst, cfg, sol=sv, li=lv)
                costs.append(res.solution.cost)
                feasible.append(True)
            except Exception as exc:  # collected per trial, not fatal
                feasible.append(False)
                errors.append(f"trial {trial}: {exc}")
        ratios = [c / opt for c in costs] if opt > 0 else []
        results["ratio"] = {
            "oracle_opt": opt,
            "lp_objective": sv.objective,
            "feasible_fraction": sum(feasible) / len(feasible),
            "per_trial_costs": costs,
            "ratio_stats": _stats(ratios),
            "errors": errors,
        }
        invariants["ratio_all_feasible"] = all(feasible)

    if "distortion" in spec.checks or "preflow" in spec.checks:
        lv = ensure_layered()
        sv = ensure_solution()
        aug = augment_root_variables(sv, lv)
        ri = check_relatively_integral(sv)
        d = default_d()
        structure_clean = True
        dist_pass, preflow_rows, errors = [], [], []
        for trial in range(spec.trials):
            tree = grow_full(aug, lv, d, seed=hash((spec.seed, 102, trial)))
            bad = verify_structure(tree)
            if bad:
                structure_clean = False
                errors.extend(f"trial {trial}: {b}" for b in bad)
            if "preflow" in spec.checks and ri.holds:
                for t in sorted(lv.inst.terminals):
                    assign_pseudo_flow(tree, aug, lv, t,
                                       seed=hash((spec.seed, 103, trial, t)))
                    rep = verify_preflow(tree, t)
                    preflow_rows.append(
                        {"trial": trial, "terminal": t,
                         "is_preflow": rep.is_preflow, "value": rep.value})
            if "distortion" in spec.checks:
                report = measure_distortion(tree, aug, lv)
                dist_pass.append(report.all_within_bounds())
        if "distortion" in spec.checks:
            results["distortion"] = {
                "d": d,
                "trials": spec.trials,
                "within_bounds_fraction": sum(dist_pass) / len(dist_pass),
                "structure_clean": structure_clean,
                "errors": errors,
            }
            invariants["tree_structure"] = structure_clean
        if "preflow" in spec.checks:
            if not ri.holds:
                results["preflow"] = {"skipped": "solution is not relatively integral"}
                invariants["preflow"] = False
            else:
                values = [r["value"] for r in preflow_rows]
                results["preflow"] = {
                    "d": d,
                    "rows": preflow_rows,
                    "all_preflow": all(r["is_preflow"] for r in preflow_rows),
                    "value_stats": _stats(values),
                }
                invariants["preflow"] = bool(results["preflow"]["all_preflow"])

    if "equivalence" in spec.checks:
        lv = ensure_layered()
        sv = ensure_solution()
        d = spec.d if spec.d is not None else 2
        rep = equivalence_test(lv, sv, d, spec.trials, seed=spec.seed)
        results["equivalence"] = {
            "d": d,
            "trials": spec.trials,
            "max_z": rep.max_z,
            "passed": rep.passed,
        }
        invariants["equivalence"] = rep.passed

    report = RunReport(
        schema=SCHEMA_VERSION,
        seed=spec.seed,
        spec=spec.to_dict(),
        results=results,
        invariants=invariants,
        wall_clock=time.monotonic() - started,
    )
    return report
