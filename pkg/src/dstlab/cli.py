"""Command line interface.

Verbs: validate | exact | lp {basic|strong} | check-ri | lab
{grow|distortion|preflow} | round | gkr | bench. ``DST_SEED`` overrides
the default seed. ``round`` exits 0 when a feasible solution was emitted,
2 when the relative-integrality gate failed, 3 when feasibility was not
achieved within the round budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from dstlab.decomposition import (
    assign_pseudo_flow,
    export_gst_instance,
    grow_full,
    measure_distortion,
    tree_dump,
    verify_preflow,
    verify_structure,
)
from dstlab.graph import validate_instance
from dstlab.layering import build_layered, choose_num_layers, native_layered
from dstlab.lp import (
    RelativeIntegralityError,
    StrengthenedLpSolution,
    augment_root_variables,
    check_relatively_integral,
    solve_basic,
    solve_strengthened,
)
from dstlab.oracle import exact_dst
from dstlab.rounding import (
    FeasibilityNotAchievedError,
    RoundingConfig,
    covered_groups,
    gkr_round,
    main_algorithm,
)
from dstlab.experiment import ExperimentSpec, run_experiment
from dstlab.stp import read_stp

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_RELATIVELY_INTEGRAL = 2
EXIT_INFEASIBLE_ROUNDING = 3


def _env_seed() -> int:
    return int(os.environ.get("DST_SEED", "0"))


def _load(path: str):
    inst, _ = read_stp(path)
    return inst


def _layered(inst, num_layers=None):
    try:
        return native_layered(inst)
    except ValueError:
        return build_layered(inst, num_layers or choose_num_layers(inst.k))


def cmd_validate(args) -> int:
    inst = _load(args.instance)
    problems = validate_instance(inst)
    for p in problems:
        print(p)
    print("OK" if not problems else f"{len(problems)} violation(s)")
    return EXIT_OK if not problems else EXIT_ERROR


def cmd_exact(args) -> int:
    inst = _load(args.instance)
    opt, witness = exact_dst(inst)
    print(f"opt {opt!r}")
    print("edges " + " ".join(str(e) for e in sorted(witness.edges)))
    return EXIT_OK


def cmd_lp(args) -> int:
    inst = _load(args.instance)
    li = _layered(inst, args.layers)
    if args.kind == "basic":
        obj, x, _ = solve_basic(li)
        print(f"objective {obj!r}")
        if args.verbose:
            for e, v in sorted(x.items()):
                if v > 1e-9:
                    print(f"x[{e}] = {v!r}")
    else:
        sol = solve_strengthened(li)
        print(f"objective {sol.objective!r}")
        if args.json:
            with open(args.json, "w", encoding="utf-8") as fh:
                fh.write(sol.to_json())
            print(f"solution written to {args.json}")
    return EXIT_OK


def _solution_for(li, args) -> StrengthenedLpSolution:
    if getattr(args, "solution", None):
        with open(args.solution, "r", encoding="utf-8") as fh:
            return StrengthenedLpSolution.from_json(fh.read())
    return solve_strengthened(li)


def cmd_check_ri(args) -> int:
    inst = _load(args.instance)
    li = _layered(inst)
    sol = _solution_for(li, args)
    ri = check_relatively_integral(sol, tau=args.tau)
    print(f"holds {ri.holds}")
    for t, e, fv, xv in ri.witnesses[:args.max_witnesses]:
        print(f"violation terminal={t} edge={e} f={fv!r} x={xv!r}")
    return EXIT_OK if ri.holds else EXIT_NOT_RELATIVELY_INTEGRAL


def cmd_lab(args) -> int:
    inst = _load(args.instance)
    li = _layered(inst)
    sol = _solution_for(li, args)
    ri = check_relatively_integral(sol)
    aug = augment_root_variables(sol, li)
    d = args.d or max(16, li.inst.graph.n ** 2)
    tree = grow_full(aug, li, d, seed=args.seed)
    bad = verify_structure(tree)
    if args.mode == "grow":
        sys.stdout.write(tree_dump(tree))
        print(f"# structure {'clean' if not bad else bad}")
        return EXIT_OK
    if args.mode == "distortion":
        report = measure_distortion(tree, aug, li)
        doc = {
            "d": report.d,
            "delta": report.delta,
            "within_bounds": report.all_within_bounds(),
            "edges": [
                {"edge": r.edge, "level": r.level, "x": r.x, "copies": r.copies,
                 "capacity_sum": r.capacity_sum,
                 "lower_ok": r.lower_ok, "upper_ok": r.upper_ok}
                for r in report.edges
            ],
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    # preflow
    if not ri.holds:
        print("solution is not relatively integral; flow assignment refused")
        return EXIT_NOT_RELATIVELY_INTEGRAL
    rows = []
    for t in sorted(li.inst.terminals):
        assign_pseudo_flow(tree, aug, li, t, seed=hash((args.seed, t)))
        rep = verify_preflow(tree, t)
        rows.append({"terminal": t, "is_preflow": rep.is_preflow, "value": rep.value})
    print(json.dumps({"d": d, "preflow": rows}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_round(args) -> int:
    inst = _load(args.instance)
    li = _layered(inst)
    sol = _solution_for(li, args) if args.solution else None
    cfg = RoundingConfig(d=args.d or max(16, li.inst.graph.n ** 2),
                         rounds=args.rounds, seed=args.seed, lazy=not args.naive)
    try:
        res = main_algorithm(inst, cfg, sol=sol, li=li if sol is not None else None,
                             force_non_ri=args.force_non_ri)
    except RelativeIntegralityError as exc:
        print(f"relative integrality failed: {exc}")
        return EXIT_NOT_RELATIVELY_INTEGRAL
    except FeasibilityNotAchievedError as exc:
        print(f"feasibility not achieved: {exc}")
        return EXIT_INFEASIBLE_ROUNDING
    print(f"cost {res.solution.cost!r}")
    print("edges " + " ".join(str(e) for e in sorted(res.solution.edges)))
    if args.json:
        doc = {
            "cost": res.solution.cost,
            "edges": sorted(res.solution.edges),
            "rounds": res.report.rounds,
            "extra_rounds": res.report.extra_rounds,
            "lp_objective": res.report.lp_objective,
        }
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        print(f"report written to {args.json}")
    return EXIT_OK


def cmd_gkr(args) -> int:
    inst = _load(args.instance)
    li = _layered(inst)
    sol = _solution_for(li, args)
    aug = augment_root_variables(sol, li)
    d = args.d or 16
    tree = grow_full(aug, li, d, seed=args.seed)
    gst = export_gst_instance(tree, li)
    selected = gkr_round(gst.children, gst.root, gst.xhat, seed=args.seed)
    covered = covered_groups(selected, gst.groups)
    print(f"selected {len(selected)} tree edges")
    print(f"covered groups {len(covered)}/{len(gst.groups)}")
    return EXIT_OK


def cmd_bench(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = ExperimentSpec.from_json(fh.read())
    if "DST_SEED" in os.environ:
        spec = ExperimentSpec(instance=spec.instance, checks=spec.checks,
                              seed=_env_seed(), trials=spec.trials,
                              d=spec.d, rounds=spec.rounds)
    report = run_experiment(spec)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"report written to {args.out} (wall clock {report.wall_clock:.2f}s)")
    else:
        print(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        print(f"csv written to {args.csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dst", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check instance invariants")
    p.add_argument("instance")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("exact", help="exact optimum and witness")
    p.add_argument("instance")
    p.set_defaults(fn=cmd_exact)

    p = sub.add_parser("lp", help="solve a relaxation")
    p.add_argument("kind", choices=["basic", "strong"])
    p.add_argument("instance")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--json", default=None, help="write the solution as JSON")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_lp)

    p = sub.add_parser("check-ri", help="relative integrality of the LP optimum")
    p.add_argument("instance")
    p.add_argument("--solution", default=None, help="externally produced solution JSON")
    p.add_argument("--tau", type=float, default=1e-6)
    p.add_argument("--max-witnesses", type=int, default=10)
    p.set_defaults(fn=cmd_check_ri)

    p = sub.add_parser("lab", help="decomposition tree experiments")
    p.add_argument("mode", choices=["grow", "distortion", "preflow"])
    p.add_argument("instance")
    p.add_argument("--solution", default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--seed", type=int, default=_env_seed())
    p.set_defaults(fn=cmd_lab)

    p = sub.add_parser("round", help="run the full rounding pipeline")
    p.add_argument("instance")
    p.add_argument("--solution", default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seed", type=int, default=_env_seed())
    group = p.add_mutually_exclusive_group()
    group.add_argument("--lazy", action="store_true", default=True)
    group.add_argument("--naive", action="store_true")
    p.add_argument("--force-non-ri", action="store_true")
    p.add_argument("--json", default=None)
    p.set_defaults(fn=cmd_round)

    p = sub.add_parser("gkr", help="GKR rounding on the exported tree")
    p.add_argument("instance")
    p.add_argument("--solution", default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--seed", type=int, default=_env_seed())
    p.set_defaults(fn=cmd_gkr)

    p = sub.add_parser("bench", help="run an experiment spec")
    p.add_argument("spec")
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
