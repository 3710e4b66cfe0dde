"""Command-line interface.

Subcommands: synth, analyze, plan, merge, heatmap, frontier, search. Every
subcommand is a pure function of its input files, flags, and seed; repeated
runs write byte-identical outputs. Exit codes: 0 success, 1 internal error,
2 input/validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .archmap import ArchProfile, ComponentKind
from .checkpoint_io import load_checkpoint, save_checkpoint
from .errors import SpearmmError
from .merger import apply_plan
from .metrics import SNR_SOURCES, MetricConfig
from .planner import (
    POLICY_PRESETS,
    RESTORE_ENDS,
    SELECTION_MODES,
    Policy,
    build_plan,
    read_plan,
    write_plan,
)
from .reports import (
    analyze_checkpoints,
    frontier_sweep,
    heatmap_table,
    read_report_rows,
    score_pairs,
    write_frontier_csv,
    write_heatmap_csv,
    write_report,
    write_trials_jsonl,
)
from .search import SearchDim, SearchSpace, resolve_evaluator, run_search
from .serialize import canonical_dumps
from .synth import PROJECTION_KINDS, SynthSpec, generate_files

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


def _add_pair_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--base", required=True, help="base checkpoint (.safetensors)")
    p.add_argument("--adapted", required=True, help="domain-adapted checkpoint (.safetensors)")
    p.add_argument("--arch-profile", default=None, help="JSON profile mapping tensor names to components")


def _add_metric_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.5, help="weight of the displacement metric")
    p.add_argument("--beta", type=float, default=0.5, help="weight of the spectral-drop metric")
    p.add_argument("--k-top", type=int, default=16, help="singular values considered by the drop metric")
    p.add_argument("--snr-source", choices=SNR_SOURCES, default="adapted")


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=sorted(POLICY_PRESETS) + ["custom"], default="balanced")
    p.add_argument("--frac-mlp", type=float, default=None, help="restoration fraction per MLP projection")
    p.add_argument("--frac-attn", type=float, default=None, help="restoration fraction per attention projection")
    p.add_argument("--t", type=float, default=0.5, help="interpolation coefficient toward the base")
    p.add_argument("--mode", choices=SELECTION_MODES, default="combined")
    p.add_argument("--restore-end", choices=RESTORE_ENDS, default="top")
    p.add_argument("--seed", type=int, default=0)


def _profile(args) -> ArchProfile:
    if args.arch_profile:
        return ArchProfile.from_json(args.arch_profile)
    return ArchProfile.llama()


def _metric_config(args) -> MetricConfig:
    return MetricConfig(k_top=args.k_top, alpha=args.alpha, beta=args.beta, snr_source=args.snr_source)


def _policy(args) -> Policy:
    common = dict(t=args.t, mode=args.mode, seed=args.seed, restore_end=args.restore_end)
    if args.frac_mlp is None and args.frac_attn is None:
        if args.policy == "custom":
            raise SpearmmError("--policy custom requires --frac-mlp and --frac-attn")
        return Policy.preset(args.policy, **common)
    if args.frac_mlp is None or args.frac_attn is None:
        raise SpearmmError("set both --frac-mlp and --frac-attn (or neither)")
    return Policy.custom(args.frac_mlp, args.frac_attn, **common)


def _load_pair(args):
    return load_checkpoint(args.base), load_checkpoint(args.adapted)


def cmd_synth(args) -> int:
    components = tuple(ComponentKind(c) for c in args.target_components.split(",")) if args.target_components else PROJECTION_KINDS
    layers = tuple(int(x) for x in args.target_layers.split(",")) if args.target_layers else None
    spec = SynthSpec(
        layers=args.layers,
        hidden=args.hidden,
        seed=args.seed,
        lowrank_rank=args.lowrank_rank,
        lowrank_scale=args.lowrank_scale,
        noise_scale=args.noise_scale,
        target_components=components,
        target_layers=layers,
    )
    generate_files(spec, args.out_base, args.out_adapted)
    return EXIT_OK


def cmd_analyze(args) -> int:
    base, adapted = _load_pair(args)
    report, _, _ = analyze_checkpoints(base, adapted, _metric_config(args), _policy(args), _profile(args))
    write_report(report, args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    base, adapted = _load_pair(args)
    _, plan, _ = analyze_checkpoints(base, adapted, _metric_config(args), _policy(args), _profile(args))
    write_plan(plan, args.out)
    return EXIT_OK


def cmd_merge(args) -> int:
    base, adapted = _load_pair(args)
    if args.plan:
        plan = read_plan(args.plan)
    else:
        _, plan, _ = analyze_checkpoints(base, adapted, _metric_config(args), _policy(args), _profile(args))
        write_plan(plan, Path(args.out).with_suffix(".plan.json"))
    merged = apply_plan(base, adapted, plan)
    save_checkpoint(merged, args.out, dtype_policy="force_f32")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    table = heatmap_table(read_report_rows(args.report))
    write_heatmap_csv(table, args.out)
    return EXIT_OK


def cmd_frontier(args) -> int:
    if args.grid_points < 1:
        raise SpearmmError("--grid-points must be >= 1")
    base, adapted = _load_pair(args)
    scored, _, _ = score_pairs(base, adapted, _metric_config(args), _profile(args))
    if args.grid_points == 1:
        fractions = [args.grid_start]
    else:
        step = (args.grid_stop - args.grid_start) / (args.grid_points - 1)
        fractions = [args.grid_start + i * step for i in range(args.grid_points)]
    evaluator = resolve_evaluator(args.evaluator, base, adapted, timeout=args.evaluator_timeout)
    points = frontier_sweep(base, adapted, scored, fractions, args.t, evaluator, base_policy=_policy(args))
    write_frontier_csv(points, args.out)
    return EXIT_OK


def cmd_search(args) -> int:
    base, adapted = _load_pair(args)
    scored, _, _ = score_pairs(base, adapted, _metric_config(args), _profile(args))
    dims = [SearchDim("frac_mlp"), SearchDim("frac_attn")]
    if args.search_t:
        dims.append(SearchDim("t"))
    space = SearchSpace(dims=tuple(dims), budget=args.budget, init_points=args.init_points, seed=args.seed)
    best, history = run_search(
        base,
        adapted,
        scored,
        space,
        args.evaluator,
        lam=getattr(args, "lambda"),
        base_policy=_policy(args),
        evaluator_timeout=args.evaluator_timeout,
    )
    if args.trials:
        write_trials_jsonl(history, args.trials)
    if args.out:
        # Re-merge the winning configuration and persist it.
        policy = _policy(args).with_config(
            frac_mlp=best.config.get("frac_mlp"),
            frac_attn=best.config.get("frac_attn"),
            t=best.config.get("t"),
        )
        plan = build_plan(scored, policy)
        save_checkpoint(apply_plan(base, adapted, plan), args.out, dtype_policy="force_f32")
    summary = {
        "best_index": best.index,
        "config": best.config,
        "objective": best.objective,
        "domain_score": best.domain_score,
        "general_score": best.general_score,
        "plan_digest": best.plan_digest,
    }
    print(canonical_dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spearmm",
        description="Score, plan, and merge domain-adapted checkpoints against their base.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic (base, adapted) checkpoint pair")
    p.add_argument("--out-base", required=True)
    p.add_argument("--out-adapted", required=True)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lowrank-rank", type=int, default=4)
    p.add_argument("--lowrank-scale", type=float, default=0.0)
    p.add_argument("--noise-scale", type=float, default=0.0)
    p.add_argument("--target-components", default=None, help="comma-separated component kinds")
    p.add_argument("--target-layers", default=None, help="comma-separated layer indices")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="score every aligned tensor pair and write a JSON report")
    _add_pair_flags(p)
    _add_metric_flags(p)
    _add_policy_flags(p)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", help="emit the merge plan as canonical JSON")
    _add_pair_flags(p)
    _add_metric_flags(p)
    _add_policy_flags(p)
    p.add_argument("--out", required=True, help="plan JSON path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("merge", help="apply a plan (or a policy) and write the merged checkpoint")
    _add_pair_flags(p)
    _add_metric_flags(p)
    _add_policy_flags(p)
    p.add_argument("--out", required=True, help="merged checkpoint path")
    p.add_argument("--plan", default=None, help="existing plan JSON (skips re-scoring)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("heatmap", help="layer-impact table from an analyze report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("frontier", help="sweep restoration fractions and score the trade-off")
    _add_pair_flags(p)
    _add_metric_flags(p)
    _add_policy_flags(p)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--grid-start", type=float, default=0.0)
    p.add_argument("--grid-stop", type=float, default=1.0)
    p.add_argument("--grid-points", type=int, default=11)
    p.add_argument("--evaluator", default="proxy")
    p.add_argument("--evaluator-timeout", type=float, default=600.0)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("search", help="Bayesian search over restoration fractions")
    _add_pair_flags(p)
    _add_metric_flags(p)
    _add_policy_flags(p)
    p.add_argument("--out", default=None, help="write the best merged checkpoint here")
    p.add_argument("--trials", default=None, help="JSON-lines trial history path")
    p.add_argument("--evaluator", default="proxy")
    p.add_argument("--evaluator-timeout", type=float, default=600.0)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--init-points", type=int, default=8)
    p.add_argument("--lambda", type=float, default=0.5, help="objective = lambda*general + (1-lambda)*domain")
    p.add_argument("--search-t", action="store_true", help="search the interpolation coefficient too")
    p.set_defaults(func=cmd_search)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpearmmError, OSError, ValueError) as exc:
        print(f"spearmm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"spearmm: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
