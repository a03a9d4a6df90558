"""Command-line entry points: stability checks, training, planning, grids,
trace analytics and the session server."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import model, stability
from .experiment import (
    DEFAULT_TASK_SEED,
    ExperimentConfig,
    audit_results,
    generate_tasks,
    run_grid,
)
from .metrics import aggregate_log_likelihood, load_traces, order_dependency
from .planners import PlannerConfig, run_episode
from .predictors import (
    ClassifierModel,
    PerturbationConfig,
    PredictorBinding,
    TrainConfig,
    generate_dataset,
    train_classifier,
)


def _cmd_stability(args) -> int:
    geometry = model.load_geometry(args.geometry)
    gravity = stability.gravity_from_angle(math.radians(args.gravity_angle))
    verdict = stability.is_stable_static(geometry, gravity, args.mu)
    margin = "nan" if verdict.margin is None else repr(verdict.margin)
    print(f"{'stable' if verdict.stable else 'unstable'} margin={margin}")
    return 0 if verdict.stable else 1


def _cmd_train(args) -> int:
    data = generate_dataset(args.n, args.seed)
    if args.rows_csv:
        data.save_csv(args.rows_csv)
    classifier = train_classifier(data, TrainConfig(hidden_units=args.hidden))
    classifier.save(args.out)
    print(json.dumps(classifier.metrics))
    return 0


def _cmd_predict(args) -> int:
    classifier = ClassifierModel.load(args.model)
    geometry = model.load_geometry(args.geometry)
    from .predictors import extract_features

    p = float(classifier.predict_proba(extract_features(geometry))[0])
    print(repr(p))
    return 0


def _cmd_plan(args) -> int:
    tasks = model.load_tasks(args.task)
    if args.task_id:
        tasks = [t for t in tasks if t.id == args.task_id]
        if not tasks:
            print(f"no task {args.task_id!r} in {args.task}", file=sys.stderr)
            return 2
    config = PlannerConfig(
        kind=args.planner,
        depth=1 if args.planner == "myopic" else args.depth,
        beam=args.beam,
        lattice=args.lattice,
        p_min=args.p_min,
        seed=args.seed,
        predictor=args.predictor,
        k=args.k,
        n_switch=args.n_switch,
        model_path=args.model,
    )
    trace, reward = run_episode(tasks[0], config)
    out = trace.to_dict()
    out["reward"] = reward
    print(json.dumps(out))
    return 0


def _cmd_gen_tasks(args) -> int:
    tasks = generate_tasks(args.n, args.seed)
    model.save_tasks(tasks, args.out)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def _cmd_run_grid(args) -> int:
    config = ExperimentConfig.load(args.config)
    classifier = ClassifierModel.load(args.model) if args.model else None
    results = run_grid(config, model=classifier)
    out_dir = config.resolve_out_dir()
    for res in results:
        status = res.error or f"mean={res.mean:.4f} sem={res.sem:.4f} n={len(res.rewards)}"
        print(f"{res.cell_id}: {status}")
    print(f"reports in {out_dir}")
    return 0


def _cmd_report(args) -> int:
    ok = audit_results(Path(args.in_dir))
    summary = Path(args.in_dir) / "summary.txt"
    if summary.exists():
        print(summary.read_text(), end="")
    print(f"audit: {'ok' if ok else 'MISMATCH'}")
    return 0 if ok else 1


def _cmd_eval_trace(args) -> int:
    traces = load_traces(args.traces)
    binding = _binding_from_args(args)
    report = aggregate_log_likelihood(traces, {args.predictor: binding})
    print("step,model,mean_ll,n")
    for row in report.rows:
        print(f"{row.step},{row.model},{row.mean_ll!r},{row.n}")
    return 0


def _cmd_gamma(args) -> int:
    geometry = model.load_geometry(args.geometry)
    res = order_dependency(geometry)
    print(json.dumps({
        "valid_orders": res.valid_orders,
        "stable_orders": res.stable_orders,
        "gamma": res.gamma,
    }))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import SessionStore, create_app

    store = SessionStore(args.data_dir)
    uvicorn.run(create_app(store), host=args.host, port=args.port)
    return 0


def _binding_from_args(args) -> PredictorBinding:
    classifier = ClassifierModel.load(args.model) if getattr(args, "model", None) else None
    perturb = PerturbationConfig(k=args.k, seed=args.seed)
    return PredictorBinding(args.predictor, perturb, classifier, getattr(args, "n_switch", 3))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="overhang", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stability", help="stability verdict for a geometry JSON (exit 0 stable, 1 not)")
    p.add_argument("geometry")
    p.add_argument("--gravity-angle", type=float, default=0.0, help="tilt in degrees")
    p.add_argument("--mu", type=float, default=stability.FRICTION_DEFAULT)
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("train", help="sample a dataset and train the stability classifier")
    p.add_argument("--n", type=int, default=50000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="model.json")
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--rows-csv", default=None, help="also dump the dataset as CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="classifier stability probability for a geometry")
    p.add_argument("--model", required=True)
    p.add_argument("--geometry", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("plan", help="run one planned episode, trace JSON to stdout")
    p.add_argument("--task", required=True, help="task file (JSON)")
    p.add_argument("--task-id", default=None)
    p.add_argument("--planner", choices=("myopic", "lookahead"), default="lookahead")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--beam", type=int, default=50)
    p.add_argument("--lattice", type=float, default=0.1)
    p.add_argument("--p-min", type=float, default=0.0)
    p.add_argument("--predictor", choices=("veridical", "ipe", "heuristic", "hybrid"), default="hybrid")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--n-switch", type=int, default=3)
    p.add_argument("--model", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("gen-tasks", help="generate a seeded task suite")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=DEFAULT_TASK_SEED)
    p.add_argument("--out", default="tasks.json")
    p.set_defaults(func=_cmd_gen_tasks)

    p = sub.add_parser("run-grid", help="run a planner grid from an experiment config JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None, help="classifier for heuristic/hybrid cells")
    p.set_defaults(func=_cmd_run_grid)

    p = sub.add_parser("report", help="print a grid summary and audit rewards against traces")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("eval-trace", help="per-step log-likelihood of a trace file under a predictor")
    p.add_argument("--traces", required=True)
    p.add_argument("--predictor", choices=("veridical", "ipe", "heuristic", "hybrid"), required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--n-switch", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval_trace)

    p = sub.add_parser("gamma", help="order dependency of a completed tower")
    p.add_argument("--geometry", required=True)
    p.set_defaults(func=_cmd_gamma)

    p = sub.add_parser("serve", help="run the interactive session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default=os.environ.get("OVERHANG_OUT", "session-data"))
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
