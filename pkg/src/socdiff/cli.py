"""``socdiff`` command line: gen-data, train, plan, bench, plot.

Exit codes: 0 success, 2 usage or configuration error, 3 planning failure
(no valid trajectory), 4 input/output error.

The global ``--seed`` drives every command: it seeds the suite and the
training set (gen-data), initialization and batches (train), the chains
(plan), and is mixed into every per-problem seed (bench).
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import config as config_mod
from .config import ConfigError, RunConfig
from .denoiser import DenoiserError, load_checkpoint, new_network_denoiser, save_checkpoint, smoothed, train
from .diffusion import DiffusionError, make_schedule
from .fileio import FormatError, dumps, read_dataset, read_problem, read_suite, read_trajectory, write_dataset, \
    write_suite, write_text, write_trajectory
from .geometry import GeometryError
from .guidance import GuidanceError
from .planner import NOISY, PREDICTED, TRACE_FIELDS, PlanningError, plan
from .world import generate_suite, generate_training_set

EXIT_OK, EXIT_USAGE, EXIT_PLAN_FAILED, EXIT_IO = 0, 2, 3, 4
S = argparse.SUPPRESS


class UsageError(Exception):
    pass


# flag -> (section, key); section None means top level
_OVERRIDES = {
    "seed": (None, "seed"), "workers": (None, "workers"), "out_dir": (None, "out_dir"),
    "K": ("planner", "K"), "guidance_target": ("planner", "guidance_target"),
    "fixed_start_step": ("planner", "fixed_start_step"), "recompute_eps": ("planner", "recompute_eps"),
    "guidance_scale": ("guidance", "w"), "lam": ("guidance", "lam"), "gamma": ("guidance", "gamma"),
    "epsilon": ("guidance", "epsilon"), "epsilon_per_chain": ("guidance", "epsilon_per_chain"),
    "warmup_steps": ("guidance", "warmup_steps"), "fallback_step": ("guidance", "fallback_step"),
    "smoothing_eps": ("costs", "smoothing_eps"),
    "steps": ("train", "steps"), "batch_size": ("train", "batch_size"), "lr": ("train", "learning_rate"),
    "per_type": ("data", "per_type"), "n_train": ("data", "n_train"),
    "n_waypoints": ("model", "n_waypoints"),
    "suite_file": ("paths", "suite"), "checkpoint": ("paths", "checkpoint"),
    "dataset_file": ("paths", "dataset"), "problem": ("paths", "problem"),
}


def _global_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--config", default=S, help="JSON run config; flags override its values")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--workers", type=int, default=S)
    g.add_argument("--out-dir", dest="out_dir", default=S)


def _planner_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("planner and guidance")
    g.add_argument("--K", type=int, default=S, help="parallel chains")
    g.add_argument("--T", type=int, default=S, help="diffusion steps (must match the checkpoint)")
    g.add_argument("--guidance-scale", dest="guidance_scale", type=float, default=S, help="w; 0 disables guidance")
    g.add_argument("--lambda", dest="lam", type=float, default=S, help="softmax temperature")
    g.add_argument("--gamma", type=float, default=S, help="EMA factor of the uniformity")
    g.add_argument("--epsilon", type=float, default=S, help="absolute trigger threshold")
    g.add_argument("--epsilon-per-chain", dest="epsilon_per_chain", type=float, default=S)
    g.add_argument("--warmup-steps", dest="warmup_steps", type=int, default=S)
    g.add_argument("--fallback-step", dest="fallback_step", type=int, default=S)
    g.add_argument("--fixed-start-step", dest="fixed_start_step", type=int, default=S,
                   help="bypass the trigger and start guidance at this step")
    g.add_argument("--guidance-target", dest="guidance_target", choices=(PREDICTED, NOISY), default=S)
    g.add_argument("--recompute-eps", dest="recompute_eps", action="store_true", default=S)
    g.add_argument("--smoothing-eps", dest="smoothing_eps", type=float, default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socdiff", description=__doc__.split("\n")[0])
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a benchmark suite and/or a training set")
    _global_flags(p)
    p.add_argument("--suite", action="store_true", help="write the benchmark suite")
    p.add_argument("--train-set", dest="train_set", action="store_true", help="write the training set")
    p.add_argument("--per-type", dest="per_type", type=int, default=S)
    p.add_argument("--n-train", dest="n_train", type=int, default=S)
    p.add_argument("--n-waypoints", dest="n_waypoints", type=int, default=S)
    p.add_argument("--suite-file", dest="suite_file", default=S)
    p.add_argument("--dataset-file", dest="dataset_file", default=S)

    p = sub.add_parser("train", help="train the denoiser")
    _global_flags(p)
    p.add_argument("--dataset-file", dest="dataset_file", default=S)
    p.add_argument("--checkpoint", default=S, help="output checkpoint path")
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--T", type=int, default=S)
    p.add_argument("--log-every", dest="log_every", type=int, default=0)

    p = sub.add_parser("plan", help="plan one problem")
    _global_flags(p)
    _planner_flags(p)
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--problem", default=S, help="problem file")
    p.add_argument("--suite-file", dest="suite_file", default=S)
    p.add_argument("--index", type=int, default=None, help="problem index within --suite-file")
    p.add_argument("--svg", action="store_true", help="also write plan.svg")
    p.add_argument("--trace", action="store_true", help="also write trace.csv")

    p = sub.add_parser("bench", help="run the ablation matrix over a suite")
    _global_flags(p)
    _planner_flags(p)
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--suite-file", dest="suite_file", default=S)
    p.add_argument("--cells", default="all", help="comma-separated start/target/guided|unguided names, or 'all'")
    p.add_argument("--limit", type=int, default=None, help="only the first N problems")
    p.add_argument("--no-plots", dest="no_plots", action="store_true")

    p = sub.add_parser("plot", help="render SVGs from bench output or a planned trajectory")
    _global_flags(p)
    p.add_argument("--bench-dir", dest="bench_dir", default=None)
    p.add_argument("--problem", default=S)
    p.add_argument("--trajectory", default=None)
    p.add_argument("--T", type=int, default=S)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then flags; validated before anything touches the disk."""
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else RunConfig()
    doc: dict = {}
    for flag, (section, key) in _OVERRIDES.items():
        if hasattr(args, flag):
            value = getattr(args, flag)
            if section is None:
                doc[key] = value
            else:
                doc.setdefault(section, {})[key] = value
    if hasattr(args, "T"):
        doc.setdefault("model", {})["T"] = args.T
        doc.setdefault("planner", {})["T"] = args.T
    return config_mod.from_dict(doc, cfg)


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.out_dir) / name


def _dataset_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed).spawn(1)[0]


def cmd_gen_data(args, cfg: RunConfig) -> int:
    both = not (args.suite or args.train_set)
    suite_path = Path(cfg.paths.suite or _out(cfg, "suite.json"))
    data_path = Path(cfg.paths.dataset or _out(cfg, "train.npy"))
    if args.suite or both:
        suite = generate_suite(cfg.robot, cfg.data.per_type, cfg.seed, min_separation=cfg.data.min_separation)
        write_suite(suite_path, suite)
        print(f"wrote {len(suite)} problems ({cfg.data.per_type} per scene type, seed {cfg.seed}) to {suite_path}")
    if args.train_set or both:
        rng = np.random.default_rng(_dataset_seed(cfg.seed))
        data = generate_training_set(cfg.robot, cfg.data.n_train, cfg.model.n_waypoints, rng, cfg.data.spread)
        write_dataset(data_path, data)
        print(f"wrote {len(data)} training trajectories of {cfg.model.n_waypoints} waypoints (seed {cfg.seed}) "
              f"to {data_path}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    data_path = Path(cfg.paths.dataset or _out(cfg, "train.npy"))
    data = read_dataset(data_path)
    if data.shape[2] != cfg.robot.config_dim:
        raise ConfigError(f"dataset dimension {data.shape[2]} does not match the robot's {cfg.robot.config_dim}")
    schedule = make_schedule(cfg.model.T, cfg.model.schedule)
    model = new_network_denoiser(data.shape[1], cfg.robot, schedule, cfg.model.spec, seed=cfg.seed)
    tcfg = replace(cfg.train, seed=cfg.seed)
    log = (lambda s: print(s, flush=True)) if args.log_every else print
    model, losses = train(model, data, tcfg, log_every=args.log_every, log=log)
    ckpt = Path(cfg.paths.checkpoint or _out(cfg, "model.json"))
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    write_text(_out(cfg, "loss.csv"), "step,loss\n" + "".join(f"{i + 1},{float(l)!r}\n" for i, l in enumerate(losses)))
    window = min(50, len(losses))
    final = float(smoothed(losses, window)[-1])
    print(f"trained {tcfg.steps} steps; final smoothed loss {final:.5f}; checkpoint {ckpt}")
    return EXIT_OK


def _load_model(cfg: RunConfig):
    if not cfg.paths.checkpoint:
        raise UsageError("--checkpoint is required")
    model = load_checkpoint(cfg.paths.checkpoint)
    if cfg.planner.T is not None and cfg.planner.T != model.schedule.T:
        raise ConfigError(f"--T {cfg.planner.T} differs from the checkpoint's T={model.schedule.T}")
    return model


def cmd_plan(args, cfg: RunConfig) -> int:
    if cfg.paths.problem:
        problem = read_problem(cfg.paths.problem)
        robot = cfg.robot
    elif cfg.paths.suite is not None and args.index is not None:
        suite = read_suite(cfg.paths.suite)
        if not 0 <= args.index < len(suite):
            raise UsageError(f"--index {args.index} outside the suite's {len(suite)} problems")
        problem, robot = suite.problems[args.index], suite.robot
    else:
        raise UsageError("give --problem, or --suite-file with --index")
    model = _load_model(cfg)
    if model.robot is not None:
        robot = model.robot  # carries the normalization the network was trained with
    if len(problem.q_start) != model.dim:
        raise ConfigError(f"problem dimension {len(problem.q_start)} does not match the checkpoint's {model.dim}")
    pcfg = replace(cfg.planner, seed=cfg.seed, T=model.schedule.T)
    res = plan(problem, robot, model, pcfg, trace=args.trace)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "trajectory.json", res.best)
    if args.svg:
        from .svg import scene_svg
        (out / "plan.svg").write_text(scene_svg(problem, robot, res.best, res.trajectories,
                                                title=f"{'success' if res.success else 'FAILED'}  "
                                                      f"cost {res.best_cost:.4g}"))
    if args.trace:
        (out / "trace.csv").write_text(bench_mod.to_csv(res.trace, TRACE_FIELDS))
    print(f"{'success' if res.success else 'failure'}: best cost {res.best_cost:.6g}, chain {res.best_index}, "
          f"{int(res.validity.sum())}/{len(res.validity)} valid, guidance from t={res.trigger_step}")
    return EXIT_OK if res.success else EXIT_PLAN_FAILED


def cmd_bench(args, cfg: RunConfig) -> int:
    if not cfg.paths.suite:
        raise UsageError("--suite-file is required")
    cells = bench_mod.parse_cells(args.cells)
    if args.limit is not None and args.limit < 1:
        raise UsageError("--limit must be >= 1")
    suite = read_suite(cfg.paths.suite)
    model = _load_model(cfg)
    if suite.robot.config_dim != model.dim:
        raise ConfigError(f"suite robot dimension {suite.robot.config_dim} does not match the checkpoint's {model.dim}")
    base = replace(cfg.planner, T=model.schedule.T, seed=cfg.seed)
    start = time.perf_counter()

    def progress(done, total):
        if done == total or done % 10 == 0:
            print(f"  {done}/{total} problems", file=sys.stderr, flush=True)

    result = bench_mod.run_bench(suite, model, base, cells, cfg.workers, args.limit, progress, run_seed=cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # scheduling and location do not affect results, so they stay out of the record
    record = {k: v for k, v in cfg.to_dict().items() if k not in ("workers", "out_dir")}
    (out / "bench_config.json").write_text(dumps(record))
    written = bench_mod.write_outputs(result, out, model.schedule.T, plots=not args.no_plots)
    print(bench_mod.format_table(result), end="")
    print(f"{len(result.rows)} result rows, {len(written)} files in {out} "
          f"({time.perf_counter() - start:.1f} s)", file=sys.stderr)
    return EXIT_OK


def cmd_plot(args, cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    if args.bench_dir:
        bdir = Path(args.bench_dir)
        rows = bench_mod.read_results(bdir / "results.csv")
        traces = {p.stem: bench_mod.read_trace(p) for p in sorted((bdir / "traces").glob("*.csv"))}
        result = bench_mod.result_from_rows(rows, traces)
        out.mkdir(parents=True, exist_ok=True)
        written = bench_mod.write_plots(result, out, cfg.model.T)
    elif cfg.paths.problem and args.trajectory:
        from .svg import scene_svg
        problem = read_problem(cfg.paths.problem)
        traj = read_trajectory(args.trajectory)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "trajectory.svg"
        path.write_text(scene_svg(problem, cfg.robot, traj))
        written = [path]
    else:
        raise UsageError("give --bench-dir, or --problem with --trajectory")
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "plan": cmd_plan, "bench": cmd_bench, "plot": cmd_plot}
_CONFIG_ERRORS = (ConfigError, UsageError, DenoiserError, DiffusionError, GeometryError, GuidanceError,
                  PlanningError, bench_mod.BenchError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = resolve_config(args)
    except (FormatError, OSError) as exc:
        # an unreadable or malformed config file is a configuration problem
        print(f"socdiff: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, FormatError) else EXIT_IO
    except _CONFIG_ERRORS as exc:
        print(f"socdiff: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except FormatError as exc:
        print(f"socdiff: bad input file: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"socdiff: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _CONFIG_ERRORS as exc:
        print(f"socdiff: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
