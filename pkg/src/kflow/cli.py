"""Command-line pipeline: train, sample, evaluate, benchmark, inspect spectra.

Exit codes: 0 success, 2 usage/config, 3 data or IO, 4 numerical failure.
KFLOW_THREADS bounds the BLAS worker count and must be applied before numpy
loads, so heavy imports happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys
import time


def _apply_thread_env() -> None:
    value = os.environ.get("KFLOW_THREADS")
    if not value:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, value)


def _parse_t_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _png_path(path: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + ".png"


# -- command handlers ---------------------------------------------------------


def cmd_train_cfm(args) -> int:
    from . import cfm, datasets, plots
    from .checkpoint import save_vector_field
    from .nn import MlpSpec

    prior = datasets.distribution_from_name(args.prior)
    target = datasets.distribution_from_name(args.target)
    path = cfm.path_from_name(args.path, args.sigma)
    spec = MlpSpec(input_dim=3, hidden_dim=args.hidden, depth=args.depth, output_dim=2)
    tic = time.perf_counter()
    model, losses = cfm.train_cfm(
        prior, target, path, steps=args.steps, batch=args.batch, seed=args.seed,
        lr=args.lr, spec=spec,
    )
    elapsed = time.perf_counter() - tic
    meta = {
        "task": {"prior": args.prior, "target": args.target, "path": args.path,
                 "sigma": path.sigma},
        "seed": args.seed,
        "train": {"steps": args.steps, "batch": args.batch, "lr": args.lr},
        "final_loss": losses[-1],
    }
    save_vector_field(args.out, model, meta)
    if not args.no_plot:
        plots.save_loss_fig({"cfm": losses}, _png_path(args.out),
                            title=f"{args.prior} -> {args.target} ({args.path})")
    print(f"final loss {losses[-1]:.6f} after {args.steps} steps in {elapsed:.1f}s")
    print(f"wrote {args.out}")
    return 0


def cmd_train_koopman(args) -> int:
    from . import cfm, datasets, koopman, plots
    from .checkpoint import load_vector_field, save_koopman

    vf, vf_meta = load_vector_field(args.cfm)
    task = vf_meta.get("task", {})
    prior = datasets.distribution_from_name(args.prior or task.get("prior", "gauss"))
    losses = koopman.LossWeights.from_names(
        args.losses.split(","),
        generator=args.w_generator,
        consistency=args.w_consistency,
        prediction=args.w_prediction,
    )
    if args.data == "uniform":
        source = koopman.UniformPairs(vf, seed=args.seed)
    else:
        traj = cfm.generate_trajectories(vf, prior, n_traj=args.n_traj, seed=args.seed)
        source = koopman.TrajectoryData(traj, seed=args.seed)

    spec = None
    if args.p_learned > 0:
        spec = koopman.default_encoder_spec(args.p_learned, hidden=args.enc_hidden,
                                            depth=args.enc_depth)
    schedule = koopman.CurriculumSchedule(mode=args.schedule, epochs=args.steps)
    tic = time.perf_counter()
    model, log = koopman.train_koopman(
        vf, source, losses=losses, schedule=schedule, seed=args.seed,
        steps=args.steps, batch=args.batch, p_learned=args.p_learned,
        encoder_spec=spec, encoder_lr=args.encoder_lr, operator_lr=args.operator_lr,
        operator_init_std=args.operator_init_std,
    )
    elapsed = time.perf_counter() - tic

    report_every = max(1, args.steps // 10)
    for i in range(0, len(log.steps), report_every):
        print(
            f"step {log.steps[i]:>6}  generator {log.generator[i]:.6f}"
            f"  consistency {log.consistency[i]:.6f}  prediction {log.prediction[i]:.6f}"
        )
    print(f"validation generator loss {log.val_generator[0]:.6f} -> {log.val_generator[-1]:.6f}")

    meta = {
        "task": task,
        "seed": args.seed,
        "cfm_checkpoint_crc32": vf_meta.get("crc32"),
        "train": {
            "steps": args.steps, "batch": args.batch, "data": args.data,
            "n_traj": args.n_traj, "losses": args.losses, "schedule": args.schedule,
            "encoder_lr": args.encoder_lr, "operator_lr": args.operator_lr,
        },
        "val_generator_first": log.val_generator[0],
        "val_generator_last": log.val_generator[-1],
    }
    save_koopman(args.out, model, meta)
    if not args.no_plot:
        plots.save_loss_fig(
            {"generator": log.generator, "consistency": log.consistency,
             "validation": log.val_generator},
            _png_path(args.out), title="koopman training",
        )
    print(f"trained in {elapsed:.1f}s; wrote {args.out}")
    return 0


def cmd_sample(args) -> int:
    from . import datasets, plots
    from .ndcore import ContractViolation
    from .sampler import koopman_sample, save_run_csv

    if not (args.model or args.dist):
        raise ContractViolation("sample: one of --model or --dist is required")
    if args.dist:
        points = datasets.sample(datasets.distribution_from_name(args.dist), args.n, args.seed)
        datasets.save_samples_csv(points, args.out)
        if not args.no_plot:
            plots.save_scatter_fig(points, _png_path(args.out), title=args.dist)
        print(f"wrote {args.out}")
        return 0

    from .checkpoint import load_checkpoint
    meta, _ = load_checkpoint(args.model)
    t_query = _parse_t_list(args.t)
    prior_name = args.prior or meta.get("task", {}).get("prior", "gauss")
    prior = datasets.distribution_from_name(prior_name)

    if meta["kind"] == "koopman":
        from .checkpoint import load_koopman
        model, _ = load_koopman(args.model)
        run = koopman_sample(model, prior, args.n, t_query, args.seed)
        states, total_ns = run.states, sum(run.elapsed_ns.values())
        stages = "  ".join(f"{k} {v/1e6:.2f}ms" for k, v in run.elapsed_ns.items())
        print(f"sampled {args.n} points at {len(t_query)} times in {total_ns/1e6:.2f}ms ({stages})")
        save_run_csv(run, args.out)
    else:
        import numpy as np
        from .cfm import integrate
        from .checkpoint import load_vector_field
        from .sampler import SampleRun
        model, _ = load_vector_field(args.model)
        x0 = datasets.sample(prior, args.n, args.seed)
        path_states = integrate(model, x0, args.ode_steps, args.method)
        idx = [int(round(t * args.ode_steps)) for t in t_query]
        states = np.stack([path_states[:, k] for k in idx], axis=1)
        save_run_csv(SampleRun(args.seed, args.n, t_query, states), args.out)

    if not args.no_plot:
        plots.save_run_fig(states, t_query, _png_path(args.out))
    print(f"wrote {args.out}")
    return 0


def cmd_eval_mmd(args) -> int:
    from . import plots
    from .analysis import mmd
    from .datasets import load_samples_csv

    a = load_samples_csv(args.a)
    b = load_samples_csv(args.b)
    result = mmd(a, b, args.bandwidth)
    print(f"mmd {result.value:.17g} (bandwidth {result.kernel_bandwidth:.6g}, "
          f"n_a {result.n_a}, n_b {result.n_b})")
    if args.out:
        import json
        with open(args.out, "w") as fh:
            json.dump({"mmd": result.value, "bandwidth": result.kernel_bandwidth,
                       "n_a": result.n_a, "n_b": result.n_b,
                       "estimator": result.estimator}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if not args.no_plot:
            plots.save_pair_fig(a, b, ("a", "b"), _png_path(args.out),
                                title=f"mmd = {result.value:.4g}")
        print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    from . import datasets, plots
    from .analysis import bench_sampling, save_bench_csv, save_bench_json
    from .checkpoint import load_koopman, load_vector_field

    koop, kmeta = load_koopman(args.koopman)
    vf, _ = load_vector_field(args.cfm)
    task = kmeta.get("task", {})
    prior = datasets.distribution_from_name(args.prior or task.get("prior", "gauss"))
    target = None
    if task.get("target"):
        target = datasets.sample(datasets.distribution_from_name(task["target"]),
                                 args.n, args.seed + 1)
    rows = bench_sampling(koop, vf, prior, args.n, _parse_int_list(args.steps),
                          target=target, reps=args.reps, seed=args.seed)
    save_bench_csv(rows, args.out)
    if args.json:
        save_bench_json(rows, args.json, args.n)
    if not args.no_plot:
        plots.save_bench_fig(rows, _png_path(args.out), title=f"batch {args.n}")
    for r in rows:
        print(f"{r.method:>8} steps {r.steps:>4}  {r.wall_ns/1e6:9.2f}ms  "
              f"{r.samples_per_sec:12.0f}/s  mmd {r.mmd:.5f}")
    print(f"wrote {args.out}")
    return 0


def cmd_spectrum(args) -> int:
    from . import datasets, plots
    from .analysis import save_spectrum_csv, spectral_decompose
    from .checkpoint import load_koopman
    from .koopman import encode

    model, meta = load_koopman(args.model)
    prior_name = args.prior or meta.get("task", {}).get("prior", "gauss")
    x0 = datasets.sample(datasets.distribution_from_name(prior_name), 1, args.seed)
    z0 = encode(model, x0, 0.0).data[0]
    decomp = spectral_decompose(model.L.data, z0)
    save_spectrum_csv(decomp, args.out, top=args.top)
    if not args.no_plot:
        n = args.top or decomp.alphas.size
        plots.save_spectrum_fig(decomp.pairs.values[:n], decomp.alphas[:n],
                                _png_path(args.out), title=f"p_total {model.p_total}")
    print(f"wrote {args.out}")
    return 0


def cmd_traj_compare(args) -> int:
    from . import datasets, plots
    from .cfm import integrate
    from .checkpoint import load_koopman, load_vector_field
    from .sampler import koopman_sample

    koop, kmeta = load_koopman(args.koopman)
    vf, _ = load_vector_field(args.cfm)
    prior_name = args.prior or kmeta.get("task", {}).get("prior", "gauss")
    prior = datasets.distribution_from_name(prior_name)

    x0 = datasets.sample(prior, args.n, args.seed)
    cfm_states = integrate(vf, x0, args.ode_steps, "rk4")
    grid = [k / args.ode_steps for k in range(args.ode_steps + 1)]
    koop_states = koopman_sample(koop, prior, args.n, grid, args.seed).states

    with open(args.out, "w") as fh:
        fh.write("traj_id,t,cfm_x,cfm_y,koop_x,koop_y\n")
        for i in range(args.n):
            for k, t in enumerate(grid):
                fh.write(f"{i},{t:.17g},{cfm_states[i, k, 0]:.17g},{cfm_states[i, k, 1]:.17g},"
                         f"{koop_states[i, k, 0]:.17g},{koop_states[i, k, 1]:.17g}\n")
    if not args.no_plot:
        plots.save_traj_overlay_fig(cfm_states, koop_states, _png_path(args.out))
    print(f"wrote {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="kflow",
        description="Flow-matching fields with a linear one-step sampler on top.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def new_command(name, handler, **kwargs):
        sub = subs.add_parser(name, **kwargs)
        sub.set_defaults(func=handler)
        sub.add_argument("--config", help="key=value defaults file; flags override")
        sub.add_argument("--no-plot", action="store_true", help="skip PNG rendering")
        registry[name] = sub
        return sub

    p = new_command("train-cfm", cmd_train_cfm, help="train a velocity field")
    p.add_argument("--prior", default="gauss")
    p.add_argument("--target", required=True)
    p.add_argument("--path", default="ot", choices=("ot", "gauss"))
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = new_command("train-koopman", cmd_train_koopman, help="fit the linear embedding")
    p.add_argument("--cfm", required=True, help="vector-field checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--prior", default=None, help="override the checkpoint's prior")
    p.add_argument("--p-learned", type=int, default=28)
    p.add_argument("--enc-hidden", type=int, default=128)
    p.add_argument("--enc-depth", type=int, default=4)
    p.add_argument("--steps", type=int, default=6000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--encoder-lr", type=float, default=1e-3)
    p.add_argument("--operator-lr", type=float, default=1e-4)
    p.add_argument("--operator-init-std", type=float, default=1e-3)
    p.add_argument("--losses", default="generator,consistency",
                   help="comma list from generator,consistency,prediction")
    p.add_argument("--w-generator", type=float, default=1.0)
    p.add_argument("--w-consistency", type=float, default=1.0)
    p.add_argument("--w-prediction", type=float, default=1.0)
    p.add_argument("--schedule", default="reverse", choices=("reverse", "forward", "random"))
    p.add_argument("--data", default="traj", choices=("traj", "uniform"))
    p.add_argument("--n-traj", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)

    p = new_command("sample", cmd_sample, help="generate samples to CSV")
    p.add_argument("--model", help="koopman or vector-field checkpoint")
    p.add_argument("--dist", help="sample a named distribution instead of a model")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--t", default="1.0", help="comma list of query times")
    p.add_argument("--method", default="rk4", choices=("euler", "rk4"))
    p.add_argument("--ode-steps", type=int, default=100)
    p.add_argument("--prior", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = new_command("eval-mmd", cmd_eval_mmd, help="two-sample MMD between CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--out", default=None, help="optional JSON result file")

    p = new_command("bench", cmd_bench, help="throughput/quality vs ODE baselines")
    p.add_argument("--koopman", required=True)
    p.add_argument("--cfm", required=True)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--steps", default="1,10,100", help="comma list of ODE step counts")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--prior", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--json", default=None)

    p = new_command("spectrum", cmd_spectrum, help="export sorted eigenvalues and coefficients")
    p.add_argument("--model", required=True)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--prior", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = new_command("traj-compare", cmd_traj_compare, help="paired rollouts as CSV")
    p.add_argument("--koopman", required=True)
    p.add_argument("--cfm", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--ode-steps", type=int, default=100)
    p.add_argument("--prior", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    return parser, registry


def _apply_config_defaults(parser, registry, argv: list[str]) -> None:
    """Load --config key=value pairs as subcommand defaults (flags still win)."""
    if not any(a == "--config" or a.startswith("--config=") for a in argv):
        return
    command = next((a for a in argv if not a.startswith("-")), None)
    if command not in registry:
        return
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None:
        return
    from .config import parse_config_file
    values = parse_config_file(path)
    sub = registry[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        if key not in known:
            parser.error(f"unknown config key {key!r} for command {command}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            defaults[key] = action.type(value)
        else:
            defaults[key] = value
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    _apply_thread_env()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config_defaults(parser, registry, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 2

    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .ndcore import ContractViolation, NumericalError

    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
