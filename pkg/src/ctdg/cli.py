"""Command-line entry point: ``ctdg <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .ctmc import noise_graph
from .denoiser import init_params, load_checkpoint
from .graphs import (GraphDataset, GraphFormatError, MarginalPair, compute_marginals, deserialize_dataset,
                     generate_planar, generate_sbm, serialize_dataset)
from .metrics import mmd, validity_planar, vun_report
from .sampling import SampleRunConfig, SampleStats, UniformSource, sample_arrays, sample_graphs
from .schedule import NoiseSchedule
from .toys import toy3, toy3_class, tv, empirical
from .training import load_training_state, train

log = logging.getLogger("ctdg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ABLATION_STEPS = (10, 50, 100, 500)
DEMO_TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)


class DataError(Exception):
    pass


def _read_dataset(path) -> GraphDataset:
    try:
        return deserialize_dataset(path)
    except FileNotFoundError:
        raise DataError(f"missing data file {path}") from None
    except GraphFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def _config(args) -> cfgmod.RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"train.seed={args.seed}", f"model.seed={args.seed}"]
    return cfgmod.load_config(args.config, overrides)


def _write_config_echo(out: Path, cfg: cfgmod.RunConfig) -> None:
    (out / "config.ini").write_text(cfgmod.dump_config(cfg))


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(args) -> int:
    cfg = _config(args)
    d = cfg.data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if d.kind == "planar":
        full = generate_planar(d.count, (d.n_min, d.n_max), seed=args.seed)
    else:
        full = generate_sbm(d.count, d.block_sizes, d.p_in, d.p_out, seed=args.seed)
    n_train = int(round(d.count * d.train_frac))
    n_val = int(round(d.count * d.val_frac))
    cuts = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, d.count)}
    for split, (lo, hi) in cuts.items():
        serialize_dataset(GraphDataset(full.graphs[lo:hi], full.a, full.b, split), out / f"{split}.txt")
    _write_config_echo(out, cfg)
    print(f"wrote {d.count} graphs to {out} ({n_train}/{n_val}/{d.count - n_train - n_val})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    train_ds = _read_dataset(data / "train.txt" if data.is_dir() else data)
    val_path = data / "val.txt" if data.is_dir() else None
    val_ds = _read_dataset(val_path) if val_path and val_path.exists() else None
    marginals = compute_marginals(train_ds)
    model_cfg = dataclasses.replace(cfg.model, a=train_ds.a, b=train_ds.b)
    extra = {
        "marginals": {"m_X": marginals.m_X.tolist(), "m_E": marginals.m_E.tolist()},
        "size_histogram": {str(k): v for k, v in train_ds.size_histogram.items()},
        "schedule": dataclasses.asdict(cfg.schedule),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        model, opt, _ = load_training_state(args.resume)
    else:
        model, opt = init_params(model_cfg), None
    _write_config_echo(out, dataclasses.replace(cfg, model=model.cfg))
    opt, losses = train(model, list(train_ds), cfg.schedule, marginals, cfg.train, opt=opt,
                        val_graphs=list(val_ds) if val_ds else (), out_dir=out, log_file=out / "train.log",
                        time_budget=args.time_budget, extra=extra)
    if losses and not np.isfinite(losses[-1]):
        raise FloatingPointError(f"non-finite loss at step {opt.step}")
    print(f"trained to step {opt.step}; last loss {losses[-1] if losses else float('nan'):.4f}")
    return EXIT_OK


def _load_sampler(path):
    try:
        model, extra, _ = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"missing checkpoint {path}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from None
    if "marginals" not in extra:
        raise DataError(f"{path}: checkpoint lacks dataset statistics")
    marginals = MarginalPair(np.array(extra["marginals"]["m_X"]), np.array(extra["marginals"]["m_E"]))
    hist = {int(k): v for k, v in extra["size_histogram"].items()}
    schedule = NoiseSchedule(**extra["schedule"])
    return model, marginals, hist, schedule


def _run_config(cfg: cfgmod.RunConfig, schedule: NoiseSchedule, steps: int, seed: int) -> SampleRunConfig:
    s = cfg.sample
    return SampleRunConfig.with_steps(steps, corrector_steps=s.corrector_steps, tau_c=s.tau_c,
                                      corrector_window=s.corrector_window, guidance_s=s.guidance_s,
                                      t_min=schedule.t_min, seed=seed)


def cmd_sample(args) -> int:
    cfg = _config(args)
    model, marginals, hist, schedule = _load_sampler(args.checkpoint)
    run = _run_config(cfg, schedule, cfg.sample.steps, args.seed)
    y = None if args.target is None else [float(v) for v in args.target.split(",")]
    count = cfg.sample.count if args.count is None else args.count
    graphs, stats = sample_graphs(model, hist, count, marginals, schedule, run, y=y,
                                  batch_size=cfg.sample.batch_size, workers=cfg.sample.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize_dataset(GraphDataset(graphs, model.cfg.a, model.cfg.b, "samples"), out)
    manifest = {
        "checkpoint_sha256": hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest(),
        "seed": args.seed,
        "count": count,
        "run": dataclasses.asdict(run),
        "conditioner": y,
        "clamp_events": stats.clamp_events,
        "model_calls": stats.model_calls,
    }
    # wall time is the one non-deterministic field; keep it out of the byte-stable manifest
    Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    Path(str(out) + ".timing.json").write_text(json.dumps({"wall_time": stats.wall_time}) + "\n")
    print(f"wrote {count} samples to {out} (clamp events: {stats.clamp_events})")
    return EXIT_OK


def _validity_fn(cfg):
    return validity_planar if cfg.eval.validity == "planar" else (lambda g: True)


def cmd_eval(args) -> int:
    cfg = _config(args)
    samples = _read_dataset(args.samples)
    reference = _read_dataset(args.reference)
    train_set = _read_dataset(args.train) if args.train else reference
    report = vun_report(list(samples), list(train_set), _validity_fn(cfg), reference=list(reference))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out) + ".txt").write_text(report.to_text())
    Path(str(out) + ".json").write_text(report.to_json())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_ablate_steps(args) -> int:
    cfg = _config(args)
    steps_list = [int(s) for s in args.steps.split(",")] if args.steps else list(ABLATION_STEPS)
    rows = []
    if args.oracle_toy:
        schedule = cfg.schedule
        oracle, target, marginals = toy3(schedule)
        header = ["steps", "tv_to_data", "clamp_events"]
        for steps in steps_list:
            run = _run_config(cfg, schedule, steps, args.seed)
            stats = SampleStats()
            _, e = sample_arrays(oracle, 3, args.count, marginals, schedule, run,
                                 UniformSource(np.random.default_rng([args.seed, steps])), stats=stats)
            rows.append([steps, tv(empirical(toy3_class(e), 4), target), stats.clamp_events])
    else:
        if not args.checkpoint:
            raise cfgmod.ConfigError("ablate-steps needs --checkpoint or --oracle-toy")
        model, marginals, hist, schedule = _load_sampler(args.checkpoint)
        reference = list(_read_dataset(args.reference)) if args.reference else None
        header = ["steps", "validity"] + (["degree_mmd", "spectrum_mmd"] if reference else []) + ["clamp_events"]
        for steps in steps_list:
            run = _run_config(cfg, schedule, steps, args.seed)
            graphs, stats = sample_graphs(model, hist, args.count, marginals, schedule, run,
                                          batch_size=cfg.sample.batch_size, workers=cfg.sample.workers)
            valid = float(np.mean([_validity_fn(cfg)(g) for g in graphs]))
            row = [steps, valid]
            if reference:
                row += [mmd(graphs, reference, "degree"), mmd(graphs, reference, "spectrum")]
            rows.append(row + [stats.clamp_events])
    text = "\t".join(header) + "\n" + "".join("\t".join(_cell(v) for v in r) + "\n" for r in rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cell(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def cmd_demo_forward(args) -> int:
    cfg = _config(args)
    ds = _read_dataset(args.data)
    if not 0 <= args.index < len(ds):
        raise DataError(f"graph index {args.index} out of range for {len(ds)} graphs")
    g = ds[args.index]
    marginals = compute_marginals(ds)
    schedule = cfg.schedule
    rng = np.random.default_rng(args.seed)
    traj, rows = [], []
    iu = np.triu_indices(g.n, 1)
    for t in DEMO_TIMES:
        draws = [noise_graph(g, t, schedule, marginals, rng) for _ in range(args.replicates)]
        traj.append(draws[0])
        fx = empirical(np.stack([d.node_labels for d in draws]), g.a)
        fe = empirical(np.stack([d.edge_labels[iu] for d in draws]), g.b)
        rows.append([t, tv(fx, marginals.m_X), tv(fe, marginals.m_E)] + fx.tolist() + fe.tolist())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    serialize_dataset(GraphDataset(traj, g.a, g.b, "trajectory"), out / "trajectory.txt")
    header = ["t", "node_tv_to_marginal", "edge_tv_to_marginal"] + [f"node_freq_{k}" for k in range(g.a)] \
        + [f"edge_freq_{k}" for k in range(g.b)]
    text = "\t".join(header) + "\n" + "".join("\t".join(_cell(float(v)) for v in r) + "\n" for r in rows)
    (out / "frequencies.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctdg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False):
        sp.add_argument("--config", help="sectioned key=value config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("generate-data", help="write train/val/test dataset files")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("train", help="train a denoiser")
    common(sp, seed_required=True)
    sp.add_argument("--data", required=True, help="dataset directory (train.txt, val.txt) or file")
    sp.add_argument("--out", required=True, help="run directory for checkpoints and log")
    sp.add_argument("--resume", help="continue from a training checkpoint")
    sp.add_argument("--time-budget", type=float, help="stop after this many seconds (breaks determinism)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="draw graphs from a checkpoint")
    common(sp, seed_required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="sample dump path")
    sp.add_argument("--count", type=int)
    sp.add_argument("--target", help="comma-separated conditioner values")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="metric report for a sample dump")
    common(sp)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--reference", required=True, help="reference set for MMDs")
    sp.add_argument("--train", help="training set for novelty (default: reference)")
    sp.add_argument("--out", required=True, help="report path prefix (.txt and .json are written)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate-steps", help="metrics against the number of sampling steps")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--oracle-toy", action="store_true", help="use the exact-posterior 3-node toy")
    sp.add_argument("--reference")
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--steps", help="comma-separated step counts (default 10,50,100,500)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ablate_steps)

    sp = sub.add_parser("demo-forward", help="noisy versions of one graph along the forward process")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--replicates", type=int, default=1000)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_demo_forward)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
