"""Command-line front end: dataset generation, training, evaluation, ablations,
plot-data export.  All artifacts are JSON/CSV with the invoking flags echoed
into the output metadata; `DGM_THREADS` caps ablation worker parallelism."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import datasets, evaluation, smoother, systems, training

_CONFIG_KEYS = {f.name for f in fields(training.TrainConfig)}


def _load_config(path: str | None, preset: str | None = None) -> training.TrainConfig:
    doc = {}
    if path:
        doc = json.loads(Path(path).read_text())
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("factor_dims", "input_scale", "output_scale", "dynamics_output_scale"):
            if doc.get(key):
                doc[key] = tuple(doc[key])
    if preset and not path:
        return training.TrainConfig.for_preset(preset, **doc)
    return training.TrainConfig(**doc)


def _flags(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func" and v is not None}


def _write_json(path: str, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1))


def _apply_dynamics_flag(cfg: training.TrainConfig, flag: str | None) -> training.TrainConfig:
    if flag is None:
        return cfg
    if flag == "neural" or flag == "parametric":
        return replace(cfg, dynamics_mode=flag, factor_dims=())
    if flag.startswith("factorized"):
        _, _, dims = flag.partition(":")
        factor_dims = tuple(int(d) for d in dims.split(",") if d.strip())
        return replace(cfg, dynamics_mode="factorized", factor_dims=factor_dims)
    raise ValueError(f"unknown dynamics mode {flag!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    ds = datasets.generate_dataset(args.preset.upper(), seed=args.seed)
    datasets.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n_trajectories} trajectories, {ds.n_observations} observations")
    return 0


def cmd_train(args) -> int:
    ds = datasets.load_dataset(args.data)
    cfg = _load_config(args.config, preset=ds.spec.preset if ds.spec.preset != "custom" else None)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.lambda_final is not None:
        cfg = replace(cfg, lambda_final=args.lambda_final)
    if args.features is not None:
        cfg = replace(cfg, fourier_features=args.features)
    cfg = _apply_dynamics_flag(cfg, args.dynamics)
    ckpt, hist = training.train(ds, cfg)
    training.save_checkpoint(ckpt, args.out)
    history_path = args.history or str(Path(args.out).with_suffix(".history.json"))
    _write_json(history_path, {"flags": _flags(args), **hist.to_json()})
    print(f"wrote {args.out} (final total {ckpt.metrics['final_total']:.4f}) and {history_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = training.load_checkpoint(args.ckpt)
    report = evaluation.evaluate_checkpoint(ckpt, mode=args.mode, seed=args.seed, count=args.count)
    doc = {"flags": _flags(args), **report.to_json()}
    if args.out:
        _write_json(args.out, doc)
    print(report.summary())
    return 0


def cmd_predict(args) -> int:
    ckpt = training.load_checkpoint(args.ckpt)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    if args.times:
        times = np.array([float(v) for v in args.times.split(",")])
    else:
        times = np.linspace(0.0, args.horizon, args.grid)
    ds = datasets.generate_from_spec(datasets._spec_from_json(ckpt.dataset_spec))
    x0_rows = np.repeat(x0[None, :], times.size, axis=0)
    post = smoother.state_posterior(ckpt.model, ckpt.params, ds, (x0_rows, times))
    doc = {
        "flags": _flags(args),
        "x0": x0.tolist(),
        "times": times.tolist(),
        "mean": post.means.tolist(),
        "std": post.stds.tolist(),
    }
    if args.out:
        _write_json(args.out, doc)
    else:
        print(json.dumps(doc))
    return 0


def _lambda_cell(ds, cfg, lam, seed):
    cell_cfg = replace(cfg, lambda_final=lam, seed=seed)
    ckpt, _ = training.train(ds, cell_cfg)
    report = evaluation.evaluate_checkpoint(ckpt, mode="generalization", seed=seed + 1)
    return report


def cmd_ablate_lambda(args) -> int:
    ds = datasets.load_dataset(args.data)
    cfg = _load_config(args.config, preset=ds.spec.preset if ds.spec.preset != "custom" else None)
    support = training.choose_supporting_points(ds, cfg.support_rule)
    lam_default = training.default_lambda(ds, support)
    multipliers = []
    for raw in args.lambda_grid.split(","):
        value = float(raw)
        if value in multipliers:
            print(f"warning: duplicate lambda multiplier {value} ignored", file=sys.stderr)
            continue
        multipliers.append(value)
    if not multipliers:
        raise ValueError("lambda grid is empty")
    workers = max(1, int(os.environ.get("DGM_THREADS", "1")))
    rows = []

    def run_cell(mult):
        lam = mult * lam_default
        try:
            report = _lambda_cell(ds, cfg, lam, args.seed)
            return {"multiplier": mult, "lambda": lam, "mean_ll": report.mean_ll,
                    "std_across_trajectories": float(report.per_trajectory.std())}
        except Exception as err:  # per-cell failures are recorded, not fatal
            return {"multiplier": mult, "lambda": lam, "error": str(err)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, multipliers))
    else:
        rows = [run_cell(m) for m in multipliers]

    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["multiplier", "lambda", "mean_ll", "std_across_trajectories", "error"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    for row in rows:
        print(row)
    return 0


def cmd_ablate_joint(args) -> int:
    ds = datasets.load_dataset(args.data)
    cfg = _load_config(args.config, preset=ds.spec.preset if ds.spec.preset != "custom" else None)
    results = {}
    for label, lam in (("joint", None), ("sequential", 0.0)):
        run_cfg = replace(cfg, lambda_final=lam, seed=args.seed)
        ckpt, _ = training.train(ds, run_cfg)
        report = evaluation.evaluate_checkpoint(ckpt, mode="generalization", seed=args.seed + 1)
        results[label] = report.mean_ll
    margin = results["joint"] - results["sequential"]
    doc = {"flags": _flags(args), **results, "margin": margin}
    if args.out:
        _write_json(args.out, doc)
    print(f"joint={results['joint']:.4f} sequential={results['sequential']:.4f} margin={margin:+.4f}")
    return 0


def cmd_export_plot(args) -> int:
    ckpt = training.load_checkpoint(args.ckpt)
    spec = datasets._spec_from_json(ckpt.dataset_spec)
    ds = datasets.load_dataset(args.data) if args.data else datasets.generate_from_spec(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = np.linspace(0.0, ds.horizon, args.grid)

    band_rows = []
    for m in range(ds.n_trajectories):
        x0 = ds.x0s[m]
        x0_rows = np.repeat(x0[None, :], grid.size, axis=0)
        post = smoother.state_posterior(ckpt.model, ckpt.params, ds, (x0_rows, grid))
        truth = np.empty((grid.size, ds.state_dim))
        positive = grid > 0
        truth[positive] = systems.integrate(spec.system, x0, grid[positive])
        truth[~positive] = x0
        for j, t in enumerate(grid):
            for dim in range(ds.state_dim):
                mean = post.means[j, dim]
                half = 2.0 * post.stds[j, dim]
                band_rows.append((t, dim, mean, mean - half, mean + half, truth[j, dim]))
    with open(out_dir / "bands.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "dim", "mean", "lower2sigma", "upper2sigma", "truth"])
        writer.writerows(band_rows)

    with open(out_dir / "observations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "dim", "y_obs"])
        for m in range(ds.n_trajectories):
            for t, row in zip(ds.times[m], ds.observations[m]):
                for dim in range(ds.state_dim):
                    writer.writerow([t, dim, row[dim]])
    _write_json(str(out_dir / "metadata.json"), {"flags": _flags(args)})
    print(f"wrote {out_dir}/bands.csv and {out_dir}/observations.csv")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a preset dataset")
    p.add_argument("--preset", required=True, help="lv1, lv100, lo1, lo125, dp1, dp100, qu1, qu64")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history path (default: <out>.history.json)")
    p.add_argument("--lambda", dest="lambda_final", type=float)
    p.add_argument("--features", type=int, help="random Fourier feature count")
    p.add_argument("--dynamics", help="neural | parametric | factorized:a1,a2,...")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ground-truth log likelihood of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", choices=["train", "generalization"], default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10, help="test trajectories (generalization)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="posterior mean/std for one initial condition")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--x0", required=True, help="comma-separated initial condition")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--times", help="explicit comma-separated times (overrides grid)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate-lambda", help="generalization score per lambda multiplier")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-grid", required=True,
                   help="comma-separated multipliers of the default lambda")
    p.add_argument("--out", required=True, help="CSV table path")
    p.set_defaults(func=cmd_ablate_lambda)

    p = sub.add_parser("ablate-joint", help="joint (default lambda) vs sequential (lambda=0)")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate_joint)

    p = sub.add_parser("export-plot", help="CSV band/observation tables for plotting")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
