"""Command-line pipeline: generate data, train ensembles, predict, sweep gains.

Every command is a pure function of (config file, seeds, input artifacts) to
output files; re-running with the same inputs reproduces every output byte
for byte.  Each command writes its CSV reports, renders figures beside them
(disable with --no-figures), and drops a machine-readable run_summary.json
in its output directory.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import ctrl_eval, figures, predict as pred, sysid
from . import dataset as ds
from .config import ConfigError, RunConfig, load_config, resolved_dict
from .ctrl_eval import PDScenario


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _record_seed(base: int, split_idx: int, rec_idx: int):
    ss = np.random.SeedSequence([base, split_idx, rec_idx])
    sim, noise = ss.spawn(2)
    return int(sim.generate_state(1)[0]), int(noise.generate_state(1)[0])


def _resolve_script(name: str) -> str:
    path = name if name.endswith(".csv") else ds.asset_path(name)
    if not os.path.exists(path):
        raise ConfigError(f"command script not found: {path}")
    return path


def _write_summary(out_dir: str, command: str, cfg: RunConfig, outputs: list,
                   extra: dict) -> None:
    summary = {"command": command, "config": resolved_dict(cfg),
               "outputs": sorted(outputs)}
    summary.update(extra)
    path = os.path.join(out_dir, "run_summary.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")
    print(json.dumps({"command": command, "out": out_dir,
                      "outputs": len(outputs) + 1}))


def cmd_gen(cfg: RunConfig) -> int:
    vessel = cfg.vessel()
    setup = cfg.gen.setup(vessel)
    noise = cfg.gen.noise()
    outputs = []
    counts = {}
    for split_idx, (split, spec) in enumerate(cfg.gen.splits.items()):
        records = []
        rec_idx = 0

        def next_seeds():
            nonlocal rec_idx
            seeds = _record_seed(cfg.seed, split_idx, rec_idx)
            rec_idx += 1
            return seeds

        for name in spec.get("scripted", []):
            sim_seed, noise_seed = next_seeds()
            rec = ds.gen_scripted(_resolve_script(name), setup, sim_seed,
                                  label=f"B_{name}")
            records.append((rec, noise_seed))
        for delta, psi in spec.get("zigzag", []):
            sim_seed, noise_seed = next_seeds()
            rec = ds.gen_zigzag(math.radians(delta), math.radians(psi), setup,
                                sim_seed, duration=cfg.gen.duration)
            records.append((rec, noise_seed))
        for delta in spec.get("turning", []):
            sim_seed, noise_seed = next_seeds()
            rec = ds.gen_turning(math.radians(delta), setup, sim_seed,
                                 duration=cfg.gen.duration)
            records.append((rec, noise_seed))
        for _ in range(spec.get("random", 0)):
            sim_seed, noise_seed = next_seeds()
            records.append((ds.gen_random(setup, sim_seed, duration=cfg.gen.duration),
                            noise_seed))
        if not records:
            raise ConfigError(f"split {split!r} defines no maneuvers")

        processed = [ds.pollute_record(ds.resample(rec, cfg.gen.dt_obs), noise, nseed)
                     for rec, nseed in records]
        out = os.path.join(cfg.dataset_dir, split)
        dataset = ds.Dataset(processed, split=split, seed=cfg.seed)
        ds.save_dataset(dataset, out)
        outputs.extend(os.path.join(out, e["observed"]) for e in
                       json.load(open(os.path.join(out, "manifest.json")))["records"])
        counts[split] = len(processed)
        if cfg.figures:
            fig_path = os.path.join(cfg.dataset_dir, f"fig_{split}.png")
            figures.dataset_figure(processed, fig_path, title=split)
            outputs.append(fig_path)
    _write_summary(cfg.dataset_dir, "gen", cfg, outputs, {"records": counts})
    return 0


def cmd_train(cfg: RunConfig) -> int:
    train_dir = os.path.join(cfg.dataset_dir, "train")
    if not os.path.exists(os.path.join(train_dir, "manifest.json")):
        raise ConfigError(f"no training dataset at {train_dir} (run 'shipens gen')")
    train = ds.load_dataset(train_dir)
    hyper = cfg.train.hyper(cfg.gen.noise())
    ensemble = sysid.train_ensemble(train, cfg.train.m, hyper, cfg.seed,
                                    jobs=cfg.effective_jobs())
    sysid.save_ensemble(ensemble, cfg.artifact_dir)
    outputs = [os.path.join(cfg.artifact_dir, f) for f in
               ["manifest.json"] + [f"member_{i:03d}.npz" for i in range(len(ensemble))]]

    hist_path = os.path.join(cfg.artifact_dir, "loss_history.csv")
    with open(hist_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("member,epoch,loss\n")
        for i, member in enumerate(ensemble.members):
            for epoch, loss in enumerate(member.loss_history):
                fh.write(f"{i},{epoch},{loss:.17g}\n")
    outputs.append(hist_path)
    if cfg.figures:
        fig_path = os.path.join(cfg.artifact_dir, "fig_loss.png")
        figures.loss_figure([m.loss_history for m in ensemble.members],
                            ensemble.seeds, fig_path)
        outputs.append(fig_path)
    final = [float(m.loss_history[-1]) for m in ensemble.members]
    _write_summary(cfg.artifact_dir, "train", cfg, outputs,
                   {"m": len(ensemble), "final_losses": final})
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    ensemble = sysid.load_ensemble(cfg.artifact_dir)
    m_full = len(ensemble)
    sizes = sorted({min(int(s), m_full) for s in cfg.predict.ensemble_sizes} | {m_full})
    out_dir = os.path.join(cfg.output_dir, "predict")
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    metric_rows = []
    for split_idx, split in enumerate(cfg.predict.splits):
        split_dir = os.path.join(cfg.dataset_dir, split)
        if not os.path.exists(os.path.join(split_dir, "manifest.json")):
            raise ConfigError(f"no dataset split at {split_dir}")
        test = ds.load_dataset(split_dir)
        scatter_rows = {}
        trend = {}
        for scheme_idx, scheme in enumerate(cfg.predict.schemes):
            eucl_by_m, maha_by_m = [], []
            for m in sizes:
                seed = int(np.random.SeedSequence(
                    [cfg.seed, 7, split_idx, scheme_idx, m]).generate_state(1)[0])
                report, clouds = pred.predict_windows(
                    ensemble.prefix(m), scheme, test, cfg.predict.p, cfg.predict.k,
                    seed, stratified=cfg.predict.stratified,
                    integrator=cfg.predict.integrator,
                    keep_clouds=(m == m_full and cfg.predict.dump_particles))
                metric_rows.append((split, scheme, m, len(report.rows),
                                    report.excluded, report.degenerate_windows,
                                    report.l_eucl, report.l_maha))
                eucl_by_m.append(report.l_eucl)
                maha_by_m.append(report.l_maha)
                if m == m_full:
                    summary_path = os.path.join(out_dir, f"{split}_{scheme}.csv")
                    pred.write_summary_csv(summary_path, report)
                    outputs.append(summary_path)
                    scatter_rows[scheme] = report.rows
                    if clouds is not None:
                        part_path = os.path.join(out_dir,
                                                 f"{split}_{scheme}_particles.csv")
                        pred.write_particles_csv(part_path, clouds,
                                                 [r.label for r in report.rows])
                        outputs.append(part_path)
            trend[scheme] = (sizes, eucl_by_m, maha_by_m)
        if cfg.figures:
            fig_scatter = os.path.join(out_dir, f"fig_{split}_scatter.png")
            figures.scatter_figure(scatter_rows, fig_scatter, title=split)
            outputs.append(fig_scatter)
            if len(sizes) > 1:
                fig_trend = os.path.join(out_dir, f"fig_{split}_trend.png")
                figures.trend_figure(trend, fig_trend, title=split)
                outputs.append(fig_trend)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("split,scheme,m,windows,excluded,degenerate_windows,l_eucl,l_maha\n")
        for row in metric_rows:
            fh.write(",".join(str(v) if isinstance(v, (int, str)) else f"{v:.17g}"
                              for v in row) + "\n")
    outputs.append(metrics_path)
    _write_summary(out_dir, "predict", cfg, outputs,
                   {"splits": list(cfg.predict.splits), "sizes": sizes})
    return 0


def cmd_pdsweep(cfg: RunConfig) -> int:
    ensemble = sysid.load_ensemble(cfg.artifact_dir)
    sw = cfg.pdsweep
    scenario = PDScenario(u0=sw.u0, target=math.radians(sw.target_deg),
                          duration=sw.duration, dt_ctrl=sw.dt_ctrl)
    setup = cfg.gen.setup(cfg.vessel())
    report = ctrl_eval.sweep(ensemble, sw.kp, sw.kd, scenario, setup,
                             p=sw.p, seed=cfg.seed, scheme=sw.scheme,
                             jobs=cfg.effective_jobs())
    out_dir = os.path.join(cfg.output_dir, "pdsweep")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    ctrl_eval.write_sweep_csv(csv_path, report)
    outputs = [csv_path]
    if cfg.figures:
        fig_path = os.path.join(out_dir, "fig_sweep.png")
        figures.sweep_figure(report, fig_path)
        outputs.append(fig_path)
    over = sum(1 for c in report.cells
               if math.isfinite(c.score_worst) and c.score_worst < c.score_truth)
    _write_summary(out_dir, "pdsweep", cfg, outputs,
                   {"cells": len(report.cells), "worst_overestimates": over})
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="shipens",
                     description="ship maneuvering simulation, ensemble system "
                                 "identification, probabilistic prediction, and "
                                 "PD gain evaluation")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--jobs", type=int, help="worker parallelism (0 = cores)")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="simulate and write the dataset splits")
    p_gen.add_argument("--out", help="dataset directory")

    p_train = sub.add_parser("train", help="train the ensemble on the train split")
    p_train.add_argument("--data", help="dataset directory")
    p_train.add_argument("--out", help="artifact directory")
    p_train.add_argument("--m", type=int, help="ensemble size")
    p_train.add_argument("--epochs", type=int)

    p_pred = sub.add_parser("predict", help="particle prediction and metrics")
    p_pred.add_argument("--data", help="dataset directory")
    p_pred.add_argument("--artifact", help="ensemble artifact directory")
    p_pred.add_argument("--out", help="output directory")
    p_pred.add_argument("--p", type=int, help="particles per window")
    p_pred.add_argument("--k", type=int, help="window length (steps)")

    p_sweep = sub.add_parser("pdsweep", help="PD gain grid sweep")
    p_sweep.add_argument("--artifact", help="ensemble artifact directory")
    p_sweep.add_argument("--out", help="output directory")
    p_sweep.add_argument("--p", type=int, help="particles per grid cell")
    p_sweep.add_argument("--scheme", choices=("tsinf", "ts1"))
    return parser


def _configure(args) -> RunConfig:
    cfg = load_config(args.config, {"seed": args.seed, "jobs": args.jobs})
    if args.no_figures:
        cfg.figures = False
    if args.command == "gen" and args.out:
        cfg.dataset_dir = args.out
    if args.command == "train":
        if args.data:
            cfg.dataset_dir = args.data
        if args.out:
            cfg.artifact_dir = args.out
        if args.m:
            cfg.train.m = args.m
        if args.epochs:
            cfg.train.epochs = args.epochs
    if args.command == "predict":
        if args.data:
            cfg.dataset_dir = args.data
        if args.artifact:
            cfg.artifact_dir = args.artifact
        if args.out:
            cfg.output_dir = args.out
        if args.p:
            cfg.predict.p = args.p
        if args.k:
            cfg.predict.k = args.k
    if args.command == "pdsweep":
        if args.artifact:
            cfg.artifact_dir = args.artifact
        if args.out:
            cfg.output_dir = args.out
        if args.p:
            cfg.pdsweep.p = args.p
        if args.scheme:
            cfg.pdsweep.scheme = args.scheme
    return cfg


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict,
            "pdsweep": cmd_pdsweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _configure(args)
        return COMMANDS[args.command](cfg)
    except (_UsageError, ConfigError) as exc:
        print(f"shipens: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"shipens: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
