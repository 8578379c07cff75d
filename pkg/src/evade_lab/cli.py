"""``evade-lab`` command-line entry point.

Every subcommand writes its artifacts plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 configuration/usage error, 3 I/O error, 4 data
validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__, ddpg, nn, stats, synthetic, trajectory
from .env import REWARD_CLIP, rollout, state_ttc
from .ssm import VehicleDims

log = logging.getLogger("evade_lab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
LOG_ENV = "EVADE_LAB_LOG"


class ConfigError(Exception):
    """Invalid flag combination or value."""


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, args: argparse.Namespace, inputs: Dict[str, Path],
                   outputs: List[str]) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {
        "tool": "evade-lab",
        "version": __version__,
        "subcommand": args.command,
        "seed": getattr(args, "seed", None),
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)}
                   for name, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _dims(args) -> VehicleDims:
    try:
        return VehicleDims(args.length, args.width)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _positive(name: str, value, allow_zero: bool = False) -> None:
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"--{name.replace('_', '-')} must be {'>= 0' if allow_zero else '> 0'}")


# ---------------------------------------------------------------- subcommands

def cmd_gen_synthetic(args) -> int:
    for name in ("cut_in", "braking", "benign"):
        _positive(name, getattr(args, name), allow_zero=True)
    out = _out_dir(args)
    noise = synthetic.NoiseSpec.none() if args.no_noise else synthetic.NoiseSpec()
    spec = synthetic.ScenarioSpec(args.cut_in, args.braking, args.benign, noise,
                                  args.lateral_speed)
    meta = synthetic.gen_synthetic(out, spec, args.seed)
    log.info("wrote %d trips, %d intended conflicts", len(meta["scenarios"]),
             meta["intended_conflicts"])
    write_manifest(out, args, {}, ["lane.csv", "front_targets.csv", "wsu.csv", "scenarios.json"])
    return EXIT_OK


def cmd_clean(args) -> int:
    _positive("sigma", args.sigma)
    dims = _dims(args)
    inputs = {"lane": _require_file(args.lane, "lane file"),
              "targets": _require_file(args.targets, "targets file"),
              "wsu": _require_file(args.wsu, "wsu file")}
    out = _out_dir(args)
    errors: List[trajectory.RowError] = []
    derived = trajectory.clean(inputs["lane"], inputs["targets"], inputs["wsu"], dims,
                               args.sigma, errors)
    trajectory.write_derived_csv(derived, out / "derived.csv")
    pd.DataFrame([vars(e) for e in errors], columns=["source", "row", "reason"]).to_csv(
        out / "row_errors.csv", index=False, lineterminator="\n")
    if errors:
        log.warning("dropped %d malformed rows (see row_errors.csv)", len(errors))
    outputs = ["derived.csv", "row_errors.csv"]
    if args.figures and len(derived):
        from . import plotting
        first = derived[(derived.device == derived.device.iloc[0])
                        & (derived.trip == derived.trip.iloc[0])].drop_duplicates("time_cs")
        plotting.smoothing(first.time_cs / 100.0, first.lane_dist_left, first.lane_left_smooth,
                           out / "lane_smoothing.png")
        outputs.append("lane_smoothing.png")
    write_manifest(out, args, inputs, outputs)
    log.info("%d derived records", len(derived))
    return EXIT_OK


def cmd_extract_conflicts(args) -> int:
    _positive("threshold", args.threshold)
    if args.min_run < 1:
        raise ConfigError("--min-run must be >= 1")
    inputs = {"derived": _require_file(args.input, "derived records")}
    out = _out_dir(args)
    derived = trajectory.read_derived_csv(inputs["derived"])
    events = trajectory.extract_lane_changes(derived)
    conflicts = [c for e in events for c in trajectory.extract_conflicts(e, args.threshold,
                                                                         args.min_run)]
    trajectory.write_conflicts_csv(conflicts, out / "conflicts.csv")
    trajectory.write_events_jsonl(events, conflicts, out / "events.jsonl")
    write_manifest(out, args, inputs, ["conflicts.csv", "events.jsonl"])
    log.info("%d lane changes, %d conflicts", len(events), len(conflicts))
    return EXIT_OK


def cmd_split(args) -> int:
    if not 0.0 < args.test_fraction < 1.0:
        raise ConfigError("--test-fraction must lie in (0, 1)")
    inputs = {"conflicts": _require_file(args.conflicts, "conflicts table")}
    out = _out_dir(args)
    table = trajectory.read_conflict_table(inputs["conflicts"])
    train, test = trajectory.split_conflicts(table, args.test_fraction, args.seed)
    for name, part in (("conflicts_train.csv", train), ("conflicts_test.csv", test)):
        part.to_csv(out / name, index=False, na_rep="", lineterminator="\n")
    write_manifest(out, args, inputs, ["conflicts_train.csv", "conflicts_test.csv"])
    log.info("split %d train / %d test conflicts", train.conflict_id.nunique(),
             test.conflict_id.nunique())
    return EXIT_OK


def _episodes(path) -> list:
    eps = trajectory.episodes_from_table(trajectory.read_conflict_table(path))
    if not eps:
        raise trajectory.DataValidationError(f"{path}: no conflicts")
    return eps


def cmd_train(args) -> int:
    _positive("episodes", args.episodes, allow_zero=True)
    inputs = {"conflicts": _require_file(args.conflicts, "conflicts table")}
    out = _out_dir(args)
    episodes = _episodes(inputs["conflicts"])
    config = ddpg.DdpgConfig(reward_clip=None if args.no_reward_clip else REWARD_CLIP)
    bundle, tlog = ddpg.train(episodes, args.reward, args.episodes, args.seed, config)
    bundle.save(out)
    tlog.write_csv(out / "training_log.csv", out / "training_timing.csv")
    outputs = ["actor.npz", "target_actor.npz", "critic.npz", "target_critic.npz",
               "training_log.csv", "training_timing.csv"]
    if args.figures and len(tlog):
        from . import plotting
        plotting.reward_curve(tlog.rewards, tlog.rolling_reward(50), out / "reward_curve.png")
        outputs.append("reward_curve.png")
    write_manifest(out, args, inputs, outputs)
    return EXIT_OK


def cmd_train_nn(args) -> int:
    _positive("epochs", args.epochs)
    inputs = {"conflicts": _require_file(args.conflicts, "conflicts table")}
    out = _out_dir(args)
    cfg = stats.BenchmarkConfig(epochs=args.epochs, lr=args.lr)
    net, losses = stats.nn_benchmark_train(_episodes(inputs["conflicts"]), args.seed, cfg)
    nn.save_mlp(net, out / "benchmark.npz")
    pd.DataFrame({"epoch": np.arange(len(losses)), "loss": losses}).to_csv(
        out / "benchmark_loss.csv", index=False, lineterminator="\n")
    write_manifest(out, args, inputs, ["benchmark.npz", "benchmark_loss.csv"])
    return EXIT_OK


def load_policy_net(model_dir) -> nn.Mlp:
    """Actor of a DDPG model directory, or the benchmark net of a train-nn directory."""
    d = Path(model_dir)
    for name in ("actor.npz", "benchmark.npz"):
        if (d / name).is_file():
            return nn.load_mlp(d / name)
    raise FileNotFoundError(f"no actor.npz or benchmark.npz in {d}")


def _model_label(model_dir: str) -> str:
    return Path(model_dir).name or str(model_dir)


def report_markdown(reports: Dict[str, stats.MetricReport]) -> str:
    header = "| model | " + " | ".join(f"{v} RMSE | {v} JSD" for v in stats.VARIABLES) + " |"
    rule = "|---" * (1 + 2 * len(stats.VARIABLES)) + "|"
    lines = [header, rule]
    for name, rep in reports.items():
        cells = []
        for v in stats.VARIABLES:
            cells += [f"{rep.rmse[v]:.4f}", f"{rep.jsd[v]:.4f}"]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    if args.bins < 2:
        raise ConfigError("--bins must be >= 2")
    inputs = {"test": _require_file(args.test, "test conflicts")}
    out = _out_dir(args)
    episodes = _episodes(inputs["test"])
    reports: Dict[str, stats.MetricReport] = {}
    outputs = []
    rows = []
    for k, model_dir in enumerate(args.model):
        net = load_policy_net(model_dir)
        for name in ("actor.npz", "benchmark.npz"):
            if (Path(model_dir) / name).is_file():
                inputs[f"model{k}"] = Path(model_dir) / name
                break
        label = _model_label(model_dir)
        rep = stats.evaluate_model(net, episodes, args.bins)
        reports[label] = rep
        rows.append(rep.frame().assign(model=label))
        if args.figures:
            from . import plotting
            os_ = stats.one_step_predictions(net, episodes)
            fname = f"distributions_{k}.png"
            plotting.distributions(os_.predicted, os_.observed, stats.VARIABLES, out / fname)
            outputs.append(fname)
    table = pd.concat(rows, ignore_index=True)[["model", "variable", "rmse", "jsd"]]
    table.to_csv(out / "metric_report.csv", index=False, float_format="%.10g",
                 lineterminator="\n")
    (out / "metric_report.md").write_text(report_markdown(reports))
    outputs += ["metric_report.csv", "metric_report.md"]
    write_manifest(out, args, inputs, outputs)
    return EXIT_OK


ROLLOUT_COLUMNS = ["conflict_id", "step", "time_s", "d_lon", "v_lon", "dv_lon", "d_lat", "v_lat",
                   "dv_lat", "a_lon", "a_lat", "ttc_2d", "obs_ttc_2d"]


def cmd_rollout(args) -> int:
    inputs = {"conflicts": _require_file(args.conflicts, "conflicts table")}
    out = _out_dir(args)
    net = load_policy_net(args.model)
    episodes = _episodes(inputs["conflicts"])
    if args.conflict_id:
        wanted = set(args.conflict_id)
        episodes = [e for e in episodes if e.conflict_id in wanted]
        if not episodes:
            raise trajectory.DataValidationError("none of the requested conflict ids exist")
    frames = []
    outputs = ["rollout.csv"]
    for k, ep in enumerate(episodes):
        res = rollout(ep.states[0], ep.leader_profile(), net.forward)
        sim_ttc = state_ttc(res.states)[2]
        obs_ttc = state_ttc(ep.states)[2]
        t = (ep.time_cs - ep.time_cs[0]) / 100.0
        f = pd.DataFrame(res.states, columns=ROLLOUT_COLUMNS[3:9])
        f.insert(0, "time_s", t)
        f.insert(0, "step", np.arange(len(ep)))
        f.insert(0, "conflict_id", ep.conflict_id)
        f["a_lon"], f["a_lat"] = res.actions[:, 0], res.actions[:, 1]
        f["ttc_2d"], f["obs_ttc_2d"] = sim_ttc, obs_ttc
        frames.append(f)
        if args.figures and k < args.max_figures:
            from . import plotting
            fname = f"rollout_{k:03d}.png"
            plotting.rollout_panels(t, ep.states, res.states, obs_ttc, sim_ttc, out / fname,
                                    title=ep.conflict_id)
            outputs.append(fname)
    pd.concat(frames, ignore_index=True)[ROLLOUT_COLUMNS].to_csv(
        out / "rollout.csv", index=False, na_rep="", float_format="%.10g", lineterminator="\n")
    for k, model_file in enumerate(("actor.npz", "benchmark.npz")):
        if (Path(args.model) / model_file).is_file():
            inputs["model"] = Path(args.model) / model_file
            break
    write_manifest(out, args, inputs, outputs)
    return EXIT_OK


def cmd_sweep_threshold(args) -> int:
    try:
        grid = stats.threshold_grid(args.min, args.max, args.step)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    inputs = {"points": _require_file(args.points, "points table"),
              "sites": _require_file(args.sites, "sites table")}
    out = _out_dir(args)
    points = pd.read_csv(inputs["points"], dtype={"segment_id": str})
    sites = pd.read_csv(inputs["sites"], dtype={"segment_id": str})
    for name, frame, cols in (("points", points, ["segment_id", "ttc_lon", "ttc_lat"]),
                              ("sites", sites, ["segment_id", "aadt", "rear_crashes",
                                                "sideswipe_crashes"])):
        missing = [c for c in cols if c not in frame.columns]
        if missing:
            raise trajectory.DataValidationError(f"{name}: missing columns {missing}")
    kinds = ["rear", "side", "all"] if args.kind == "each" else [args.kind]
    outputs = []
    summary = ["| crash type | optimal threshold (s) | Pearson r | p-value |", "|---|---|---|---|"]
    for kind in kinds:
        res = stats.threshold_sweep(points, sites, kind, grid)
        fname = f"sweep_{kind}.csv"
        res.frame().to_csv(out / fname, index=False, na_rep="", float_format="%.10g",
                           lineterminator="\n")
        outputs.append(fname)
        best = res.best
        if best is None:
            summary.append(f"| {kind} | undefined | undefined | undefined |")
        else:
            summary.append(f"| {kind} | {best.threshold:.1f} | {best.r:.4f} | {best.p_value:.3g} |")
        if args.figures:
            from . import plotting
            plotting.sweep_curve(res.frame(), out / f"sweep_{kind}.png", kind)
            outputs.append(f"sweep_{kind}.png")
    (out / "sweep_summary.md").write_text("\n".join(summary) + "\n")
    outputs.append("sweep_summary.md")
    write_manifest(out, args, inputs, outputs)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_dims(p) -> None:
    p.add_argument("--length", type=float, default=4.8, help="vehicle length l (m)")
    p.add_argument("--width", type=float, default=1.6, help="vehicle width w (m)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evade-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic three-file corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cut-in", type=int, default=110)
    p.add_argument("--braking", type=int, default=110)
    p.add_argument("--benign", type=int, default=20)
    p.add_argument("--lateral-speed", type=float, default=0.7,
                   help="cut-in closing lateral speed (m/s)")
    p.add_argument("--no-noise", action="store_true", help="disable sensor noise")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("clean", help="join, filter and derive kinematics")
    p.add_argument("--lane", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--wsu", required=True)
    p.add_argument("--sigma", type=float, default=trajectory.DEFAULT_SIGMA,
                   help="Gaussian smoothing sigma in samples")
    _add_dims(p)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("extract-conflicts", help="lane-change events and 2D-TTC conflicts")
    p.add_argument("--input", required=True, help="derived.csv written by clean")
    p.add_argument("--threshold", type=float, default=trajectory.DEFAULT_THRESHOLD)
    p.add_argument("--min-run", type=int, default=trajectory.DEFAULT_MIN_RUN)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_conflicts)

    p = sub.add_parser("split", help="seeded conflict-level train/test split")
    p.add_argument("--conflicts", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a DDPG agent")
    p.add_argument("--reward", choices=["d", "v", "dv"], required=True)
    p.add_argument("--episodes", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--conflicts", required=True)
    p.add_argument("--no-reward-clip", action="store_true",
                   help="disable the per-term reward clip at -100")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-nn", help="train the supervised benchmark network")
    p.add_argument("--conflicts", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=stats.BenchmarkConfig.epochs)
    p.add_argument("--lr", type=float, default=stats.BenchmarkConfig.lr)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_nn)

    p = sub.add_parser("evaluate", help="one-step RMSE/JSD report")
    p.add_argument("--model", required=True, action="append",
                   help="model directory (repeat to compare several)")
    p.add_argument("--test", required=True)
    p.add_argument("--bins", type=int, default=stats.DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rollout", help="closed-loop trajectories from initial states")
    p.add_argument("--model", required=True)
    p.add_argument("--conflicts", required=True)
    p.add_argument("--conflict-id", action="append")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true")
    p.add_argument("--max-figures", type=int, default=10)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("sweep-threshold", help="risk/crash correlation over 2D-TTC thresholds")
    p.add_argument("--points", required=True)
    p.add_argument("--sites", required=True)
    p.add_argument("--min", type=float, default=0.5)
    p.add_argument("--max", type=float, default=10.0)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--kind", choices=["rear", "side", "all", "each"], default="all")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_sweep_threshold)
    return parser


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"evade-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        print(f"evade-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (trajectory.DataValidationError, nn.ModelFormatError, ValueError) as exc:
        print(f"evade-lab: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
