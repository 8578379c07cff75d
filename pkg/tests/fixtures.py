"""Constructed inputs shared by the unit and acceptance suites."""

from pathlib import Path

import numpy as np
import pandas as pd


def sweep_fixture(n_segments=12, gps_per_segment=200, true_threshold=3.3, seed=0):
    """Segments whose risk rate is affine in crash rate exactly at ``true_threshold``.

    Each segment has ``2i + 5`` risky points below the threshold. A random
    share of them sits just under ``true_threshold - 0.1`` so the next lower
    grid point only sees noise. Random extra points just above the threshold
    spoil the next higher grid point. Everything else has no TTC.
    """
    rng = np.random.default_rng(seed)
    lo = round(true_threshold - 0.15, 10)
    mid = round(true_threshold - 0.05, 10)
    hi = round(true_threshold + 0.05, 10)
    sites, rows = [], []
    for i in range(n_segments):
        sid = f"seg{i:02d}"
        crashes = i + 1
        sites.append({"segment_id": sid, "aadt": 1000.0, "rear_crashes": crashes,
                      "sideswipe_crashes": 0})
        affine = 2 * crashes + 3
        low = int(rng.integers(0, affine + 1))
        extra = int(rng.integers(0, 30))
        ttcs = [lo] * low + [mid] * (affine - low) + [hi] * extra
        ttcs += [np.nan] * (gps_per_segment - len(ttcs))
        for t in ttcs:
            rows.append({"segment_id": sid, "ttc_lon": t, "ttc_lat": np.nan,
                         "kind": "rear_end" if np.isfinite(t) else "none"})
    return pd.DataFrame(rows), pd.DataFrame(sites)


def run_pipeline(root, cut_in=3, braking=3, benign=1, episodes=6, seed=0, figures=False):
    """Drive every subcommand through ``main`` and return the output directories."""
    from evade_lab.cli import main

    root = Path(root)
    d = {name: root / name for name in ("corpus", "clean", "conflicts", "split", "ddpg",
                                        "nn", "report", "rollout")}
    fig = ["--figures"] if figures else []
    steps = [
        ["gen-synthetic", "--out", d["corpus"], "--seed", seed, "--cut-in", cut_in,
         "--braking", braking, "--benign", benign],
        ["clean", "--lane", d["corpus"] / "lane.csv", "--targets",
         d["corpus"] / "front_targets.csv", "--wsu", d["corpus"] / "wsu.csv",
         "--out", d["clean"], *fig],
        ["extract-conflicts", "--input", d["clean"] / "derived.csv", "--out", d["conflicts"]],
        ["split", "--conflicts", d["conflicts"] / "conflicts.csv", "--seed", seed,
         "--out", d["split"]],
        ["train", "--reward", "v", "--episodes", episodes, "--seed", seed, "--conflicts",
         d["split"] / "conflicts_train.csv", "--out", d["ddpg"], *fig],
        ["train-nn", "--conflicts", d["split"] / "conflicts_train.csv", "--seed", seed,
         "--epochs", 3, "--out", d["nn"]],
        ["evaluate", "--model", d["ddpg"], "--model", d["nn"], "--test",
         d["split"] / "conflicts_test.csv", "--out", d["report"], *fig],
        ["rollout", "--model", d["ddpg"], "--conflicts", d["split"] / "conflicts_test.csv",
         "--out", d["rollout"], "--max-figures", 2, *fig],
    ]
    for argv in steps:
        code = main([str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited with {code}")
    return d
