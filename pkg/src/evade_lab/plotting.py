"""Static figures written next to the CSV reports (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .env import D_LAT, D_LON, V_LAT, V_LON  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def reward_curve(rewards, rolling, path, window: int = 50) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ep = np.arange(len(rewards))
    ax.plot(ep, rewards, color="0.75", lw=0.6, label="episode reward")
    ax.plot(ep, rolling, color="C0", lw=1.6, label=f"{window}-episode rolling mean")
    ax.set_xlabel("episode")
    ax.set_ylabel("cumulative reward")
    ax.legend(loc="lower right")
    _save(fig, path)


def sweep_curve(frame, path, kind: str = "") -> None:
    """Correlation against threshold; degenerate thresholds are left blank."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ok = ~frame.degenerate.to_numpy(bool)
    ax.plot(frame.threshold[ok], frame.r[ok], marker=".", lw=1)
    if ok.any():
        best = frame[ok].r.idxmax()
        ax.axvline(frame.threshold[best], color="C3", ls="--", lw=1,
                   label=f"best {frame.threshold[best]:.1f} s (r={frame.r[best]:.3f})")
        ax.legend()
    ax.set_xlabel("2D-TTC threshold (s)")
    ax.set_ylabel("Pearson r")
    ax.set_title(f"risk rate vs crash rate ({kind})" if kind else "risk rate vs crash rate")
    _save(fig, path)


def rollout_panels(time_s, observed, simulated, ttc_observed, ttc_simulated, path,
                   title: str = "") -> None:
    """Relative trajectory, 2D-TTC and speeds for one rolled-out conflict."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    ax = axes[0]
    ax.plot(observed[:, D_LAT], observed[:, D_LON], label="observed")
    ax.plot(simulated[:, D_LAT], simulated[:, D_LON], ls="--", label="simulated")
    ax.set_xlabel("lateral distance (m)")
    ax.set_ylabel("longitudinal distance (m)")
    ax.legend()
    ax = axes[1]
    ax.plot(time_s, ttc_observed, label="observed")
    ax.plot(time_s, ttc_simulated, ls="--", label="simulated")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("2D-TTC (s)")
    ax = axes[2]
    ax.plot(time_s, observed[:, V_LON], label="v_lon observed")
    ax.plot(time_s, simulated[:, V_LON], ls="--", label="v_lon simulated")
    twin = ax.twinx()
    twin.plot(time_s, observed[:, V_LAT], color="C2", label="v_lat observed")
    twin.plot(time_s, simulated[:, V_LAT], color="C3", ls="--", label="v_lat simulated")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("longitudinal speed (m/s)")
    twin.set_ylabel("lateral speed (m/s)")
    if title:
        fig.suptitle(title)
    _save(fig, path)


def distributions(predicted, observed, variables, path, bins: int = 50) -> None:
    """Histogram overlays of one-step predictions against observations."""
    fig, axes = plt.subplots(2, 3, figsize=(11, 6))
    for ax, name in zip(axes.ravel(), variables):
        p, o = predicted[name], observed[name]
        lo, hi = min(p.min(), o.min()), max(p.max(), o.max())
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        ax.hist(o, bins=edges, alpha=0.55, density=True, label="observed")
        ax.hist(p, bins=edges, alpha=0.55, density=True, label="predicted")
        ax.set_title(name)
    axes.ravel()[0].legend()
    _save(fig, path)


def smoothing(time_s, raw, smoothed, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(time_s, raw, color="0.6", lw=0.8, label="raw")
    ax.plot(time_s, smoothed, color="C0", lw=1.4, label="Gaussian-smoothed")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("lane distance (m)")
    ax.legend()
    _save(fig, path)
