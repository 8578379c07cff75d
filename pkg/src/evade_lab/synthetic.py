"""Synthetic connected-vehicle corpora in the three-file CSV schema.

Each trip holds one ego vehicle and one sensed leader on a straight
multi-lane road (lane width 3.6 m, lateral axis pointing left).  Templates:

``cut_in``
    A slightly slower leader in the left lane drifts into the ego lane at a
    fixed lateral speed; the ego brakes and swerves into the right lane.
``braking``
    The ego changes into the leader's lane behind it, then the leader brakes.
``benign``
    The ego changes lanes with the leader far ahead; no conflict.

The ego's longitudinal control is an IDM-style law of the observed relative
state, gated by the lateral offset, so a policy over the six-component
state can in principle reproduce it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from .env import ACTION_BOUND
from .ssm import DEFAULT_LENGTH

LANE_WIDTH = 3.6
DT = 0.1
TRIP_SECONDS = 40.0
START_CS = 1000

# driver model
IDM_ACCEL = 1.5
IDM_DECEL = 2.0
IDM_HEADWAY = 0.8
IDM_JAM_GAP = 2.0
DESIRED_SPEED = 27.0
LEADER_RECOVERY = 2.0   # leader re-acceleration after braking, m/s^2
PERCEPTION_DELAY = 0.8   # seconds between what the driver sees and the pedal

TEMPLATES = ("cut_in", "braking", "benign")
INTENDED_CONFLICTS = {"cut_in": 1, "braking": 1, "benign": 0}


@dataclass
class NoiseSpec:
    """Standard deviations of additive Gaussian sensor noise."""

    lane: float = 0.02
    transversal: float = 0.005
    range_lon: float = 0.02
    range_rate: float = 0.02
    speed: float = 0.02
    ax: float = 0.1

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class ScenarioSpec:
    cut_in: int = 110
    braking: int = 110
    benign: int = 20
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    cut_in_lateral_speed: float = 0.7


def driver_longitudinal(d_lon, v_lon, dv_lon, d_lat):
    """Ego longitudinal acceleration as a function of the observed state."""
    engage = np.clip((2.4 - np.abs(d_lat)) / 0.8, 0.0, 1.0)
    free = IDM_ACCEL * (1.0 - (v_lon / DESIRED_SPEED) ** 4)
    closing = -dv_lon
    desired_gap = IDM_JAM_GAP + np.maximum(
        0.0, v_lon * IDM_HEADWAY + v_lon * closing / (2 * np.sqrt(IDM_ACCEL * IDM_DECEL)))
    interaction = -IDM_ACCEL * (desired_gap / np.maximum(d_lon, 0.5)) ** 2
    return float(np.clip(free + engage * interaction, -ACTION_BOUND, 2.0))


def _sine_lane_change(t, start, duration, displacement):
    """Lateral acceleration of a one-period sine manoeuvre covering ``displacement``."""
    if not start <= t < start + duration:
        return 0.0
    amp = displacement * 2 * np.pi / duration ** 2
    return amp * np.sin(2 * np.pi * (t - start) / duration)


@dataclass
class _Vehicle:
    x: float
    y: float
    vx: float
    vy: float

    def step(self, ax: float, ay: float, dt: float = DT) -> None:
        self.x += self.vx * dt + 0.5 * ax * dt * dt
        self.y += self.vy * dt + 0.5 * ay * dt * dt
        self.vx += ax * dt
        self.vy += ay * dt


def _leader_script(template: str, p: Dict):
    """Leader accelerations ``(ax, ay)`` as a function of time."""
    def script(t: float):
        ax = ay = 0.0
        if template == "braking":
            end = p["brake_start"] + p["brake_time"]
            recover = p["brake_decel"] * p["brake_time"] / LEADER_RECOVERY
            if p["brake_start"] <= t < end:
                ax = -p["brake_decel"]
            elif end + 1.0 <= t < end + 1.0 + recover:
                ax = LEADER_RECOVERY
        if template == "cut_in":
            t0, ramp = p["cut_start"], 0.5
            v = p["lat_speed"]
            travel = (LANE_WIDTH - v * ramp) / v   # time at constant lateral speed
            if t0 <= t < t0 + ramp:
                ay = -v / ramp
            elif t0 + ramp + travel <= t < t0 + 2 * ramp + travel:
                ay = v / ramp
        return ax, ay
    return script


def _ego_lateral(template: str, p: Dict):
    def lateral(t: float):
        if template == "cut_in":
            return _sine_lane_change(t, p["cut_start"] + p["reaction"], p["lc_time"], -LANE_WIDTH)
        return _sine_lane_change(t, p["lc_start"], p["lc_time"], LANE_WIDTH)
    return lateral


def _draw_params(template: str, rng: np.random.Generator, lat_speed: float) -> Dict:
    p = {"v_ego": float(rng.uniform(23.0, 27.0)), "lc_time": float(rng.uniform(4.0, 5.0))}
    if template == "cut_in":
        p.update(cut_start=float(rng.uniform(14.0, 16.0)), reaction=float(rng.uniform(1.0, 1.5)),
                 lat_speed=lat_speed, gap=float(rng.uniform(2.0, 4.0)),
                 speed_deficit=float(rng.uniform(1.5, 2.5)))
    elif template == "braking":
        p.update(lc_start=float(rng.uniform(12.0, 14.0)), gap=float(rng.uniform(10.0, 15.0)),
                 brake_delay=float(rng.uniform(0.5, 2.0)), brake_decel=float(rng.uniform(5.0, 6.5)),
                 brake_time=float(rng.uniform(2.5, 3.5)))
        p["brake_start"] = p["lc_start"] + p["lc_time"] + p["brake_delay"]
    else:
        p.update(lc_start=float(rng.uniform(12.0, 14.0)), gap=float(rng.uniform(70.0, 90.0)))
    return p


def simulate_trip(template: str, p: Dict, dt: float = DT, seconds: float = TRIP_SECONDS):
    """Noise-free ground-truth kinematics of ego and leader at ``dt`` spacing."""
    n = int(round(seconds / dt))
    ego = _Vehicle(0.0, 0.0, p["v_ego"], 0.0)
    lateral = _ego_lateral(template, p)
    script = _leader_script(template, p)

    # an adjacent-lane leader does not engage the driver, so the ego's motion up to
    # the trigger is leader-free; place the leader relative to it
    anchor = p["cut_start"] if template == "cut_in" else p["lc_start"]
    probe = _Vehicle(0.0, 0.0, p["v_ego"], 0.0)
    for _ in range(int(round(anchor / dt))):
        probe.step(driver_longitudinal(1e3, probe.vx, 0.0, LANE_WIDTH), 0.0, dt)
    v_lead = probe.vx - p.get("speed_deficit", 0.0)
    x_lead = probe.x + DEFAULT_LENGTH + p["gap"] - v_lead * anchor
    lead = _Vehicle(x_lead, LANE_WIDTH, v_lead, 0.0)

    delay = int(round(PERCEPTION_DELAY / dt))
    seen = []
    rows = []
    for k in range(n):
        t = k * dt
        seen.append((lead.x - ego.x - DEFAULT_LENGTH, ego.vx, lead.vx - ego.vx, lead.y - ego.y))
        a_lon = driver_longitudinal(*seen[max(k - delay, 0)])
        a_lat = lateral(t)
        l_ax, l_ay = script(t)
        rows.append((t, ego.x, ego.y, ego.vx, ego.vy, a_lon, a_lat, lead.x, lead.y, lead.vx, lead.vy))
        ego.step(a_lon, a_lat, dt)
        lead.step(l_ax, l_ay, dt)
    return pd.DataFrame(rows, columns=["t", "x", "y", "vx", "vy", "ax", "ay",
                                       "lead_x", "lead_y", "lead_vx", "lead_vy"])


def lane_offsets(y):
    """Signed offsets of a lateral position from its lane's left/right boundaries."""
    y = np.asarray(y, dtype=float)
    lane = np.round(y / LANE_WIDTH)
    left = y - (lane + 0.5) * LANE_WIDTH
    right = y - (lane - 0.5) * LANE_WIDTH
    return left, right


def sensor_tables(truth: pd.DataFrame, device: int, trip: int, obstacle: int,
                  noise: NoiseSpec, rng: np.random.Generator):
    n = len(truth)
    time_cs = START_CS + np.arange(n) * int(round(DT * 100))
    keys = {"Device": device, "Trip": trip, "Time": time_cs}
    left, right = lane_offsets(truth.y)
    lane_noise = rng.normal(0.0, 1.0, n) * noise.lane
    lane = pd.DataFrame({**keys,
                         "LaneDistanceLeft": left + lane_noise,
                         "LaneDistanceRight": right + lane_noise,
                         "LaneQualityLeft": rng.choice([2, 3], n, p=[0.3, 0.7]),
                         "LaneQualityRight": rng.choice([2, 3], n, p=[0.3, 0.7])})
    targets = pd.DataFrame({**keys, "ObstacleId": obstacle, "TargetType": 0,
                            "Range": truth.lead_x - truth.x - DEFAULT_LENGTH
                            + rng.normal(0.0, 1.0, n) * noise.range_lon,
                            "RangeRate": truth.lead_vx - truth.vx
                            + rng.normal(0.0, 1.0, n) * noise.range_rate,
                            "Transversal": truth.lead_y - truth.y
                            + rng.normal(0.0, 1.0, n) * noise.transversal})
    wsu = pd.DataFrame({**keys, "GpsValidWsu": 1,
                        "LatitudeWsu": 42.28 + truth.x / 111_000.0,
                        "LongitudeWsu": -83.74 + truth.y / 82_000.0,
                        "GpsSpeedWsu": truth.vx + rng.normal(0.0, 1.0, n) * noise.speed,
                        "ValidCanWsu": 1,
                        "AxWsu": truth.ax + rng.normal(0.0, 1.0, n) * noise.ax})
    return lane, targets, wsu


def gen_synthetic(out_dir, spec: ScenarioSpec = ScenarioSpec(), seed: int = 0) -> Dict:
    """Write ``lane.csv``, ``front_targets.csv``, ``wsu.csv`` and ``scenarios.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    plan: List[str] = (["cut_in"] * spec.cut_in + ["braking"] * spec.braking
                       + ["benign"] * spec.benign)
    tables = ([], [], [])
    scenarios = []
    for trip, template in enumerate(plan, start=1):
        device = 10100 + (trip - 1) // 50
        obstacle = int(rng.integers(1, 64))
        p = _draw_params(template, rng, spec.cut_in_lateral_speed)
        truth = simulate_trip(template, p)
        for acc, tab in zip(tables, sensor_tables(truth, device, trip, obstacle, spec.noise, rng)):
            acc.append(tab)
        scenarios.append({"device": device, "trip": trip, "obstacle_id": obstacle,
                          "template": template, "intended_conflicts": INTENDED_CONFLICTS[template],
                          "params": p})
    for name, acc in zip(("lane.csv", "front_targets.csv", "wsu.csv"), tables):
        pd.concat(acc, ignore_index=True).to_csv(out / name, index=False, float_format="%.4f",
                                                 lineterminator="\n")
    meta = {"seed": seed, "spec": asdict(spec), "scenarios": scenarios,
            "intended_conflicts": int(sum(s["intended_conflicts"] for s in scenarios))}
    (out / "scenarios.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta
