"""Connected-vehicle record cleaning, kinematics derivation and conflict extraction.

Lateral sign convention: every lateral quantity is measured along one axis
pointing to the ego's left.  ``LaneDistanceLeft``/``LaneDistanceRight`` are
the signed offsets of the vehicle center from the left/right lane boundary
(``y_vehicle - y_boundary``), so the left value is normally negative and the
right one positive.  With that convention the lateral-speed formula
``((dl(t)-dl(t-1)) + (dr(t)-dr(t-1))) / (2 dt)`` gives the ego's leftward
speed, and a left lane change shows up as both offsets dropping by one lane
width between consecutive samples.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .env import Episode
from .ssm import ConflictKind, VehicleDims, ttc_2d_arrays

log = logging.getLogger(__name__)

KEYS = ["Device", "Trip", "Time"]
LANE_FIELDS = ["LaneDistanceLeft", "LaneDistanceRight", "LaneQualityLeft", "LaneQualityRight"]
TARGET_FIELDS = ["ObstacleId", "TargetType", "Range", "RangeRate", "Transversal"]
WSU_FIELDS = ["GpsValidWsu", "LatitudeWsu", "LongitudeWsu", "GpsSpeedWsu", "ValidCanWsu", "AxWsu"]

# source CSV field name -> record attribute
COLUMN_MAP = {
    "Device": "device", "Trip": "trip", "Time": "time_cs",
    "LaneDistanceLeft": "lane_dist_left", "LaneDistanceRight": "lane_dist_right",
    "LaneQualityLeft": "lane_quality_left", "LaneQualityRight": "lane_quality_right",
    "ObstacleId": "obstacle_id", "TargetType": "target_type", "Range": "range_lon",
    "RangeRate": "range_rate", "Transversal": "transversal",
    "GpsValidWsu": "gps_valid", "LatitudeWsu": "lat_deg", "LongitudeWsu": "lon_deg",
    "GpsSpeedWsu": "gps_speed", "ValidCanWsu": "can_valid", "AxWsu": "ax",
}
INT_COLUMNS = ["device", "trip", "time_cs", "lane_quality_left", "lane_quality_right",
               "obstacle_id", "target_type", "gps_valid", "can_valid"]

NATIVE_STEP_CS = 10
MAX_GAP_CS = 15
WINDOW_CS = 1500
CROSSING_JUMP = 1.0
DEFAULT_SIGMA = 5.0
DEFAULT_THRESHOLD = 5.0
DEFAULT_MIN_RUN = 11


class DataValidationError(Exception):
    """Input files are structurally unusable (missing columns, no rows)."""


@dataclass
class RowError:
    source: str
    row: int
    reason: str


# ---------------------------------------------------------------- ingestion

def _read_table(path, fields: Sequence[str], name: str, errors: List[RowError]) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [c for c in KEYS + list(fields) if c not in df.columns]
    if missing:
        raise DataValidationError(f"{name}: missing columns {missing}")
    df = df[KEYS + list(fields)]
    numeric = df.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    for idx in np.flatnonzero(bad.to_numpy()):
        cols = [c for c in numeric.columns if pd.isna(numeric.iat[idx, numeric.columns.get_loc(c)])]
        errors.append(RowError(name, int(idx), f"malformed or missing {','.join(cols)}"))
    return numeric[~bad]


def load_records(lane_path, targets_path, wsu_path, errors: Optional[List[RowError]] = None
                 ) -> pd.DataFrame:
    """Read the three CSV files and join them exactly on Device, Trip, Time.

    Malformed rows are dropped and reported through ``errors``.
    """
    errors = errors if errors is not None else []
    lane = _read_table(lane_path, LANE_FIELDS, "lane", errors)
    targets = _read_table(targets_path, TARGET_FIELDS, "front_targets", errors)
    wsu = _read_table(wsu_path, WSU_FIELDS, "wsu", errors)
    merged = lane.merge(wsu, on=KEYS, how="inner").merge(targets, on=KEYS, how="inner")
    merged = merged.rename(columns=COLUMN_MAP)
    if merged.empty:
        raise DataValidationError("no rows share Device/Trip/Time across the three files")
    for c in INT_COLUMNS:
        merged[c] = merged[c].astype(np.int64)
    return merged.sort_values(["device", "trip", "time_cs", "obstacle_id"],
                              kind="mergesort").reset_index(drop=True)


# ---------------------------------------------------------------- filters

def filter_valid(records: pd.DataFrame) -> pd.DataFrame:
    keep = ((records.lane_quality_left > 0) & (records.lane_quality_right > 0)
            & (records.gps_valid == 1) & (records.can_valid == 1) & (records.target_type == 0))
    return records[keep]


def filter_outliers(records: pd.DataFrame) -> pd.DataFrame:
    drop = ((records.gps_speed > 90) | (records.ax > 7)
            | (records.gps_speed + records.range_rate <= -1)
            | (records.range_lon >= 100) | (records.transversal.abs() >= 7))
    return records[~drop]


# ---------------------------------------------------------------- smoothing

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(4 * sigma))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_lane_distance(series, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Gaussian smoothing truncated at 4 sigma, renormalised near the ends."""
    x = np.asarray(series, dtype=float)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if len(x) < 3:
        log.warning("series of %d samples is too short to smooth", len(x))
        return x.copy()
    k = gaussian_kernel(sigma)
    return _centered_convolve(x, k) / _centered_convolve(np.ones_like(x), k)


def _centered_convolve(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # zero-padded; np.convolve 'same' would return len(k) samples for short x
    full = np.convolve(x, k, mode="full")
    start = (len(k) - 1) // 2
    return full[start:start + len(x)]


def find_lane_crossings(left, right, jump: float = CROSSING_JUMP):
    """Indices where both boundary offsets jump by at least ``jump`` in the same direction.

    Returns ``(index, direction)`` pairs; ``index`` is the first sample in
    the new lane and ``direction`` is ``"Left"`` for a drop, ``"Right"`` for a rise.
    """
    dl = np.diff(np.asarray(left, dtype=float))
    dr = np.diff(np.asarray(right, dtype=float))
    out = []
    for i in np.flatnonzero((np.abs(dl) >= jump) & (np.abs(dr) >= jump) & (np.sign(dl) == np.sign(dr))):
        out.append((int(i) + 1, "Left" if dl[i] < 0 else "Right"))
    return out


def unwrap_lane_offsets(left, right, jump: float = CROSSING_JUMP):
    """Remove lane-change jumps so both offsets become continuous.

    The step across a jump is replaced by the mean of its neighbouring steps.
    Returns ``(left, right, left_shift, right_shift)``; adding a shift back
    re-wraps the corresponding series.
    """
    crossings = find_lane_crossings(left, right, jump)
    out = []
    for series in (np.asarray(left, dtype=float), np.asarray(right, dtype=float)):
        steps = np.diff(series)
        removed = np.zeros_like(steps)
        for idx, _ in crossings:
            i = idx - 1
            neighbours = [steps[j] for j in (i - 1, i + 1)
                          if 0 <= j < len(steps) and abs(steps[j]) < jump]
            removed[i] = steps[i] - (float(np.mean(neighbours)) if neighbours else 0.0)
        shift = np.concatenate([[0.0], np.cumsum(removed)])
        out.append((series - shift, shift))
    (ul, sl), (ur, sr) = out
    return ul, ur, sl, sr


# ---------------------------------------------------------------- derivation

def _runs(time_cs: np.ndarray, max_gap: int = MAX_GAP_CS) -> List[slice]:
    if len(time_cs) == 0:
        return []
    breaks = np.flatnonzero(np.diff(time_cs) > max_gap) + 1
    edges = np.concatenate([[0], breaks, [len(time_cs)]])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _ego_series(trip: pd.DataFrame, sigma: float) -> pd.DataFrame:
    """Smoothed lane offsets, lateral speed and acceleration per ego time step."""
    ego = trip.drop_duplicates("time_cs")[["time_cs", "lane_dist_left", "lane_dist_right"]]
    t = ego.time_cs.to_numpy()
    raw_l = ego.lane_dist_left.to_numpy(dtype=float)
    raw_r = ego.lane_dist_right.to_numpy(dtype=float)
    sm_l = np.full(len(t), np.nan)
    sm_r = np.full(len(t), np.nan)
    v_lat = np.full(len(t), np.nan)
    a_lat = np.full(len(t), np.nan)
    for run in _runs(t):
        ul, ur, shift_l, shift_r = unwrap_lane_offsets(raw_l[run], raw_r[run])
        ul, ur = smooth_lane_distance(ul, sigma), smooth_lane_distance(ur, sigma)
        sm_l[run] = ul + shift_l
        sm_r[run] = ur + shift_r
        if run.stop - run.start < 2:
            continue
        dt = np.diff(t[run]) / 100.0
        v = np.concatenate([[np.nan], (np.diff(ul) + np.diff(ur)) / (2 * dt)])
        v_lat[run] = v
        a = np.full(len(v), np.nan)
        a[1:-1] = np.diff(v[1:]) / dt[1:]
        a_lat[run] = a
    return pd.DataFrame({"time_cs": t, "lane_left_smooth": sm_l, "lane_right_smooth": sm_r,
                         "v_lat": v_lat, "a_lat": a_lat, "ego_run": _run_labels(t)})


def _run_labels(t: np.ndarray) -> np.ndarray:
    labels = np.zeros(len(t), dtype=np.int64)
    for k, run in enumerate(_runs(t)):
        labels[run] = k
    return labels


DERIVED_COLUMNS = ["d_lon", "v_lon", "dv_lon", "d_lat", "v_lat", "dv_lat", "v0_lon", "v0_lat",
                   "s0_lon", "a_lon", "a_lat", "ttc_lon", "ttc_lat", "ttc_2d", "kind"]


def derive_kinematics(records: pd.DataFrame, dims: VehicleDims = VehicleDims(),
                      sigma: float = DEFAULT_SIGMA) -> pd.DataFrame:
    """Add the 2D-TTC inputs and TTC results to filtered records.

    Differencing never crosses a gap longer than 0.15 s; the first record of
    every contiguous (ego run, obstacle) stream has no difference and is dropped.
    """
    parts = []
    for (device, trip), grp in records.groupby(["device", "trip"], sort=True):
        grp = grp.sort_values(["time_cs", "obstacle_id"], kind="mergesort")
        ego = _ego_series(grp, sigma)
        g = grp.merge(ego, on="time_cs", how="left")
        for _, stream in g.groupby("obstacle_id", sort=True):
            stream = stream.sort_values("time_cs", kind="mergesort")
            t = stream.time_cs.to_numpy()
            trans = stream.transversal.to_numpy(dtype=float)
            v0_lat = np.full(len(t), np.nan)
            for run in _runs(t):
                dt = np.diff(t[run]) / 100.0
                v0_lat[run.start + 1:run.stop] = (stream.v_lat.to_numpy()[run.start + 1:run.stop]
                                                  + np.diff(trans[run]) / dt)
            stream = stream.assign(v0_lat=v0_lat)
            parts.append(stream[np.isfinite(v0_lat)])
    if not parts:
        return pd.DataFrame(columns=list(records.columns) + DERIVED_COLUMNS)
    df = pd.concat(parts, ignore_index=True)
    df["d_lon"] = df.range_lon
    df["v_lon"] = df.gps_speed
    df["dv_lon"] = df.range_rate
    df["d_lat"] = df.transversal
    df["v0_lon"] = df.v_lon + df.dv_lon
    df["dv_lat"] = df.v0_lat - df.v_lat
    df["s0_lon"] = df.d_lon + dims.length
    df["a_lon"] = df.ax
    t_lon, t_lat, t2d, kind = ttc_2d_arrays(df.s0_lon, df.d_lat, df.v_lon, df.v_lat,
                                            df.v0_lon, df.v0_lat, dims)
    df["ttc_lon"], df["ttc_lat"], df["ttc_2d"] = t_lon, t_lat, t2d
    df["kind"] = [k.value for k in kind]
    return df.sort_values(["device", "trip", "time_cs", "obstacle_id"],
                          kind="mergesort").reset_index(drop=True)


def clean(lane_path, targets_path, wsu_path, dims: VehicleDims = VehicleDims(),
          sigma: float = DEFAULT_SIGMA, errors: Optional[List[RowError]] = None) -> pd.DataFrame:
    records = load_records(lane_path, targets_path, wsu_path, errors)
    return derive_kinematics(filter_outliers(filter_valid(records)), dims, sigma)


# ---------------------------------------------------------------- events

@dataclass
class LaneChangeEvent:
    event_id: str
    device: int
    trip: int
    direction: str
    cross_time_cs: int
    start_time_cs: int
    end_time_cs: int
    truncated: bool
    records: pd.DataFrame = field(repr=False)


@dataclass
class ConflictEvent:
    conflict_id: str
    event_id: str
    obstacle_id: int
    kind: ConflictKind
    records: pd.DataFrame = field(repr=False)

    def __len__(self):
        return len(self.records)


def extract_lane_changes(derived: pd.DataFrame, window_cs: int = WINDOW_CS,
                         jump: float = CROSSING_JUMP) -> List[LaneChangeEvent]:
    """One event per boundary crossing, holding the records within +-15 s of it."""
    events = []
    for (device, trip), grp in derived.groupby(["device", "trip"], sort=True):
        ego = grp.drop_duplicates("time_cs").sort_values("time_cs")
        t = ego.time_cs.to_numpy()
        first, last = int(t[0]), int(t[-1])
        for run in _runs(t):
            left = ego.lane_left_smooth.to_numpy()[run]
            right = ego.lane_right_smooth.to_numpy()[run]
            for idx, direction in find_lane_crossings(left, right, jump):
                cross = int(t[run][idx])
                lo, hi = cross - window_cs, cross + window_cs
                recs = grp[(grp.time_cs >= lo) & (grp.time_cs <= hi)]
                truncated = lo < first or hi > last
                if truncated:
                    log.info("event %s-%s-%s truncated at trip edge", device, trip, cross)
                events.append(LaneChangeEvent(f"{device}-{trip}-{cross}", int(device), int(trip),
                                              direction, cross, lo, hi, truncated, recs))
    return events


def _dominant_kind(run: pd.DataFrame) -> ConflictKind:
    counts = run.kind.value_counts()
    counts = counts[counts.index != ConflictKind.NONE.value]
    top = counts[counts == counts.max()]
    if len(top) == 1:
        return ConflictKind(top.index[0])
    return ConflictKind(run.loc[run.ttc_2d.idxmin(), "kind"])


def risky_runs(time_cs, ttc_2d, threshold: float = DEFAULT_THRESHOLD,
               min_run: int = DEFAULT_MIN_RUN, step_cs: int = NATIVE_STEP_CS) -> List[slice]:
    """Maximal runs of consecutive sub-threshold samples at the native cadence."""
    t = np.asarray(time_cs)
    ttc = np.asarray(ttc_2d, dtype=float)
    risky = np.isfinite(ttc) & (ttc < threshold)
    out, start = [], None
    for i in range(len(t) + 1):
        contiguous = i < len(t) and risky[i] and (start is None or t[i] - t[i - 1] <= step_cs)
        if start is not None and not contiguous:
            if i - start >= min_run:
                out.append(slice(start, i))
            start = None
        if i < len(t) and risky[i] and start is None:
            start = i
    return out


def extract_conflicts(event: LaneChangeEvent, threshold: float = DEFAULT_THRESHOLD,
                      min_run: int = DEFAULT_MIN_RUN) -> List[ConflictEvent]:
    conflicts = []
    for obstacle, stream in event.records.groupby("obstacle_id", sort=True):
        stream = stream.sort_values("time_cs", kind="mergesort")
        for k, run in enumerate(risky_runs(stream.time_cs.to_numpy(), stream.ttc_2d.to_numpy(),
                                           threshold, min_run)):
            recs = stream.iloc[run]
            conflicts.append(ConflictEvent(f"{event.event_id}-{obstacle}-{k}", event.event_id,
                                           int(obstacle), _dominant_kind(recs), recs))
    return conflicts


# ---------------------------------------------------------------- output

CONFLICT_CSV_COLUMNS = (["conflict_id", "event_id", "conflict_kind", "device", "trip", "time_cs",
                         "obstacle_id", "lane_dist_left", "lane_dist_right", "lane_left_smooth",
                         "lane_right_smooth", "range_lon", "range_rate", "transversal",
                         "gps_speed", "ax"] + DERIVED_COLUMNS)


def conflicts_frame(conflicts: Sequence[ConflictEvent]) -> pd.DataFrame:
    frames = []
    for c in conflicts:
        f = c.records.assign(conflict_id=c.conflict_id, event_id=c.event_id,
                             conflict_kind=c.kind.value)
        frames.append(f[CONFLICT_CSV_COLUMNS])
    if not frames:
        return pd.DataFrame(columns=CONFLICT_CSV_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def write_conflicts_csv(conflicts: Sequence[ConflictEvent], path) -> None:
    # NaN (no collision) is written as an empty field
    conflicts_frame(conflicts).to_csv(path, index=False, na_rep="", lineterminator="\n")


def event_summary(event: LaneChangeEvent, conflicts: Sequence[ConflictEvent]) -> Dict:
    own = [c for c in conflicts if c.event_id == event.event_id]
    return {"event_id": event.event_id, "device": event.device, "trip": event.trip,
            "direction": event.direction, "cross_time_cs": event.cross_time_cs,
            "start_time_cs": event.start_time_cs, "end_time_cs": event.end_time_cs,
            "truncated": event.truncated, "n_records": int(len(event.records)),
            "n_conflicts": len(own),
            "conflicts": [{"conflict_id": c.conflict_id, "obstacle_id": c.obstacle_id,
                           "kind": c.kind.value, "n_records": len(c)} for c in own]}


def write_events_jsonl(events: Sequence[LaneChangeEvent], conflicts: Sequence[ConflictEvent],
                       path) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(event_summary(e, conflicts), sort_keys=True) + "\n")


def write_derived_csv(derived: pd.DataFrame, path) -> None:
    derived.to_csv(path, index=False, na_rep="", lineterminator="\n")


def read_derived_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"kind": str}, keep_default_na=False, na_values=[""])
    missing = [c for c in ["device", "trip", "time_cs", "obstacle_id", "lane_left_smooth",
                           "lane_right_smooth"] + DERIVED_COLUMNS if c not in df.columns]
    if missing:
        raise DataValidationError(f"{path}: missing columns {missing}")
    return df


def read_conflict_table(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"conflict_id": str, "event_id": str})
    missing = [c for c in CONFLICT_CSV_COLUMNS if c not in df.columns]
    if missing:
        raise DataValidationError(f"{path}: missing columns {missing}")
    return df


def episodes_from_table(table: pd.DataFrame) -> List[Episode]:
    """Turn conflict rows into environment episodes ordered by time."""
    episodes = []
    for cid, grp in table.groupby("conflict_id", sort=True):
        grp = grp.sort_values("time_cs", kind="mergesort")
        states = grp[["d_lon", "v_lon", "dv_lon", "d_lat", "v_lat", "dv_lat"]].to_numpy(float)
        accel = np.nan_to_num(grp[["a_lon", "a_lat"]].to_numpy(float))
        episodes.append(Episode(str(cid), states, accel, grp.time_cs.to_numpy(),
                                kind=str(grp.conflict_kind.iloc[0]),
                                meta={"event_id": str(grp.event_id.iloc[0]),
                                      "obstacle_id": int(grp.obstacle_id.iloc[0])}))
    return episodes


def split_conflicts(table: pd.DataFrame, test_fraction: float = 0.2, seed: int = 0):
    """Seeded event-level split of a conflict table into (train, test)."""
    ids = np.array(sorted(table.conflict_id.unique()))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test_ids = set(ids[perm[:n_test]])
    mask = table.conflict_id.isin(test_ids)
    return table[~mask].reset_index(drop=True), table[mask].reset_index(drop=True)
