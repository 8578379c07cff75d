"""Evaluation statistics: RMSE/JSD model reports, risk-crash correlation sweeps
and the supervised neural-network benchmark."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats as sps

from . import nn
from .env import ACTION_BOUND, DT, V_LAT, V_LON, D_LAT, D_LON, Episode, step_kinematics

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
DEFAULT_BINS = 100
VARIABLES = ("d_lon", "v_lon", "a_lon", "d_lat", "v_lat", "a_lat")


def rmse(estimates, observed) -> float:
    e = np.asarray(estimates, dtype=float).ravel()
    o = np.asarray(observed, dtype=float).ravel()
    if e.shape != o.shape:
        raise ValueError(f"length mismatch: {e.size} estimates vs {o.size} observations")
    if e.size == 0:
        raise ValueError("rmse of empty sequences")
    return float(np.sqrt(np.mean((e - o) ** 2)))


def _entropy_terms(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def _bin_counts(x: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    # np.histogram rejects tiny (subnormal) ranges, so bin by hand
    with np.errstate(over="ignore"):
        width = hi - lo
    if np.isfinite(width):
        pos = (x - lo) / width
    else:
        pos = (x / 2 - lo / 2) / (hi / 2 - lo / 2)
    idx = np.minimum((pos * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins)


def jsd(p_samples, q_samples, bins: int = DEFAULT_BINS) -> float:
    """Jensen-Shannon divergence (natural log) of two samples' histograms.

    Both histograms share ``bins`` equal bins over the pooled min-max range.
    """
    p = np.asarray(p_samples, dtype=float).ravel()
    q = np.asarray(q_samples, dtype=float).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("jsd needs non-empty samples")
    if bins < 2:
        raise ValueError("bins must be at least 2")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if not hi > lo:
        return 0.0
    hp = _bin_counts(p, lo, hi, bins)
    hq = _bin_counts(q, lo, hi, bins)
    P = hp / hp.sum()
    Q = hq / hq.sum()
    M = 0.5 * (P + Q)
    value = 0.5 * _entropy_terms(P, M) + 0.5 * _entropy_terms(Q, M)
    return float(min(max(value, 0.0), LN2))


# --- risk / crash rates -----------------------------------------------------

@dataclass
class SiteAggregate:
    segment_id: str
    risk_count: int
    gps_count: int
    crash_count: int
    aadt: float

    def __post_init__(self):
        if self.gps_count <= 0:
            raise ValueError(f"segment {self.segment_id}: gps_count must be positive")
        if self.aadt <= 0:
            raise ValueError(f"segment {self.segment_id}: aadt must be positive")
        if not 0 <= self.risk_count <= self.gps_count:
            raise ValueError(f"segment {self.segment_id}: risk_count outside [0, gps_count]")
        if self.crash_count < 0:
            raise ValueError(f"segment {self.segment_id}: negative crash_count")


def risk_rate(agg: SiteAggregate) -> float:
    return agg.risk_count / agg.gps_count


def crash_rate(agg: SiteAggregate) -> float:
    return agg.crash_count / agg.aadt


@dataclass
class PearsonResult:
    r: float
    p_value: float


def pearson(x, y) -> PearsonResult:
    """Sample correlation with a two-sided t-distribution p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-D sequences")
    if len(x) < 3:
        raise ValueError("pearson needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for zero variance")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    dof = len(x) - 2
    if abs(r) == 1.0:
        return PearsonResult(r, 0.0)
    t = r * math.sqrt(dof / (1.0 - r * r))
    return PearsonResult(r, float(2.0 * sps.t.sf(abs(t), dof)))


KIND_FILTERS = {"rear": ("rear_end",), "side": ("sideswipe",), "all": ("rear_end", "sideswipe")}
CRASH_COLUMNS = {"rear": ["rear_crashes"], "side": ["sideswipe_crashes"],
                 "all": ["rear_crashes", "sideswipe_crashes"]}


def threshold_grid(lo: float = 0.5, hi: float = 10.0, step: float = 0.1) -> np.ndarray:
    if step <= 0 or hi < lo:
        raise ValueError("threshold grid needs step > 0 and max >= min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    # rounding keeps 3.3 equal to 3.3 rather than 3.3000000000000003
    return np.round(lo + step * np.arange(n), 10)


def points_ttc(points: pd.DataFrame):
    """``(ttc_2d, kind)`` arrays for a points table with ttc_lon/ttc_lat columns.

    A ``kind`` column, when present, overrides the min-component rule.
    """
    lon = points.ttc_lon.to_numpy(float)
    lat = points.ttc_lat.to_numpy(float)
    lon_f = np.where(np.isfinite(lon), lon, np.inf)
    lat_f = np.where(np.isfinite(lat), lat, np.inf)
    ttc = np.minimum(lon_f, lat_f)
    kind = np.where(np.isinf(ttc), "none", np.where(lon_f <= lat_f, "rear_end", "sideswipe"))
    if "kind" in points.columns:
        given = points["kind"].fillna("none").astype(str).to_numpy()
        kind = np.where(given != "", given, kind)
    return ttc, kind


@dataclass
class SweepRow:
    threshold: float
    r: float
    p_value: float
    n_segments: int
    degenerate: bool


@dataclass
class SweepResult:
    kind: str
    rows: List[SweepRow] = field(default_factory=list)

    @property
    def best(self) -> Optional[SweepRow]:
        valid = [row for row in self.rows if not row.degenerate]
        if not valid:
            return None
        return max(valid, key=lambda row: row.r)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.rows],
                            columns=["threshold", "r", "p_value", "n_segments", "degenerate"])


def threshold_sweep(points: pd.DataFrame, sites: pd.DataFrame, kind: str = "all",
                    thresholds: Optional[Sequence[float]] = None) -> SweepResult:
    """Pearson correlation of segment risk rate with crash rate over a threshold grid."""
    if kind not in KIND_FILTERS:
        raise ValueError(f"kind must be one of {sorted(KIND_FILTERS)}")
    thresholds = threshold_grid() if thresholds is None else np.asarray(thresholds, dtype=float)
    sites = sites.copy()
    sites["segment_id"] = sites.segment_id.astype(str)
    sites = sites.drop_duplicates("segment_id").set_index("segment_id")
    seg = points.segment_id.astype(str).to_numpy()
    ttc, pkind = points_ttc(points)
    relevant = np.isin(pkind, KIND_FILTERS[kind])

    gps = pd.Series(1, index=seg).groupby(level=0).sum()
    usable = [s for s in sites.index if gps.get(s, 0) > 0 and sites.at[s, "aadt"] > 0]
    dropped = len(sites) - len(usable)
    if dropped:
        log.warning("excluded %d segments with no GPS points or non-positive AADT", dropped)
    crashes = sites.loc[usable, CRASH_COLUMNS[kind]].sum(axis=1).to_numpy(float)
    crash = crashes / sites.loc[usable, "aadt"].to_numpy(float)
    gps_counts = gps.reindex(usable).to_numpy(float)
    pos = pd.Index(usable).get_indexer(seg)
    keep = pos >= 0

    result = SweepResult(kind)
    for th in thresholds:
        risky = keep & relevant & (ttc < th)
        counts = np.bincount(pos[risky], minlength=len(usable)).astype(float)
        rate = counts / gps_counts
        if len(usable) < 3 or np.ptp(rate) == 0 or np.ptp(crash) == 0:
            result.rows.append(SweepRow(float(th), float("nan"), float("nan"), len(usable), True))
            continue
        pr = pearson(rate, crash)
        result.rows.append(SweepRow(float(th), pr.r, pr.p_value, len(usable), False))
    return result


def segment_aggregates(points: pd.DataFrame, sites: pd.DataFrame, threshold: float,
                       kind: str = "all") -> List[SiteAggregate]:
    """Per-segment counts at one threshold; segments without points are skipped."""
    ttc, pkind = points_ttc(points)
    risky = np.isin(pkind, KIND_FILTERS[kind]) & (ttc < threshold)
    frame = pd.DataFrame({"segment_id": points.segment_id.astype(str), "risky": risky})
    counts = frame.groupby("segment_id").risky.agg(["sum", "size"])
    out = []
    for _, s in sites.iterrows():
        sid = str(s.segment_id)
        if sid not in counts.index or s.aadt <= 0:
            log.warning("segment %s excluded (no points or non-positive AADT)", sid)
            continue
        out.append(SiteAggregate(sid, int(counts.at[sid, "sum"]), int(counts.at[sid, "size"]),
                                 int(sum(s[c] for c in CRASH_COLUMNS[kind])), float(s.aadt)))
    return out


# --- model evaluation -------------------------------------------------------

@dataclass
class MetricReport:
    rmse: Dict[str, float]
    jsd: Dict[str, float]
    n_transitions: int = 0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"variable": list(VARIABLES),
                             "rmse": [self.rmse[v] for v in VARIABLES],
                             "jsd": [self.jsd[v] for v in VARIABLES]})

    def write_csv(self, path) -> None:
        self.frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def _as_policy(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "actor"):
        model = model.actor
    if hasattr(model, "forward"):
        return model.forward
    return model


@dataclass
class OneStep:
    """Teacher-forced one-step predictions stacked over all transitions."""

    predicted: Dict[str, np.ndarray]
    observed: Dict[str, np.ndarray]


def one_step_predictions(model, episodes: Sequence[Episode], dt: float = DT) -> OneStep:
    policy = _as_policy(model)
    pred = {v: [] for v in VARIABLES}
    obs = {v: [] for v in VARIABLES}
    for ep in episodes:
        if len(ep) < 2:
            continue
        s = ep.states[:-1]
        a = np.clip(np.asarray(policy(s), dtype=float).reshape(len(s), 2),
                    -ACTION_BOUND, ACTION_BOUND)
        sim = step_kinematics(s, a, dt)
        nxt = ep.states[1:]
        for name, idx in (("d_lon", D_LON), ("v_lon", V_LON), ("d_lat", D_LAT), ("v_lat", V_LAT)):
            pred[name].append(sim[:, idx])
            obs[name].append(nxt[:, idx])
        pred["a_lon"].append(a[:, 0])
        pred["a_lat"].append(a[:, 1])
        obs["a_lon"].append(ep.accel[:-1, 0])
        obs["a_lat"].append(ep.accel[:-1, 1])
    if not pred["d_lon"]:
        raise ValueError("evaluation needs at least one episode with two records")
    return OneStep({k: np.concatenate(v) for k, v in pred.items()},
                   {k: np.concatenate(v) for k, v in obs.items()})


def evaluate_model(model, episodes: Sequence[Episode], bins: int = DEFAULT_BINS,
                   dt: float = DT) -> MetricReport:
    """Per-variable RMSE and JSD of teacher-forced one-step predictions."""
    os_ = one_step_predictions(model, episodes, dt)
    return MetricReport({v: rmse(os_.predicted[v], os_.observed[v]) for v in VARIABLES},
                        {v: jsd(os_.predicted[v], os_.observed[v], bins) for v in VARIABLES},
                        n_transitions=len(os_.predicted["d_lon"]))


# --- supervised benchmark ---------------------------------------------------

@dataclass
class BenchmarkConfig:
    hidden: tuple = (256, 256)
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 200


def benchmark_dataset(episodes: Sequence[Episode]):
    xs = [ep.states[:-1] for ep in episodes if len(ep) >= 2]
    ys = [ep.accel[:-1] for ep in episodes if len(ep) >= 2]
    if not xs:
        raise ValueError("training set is empty")
    return np.concatenate(xs), np.concatenate(ys)


def fit_regressor(x: np.ndarray, y: np.ndarray, seed: int = 0,
                  config: Optional[BenchmarkConfig] = None):
    """Mean-squared regression with Adam; returns ``(net, per-epoch losses)``."""
    config = config or BenchmarkConfig()
    init_rng, order_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(seed).spawn(2))
    net = nn.Mlp([x.shape[1], *config.hidden, y.shape[1]], rng=init_rng)
    opt = nn.Adam(net.n_params, lr=config.lr)
    losses = []
    n = len(x)
    for _ in range(config.epochs):
        perm = order_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            cache = net.forward_cached(x[idx])
            err = cache.output - y[idx]
            total += float(np.sum(err * err))
            grads, _ = net.backward(cache, (2.0 / err.size) * err)
            opt.step(net.flat, grads)
        losses.append(total / y.size)
    return net, np.array(losses)


def nn_benchmark_train(episodes: Sequence[Episode], seed: int = 0,
                       config: Optional[BenchmarkConfig] = None):
    """Behavioral-cloning benchmark: state -> recorded human (a_lon, a_lat)."""
    x, y = benchmark_dataset(episodes)
    return fit_regressor(x, y, seed, config)
