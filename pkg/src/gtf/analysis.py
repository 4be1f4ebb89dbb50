"""Evaluation: inter-prism error statistics, dynamics-binned grids, the
Monte-Carlo perturbation study and the GNSS-pair comparison."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AlignmentError, ConfigError
from .geometry import align_point_sets_batch
from .pipeline import Interpolated, PrismTrack
from .seeding import derive_rng
from .stations import TrajectorySpec
from .types import EULER_SEQ, GNSS_BASELINE, PrismLayout, US_PER_S, wrap_angle

PAIRS = ((0, 1), (0, 2), (1, 2))
PAIR_NAMES = ("e12", "e13", "e23")


# static intervals

def static_segments(source: Union[TrajectorySpec, tuple], v_threshold: float = 0.01,
                    w_threshold: float = 0.01) -> list[tuple[int, int]]:
    """Maximal intervals with ``|v|`` and ``|omega|`` below the thresholds.

    ``source`` is either a trajectory (exact segment boundaries) or a tuple
    ``(t_us, v, omega)`` of sampled signals, in which case intervals run
    from the first to the last qualifying sample of each run.
    """
    if isinstance(source, TrajectorySpec):
        starts = np.concatenate([[0.0], np.cumsum([s.duration_s for s in source.segments])])
        out: list[tuple[int, int]] = []
        for i, s in enumerate(source.segments):
            if abs(s.v) >= v_threshold or abs(s.omega) >= w_threshold:
                continue
            a = source.t0_us + int(round(starts[i] * US_PER_S))
            b = source.t0_us + int(round(starts[i + 1] * US_PER_S))
            if out and out[-1][1] == a:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
        return out
    t, v, w = (np.asarray(x) for x in source)
    if not (len(t) == len(v) == len(w)):
        raise AlignmentError("speed signals differ in length")
    still = (np.abs(v) < v_threshold) & (np.abs(w) < w_threshold)
    out = []
    i = 0
    while i < len(t):
        if not still[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(t) and still[j + 1]:
            j += 1
        out.append((int(t[i]), int(t[j])))
        i = j + 1
    return out


def in_intervals(t_us, intervals: Sequence[tuple[int, int]]) -> np.ndarray:
    t = np.asarray(t_us)
    mask = np.zeros(t.shape, dtype=bool)
    for a, b in intervals:
        mask |= (t >= a) & (t <= b)
    return mask


# inter-prism distance errors

@dataclass(frozen=True, eq=False)
class ErrorSeries:
    """Measured minus reference inter-prism distances, one row per timestamp."""

    t: np.ndarray
    e12: np.ndarray
    e13: np.ndarray
    e23: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([self.e12, self.e13, self.e23], axis=1)

    @property
    def mean_abs(self) -> np.ndarray:
        """Per-timestamp mean absolute error over the three pairs."""
        return np.mean(np.abs(self.matrix), axis=1) if len(self) else np.zeros(0)

    def subset(self, mask) -> "ErrorSeries":
        m = np.asarray(mask, dtype=bool)
        return ErrorSeries(self.t[m], self.e12[m], self.e13[m], self.e23[m])


def inter_prism_errors(triplets: Union[Interpolated, np.ndarray], layout: PrismLayout,
                       t_us=None) -> ErrorSeries:
    """``e_ab = ||p_a - p_b|| - d_ab`` for the three prism pairs.

    Given an :class:`Interpolated` grid only valid points are used.
    """
    if isinstance(triplets, Interpolated):
        t_us = triplets.t[triplets.valid]
        X = triplets.triplets[triplets.valid]
    else:
        X = np.asarray(triplets, dtype=float).reshape(-1, 3, 3)
        t_us = np.arange(len(X), dtype=np.int64) if t_us is None else np.asarray(t_us)
        if len(t_us) != len(X):
            raise AlignmentError("timestamps and triplets differ in length")
    d = layout.distances
    cols = [np.linalg.norm(X[:, a] - X[:, b], axis=1) - d[k] for k, (a, b) in enumerate(PAIRS)]
    return ErrorSeries(np.asarray(t_us), *cols)


def static_triplets(tracks: Sequence[PrismTrack], intervals: Sequence[tuple[int, int]]):
    """Raw measurements paired inside static intervals.

    Each prism-1 sample inside an interval is paired with the nearest-in-time
    prism-2 and prism-3 samples from the same interval; no interpolation is
    involved, so every triplet is made of genuine measurements.
    """
    t_out, X = [], []
    for a, b in intervals:
        sel = [(tr.t >= a) & (tr.t <= b) for tr in tracks]
        if not all(np.any(s) for s in sel):
            continue
        t1, x1 = tracks[0].t[sel[0]], tracks[0].xyz[sel[0]]
        others = []
        for k in (1, 2):
            tk, xk = tracks[k].t[sel[k]], tracks[k].xyz[sel[k]]
            j = np.clip(np.searchsorted(tk, t1), 1, max(len(tk) - 1, 1))
            if len(tk) > 1:
                j = np.where(np.abs(tk[j - 1] - t1) <= np.abs(tk[j] - t1), j - 1, j)
            else:
                j = np.zeros(len(t1), dtype=int)
            others.append(xk[j])
        t_out.append(t1)
        X.append(np.stack([x1, others[0], others[1]], axis=1))
    if not X:
        return np.zeros(0, np.int64), np.zeros((0, 3, 3))
    return np.concatenate(t_out), np.concatenate(X)


def summarize(series: ErrorSeries) -> dict[str, tuple[float, float, int]]:
    """``{pair: (mean, std, n)}`` in metres."""
    out = {}
    for name in PAIR_NAMES:
        e = getattr(series, name)
        out[name] = (float(np.mean(e)) if len(e) else math.nan,
                     float(np.std(e, ddof=1)) if len(e) > 1 else math.nan, int(len(e)))
    return out


def error_histogram(series: ErrorSeries, bin_width: float = 0.0005, limit: float = 0.015):
    """Counts of each pair's error in bins of ``bin_width`` over ``[-limit, limit]``.

    Values outside the range land in the edge bins.
    """
    n = int(round(2 * limit / bin_width))
    edges = np.linspace(-limit, limit, n + 1)
    counts = {}
    for name in PAIR_NAMES:
        e = np.clip(getattr(series, name), -limit, limit)
        counts[name] = np.histogram(e, bins=edges)[0]
    return edges, counts


# dynamics binning

@dataclass(frozen=True)
class AxisSpec:
    name: str
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi > self.lo or self.n < 1:
            raise ConfigError(f"bad bin axis {self}")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n + 1)

    def index(self, x) -> np.ndarray:
        i = np.floor((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo) * self.n).astype(int)
        return np.clip(i, 0, self.n - 1)


SPEED_AXIS = AxisSpec("v", 0.0, 1.0, 8)
RATE_AXIS = AxisSpec("omega", 0.0, 0.8, 8)
ACCEL_AXIS = AxisSpec("a", -1.0, 1.0, 8)


@dataclass(frozen=True, eq=False)
class BinnedGrid:
    """Mean error per (x, y) cell; empty cells hold NaN."""

    x: AxisSpec
    y: AxisSpec
    sums: np.ndarray
    counts: np.ndarray

    @property
    def means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0


def bin_grid(values, xs, ys, x: AxisSpec, y: AxisSpec) -> BinnedGrid:
    values = np.asarray(values, dtype=float)
    if not (len(values) == len(xs) == len(ys)):
        raise AlignmentError("error and dynamics signals differ in length")
    ix, iy = x.index(xs), y.index(ys)
    sums = np.zeros((x.n, y.n))
    counts = np.zeros((x.n, y.n), dtype=np.int64)
    np.add.at(sums, (ix, iy), values)
    np.add.at(counts, (ix, iy), 1)
    return BinnedGrid(x, y, sums, counts)


def bin_by_dynamics(series: Union[ErrorSeries, np.ndarray], speeds, accels, angular_speeds,
                    speed_axis: AxisSpec = SPEED_AXIS, accel_axis: AxisSpec = ACCEL_AXIS,
                    rate_axis: AxisSpec = RATE_AXIS) -> tuple[BinnedGrid, BinnedGrid]:
    """The (|v|, |omega|) and (a, |omega|) grids of mean inter-prism error.

    A series contributes its per-sample mean absolute error over the pairs.
    """
    values = series.mean_abs if isinstance(series, ErrorSeries) else np.asarray(series, dtype=float)
    n = len(values)
    if not (len(speeds) == len(accels) == len(angular_speeds) == n):
        raise AlignmentError("error and dynamics signals differ in length")
    w = np.abs(np.asarray(angular_speeds, dtype=float))
    return (bin_grid(values, np.abs(np.asarray(speeds, dtype=float)), w, speed_axis, rate_axis),
            bin_grid(values, np.asarray(accels, dtype=float), w, accel_axis, rate_axis))


def dynamics_signals(spec: TrajectorySpec, t_us, accel_half_window_s: float = 0.25):
    """Ground-truth ``(v, a, omega)`` at ``t_us``; ``a`` is a central difference."""
    t = np.asarray(t_us)
    _, _, _, _, v, w = spec.state(t, clamp=True)
    h = int(round(accel_half_window_s * US_PER_S))
    vp = spec.state(t + h, clamp=True)[4]
    vm = spec.state(t - h, clamp=True)[4]
    return v, (vp - vm) / (2 * accel_half_window_s), w


# perturbation study

SIGMA_STEP = 0.004
SIGMA_POINTS = 101
TRIALS = 1000


@dataclass(frozen=True, eq=False)
class PerturbationCurve:
    """Per-sigma statistics of the pose error under prism position noise.

    Axis arrays have shape ``(len(sigma), 3)``: position in x, y, z and
    Euler errors in yaw, pitch, roll (Z-Y-X).  Signed errors give the
    ``*_mean`` / ``*_std`` columns; ``position_error`` is the mean Euclidean
    norm and ``orientation_error`` the mean absolute Euler error averaged
    over the three angles.
    """

    sigma: np.ndarray
    trials: int
    pos_mean: np.ndarray
    pos_std: np.ndarray
    euler_mean: np.ndarray
    euler_std: np.ndarray
    position_error: np.ndarray
    orientation_error: np.ndarray

    def at(self, sigma: float) -> int:
        i = int(np.argmin(np.abs(self.sigma - sigma)))
        if abs(self.sigma[i] - sigma) > 1e-12:
            raise KeyError(f"sigma {sigma} not on the grid")
        return i

    def std_linearity(self) -> np.ndarray:
        """R^2 of a least-squares line through each of the six std curves."""
        Y = np.concatenate([self.pos_std, self.euler_std], axis=1)
        out = []
        for col in Y.T:
            A = np.stack([self.sigma, np.ones_like(self.sigma)], axis=1)
            coef, *_ = np.linalg.lstsq(A, col, rcond=None)
            ss_res = float(np.sum((col - A @ coef) ** 2))
            ss_tot = float(np.sum((col - col.mean()) ** 2))
            out.append(1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)
        return np.array(out)

    def bias_z(self, i: int) -> np.ndarray:
        """Mean divided by its standard error, per position/Euler axis."""
        m = np.concatenate([self.pos_mean[i], self.euler_mean[i]])
        s = np.concatenate([self.pos_std[i], self.euler_std[i]]) / math.sqrt(self.trials)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(s > 0, np.abs(m) / s, 0.0)


def default_sigma_grid() -> np.ndarray:
    return np.round(np.arange(SIGMA_POINTS) * SIGMA_STEP, 12)


def _perturb_one(args):
    points, sigma, seed, index, trials = args
    if sigma == 0.0:
        z = np.zeros(3)
        return z, z, z, z, 0.0, 0.0
    rng = derive_rng(seed, "perturbation", index)
    Q = points[None, :, :] + rng.normal(0.0, sigma, (trials, 3, 3))
    R, t = align_point_sets_batch(Q, points)
    eul = wrap_angle(Rotation.from_matrix(R).as_euler(EULER_SEQ))
    return (t.mean(axis=0), t.std(axis=0, ddof=1), eul.mean(axis=0), eul.std(axis=0, ddof=1),
            float(np.mean(np.linalg.norm(t, axis=1))), float(np.mean(np.abs(eul))))


def perturbation_study(layout: PrismLayout, seed: int, sigmas=None, trials: int = TRIALS,
                       parallel: int = 1) -> PerturbationCurve:
    """Monte-Carlo pose error under isotropic Gaussian prism noise.

    The true pose is the identity; each trial perturbs the measured triplet
    (the layout points) and re-solves.  Sigma ``i`` draws from its own
    derived stream, so ``parallel`` does not change the result.
    """
    sig = default_sigma_grid() if sigmas is None else np.asarray(sigmas, dtype=float)
    if trials < 2:
        raise ConfigError("need at least two trials per sigma")
    jobs = [(layout.points, float(s), seed, i, trials) for i, s in enumerate(sig)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            rows = list(ex.map(_perturb_one, jobs))
    else:
        rows = [_perturb_one(j) for j in jobs]
    cols = list(zip(*rows))
    return PerturbationCurve(sig, trials, *(np.array(c) for c in cols))


# GNSS comparison

@dataclass(frozen=True)
class SourceStats:
    mean: float
    std: float
    n: int


@dataclass(frozen=True, eq=False)
class GnssComparison:
    regime: str
    gnss: SourceStats
    total_station: SourceStats
    dropped: int
    gnss_errors: np.ndarray


def _stats(x) -> SourceStats:
    x = np.asarray(x, dtype=float)
    return SourceStats(float(np.mean(x)) if len(x) else math.nan,
                       float(np.std(x, ddof=1)) if len(x) > 1 else math.nan, int(len(x)))


def gnss_compare(t_us, pos1, pos2, ts_series: ErrorSeries, reference: float = GNSS_BASELINE,
                 regime: str = "all", window: Optional[tuple[int, int]] = None) -> GnssComparison:
    """Absolute baseline error of a receiver pair next to the total-station
    inter-prism error over the same window.

    Epochs where either receiver has no (finite) fix are dropped and counted.
    """
    t = np.asarray(t_us)
    p1 = np.asarray(pos1, dtype=float).reshape(-1, 3)
    p2 = np.asarray(pos2, dtype=float).reshape(-1, 3)
    if not (len(t) == len(p1) == len(p2)):
        raise AlignmentError("GNSS epochs differ in length")
    sel = np.ones(len(t), dtype=bool) if window is None else (t >= window[0]) & (t < window[1])
    paired = sel & np.all(np.isfinite(p1), axis=1) & np.all(np.isfinite(p2), axis=1)
    dropped = int(np.sum(sel & ~paired))
    err = np.abs(np.linalg.norm(p1[paired] - p2[paired], axis=1) - reference)
    ts = ts_series if window is None else ts_series.subset((ts_series.t >= window[0]) & (ts_series.t < window[1]))
    return GnssComparison(regime, _stats(err), _stats(np.abs(ts.matrix).ravel()), dropped, err)
