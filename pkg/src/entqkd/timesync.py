"""Clock offset recovery and coincidence identification for two tag streams.

The relative offset ``dt = t_bob - t_alice`` shows up as a peak in the
cross-correlation of the two streams. The first block is acquired with a
coarse-to-fine search over a wide span; every later block is searched in a
narrow window around the previous block's offset, which is how slow
relative drift between the two clocks is followed. Between block centres
the offset is interpolated linearly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .tags import TagStream

PS_PER_NS = 1000


class NoLock(RuntimeError):
    """The correlation peak is not distinguishable from the background."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


@dataclass
class CorrelationHistogram:
    bin_width_ns: float
    lo_ns: float  # left edge of bin 0, as a delay t_b - t_a
    bins: np.ndarray
    n_bob: int = 0

    @property
    def search_span_ns(self):
        return self.bin_width_ns * self.bins.size

    def centers_ns(self):
        return self.lo_ns + self.bin_width_ns * (np.arange(self.bins.size) + 0.5)


@dataclass(frozen=True)
class OffsetEstimate:
    delta_t_ns: float
    significance: float  # peak / background per bin
    z: float  # (peak - background) / sqrt(background)
    peak: int
    background: float
    locked: bool


def interp_offsets(x, xp, fp):
    """Piecewise-linear through (xp, fp), continued linearly past both ends."""
    y = np.interp(x, xp, fp)
    if xp.size >= 2:
        lo, hi = x < xp[0], x > xp[-1]
        y[lo] = fp[0] + (x[lo] - xp[0]) * (fp[1] - fp[0]) / (xp[1] - xp[0])
        y[hi] = fp[-1] + (x[hi] - xp[-1]) * (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
    return y


@dataclass
class DriftTrack:
    block_length_s: float
    resolution_ns: float
    origin_ps: int
    block_start_s: np.ndarray
    delta_t_ns: np.ndarray  # NaN where the block did not lock
    significance: np.ndarray

    @property
    def offsets(self):
        return list(zip(self.block_start_s.tolist(), self.delta_t_ns.tolist()))

    @property
    def locked(self):
        return ~np.isnan(self.delta_t_ns)

    def block_centers_s(self):
        return self.block_start_s + self.block_length_s / 2

    def offset_ps_at(self, t_ps):
        """Offset at tagger times ``t_ps``, piecewise linear between block centres."""
        ok = self.locked
        if not ok.any():
            raise NoLock("drift track has no locked block")
        x = (np.asarray(t_ps, dtype=np.int64) - self.origin_ps) / 1e12
        return interp_offsets(x, self.block_centers_s()[ok], self.delta_t_ns[ok] * PS_PER_NS)

    def slope_ns_per_s(self):
        ok = self.locked
        if ok.sum() < 2:
            raise NoLock("need two locked blocks for a slope")
        return float(np.polyfit(self.block_centers_s()[ok], self.delta_t_ns[ok], 1)[0])


@dataclass
class CoincidenceSet:
    alice_index: np.ndarray
    bob_index: np.ndarray
    delay_ps: np.ndarray  # corrected t_b - dt - t_a
    window_ns: float

    def __len__(self):
        return int(self.alice_index.shape[0])


@dataclass(frozen=True)
class SyncConfig:
    block_length_s: float = 5.0
    bin_ns: float = 0.5
    coarse_bin_ns: float = 10.0
    span_ns: float = 2_200_000.0  # full width of the acquisition search (+-1.1 ms)
    track_span_ns: float = 200.0  # full width of the per-block tracking search
    threshold_sigma: float = 5.0
    min_peak_counts: int = 5
    initial_offset_ns: float = 0.0
    reacquire_after: int = 3
    refine_iterations: int = 2


# ---------------------------------------------------------------------------
# single-histogram operations
# ---------------------------------------------------------------------------


def _times(x):
    return x.t if isinstance(x, TagStream) else np.asarray(x, dtype=np.int64)


def cross_correlate(a, b, bin_ns, span_ns, center_ns=0.0):
    """Histogram of delays ``t_b - t_a`` over ``center ± span/2``.

    ``a`` and ``b`` are sorted TagStreams or int64 ps arrays. Only pairs
    inside the span are enumerated.
    """
    ta, tb = _times(a), _times(b)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("cross-correlation needs two non-empty streams")
    if not bin_ns > 0:
        raise ValueError("bin width must be positive")
    if not span_ns >= bin_ns:
        raise ValueError("span must be at least one bin")
    bin_ps = int(round(bin_ns * PS_PER_NS))
    nbins = int(round(span_ns / bin_ns))
    # left edge on the bin grid anchored at zero delay
    lo_ps = int(math.floor((center_ns * PS_PER_NS - nbins * bin_ps / 2) / bin_ps)) * bin_ps
    counts = kernels.xcorr_histogram(ta, tb, lo_ps, bin_ps, nbins)
    return CorrelationHistogram(bin_ps / PS_PER_NS, lo_ps / PS_PER_NS, counts, int(tb.size))


def _background(bins, peak_idx, guard):
    mask = np.ones(bins.size, dtype=bool)
    mask[max(0, peak_idx - guard):peak_idx + guard + 1] = False
    if mask.sum() >= 3:
        return float(bins[mask].mean())
    return float(np.median(bins))


def lock_threshold(background, nbins, threshold_sigma=5.0):
    """Smallest peak count that counts as a lock.

    The one-sided Gaussian tail of ``threshold_sigma`` is taken as the
    false-lock probability for the *whole* histogram, so the per-bin Poisson
    tail is that divided by the number of bins.
    """
    p_bin = stats.norm.sf(threshold_sigma) / max(nbins, 1)
    if background <= 0:
        return 1
    return int(stats.poisson.isf(p_bin, background)) + 1


def find_offset(h: CorrelationHistogram, threshold_sigma=5.0, min_peak_counts=5, raise_on_nolock=True):
    """Centre of the highest bin and its significance.

    Raises :class:`NoLock` when the peak is compatible with a flat Poisson
    background (unless ``raise_on_nolock`` is false, in which case the
    estimate comes back with ``locked=False``).
    """
    if h.bins.size == 0:
        raise ValueError("empty histogram")
    k = int(np.argmax(h.bins))
    peak = int(h.bins[k])
    guard = max(2, int(math.ceil(3.0 / h.bin_width_ns)))
    mu = _background(h.bins, k, guard)
    z = (peak - mu) / math.sqrt(mu) if mu > 0 else math.inf
    locked = peak >= max(min_peak_counts, lock_threshold(mu, h.bins.size, threshold_sigma))
    est = OffsetEstimate(
        delta_t_ns=float(h.centers_ns()[k]),
        significance=peak / max(mu, 1.0),
        z=float(z),
        peak=peak,
        background=mu,
        locked=bool(locked),
    )
    if not locked and raise_on_nolock:
        raise NoLock(f"no lock: peak {peak} over background {mu:.3g}/bin", est)
    return est


def acquire_offset(a, b, cfg: SyncConfig = SyncConfig(), center_ns=None):
    """Coarse-to-fine offset search over ``cfg.span_ns``.

    The coarse pass decides whether there is a lock; the fine pass with
    ``cfg.bin_ns`` bins around the coarse peak places it.
    """
    center = cfg.initial_offset_ns if center_ns is None else center_ns
    coarse = cross_correlate(a, b, cfg.coarse_bin_ns, cfg.span_ns, center)
    est = find_offset(coarse, cfg.threshold_sigma, cfg.min_peak_counts)
    fine = cross_correlate(a, b, cfg.bin_ns, 4 * cfg.coarse_bin_ns, est.delta_t_ns)
    k = int(np.argmax(fine.bins))
    return OffsetEstimate(
        delta_t_ns=float(fine.centers_ns()[k]),
        significance=est.significance,
        z=est.z,
        peak=int(fine.bins[k]),
        background=est.background,
        locked=True,
    )


# ---------------------------------------------------------------------------
# blockwise tracking
# ---------------------------------------------------------------------------


def _origin(a: TagStream):
    if isinstance(a, TagStream) and a.epoch_ps <= int(a.t[0]):
        return int(a.epoch_ps)
    return int(_times(a)[0])


def track_drift(a, b, block_length_s=None, bin_ns=None, cfg: SyncConfig = SyncConfig()):
    """Per-block offsets between Alice's and Bob's clocks.

    Blocks tile Alice's time axis. A block that fails to lock is stored as a
    gap (NaN) and tracking carries on from the last good offset; after
    ``cfg.reacquire_after`` consecutive gaps the wide acquisition search is
    run again.
    """
    if block_length_s is not None or bin_ns is not None:
        cfg = SyncConfig(**{**cfg.__dict__,
                            **({"block_length_s": block_length_s} if block_length_s is not None else {}),
                            **({"bin_ns": bin_ns} if bin_ns is not None else {})})
    if not cfg.block_length_s > 0:
        raise ValueError("block length must be positive")
    ta, tb = _times(a), _times(b)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("empty stream")
    origin = _origin(a)
    block_ps = int(round(cfg.block_length_s * 1e12))
    n_blocks = max(1, int(math.ceil((int(ta[-1]) + 1 - origin) / block_ps)))

    starts = np.arange(n_blocks) * cfg.block_length_s
    deltas = np.full(n_blocks, np.nan)
    signif = np.zeros(n_blocks)
    current = None  # last good offset (ns)
    misses = 0
    for k in range(n_blocks):
        lo = origin + k * block_ps
        hi = lo + block_ps
        shift = int(round((cfg.initial_offset_ns if current is None else current) * PS_PER_NS))
        j0, j1 = np.searchsorted(tb, [lo + shift, hi + shift])
        tb_blk = tb[j0:j1]
        if tb_blk.size == 0:
            continue
        try:
            if current is None:
                est = acquire_offset(ta, tb_blk, cfg)
            else:
                h = cross_correlate(ta, tb_blk, cfg.bin_ns, cfg.track_span_ns, current)
                est = find_offset(h, cfg.threshold_sigma, cfg.min_peak_counts)
        except NoLock as exc:
            if exc.estimate is not None:
                signif[k] = exc.estimate.significance
            misses += 1
            if misses >= cfg.reacquire_after:
                current = None
            continue
        deltas[k] = est.delta_t_ns
        signif[k] = est.significance
        current = est.delta_t_ns
        misses = 0
    for _ in range(cfg.refine_iterations):
        deltas = _refine(ta, tb, origin, cfg.block_length_s, deltas)
    return DriftTrack(cfg.block_length_s, cfg.bin_ns, origin, starts, deltas, signif)


REFINE_BIN_PS = 50
REFINE_HALF_NS = 3.0  # peak region around the current track
REFINE_SIDE_NS = 20.0  # background taken from 2x..SIDE ns off the peak


def _refine(ta, tb, origin, block_s, deltas):
    """Move each locked block onto the centroid of its drift-corrected peak.

    The block search places the offset on the highest bin, which under drift
    is anywhere on a peak smeared by ``drift * block_s``. Removing the
    interpolated track first undoes most of that smear; the background
    subtracted centroid of what is left is then a sub-bin correction.
    """
    ok = ~np.isnan(deltas)
    if not ok.any():
        return deltas
    deltas = deltas.copy()
    centers = (np.arange(deltas.size) + 0.5) * block_s
    off = interp_offsets((tb - origin) / 1e12, centers[ok], deltas[ok] * PS_PER_NS)
    tb_corr = tb - np.rint(off).astype(np.int64)
    if np.any(np.diff(tb_corr) < 0):
        tb_corr = np.sort(tb_corr)
    side_ps = int(REFINE_SIDE_NS * PS_PER_NS)
    nbins = 2 * side_ps // REFINE_BIN_PS
    x = (np.arange(nbins) + 0.5) * REFINE_BIN_PS - side_ps
    peak = np.abs(x) <= REFINE_HALF_NS * PS_PER_NS
    bg_region = np.abs(x) >= 2 * REFINE_HALF_NS * PS_PER_NS
    block_ps = int(round(block_s * 1e12))
    for k in np.flatnonzero(ok):
        lo = origin + k * block_ps
        i0, i1 = np.searchsorted(ta, [lo, lo + block_ps])
        j0, j1 = np.searchsorted(tb_corr, [lo - side_ps, lo + block_ps + side_ps])
        if i1 == i0 or j1 == j0:
            continue
        h = kernels.xcorr_histogram(ta[i0:i1], tb_corr[j0:j1], -side_ps, REFINE_BIN_PS, nbins)
        sig = h[peak] - h[bg_region].mean()
        w = sig.sum()
        if w > 0:
            deltas[k] += float((sig * x[peak]).sum() / w) / PS_PER_NS
    return deltas


def pair_coincidences(a, b, track: DriftTrack, window_ns):
    """One-to-one coincidences after removing the tracked offset.

    Returns a :class:`CoincidenceSet` sorted by Alice index.
    """
    if not window_ns > 0:
        raise ValueError("coincidence window must be positive")
    ta, tb = _times(a), _times(b)
    off = np.rint(track.offset_ps_at(tb)).astype(np.int64)
    tb_corr = tb - off
    half = int(round(window_ns * PS_PER_NS / 2))
    ia, ib = kernels.match_coincidences(ta, tb_corr, half)
    order = np.argsort(ia, kind="stable")
    ia, ib = ia[order], ib[order]
    return CoincidenceSet(ia, ib, tb_corr[ib] - ta[ia], float(window_ns))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

DRIFT_HEADER = ["block_start_s", "delta_t_ns", "significance"]
COINCIDENCE_HEADER = ["alice_index", "bob_index", "delay_ps"]


def write_drift_csv(path, track: DriftTrack):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DRIFT_HEADER)
        for s, d, g in zip(track.block_start_s, track.delta_t_ns, track.significance):
            w.writerow([f"{s:.6g}", "nan" if np.isnan(d) else f"{d:.3f}", f"{g:.6g}"])


def read_drift_csv(path, block_length_s, origin_ps=0, resolution_ns=0.5):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != DRIFT_HEADER:
            raise ValueError(f"{path}: unexpected drift CSV header")
        rows = [[float(x) for x in row] for row in r]
    arr = np.asarray(rows, dtype=float).reshape(-1, 3)
    return DriftTrack(block_length_s, resolution_ns, origin_ps, arr[:, 0], arr[:, 1], arr[:, 2])


def write_coincidence_csv(path, cs: CoincidenceSet):
    data = np.column_stack([cs.alice_index, cs.bob_index, cs.delay_ps]).astype(np.int64)
    np.savetxt(path, data, fmt="%d", delimiter=",", header=",".join(COINCIDENCE_HEADER), comments="")
