"""Hot inner loops over time-tag streams.

Every kernel exists twice: a loop version compiled with numba and a
vectorised numpy version. Both return identical results; the public name
points at one of them according to ``entqkd._accel.USE_NUMBA``.

All timestamps are int64 picoseconds and all inputs are assumed sorted
where noted.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# "no previous tag" marker for dead-time state; far enough from 0 that
# subtracting it from a valid timestamp cannot overflow.
NO_TAG = -(2**62)


# ---------------------------------------------------------------------------
# dead time
# ---------------------------------------------------------------------------


@njit
def _dead_time_mask_loop(t, channel, dead_ps, last_kept):
    n = t.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        c = channel[i]
        if t[i] - last_kept[c] >= dead_ps:
            keep[i] = True
            last_kept[c] = t[i]
    return keep


def _dead_time_mask_numpy(t, channel, dead_ps, last_kept):
    keep = np.zeros(t.shape[0], dtype=bool)
    for c in range(last_kept.shape[0]):
        idx = np.flatnonzero(channel == c)
        if idx.size == 0:
            continue
        tc = t[idx]
        k = np.ones(tc.size, dtype=bool)
        prev = np.empty_like(tc)
        # Fixed point of "kept iff far enough from the last kept tag". The
        # first tag of every dead-time cluster is settled on the first sweep
        # and each further sweep settles one more tag per cluster.
        while True:
            kept_t = np.where(k, tc, NO_TAG)
            prev[0] = last_kept[c]
            if tc.size > 1:
                np.maximum(np.maximum.accumulate(kept_t)[:-1], last_kept[c], out=prev[1:])
            k_new = (tc - prev) >= dead_ps
            if np.array_equal(k_new, k):
                break
            k = k_new
        keep[idx] = k
        if k.any():
            last_kept[c] = tc[k][-1]
    return keep


def dead_time_mask(t, channel, dead_ps, last_kept):
    """Non-paralysable dead-time filter for one party's merged stream.

    Parameters
    ----------
    t : int64 array, sorted
    channel : uint8 array, detector id per tag
    dead_ps : int
        Tags closer than this to the previous *kept* tag on the same
        detector are dropped.
    last_kept : int64 array, one slot per detector
        Carry-over state between consecutive chunks; updated in place.
        Initialise with ``NO_TAG``.

    Returns
    -------
    keep : bool array
    """
    fn = _dead_time_mask_loop if USE_NUMBA else _dead_time_mask_numpy
    return fn(t, channel, np.int64(dead_ps), last_kept)


# ---------------------------------------------------------------------------
# cross-correlation histogram
# ---------------------------------------------------------------------------


@njit
def _xcorr_loop(ta, tb, lo_ps, bin_ps, nbins):
    counts = np.zeros(nbins, dtype=np.int64)
    hi_ps = lo_ps + bin_ps * nbins
    for j in range(tb.shape[0]):
        start = np.searchsorted(ta, tb[j] - hi_ps, side="right")
        stop = np.searchsorted(ta, tb[j] - lo_ps, side="right")
        for i in range(start, stop):
            k = (tb[j] - ta[i] - lo_ps) // bin_ps
            if k < nbins:
                counts[k] += 1
    return counts


def _xcorr_numpy(ta, tb, lo_ps, bin_ps, nbins, max_batch=4_000_000):
    counts = np.zeros(nbins, dtype=np.int64)
    hi_ps = lo_ps + bin_ps * nbins
    start = np.searchsorted(ta, tb - hi_ps, side="right")
    stop = np.searchsorted(ta, tb - lo_ps, side="right")
    width = stop - start
    csum = np.cumsum(width)
    j0 = 0
    while j0 < tb.size:
        base = csum[j0 - 1] if j0 else 0
        j1 = max(int(np.searchsorted(csum, base + max_batch, side="right")), j0 + 1)
        w = width[j0:j1]
        total = int(w.sum())
        if total:
            owner = np.repeat(np.arange(j0, j1), w)
            first = np.repeat(np.cumsum(w) - w, w)
            ai = start[owner] + (np.arange(total) - first)
            k = (tb[owner] - ta[ai] - lo_ps) // bin_ps
            counts += np.bincount(k[k < nbins], minlength=nbins)
        j0 = j1
    return counts


def xcorr_histogram(ta, tb, lo_ps, bin_ps, nbins):
    """Histogram of pairwise delays ``tb - ta`` in ``[lo, lo + nbins*bin)``.

    Only pairs inside the span are ever visited: for each ``tb`` the matching
    slice of ``ta`` is located by binary search, so the cost is
    O(len(tb) * log len(ta) + number of in-span pairs).
    """
    fn = _xcorr_loop if USE_NUMBA else _xcorr_numpy
    return fn(ta, tb, np.int64(lo_ps), np.int64(bin_ps), np.int64(nbins))


# ---------------------------------------------------------------------------
# coincidence matching
# ---------------------------------------------------------------------------


@njit
def _match_loop(ta, tb, half_window_ps):
    nb = tb.shape[0]
    start = np.empty(nb, dtype=np.int64)
    stop = np.empty(nb, dtype=np.int64)
    total = 0
    for j in range(nb):
        start[j] = np.searchsorted(ta, tb[j] - half_window_ps, side="left")
        stop[j] = np.searchsorted(ta, tb[j] + half_window_ps, side="right")
        total += stop[j] - start[j]
    ca = np.empty(total, dtype=np.int64)
    cb = np.empty(total, dtype=np.int64)
    cd = np.empty(total, dtype=np.int64)
    m = 0
    for j in range(nb):
        for i in range(start[j], stop[j]):
            ca[m] = i
            cb[m] = j
            cd[m] = abs(tb[j] - ta[i])
            m += 1
    # candidates are in (b, a) order; two stable sorts give (|d|, a, b)
    o1 = np.argsort(ca, kind="mergesort")
    o2 = o1[np.argsort(cd[o1], kind="mergesort")]
    used_a = np.zeros(ta.shape[0], dtype=np.bool_)
    used_b = np.zeros(nb, dtype=np.bool_)
    out_a = np.empty(total, dtype=np.int64)
    out_b = np.empty(total, dtype=np.int64)
    n = 0
    for r in range(total):
        k = o2[r]
        if not used_a[ca[k]] and not used_b[cb[k]]:
            used_a[ca[k]] = True
            used_b[cb[k]] = True
            out_a[n] = ca[k]
            out_b[n] = cb[k]
            n += 1
    return out_a[:n], out_b[:n]


def _match_numpy(ta, tb, half_window_ps):
    start = np.searchsorted(ta, tb - half_window_ps, side="left")
    stop = np.searchsorted(ta, tb + half_window_ps, side="right")
    w = stop - start
    total = int(w.sum())
    cb = np.repeat(np.arange(tb.size, dtype=np.int64), w)
    first = np.repeat(np.cumsum(w) - w, w)
    ca = start[cb] + (np.arange(total) - first)
    cd = np.abs(tb[cb] - ta[ca])
    order = np.lexsort((cb, ca, cd))
    used_a = set()
    used_b = set()
    out_a, out_b = [], []
    for k in order:
        a, b = int(ca[k]), int(cb[k])
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        out_a.append(a)
        out_b.append(b)
    return np.asarray(out_a, dtype=np.int64), np.asarray(out_b, dtype=np.int64)


def match_coincidences(ta, tb, half_window_ps):
    """Greedy one-to-one nearest-neighbour matching within ``±half_window``.

    ``ta`` must be sorted; ``tb`` are Bob's offset-corrected timestamps (any
    order). Candidates are accepted in order of increasing ``|tb - ta|``,
    ties going to the earlier Alice tag, then the earlier Bob tag.

    Returns index arrays ``(alice_idx, bob_idx)`` in acceptance order.
    """
    fn = _match_loop if USE_NUMBA else _match_numpy
    return fn(ta, tb, np.int64(half_window_ps))
