"""Both kernel paths against each other and against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entqkd import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="needs numba for the compiled path")


def sorted_times(max_size=200, hi=20_000):
    return st.lists(st.integers(0, hi), max_size=max_size).map(lambda x: np.sort(np.asarray(x, dtype=np.int64)))


# -- dead time ----------------------------------------------------------------


def dead_time_brute(t, ch, dead, last):
    last = list(last)
    keep = []
    for ti, ci in zip(t.tolist(), ch.tolist()):
        ok = ti - last[ci] >= dead
        keep.append(ok)
        if ok:
            last[ci] = ti
    return np.array(keep, dtype=bool), last


@settings(max_examples=150, deadline=None)
@given(sorted_times(), st.integers(0, 3000), st.data())
def test_dead_time_paths_agree(t, dead, data):
    ch = np.asarray(data.draw(st.lists(st.integers(0, 1), min_size=t.size, max_size=t.size)), dtype=np.uint8)
    start = data.draw(st.sampled_from([kernels.NO_TAG, -500, 0]))
    ref, ref_last = dead_time_brute(t, ch, dead, [start, start])
    for fn in (kernels._dead_time_mask_loop, kernels._dead_time_mask_numpy):
        last = np.full(2, start, dtype=np.int64)
        got = fn(t, ch, np.int64(dead), last)
        assert np.array_equal(got, ref)
        assert last.tolist() == ref_last


def test_dead_time_state_carries_across_chunks():
    rng = np.random.default_rng(0)
    t = np.sort(rng.integers(0, 10**6, 5000)).astype(np.int64)
    ch = rng.integers(0, 2, t.size).astype(np.uint8)
    whole = kernels.dead_time_mask(t, ch, 300, np.full(2, kernels.NO_TAG, np.int64))
    last = np.full(2, kernels.NO_TAG, np.int64)
    parts = [kernels.dead_time_mask(t[s], ch[s], 300, last) for s in (slice(0, 1700), slice(1700, None))]
    assert np.array_equal(np.concatenate(parts), whole)


# -- cross-correlation -----------------------------------------------------------------


def xcorr_brute(ta, tb, lo, bw, nb):
    counts = np.zeros(nb, dtype=np.int64)
    for x in tb.tolist():
        for y in ta.tolist():
            d = x - y
            if lo <= d < lo + bw * nb:
                counts[(d - lo) // bw] += 1
    return counts


@settings(max_examples=150, deadline=None)
@given(sorted_times(80), sorted_times(80), st.integers(-3000, 3000), st.integers(1, 500), st.integers(1, 40))
def test_xcorr_paths_agree(ta, tb, lo, bw, nb):
    ref = xcorr_brute(ta, tb, lo, bw, nb)
    assert np.array_equal(kernels._xcorr_loop(ta, tb, np.int64(lo), np.int64(bw), np.int64(nb)), ref)
    assert np.array_equal(kernels._xcorr_numpy(ta, tb, lo, bw, nb), ref)


def test_xcorr_numpy_batches():
    rng = np.random.default_rng(1)
    ta = np.sort(rng.integers(0, 10**7, 20_000)).astype(np.int64)
    tb = np.sort(rng.integers(0, 10**7, 20_000)).astype(np.int64)
    a = kernels._xcorr_numpy(ta, tb, -50_000, 1000, 100, max_batch=997)
    b = kernels._xcorr_numpy(ta, tb, -50_000, 1000, 100)
    assert np.array_equal(a, b)


# -- matching ----------------------------------------------------------------------------


def match_brute(ta, tb, half):
    cands = sorted((abs(int(b) - int(a)), i, j) for i, a in enumerate(ta) for j, b in enumerate(tb)
                   if abs(int(b) - int(a)) <= half)
    ua, ub, out = set(), set(), []
    for _, i, j in cands:
        if i not in ua and j not in ub:
            ua.add(i)
            ub.add(j)
            out.append((i, j))
    return out


@settings(max_examples=150, deadline=None)
@given(sorted_times(60, 5000), st.lists(st.integers(0, 5000), max_size=60), st.integers(0, 300))
def test_match_paths_agree(ta, tb, half):
    tb = np.asarray(tb, dtype=np.int64)  # deliberately unsorted
    ref = match_brute(ta, tb, half)
    for fn in (kernels._match_loop, kernels._match_numpy):
        ia, ib = fn(ta, tb, np.int64(half))
        assert list(zip(ia.tolist(), ib.tolist())) == ref


def test_match_tie_goes_to_earlier_alice_tag():
    ta = np.array([100, 300], dtype=np.int64)
    tb = np.array([200], dtype=np.int64)
    for fn in (kernels._match_loop, kernels._match_numpy):
        ia, ib = fn(ta, tb, np.int64(100))
        assert ia.tolist() == [0] and ib.tolist() == [0]


def test_backend_flag_reported():
    assert _accel.backend() in ("numba", "numpy")
