"""Event-level Monte Carlo of a cw entangled-pair QKD link.

Pairs are emitted as a homogeneous Poisson process. Each photon survives its
arm independently, so by Poisson splitting the run decomposes into three
independent processes -- both photons detected, only Alice's, only Bob's --
which are generated directly. Photons whose partner was lost never need to
be paired with anything, which keeps high-loss runs cheap: the work is
proportional to the number of *detected* events, not emitted pairs.

Generation walks through the run in chunks of simulated time; events are
sorted and dead-time filtered chunk by chunk with a small hold-back margin
so that jitter can never reorder tags across a chunk boundary.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._accel import backend
from .tags import TagStream

PS = 1_000_000_000_000
JITTER_CLIP = 8.0  # jitter draws are clipped to +-8 sigma
ORIGIN_PS = 1_000_000  # run time zero sits 1 us into the tagger count


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogNormalFading:
    """Unit-mean log-normal transmittance factor with exponential correlation."""

    sigma: float
    correlation_time_s: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.correlation_time_s > 0:
            raise ValueError("correlation_time_s must be > 0")


@dataclass(frozen=True)
class SourceModel:
    pair_rate_hz: float
    v_sys: float = 1.0

    def __post_init__(self):
        if not self.pair_rate_hz > 0:
            raise ValueError("pair_rate_hz must be > 0")
        if not 0 <= self.v_sys <= 1:
            raise ValueError("v_sys must lie in [0, 1]")


@dataclass(frozen=True)
class ChannelModel:
    mean_attenuation_db: float
    fading: LogNormalFading | None = None

    def __post_init__(self):
        if not self.mean_attenuation_db >= 0:
            raise ValueError("mean_attenuation_db must be >= 0")


@dataclass(frozen=True)
class DetectorModel:
    dark_rate_hz: float = 0.0  # per detector
    jitter_ns: float = 0.0
    dead_time_ns: float = 0.0

    def __post_init__(self):
        if min(self.dark_rate_hz, self.jitter_ns, self.dead_time_ns) < 0:
            raise ValueError("detector parameters must be >= 0")


@dataclass(frozen=True)
class ClockModel:
    """Bob's clock relative to Alice's: ``offset + drift*t + random walk``."""

    offset_ns: float = 0.0
    drift_ns_per_s: float = 0.0
    drift_noise: float = 0.0  # ns / sqrt(s)
    grid_s: float = 0.1

    def __post_init__(self):
        if self.drift_noise < 0:
            raise ValueError("drift_noise must be >= 0")


@dataclass
class Truth:
    pair_id: np.ndarray
    alice_index: np.ndarray
    bob_index: np.ndarray

    def __len__(self):
        return int(self.pair_id.shape[0])


@dataclass
class Run:
    alice: TagStream
    bob: TagStream
    truth: Truth
    duration_s: float
    clock_grid_s: np.ndarray
    clock_offset_ns: np.ndarray
    manifest: dict = field(default_factory=dict)

    def true_offset_ns(self, t_s):
        """Injected Bob-minus-Alice offset at run time ``t_s``."""
        return np.interp(t_s, self.clock_grid_s, self.clock_offset_ns)


# ---------------------------------------------------------------------------
# elementary samplers
# ---------------------------------------------------------------------------


def sample_outcome_pair(basis_alice, basis_bob, v_sys, rng):
    """Measurement bits for detected pairs of the singlet state.

    Same bases give anti-correlated bits with probability ``(1 + v_sys)/2``;
    different bases give independent uniform bits. Works elementwise on
    arrays and returns ints for scalar input.
    """
    ba = np.asarray(basis_alice)
    bb = np.asarray(basis_bob)
    shape = np.broadcast(ba, bb).shape
    a = rng.integers(0, 2, size=shape, dtype=np.uint8)
    u = rng.random(size=shape)
    p_anti = np.where(ba == bb, 0.5 * (1.0 + v_sys), 0.5)
    b = np.where(u < p_anti, 1 - a, a).astype(np.uint8)
    if shape == ():
        return int(a), int(b)
    return a, b


def fading_factors(fading, t_s, rng):
    """Unit-mean multiplicative transmittance factors at sorted times ``t_s``.

    ``exp(sigma*z - sigma**2/2)`` with ``z`` a stationary Ornstein-Uhlenbeck
    process, stepped exactly between the (possibly irregular) sample times.
    """
    t_s = np.asarray(t_s, dtype=float)
    if fading is None or fading.sigma == 0 or t_s.size == 0:
        return np.ones_like(t_s)
    rho = np.exp(-np.diff(t_s) / fading.correlation_time_s)
    eps = rng.standard_normal(t_s.size)
    z = np.empty_like(t_s)
    z[0] = eps[0]
    scale = np.sqrt(1.0 - rho**2)
    for i in range(1, t_s.size):
        z[i] = rho[i - 1] * z[i - 1] + scale[i - 1] * eps[i]
    s = fading.sigma
    return np.exp(s * z - 0.5 * s * s)


def apply_fading(att_db_mean, fading, t, rng):
    """Instantaneous attenuation in dB at time(s) ``t``.

    With no fading, or ``sigma == 0``, this is exactly ``att_db_mean``.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if fading is None or fading.sigma == 0:
        out = np.full(t_arr.shape, float(att_db_mean))
    else:
        out = att_db_mean - 10.0 * np.log10(fading_factors(fading, t_arr, rng))
    return float(out[0]) if np.ndim(t) == 0 else out


def clock_track(clock: ClockModel, duration_s, rng):
    """Grid of run times and the injected offset (ns) at each."""
    n = int(math.ceil(duration_s / clock.grid_s)) + 1
    grid = np.arange(n) * clock.grid_s
    walk = np.zeros(n)
    if clock.drift_noise > 0 and n > 1:
        steps = rng.normal(0.0, clock.drift_noise * math.sqrt(clock.grid_s), n - 1)
        walk[1:] = np.cumsum(steps)
    return grid, clock.offset_ns + clock.drift_ns_per_s * grid + walk


# ---------------------------------------------------------------------------
# per-party accumulation
# ---------------------------------------------------------------------------


class _PartyStream:
    """Collects one party's events chunk by chunk into preallocated arrays."""

    def __init__(self, capacity, det: DetectorModel):
        self.t = np.empty(capacity, dtype=np.int64)
        self.ch = np.empty(capacity, dtype=np.uint8)
        self.basis = np.empty(capacity, dtype=np.uint8)
        self.n = 0
        self.dead_ps = int(round(det.dead_time_ns * 1000))
        self.margin_ps = int(math.ceil(JITTER_CLIP * det.jitter_ns * 1000)) + 1
        self.last_kept = np.full(2, kernels.NO_TAG, dtype=np.int64)
        self.pending = None
        self.pair_ids = []
        self.pair_pos = []

    def add(self, t, ch, basis, pid, boundary_ps):
        if self.pending is not None:
            pt, pc, pb, pp = self.pending
            t = np.concatenate([pt, t])
            ch = np.concatenate([pc, ch])
            basis = np.concatenate([pb, basis])
            pid = np.concatenate([pp, pid])
        order = np.argsort(t, kind="stable")
        t, ch, basis, pid = t[order], ch[order], basis[order], pid[order]
        if boundary_ps is None:
            cut = t.size
        else:
            cut = int(np.searchsorted(t, boundary_ps - self.margin_ps, side="left"))
        self.pending = (t[cut:], ch[cut:], basis[cut:], pid[cut:])
        t, ch, basis, pid = t[:cut], ch[:cut], basis[:cut], pid[:cut]
        if self.dead_ps > 0:
            keep = kernels.dead_time_mask(t, ch, self.dead_ps, self.last_kept)
            t, ch, basis, pid = t[keep], ch[keep], basis[keep], pid[keep]
        m = t.size
        self.t[self.n:self.n + m] = t
        self.ch[self.n:self.n + m] = ch
        self.basis[self.n:self.n + m] = basis
        paired = np.flatnonzero(pid >= 0)
        self.pair_ids.append(pid[paired])
        self.pair_pos.append(paired + self.n)
        self.n += m

    def finish(self, epoch_ps):
        stream = TagStream(self.t[:self.n], self.ch[:self.n], self.basis[:self.n], epoch_ps)
        return stream, np.concatenate(self.pair_ids), np.concatenate(self.pair_pos)


def _uniform_in_cells(rng, edges, counts):
    """Integer ps times, uniform inside each cell, ``counts[k]`` in cell ``k``."""
    total = int(counts.sum())
    cell = np.repeat(np.arange(counts.size), counts)
    width = (edges[1:] - edges[:-1])[cell]
    return edges[:-1][cell] + (rng.random(total) * width).astype(np.int64)


def _jitter_ps(rng, n, jitter_ns):
    if jitter_ns == 0:
        return np.zeros(n, dtype=np.int64)
    j = rng.standard_normal(n).clip(-JITTER_CLIP, JITTER_CLIP)
    return np.rint(j * jitter_ns * 1000).astype(np.int64)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def simulate(source: SourceModel, channel_alice: ChannelModel, channel_bob: ChannelModel,
             det_alice: DetectorModel, det_bob: DetectorModel, clock: ClockModel,
             duration_s, seed, chunk_s=1.0):
    """Generate both parties' time-tag streams and the ground-truth pairing.

    Returns a :class:`Run`. Identical arguments give bit-identical output.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    total_ps = int(round(duration_s * PS))

    fadings = [f.correlation_time_s for f in (channel_alice.fading, channel_bob.fading)
               if f is not None and f.sigma > 0]
    chunk_s = min(chunk_s, duration_s)
    cells_per_chunk = 1 if not fadings else max(1, int(math.ceil(chunk_s / (min(fadings) / 10))))
    cell_ps = max(1, int(round(chunk_s * PS / cells_per_chunk)))
    n_cells = int(math.ceil(total_ps / cell_ps))
    edges = np.minimum(np.arange(n_cells + 1, dtype=np.int64) * cell_ps, total_ps)
    cell_len_s = np.diff(edges) / PS
    mids = (edges[:-1] + edges[1:]) / 2 / PS

    # arm survival probabilities per cell
    xa = fading_factors(channel_alice.fading, mids, rng)
    xb = fading_factors(channel_bob.fading, mids, rng)
    pa = np.minimum(1.0, 10 ** (-channel_alice.mean_attenuation_db / 10) * xa)
    pb = np.minimum(1.0, 10 ** (-channel_bob.mean_attenuation_db / 10) * xb)
    r = source.pair_rate_hz
    n_both = rng.poisson(r * pa * pb * cell_len_s)
    n_aonly = rng.poisson(r * pa * (1 - pb) * cell_len_s)
    n_bonly = rng.poisson(r * (1 - pa) * pb * cell_len_s)

    n_chunks = int(math.ceil(n_cells / cells_per_chunk))
    chunk_edges = edges[np.minimum(np.arange(n_chunks + 1) * cells_per_chunk, n_cells)]
    chunk_len_s = np.diff(chunk_edges) / PS
    n_dark_a = rng.poisson(2 * det_alice.dark_rate_hz * chunk_len_s)
    n_dark_b = rng.poisson(2 * det_bob.dark_rate_hz * chunk_len_s)

    grid_s, off_ns = clock_track(clock, duration_s, rng)
    origin = ORIGIN_PS + max(0, int(math.ceil(-off_ns.min() * 1000)))
    grid_ps = grid_s * PS

    def bob_offset_ps(t_emit):
        return np.rint(np.interp(t_emit.astype(float), grid_ps, off_ns) * 1000).astype(np.int64)

    alice = _PartyStream(int(n_both.sum() + n_aonly.sum() + n_dark_a.sum()), det_alice)
    bob = _PartyStream(int(n_both.sum() + n_bonly.sum() + n_dark_b.sum()), det_bob)
    next_pair = 0

    for c in range(n_chunks):
        cells = slice(c * cells_per_chunk, min((c + 1) * cells_per_chunk, n_cells))
        cedges = edges[cells.start:cells.stop + 1]

        t_pair = _uniform_in_cells(rng, cedges, n_both[cells])
        npair = t_pair.size
        pid = np.arange(next_pair, next_pair + npair, dtype=np.int64)
        next_pair += npair
        basis_a = rng.integers(0, 2, npair, dtype=np.uint8)
        basis_b = rng.integers(0, 2, npair, dtype=np.uint8)
        bit_a, bit_b = sample_outcome_pair(basis_a, basis_b, source.v_sys, rng)

        t_ao = _uniform_in_cells(rng, cedges, n_aonly[cells])
        t_bo = _uniform_in_cells(rng, cedges, n_bonly[cells])
        c0, c1 = int(chunk_edges[c]), int(chunk_edges[c + 1])
        t_da = c0 + (rng.random(n_dark_a[c]) * (c1 - c0)).astype(np.int64)
        t_db = c0 + (rng.random(n_dark_b[c]) * (c1 - c0)).astype(np.int64)

        n_a = npair + t_ao.size + t_da.size
        ta = np.concatenate([t_pair, t_ao, t_da])
        cha = np.concatenate([bit_a, rng.integers(0, 2, n_a - npair, dtype=np.uint8)])
        bsa = np.concatenate([basis_a, rng.integers(0, 2, n_a - npair, dtype=np.uint8)])
        pida = np.concatenate([pid, np.full(n_a - npair, -1, dtype=np.int64)])
        ta = ta + origin + _jitter_ps(rng, n_a, det_alice.jitter_ns)

        n_b = npair + t_bo.size + t_db.size
        tb = np.concatenate([t_pair, t_bo, t_db])
        chb = np.concatenate([bit_b, rng.integers(0, 2, n_b - npair, dtype=np.uint8)])
        bsb = np.concatenate([basis_b, rng.integers(0, 2, n_b - npair, dtype=np.uint8)])
        pidb = np.concatenate([pid, np.full(n_b - npair, -1, dtype=np.int64)])
        tb = tb + origin + bob_offset_ps(tb) + _jitter_ps(rng, n_b, det_bob.jitter_ns)

        last = c == n_chunks - 1
        end = np.array([c1], dtype=np.int64)
        alice.add(ta, cha, bsa, pida, None if last else origin + c1)
        bob.add(tb, chb, bsb, pidb, None if last else origin + c1 + int(bob_offset_ps(end)[0]))

    a_stream, a_pid, a_pos = alice.finish(origin)
    b_stream, b_pid, b_pos = bob.finish(origin)
    common, ia, ib = np.intersect1d(a_pid, b_pid, assume_unique=True, return_indices=True)
    truth = Truth(common, a_pos[ia], b_pos[ib])
    manifest = {
        "seed": int(seed),
        "duration_s": float(duration_s),
        "pairs_emitted_detected_both": int(next_pair),
        "alice_tags": len(a_stream),
        "bob_tags": len(b_stream),
        "truth_pairs": len(truth),
        "kernel_backend": backend(),
    }
    return Run(a_stream, b_stream, truth, float(duration_s), grid_s, off_ns, manifest)


def models_from_config(config):
    """Translate a :class:`ScenarioConfig` into simulator models."""
    local_loss_db = -10.0 * math.log10(config.local_efficiency)

    def fading(sigma, corr):
        return LogNormalFading(sigma, corr) if sigma > 0 else None

    source = SourceModel(config.source_pair_rate_hz, config.v_sys * config.link_visibility)
    ch_a = ChannelModel(local_loss_db + config.alice_arm_db,
                        fading(config.alice_fading_sigma, config.alice_fading_correlation_s))
    ch_b = ChannelModel(local_loss_db + config.bob_arm_db,
                        fading(config.bob_fading_sigma, config.bob_fading_correlation_s))
    det_a = DetectorModel(config.alice_dark_rate_hz, config.jitter_ns, config.dead_time_ns)
    det_b = DetectorModel(config.bob_dark_rate_hz, config.jitter_ns, config.dead_time_ns)
    clock = ClockModel(config.clock_offset_ns, config.clock_drift_ns_per_s,
                       config.clock_drift_noise_ns_per_sqrt_s)
    return source, ch_a, ch_b, det_a, det_b, clock


def config_digest(config):
    return hashlib.sha256(config.to_text().encode()).hexdigest()


def generate_run(config, duration_s=None, seed=None, chunk_s=1.0):
    """Simulate a scenario; ``duration_s`` and ``seed`` default to the config's."""
    duration_s = config.duration_s if duration_s is None else duration_s
    seed = config.seed if seed is None else seed
    run = simulate(*models_from_config(config), duration_s=duration_s, seed=seed, chunk_s=chunk_s)
    run.manifest.update(scenario=config.name, config_sha256=config_digest(config))
    return run
