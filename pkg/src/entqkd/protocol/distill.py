"""Sifting, QBER estimation and the end-to-end distillation pipeline."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from ..keyrate import cascade_efficiency, cutoff_qber
from ..tags import TagStream
from ..timesync import SyncConfig, pair_coincidences, track_drift
from .cascade import AliceAgent, cascade_correct
from .channel import ClassicalChannel, MsgType, unpack_bits
from .privacy import pa_payload, secure_length, toeplitz_from_payload

MIN_SAMPLE_BITS = 100
RATE_CSV_HEADER = ["time_s", "sifted_rate_bits_per_s"]


class SmallSampleWarning(UserWarning):
    pass


class AboveCutoff(RuntimeError):
    """Estimated QBER leaves no positive secret fraction."""

    def __init__(self, message, key_material=None, rate_series=None):
        super().__init__(message)
        self.key_material = key_material
        self.rate_series = rate_series


@dataclass
class SiftedKey:
    bits: np.ndarray
    basis_tags: np.ndarray
    origin: str
    index: np.ndarray  # position in the coincidence list

    def __len__(self):
        return int(self.bits.shape[0])


@dataclass(frozen=True)
class QberEstimate:
    qber: float
    ci_low: float
    ci_high: float
    errors: int
    sample_bits: int


def _outcomes(x):
    if hasattr(x, "basis") and hasattr(x, "bits"):
        return np.asarray(x.basis, dtype=np.uint8), np.asarray(x.bits, dtype=np.uint8)
    basis, bits = x
    return np.asarray(basis, dtype=np.uint8), np.asarray(bits, dtype=np.uint8)


def sift(alice_outcomes, bob_outcomes):
    """Keep same-basis coincidences and flip Bob's bits.

    Each argument is a ``(basis, bit)`` pair of index-aligned arrays, one
    entry per coincidence. On the singlet both parties see opposite bits in
    a shared basis, so Bob inverts his to obtain Alice's key.
    """
    ba, xa = _outcomes(alice_outcomes)
    bb, xb = _outcomes(bob_outcomes)
    if not (ba.shape == xa.shape == bb.shape == xb.shape):
        raise ValueError("outcome sequences differ in length")
    keep = np.flatnonzero(ba == bb)
    return (SiftedKey(xa[keep], ba[keep], "alice", keep),
            SiftedKey(xb[keep] ^ 1, bb[keep], "bob", keep))


def binomial_interval(errors, n, confidence=0.95):
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(int(errors), int(n)).proportion_ci(confidence, method="exact")
    return float(ci.low), float(ci.high)


def estimate_qber(a, b, sample_fraction, rng, channel=None):
    """Compare a random sample of the sifted keys in public.

    Bob announces the sampled positions with his bits, Alice answers with
    hers; both drop the sample. With ``channel=None`` an in-process Alice is
    built from ``a``.

    Returns
    -------
    estimate : QberEstimate
    remaining : (ndarray or None, ndarray)
        Alice's remaining key (None when she sits behind a caller-supplied
        channel) and Bob's.
    """
    a_bits = None if a is None else np.asarray(getattr(a, "bits", a), dtype=np.uint8)
    b_bits = np.asarray(getattr(b, "bits", b), dtype=np.uint8)
    if a_bits is not None and a_bits.shape != b_bits.shape:
        raise ValueError("sifted keys differ in length")
    if not 0 < sample_fraction <= 1:
        raise ValueError("sample_fraction must lie in (0, 1]")
    if channel is None:
        if a_bits is None:
            raise ValueError("need Alice's key or a channel to reach her")
        channel = ClassicalChannel(AliceAgent(a_bits))
    n = b_bits.size
    m = n if sample_fraction >= 1 else min(n, int(round(sample_fraction * n)))
    pos = np.sort(rng.choice(n, size=m, replace=False)) if m < n else np.arange(n)
    if m < MIN_SAMPLE_BITS:
        warnings.warn(f"QBER sample of {m} bits is too small to bound the error rate",
                      SmallSampleWarning, stacklevel=2)
    resp = channel.request(MsgType.SAMPLE_REVEAL, pos.astype("<u4").tobytes())
    theirs = unpack_bits(resp.payload)
    errors = int(np.count_nonzero(theirs != b_bits[pos]))
    lo, hi = binomial_interval(errors, m)
    est = QberEstimate(errors / m if m else 0.0, lo, hi, errors, m)
    a_rem = None if a_bits is None else np.delete(a_bits, pos)
    return est, (a_rem, np.delete(b_bits, pos))


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------


@dataclass
class KeyMaterial:
    raw_len: int
    sifted_len: int
    estimated_qber: float
    leaked_bits: int  # sample + reconciliation + verification
    secure_len: int
    qber_ci: tuple = (0.0, 1.0)
    sample_bits: int = 0
    measured_qber: float = float("nan")
    corrected_errors: int = 0
    ec_leaked_bits: int = 0
    f: float = float("nan")
    duration_s: float = float("nan")

    @property
    def sifted_rate(self):
        return self.sifted_len / self.duration_s

    @property
    def secure_rate(self):
        """Secure bits per second after the QBER sample has been spent."""
        return self.secure_len / self.duration_s

    @property
    def gross_secure_rate(self):
        """Secure rate as if the sampled bits had entered the key too."""
        kept = self.sifted_len - self.sample_bits
        if kept <= 0:
            return 0.0
        return self.secure_rate * self.sifted_len / kept

    def to_text(self):
        rows = [
            ("raw_len", self.raw_len),
            ("sifted_len", self.sifted_len),
            ("sample_bits", self.sample_bits),
            ("estimated_qber", f"{self.estimated_qber:.6f}"),
            ("estimated_qber_ci95", f"{self.qber_ci[0]:.6f} {self.qber_ci[1]:.6f}"),
            ("measured_qber", f"{self.measured_qber:.6f}"),
            ("corrected_errors", self.corrected_errors),
            ("ec_leaked_bits", self.ec_leaked_bits),
            ("leaked_bits", self.leaked_bits),
            ("error_correction_factor", f"{self.f:.4f}"),
            ("secure_len", self.secure_len),
            ("duration_s", f"{self.duration_s:.6g}"),
            ("sifted_rate_bits_per_s", f"{self.sifted_rate:.6g}"),
            ("secure_rate_net_bits_per_s", f"{self.secure_rate:.6g}"),
            ("secure_rate_gross_bits_per_s", f"{self.gross_secure_rate:.6g}"),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)


def write_rate_csv(path, times_s, rates):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATE_CSV_HEADER)
        for t, r in zip(times_s, rates):
            w.writerow([f"{t:.6g}", f"{r:.6g}"])


def read_rate_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != RATE_CSV_HEADER:
            raise ValueError(f"{path}: unexpected sifted-rate CSV header")
        data = np.asarray([[float(x) for x in row] for row in r], dtype=float).reshape(-1, 2)
    return data[:, 0], data[:, 1]


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    window_ns: float = 1.5
    sample_fraction: float = 0.1
    passes: int = 4
    max_passes: int = 12
    error_correction_factor: float | None = None  # None: CASCADE table
    rate_bin_s: float = 0.2
    seed: int = 0


@dataclass
class Distillation:
    key_material: KeyMaterial
    rate_times_s: np.ndarray
    sifted_rate: np.ndarray
    alice_key: np.ndarray
    bob_key: np.ndarray
    channel: ClassicalChannel
    track: object = None
    coincidences: object = None
    extra: dict = field(default_factory=dict)


def sifted_rate_series(t_ps, origin_ps, duration_s, bin_s):
    nb = max(1, int(math.ceil(duration_s / bin_s - 1e-9)))
    idx = ((np.asarray(t_ps, dtype=np.int64) - origin_ps) / (bin_s * 1e12)).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < nb)]
    counts = np.bincount(idx, minlength=nb)
    return np.arange(nb) * bin_s, counts / bin_s


def run_distillation(alice: TagStream, bob: TagStream, sync_config: SyncConfig = SyncConfig(),
                     protocol_config: ProtocolConfig = ProtocolConfig(), track=None):
    """Sync, pair, sift, estimate, reconcile and amplify.

    Raises
    ------
    AboveCutoff
        When the estimated QBER leaves no secret fraction. The exception
        carries the partial accounting and the sifted-rate series.
    """
    pc = protocol_config
    ss = np.random.SeedSequence(pc.seed)
    rng_sample, rng_cascade, rng_pa = (np.random.default_rng(s) for s in ss.spawn(3))

    if track is None:
        track = track_drift(alice, bob, cfg=sync_config)
    cs = pair_coincidences(alice, bob, track, pc.window_ns)
    ka, kb = sift((alice.basis[cs.alice_index], alice.channel[cs.alice_index]),
                  (bob.basis[cs.bob_index], bob.channel[cs.bob_index]))

    origin = track.origin_ps
    duration = (int(alice.t[-1]) - origin) * 1e-12 if len(alice) else 0.0
    times, rates = sifted_rate_series(alice.t[cs.alice_index[ka.index]], origin, duration, pc.rate_bin_s)

    agent = AliceAgent(ka.bits)
    channel = ClassicalChannel(agent)
    n_sifted = len(kb)
    km = KeyMaterial(raw_len=len(cs), sifted_len=n_sifted, estimated_qber=float("nan"),
                     leaked_bits=0, secure_len=0, duration_s=duration)
    if n_sifted == 0:
        raise AboveCutoff("no sifted key", km, (times, rates))

    est, (_, b_rem) = estimate_qber(None, kb, pc.sample_fraction, rng_sample, channel)
    km.estimated_qber, km.qber_ci, km.sample_bits = est.qber, (est.ci_low, est.ci_high), est.sample_bits
    km.leaked_bits = channel.disclosed_bits
    q_cut = cutoff_qber(pc.error_correction_factor)
    if est.qber >= q_cut or b_rem.size == 0:
        raise AboveCutoff(f"estimated QBER {est.qber:.4f} is above the cutoff {q_cut:.4f}", km, (times, rates))

    hint = min(max(est.qber, 1e-3), 0.25)
    corrected, ec_leak = cascade_correct(None, b_rem, hint, channel,
                                         seed=int(rng_cascade.integers(2**63)),
                                         passes=pc.passes, max_passes=pc.max_passes)
    km.corrected_errors = int(np.count_nonzero(corrected != b_rem))
    km.measured_qber = km.corrected_errors / b_rem.size
    km.ec_leaked_bits = ec_leak
    km.f = pc.error_correction_factor or cascade_efficiency(km.measured_qber)

    m = secure_length(corrected.size, km.measured_qber, km.f, ec_leak)
    payload = pa_payload(int(rng_pa.integers(2**63)), m)
    channel.request(MsgType.PA_SEED, payload)
    bob_key = toeplitz_from_payload(corrected, payload)
    km.leaked_bits = channel.disclosed_bits
    km.secure_len = int(bob_key.size)
    return Distillation(km, times, rates, agent.secure_key, bob_key, channel, track, cs)
