"""CASCADE reconciliation with Alice as a parity oracle behind the channel.

Bob owns the control flow. Each pass permutes the key with a public seed,
splits it into blocks and asks Alice for the block parities. A block whose
parity disagrees holds an odd number of errors; a binary search over
sub-block parities finds one of them. Flipping that bit changes the parity
of the blocks that contain it in every other pass, which may expose further
errors there (back-propagation). After the last pass a 64-bit hash confirms
agreement; on mismatch further passes run, up to ``max_passes``.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass

import numpy as np

from .channel import ALICE, Message, MsgType, ClassicalChannel, pack_bits, unpack_bits
from .hashing import hash64

_IDENTITY = 0xFFFFFFFFFFFFFFFF
_U64 = struct.Struct("<Q")


class CascadeFailure(RuntimeError):
    pass


def _permutation(n, seed):
    if seed == _IDENTITY:
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng(seed).permutation(n).astype(np.int64)


class AliceAgent:
    """Alice's side of post-processing: answers Bob's requests from her key.

    The agent holds its key privately and mutates it only through the
    protocol messages (sampled positions are dropped, privacy amplification
    replaces the key).
    """

    def __init__(self, bits):
        self.key = np.asarray(bits, dtype=np.uint8).copy()
        self.secure_key = None
        self._perms = {}

    def _perm(self, seed):
        n = self.key.size
        p = self._perms.get(seed)
        if p is None or p.size != n:
            p = self._perms[seed] = _permutation(n, seed)
        return p

    def handle(self, req: Message) -> Message:
        if req.type is MsgType.PARITY_REQ:
            (seed,) = _U64.unpack_from(req.payload, 0)
            ranges = np.frombuffer(req.payload, dtype="<u4", offset=8).reshape(-1, 2)
            perm = self._perm(seed)
            permuted = self.key[perm]
            cs = np.concatenate(([0], np.cumsum(permuted, dtype=np.int64)))
            par = ((cs[ranges[:, 1]] - cs[ranges[:, 0]]) & 1).astype(np.uint8)
            return Message(MsgType.PARITY_RESP, ALICE, pack_bits(par), par.size)
        if req.type is MsgType.SAMPLE_REVEAL:
            pos = np.frombuffer(req.payload, dtype="<u4").astype(np.int64)
            revealed = self.key[pos]
            self.key = np.delete(self.key, pos)
            self._perms.clear()
            return Message(MsgType.SAMPLE_REVEAL, ALICE, pack_bits(revealed), revealed.size)
        if req.type is MsgType.HASH_CHECK:
            (seed,) = _U64.unpack_from(req.payload, 0)
            return Message(MsgType.HASH_CHECK, ALICE, _U64.pack(hash64(self.key, seed)), 64)
        if req.type is MsgType.PA_SEED:
            from .privacy import toeplitz_from_payload
            self.secure_key = toeplitz_from_payload(self.key, req.payload)
            return Message(MsgType.PA_SEED, ALICE, b"", 0)
        raise ValueError(f"unexpected message {req.type!r}")


def initial_block_size(qber, n):
    """First-pass block size 0.73/q, clamped to [8, n/4]."""
    k = int(round(0.73 / qber))
    hi = max(n // 4, 1)
    return int(min(max(k, 8), hi)) if hi >= 8 else max(n, 1)


@dataclass
class _Pass:
    seed: int
    perm: np.ndarray
    pos: np.ndarray   # inverse permutation
    k: int
    alice: np.ndarray  # Alice's block parities
    bob: np.ndarray    # Bob's current block parities

    def block_range(self, b, n):
        return b * self.k, min((b + 1) * self.k, n)


class _Bob:
    def __init__(self, bits, channel, rng):
        self.y = np.asarray(bits, dtype=np.uint8).copy()
        self.n = self.y.size
        self.channel = channel
        self.rng = rng
        self.passes: list[_Pass] = []

    def _ask(self, seed, ranges):
        payload = _U64.pack(seed) + np.asarray(ranges, dtype="<u4").tobytes()
        resp = self.channel.request(MsgType.PARITY_REQ, payload)
        return unpack_bits(resp.payload)

    def new_pass(self, k):
        n = self.n
        seed = _IDENTITY if not self.passes else int(self.rng.integers(0, _IDENTITY, dtype=np.uint64))
        perm = _permutation(n, seed)
        pos = np.empty(n, dtype=np.int64)
        pos[perm] = np.arange(n, dtype=np.int64)
        starts = np.arange(0, n, k, dtype=np.int64)
        ranges = np.column_stack([starts, np.minimum(starts + k, n)])
        alice = self._ask(seed, ranges)
        bob = (np.add.reduceat(self.y[perm].astype(np.int64), starts) & 1).astype(np.uint8)
        self.passes.append(_Pass(seed, perm, pos, k, alice, bob))
        return len(self.passes) - 1

    def _flip(self, i):
        self.y[i] ^= 1
        touched = []
        for j, p in enumerate(self.passes):
            b = int(p.pos[i] // p.k)
            p.bob[b] ^= 1
            touched.append((j, b))
        return touched

    def _bisect(self, j, b):
        p = self.passes[j]
        lo, hi = p.block_range(b, self.n)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            a_par = int(self._ask(p.seed, [(lo, mid)])[0])
            b_par = int(self.y[p.perm[lo:mid]].sum() & 1)
            if a_par != b_par:
                hi = mid
            else:
                lo = mid
        return int(p.perm[lo])

    def settle(self):
        """Correct every odd block in all passes run so far."""
        heap = []
        for j, p in enumerate(self.passes):
            for b in np.flatnonzero(p.alice != p.bob):
                heap.append((p.k, j, int(b)))
        heapq.heapify(heap)
        while heap:
            _, j, b = heapq.heappop(heap)
            p = self.passes[j]
            if p.alice[b] == p.bob[b]:
                continue
            i = self._bisect(j, b)
            for jj, bb in self._flip(i):
                pp = self.passes[jj]
                if pp.alice[bb] != pp.bob[bb]:
                    heapq.heappush(heap, (pp.k, jj, bb))

    def hash_matches(self):
        seed = int(self.rng.integers(0, _IDENTITY, dtype=np.uint64))
        resp = self.channel.request(MsgType.HASH_CHECK, _U64.pack(seed))
        (theirs,) = _U64.unpack(resp.payload)
        return theirs == hash64(self.y, seed)


# at or below this hint the sample saw no errors, so a hash comparison is
# tried before any parity goes out
PRECHECK_QBER = 1e-3


def cascade_correct(a, b, qber_hint, channel=None, *, seed=0, passes=4, max_passes=12, precheck=None):
    """Reconcile Bob's key ``b`` with Alice's key.

    Parameters
    ----------
    a : array of bits or None
        Alice's key. Only used to build an in-process Alice when ``channel``
        is None; with a live channel Alice's key stays behind it.
    b : array of bits
        Bob's key (already flipped to agree with Alice's convention).
    qber_hint : float
        Expected error rate in (0, 0.25], sets the first block size.
    channel : ClassicalChannel, optional
    seed : int
        Seeds Bob's public randomness (permutations and hash keys).
    precheck : bool, optional
        Compare hashes before the first pass and stop if they agree. Defaults
        to ``qber_hint <= PRECHECK_QBER``.

    Returns
    -------
    corrected : ndarray of uint8
    leaked_bits : int
        Bits disclosed on the channel by this call.
    """
    if not 0 < qber_hint <= 0.25:
        raise ValueError(f"qber_hint must lie in (0, 0.25], got {qber_hint}")
    b = getattr(b, "bits", b)
    if channel is None:
        if a is None:
            raise ValueError("need Alice's key or a channel to reach her")
        channel = ClassicalChannel(AliceAgent(getattr(a, "bits", a)))
    start = channel.disclosed_bits
    bob = _Bob(b, channel, np.random.default_rng(seed))
    if bob.n == 0:
        return bob.y, 0
    if precheck is None:
        precheck = qber_hint <= PRECHECK_QBER
    if precheck and bob.hash_matches():
        return bob.y, channel.disclosed_bits - start

    k = initial_block_size(qber_hint, bob.n)
    n_pass = 0
    target = passes
    while True:
        while n_pass < target:
            bob.new_pass(min(k << n_pass, max(bob.n // 2, 1)))
            bob.settle()
            n_pass += 1
        if bob.hash_matches():
            return bob.y, channel.disclosed_bits - start
        if n_pass >= max_passes:
            raise CascadeFailure(f"keys still differ after {n_pass} passes")
        target = n_pass + 1
