"""Authenticated-by-assumption public channel between Alice and Bob.

Bob drives every exchange: he sends a request, the channel hands it to
Alice's agent and logs both directions. Each message that reveals key
information increments ``disclosed_bits``. The transcript can be written to
disk and replayed in place of a live Alice.

Transcript file: magic ``b"QKT1"`` then records of

    u32  length of the rest of the record
    u8   message type
    u8   sender (0 = Alice, 1 = Bob)
    u32  disclosed bits attributed to this message
    ...  payload
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRANSCRIPT_MAGIC = b"QKT1"
_REC = struct.Struct("<IBBI")

ALICE, BOB = 0, 1


class MsgType(enum.IntEnum):
    PARITY_REQ = 1
    PARITY_RESP = 2
    SAMPLE_REVEAL = 3
    HASH_CHECK = 4
    PA_SEED = 5


@dataclass(frozen=True)
class Message:
    type: MsgType
    sender: int
    payload: bytes
    disclosed: int = 0


class ReplayMismatch(RuntimeError):
    pass


class ClassicalChannel:
    """Request/response channel with a replayable transcript.

    ``responder`` is Alice's agent: any object with ``handle(Message) ->
    Message``.
    """

    def __init__(self, responder=None):
        self.responder = responder
        self.transcript: list[Message] = []
        self.disclosed_bits = 0

    def _log(self, msg):
        self.transcript.append(msg)
        self.disclosed_bits += msg.disclosed

    def announce(self, msg_type, sender, payload=b"", disclosed=0):
        """One-way message (no reply expected)."""
        msg = Message(MsgType(msg_type), sender, bytes(payload), int(disclosed))
        self._log(msg)
        return msg

    def request(self, msg_type, payload=b""):
        if self.responder is None:
            raise RuntimeError("channel has no responder")
        req = Message(MsgType(msg_type), BOB, bytes(payload))
        self._log(req)
        resp = self.responder.handle(req)
        self._log(resp)
        return resp

    # -- persistence -------------------------------------------------------

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(TRANSCRIPT_MAGIC)
            for m in self.transcript:
                fh.write(_REC.pack(_REC.size - 4 + len(m.payload), int(m.type), m.sender, m.disclosed))
                fh.write(m.payload)
        return Path(path)

    @staticmethod
    def load_transcript(path):
        data = Path(path).read_bytes()
        if data[:4] != TRANSCRIPT_MAGIC:
            raise ValueError(f"{path}: not a transcript file")
        out, pos = [], 4
        while pos < len(data):
            length, typ, sender, disclosed = _REC.unpack_from(data, pos)
            start = pos + _REC.size
            end = pos + 4 + length
            out.append(Message(MsgType(typ), sender, data[start:end], disclosed))
            pos = end
        return out


class ReplayResponder:
    """Stands in for Alice by serving her recorded replies in order.

    Every incoming request must equal the recorded one byte for byte.
    """

    def __init__(self, transcript):
        self._msgs = list(transcript)
        self._pos = 0

    def _next(self, sender):
        while self._pos < len(self._msgs):
            m = self._msgs[self._pos]
            self._pos += 1
            if m.sender == sender:
                return m
        raise ReplayMismatch("transcript exhausted")

    def handle(self, req):
        rec = self._next(BOB)
        if rec.type != req.type or rec.payload != req.payload:
            raise ReplayMismatch(f"request diverges from transcript at message {self._pos - 1}")
        return self._next(ALICE)


# -- payload helpers --------------------------------------------------------


def pack_bits(bits):
    bits = np.asarray(bits, dtype=np.uint8)
    return struct.pack("<I", bits.size) + np.packbits(bits).tobytes()


def unpack_bits(payload, offset=0):
    (n,) = struct.unpack_from("<I", payload, offset)
    raw = np.frombuffer(payload, dtype=np.uint8, offset=offset + 4)
    return np.unpackbits(raw, count=n).astype(np.uint8)
