"""BBM92 post-processing: sifting, QBER estimation, CASCADE, privacy amplification."""

from .cascade import AliceAgent, CascadeFailure, cascade_correct, initial_block_size
from .channel import ClassicalChannel, Message, MsgType, ReplayMismatch, ReplayResponder
from .distill import (
    AboveCutoff,
    Distillation,
    KeyMaterial,
    ProtocolConfig,
    QberEstimate,
    SiftedKey,
    SmallSampleWarning,
    estimate_qber,
    read_rate_csv,
    run_distillation,
    sift,
    sifted_rate_series,
    write_rate_csv,
)
from .hashing import hash64, toeplitz_hash
from .privacy import privacy_amplify, secure_length

__all__ = [
    "AboveCutoff", "AliceAgent", "CascadeFailure", "ClassicalChannel", "Distillation", "KeyMaterial",
    "Message", "MsgType", "ProtocolConfig", "QberEstimate", "ReplayMismatch", "ReplayResponder",
    "SiftedKey", "SmallSampleWarning", "cascade_correct", "estimate_qber", "hash64",
    "initial_block_size", "privacy_amplify", "read_rate_csv", "run_distillation", "secure_length",
    "sift", "sifted_rate_series", "toeplitz_hash", "write_rate_csv",
]
