# utils/streams.py
"""
Per-run random streams.

Every run owns independent streams derived from (master seed, run index,
purpose). The derivation is a pure function, so a batch gives the same
numbers whatever the execution order or number of workers:

    key = sha256("qrng::<seed>::<run_index>::<purpose>")[:16]  (little endian)
    generator = numpy Philox4x64 keyed with `key`, counter 0

Purposes in use: "urn" (branch draws), "detector" (instrument noise),
"input" (coherent-state photon numbers).
"""

import hashlib

import numpy as np

STREAM_DERIVATION = "sha256-philox4x64-v1"
SEED_LIMIT = 2 ** 64


def stream_key(seed: int, run_index: int, purpose: str) -> int:
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if run_index < 0:
        raise ValueError(f"run_index must be non-negative, got {run_index}")
    payload = f"qrng::{seed}::{run_index}::{purpose}".encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:16], "little")


def derive_stream(seed: int, run_index: int, purpose: str = "urn") -> np.random.Generator:
    """Generator for one run and one purpose."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, run_index, purpose)))
