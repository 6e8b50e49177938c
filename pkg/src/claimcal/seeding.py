"""Deterministic fan-out of one master seed into labeled substreams."""

import hashlib

import numpy as np


def derive_seed(master_seed, label, index=0):
    """Stable 64-bit child seed for (master, label, index)."""
    h = hashlib.sha256(
        f"{int(master_seed)}:{label}:{int(index)}".encode()
    ).digest()
    return int.from_bytes(h[:8], "little")


def derive_rng(master_seed, label, index=0):
    """Independent Generator for a labeled substream of the master seed."""
    return np.random.default_rng(derive_seed(master_seed, label, index))
