"""Small shared helpers: seeded RNG streams and atomic file writes."""

import os
import tempfile

import numpy as np


def make_rng(*words: int) -> np.random.Generator:
    """Deterministic PCG64 stream keyed by a tuple of integers.

    Substreams are derived by extending the key, e.g. ``make_rng(seed, pass_ix)``,
    so independent streams never overlap.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(words))))


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
