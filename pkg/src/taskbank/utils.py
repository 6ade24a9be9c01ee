"""Shared helpers: deterministic seed derivation, config hashing, csv io."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

_MASK63 = (1 << 63) - 1


def child_seed(*parts) -> int:
    """Derive a stable 63-bit seed from a tuple of ints/strings.

    sha256-based so it is reproducible across platforms and sessions,
    unlike hash().
    """
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") & _MASK63


def rng_from(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(child_seed(*parts)))


def config_hash(obj) -> str:
    """Short stable hash of a json-serializable config mapping."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        rows = [row for row in r if row]
    return header, rows


def fmt_float(x) -> str:
    """Canonical float formatting for csv outputs (repr round-trips)."""
    if x is None:
        return ""
    return repr(float(x))
