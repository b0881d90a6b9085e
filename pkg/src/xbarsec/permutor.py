"""Keyed triplet-swap input permutor.

Rows are grouped into consecutive triplets ``(3t, 3t+1, 3t+2)``; each
triplet is independently rearranged by one of the six elements of S3,
selected by a per-triplet sub-key. Leftover rows (``M mod 3``) pass straight
through a single path-matching transistor.

Sub-key enumeration (fixed, so serialized keys are portable)::

    0 identity   1 (0 1)   2 (0 2)   3 (1 2)   4 (0 1 2)   5 (0 2 1)

where a cycle ``(a b c)`` sends a->b, b->c, c->a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# S3[k][r] = position within the triplet that local row r is routed to
S3 = np.array(
    [
        [0, 1, 2],
        [1, 0, 2],
        [2, 1, 0],
        [0, 2, 1],
        [1, 2, 0],
        [2, 0, 1],
    ],
    dtype=np.int64,
)

LOG2_6 = math.log2(6)


@dataclass(frozen=True)
class PermKey:
    rows: int
    triplet_keys: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "triplet_keys", tuple(int(k) for k in self.triplet_keys))
        if self.rows < 1:
            raise ValueError(f"rows must be >= 1, got {self.rows}")
        if len(self.triplet_keys) != self.rows // 3:
            raise ValueError(
                f"{self.rows} rows need {self.rows // 3} triplet keys, got {len(self.triplet_keys)}"
            )
        if any(not 0 <= k <= 5 for k in self.triplet_keys):
            raise ValueError("triplet keys must lie in 0..5")

    def to_hex(self) -> str:
        """Serialize as ``"<rows>:<hex>"``, one hex digit per triplet key."""
        return f"{self.rows}:" + "".join(f"{k:x}" for k in self.triplet_keys)

    @classmethod
    def from_hex(cls, text: str) -> "PermKey":
        rows, _, digits = text.strip().partition(":")
        return cls(int(rows), tuple(int(d, 16) for d in digits))

    @property
    def is_identity(self) -> bool:
        return all(k == 0 for k in self.triplet_keys)


def generate_key(rows: int, seed: int) -> PermKey:
    """Draw each triplet sub-key uniformly from {0..5} with a seeded PRNG."""
    if rows < 1:
        raise ValueError(f"rows must be >= 1, got {rows}")
    rng = np.random.default_rng(seed & 0xFFFF_FFFF_FFFF_FFFF)
    return PermKey(rows, tuple(rng.integers(0, 6, size=rows // 3).tolist()))


def key_to_permutation(key: PermKey) -> np.ndarray:
    """Return ``mapping`` with ``mapping[i]`` = physical row driven by logical input ``i``."""
    mapping = np.arange(key.rows, dtype=np.int64)
    if key.triplet_keys:
        sub = S3[np.asarray(key.triplet_keys)]  # (T, 3)
        base = 3 * np.arange(len(key.triplet_keys))[:, None]
        mapping[: 3 * len(key.triplet_keys)] = (base + sub).ravel()
    return mapping


def invert(mapping: np.ndarray) -> np.ndarray:
    inv = np.empty_like(mapping)
    inv[mapping] = np.arange(len(mapping))
    return inv


def _check_rows(n: int, key: PermKey, what: str):
    if n != key.rows:
        raise ValueError(f"{what} has {n} rows, key expects {key.rows}")


def apply_permutor(v, key: PermKey) -> np.ndarray:
    """Route logical inputs to physical rows: ``out[mapping[i]] = v[i]``.

    Works on a single vector or a batch whose last axis is the row axis.
    """
    v = np.asarray(v)
    _check_rows(v.shape[-1], key, "input")
    out = np.empty_like(v)
    out[..., key_to_permutation(key)] = v
    return out


def remove_permutor(v, key: PermKey) -> np.ndarray:
    """Inverse of :func:`apply_permutor`."""
    v = np.asarray(v)
    _check_rows(v.shape[-1], key, "input")
    return v[..., key_to_permutation(key)]


def store_permuted(weights, key: PermKey) -> np.ndarray:
    """Place logical weight row ``i`` at physical row ``mapping[i]``."""
    weights = np.asarray(weights)
    if weights.ndim != 2:
        raise ValueError(f"weights must be 2-D, got shape {weights.shape}")
    _check_rows(weights.shape[0], key, "weight matrix")
    out = np.empty_like(weights)
    out[key_to_permutation(key)] = weights
    return out


def key_space_bits(rows: int) -> float:
    if rows < 1:
        raise ValueError(f"rows must be >= 1, got {rows}")
    return (rows // 3) * LOG2_6


def switch_count(rows: int) -> int:
    """Pass transistors in the permutor: a 3x3 switch matrix per triplet plus
    one series transistor per leftover row."""
    return 9 * (rows // 3) + rows % 3


def transistor_overhead(rows: int, cols: int) -> float:
    """Permutor transistors as a fraction of the ``rows * cols`` 1T1R array."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return switch_count(rows) / (rows * cols)
