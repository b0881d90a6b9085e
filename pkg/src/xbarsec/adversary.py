"""White-box attacker: reads the physical conductance grid, but neither the
permutor key nor the runtime input-to-row routing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .crossbar import CrossbarArray, ideal_mvm, read_raw_conductances
from .permutor import LOG2_6, PermKey, key_to_permutation


@dataclass(frozen=True)
class ExtractionReport:
    row_placement_accuracy: float
    frobenius_error: float
    clone_output_mse: float

    def to_dict(self) -> dict:
        return asdict(self)


def extract_and_clone(array: CrossbarArray) -> CrossbarArray:
    """Rebuild the array from its raw physical grid with no key attached.

    Watermark columns are copied as-is; the attacker cannot tell them apart.
    """
    return CrossbarArray(read_raw_conductances(array), array.rows, array.total_cols, array.node, array.device)


def extraction_fidelity(original: CrossbarArray | np.ndarray, clone: CrossbarArray, probes) -> ExtractionReport:
    """Compare a clone against the logical weights it was stolen from.

    ``original`` is either the victim array (its logical grid is recovered
    with the true key) or the logical conductance grid itself. ``probes`` are
    logical input vectors; both sides are evaluated with the ideal MVM.
    """
    if isinstance(original, CrossbarArray):
        logical = original.conductances
        if original.key is not None:
            logical = logical[key_to_permutation(original.key)]
        victim = original
    else:
        logical = np.asarray(original, dtype=float)
        victim = None
    stolen = clone.conductances
    if stolen.shape != logical.shape:
        raise ValueError(f"clone grid {stolen.shape} does not match original {logical.shape}")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[1] != logical.shape[0]:
        raise ValueError(f"probe length {probes.shape[1]} does not match {logical.shape[0]} rows")

    same_row = np.all(stolen == logical, axis=1)
    norm = np.linalg.norm(logical)
    frob = np.linalg.norm(stolen - logical) / norm if norm > 0 else float(np.linalg.norm(stolen) > 0)
    want = ideal_mvm(victim, probes, check_range=False) if victim is not None else probes @ logical
    got = ideal_mvm(clone, probes, check_range=False)
    return ExtractionReport(
        row_placement_accuracy=float(same_row.mean()),
        frobenius_error=float(frob),
        clone_output_mse=float(np.mean((got - want) ** 2)),
    )


def decode_with_key(raw: np.ndarray, key: PermKey) -> np.ndarray:
    """Undo the row permutation of an extracted grid using the true key."""
    return np.asarray(raw)[key_to_permutation(key)]


def expected_row_accuracy(rows: int) -> float:
    """Mean fraction of rows left in place by a uniformly random key.

    Per triplet, S3 fixes 3 rows (identity), 1 row (each transposition) or
    none (3-cycles): (3 + 3*1 + 2*0) / 6 = 1 row on average. Leftover rows
    are always in place.
    """
    return ((rows // 3) * 1 + rows % 3) / rows


def brute_force_cost(rows: int, keys_per_second: float) -> float:
    """Expected seconds to hit the key by exhaustive search (half the space)."""
    if not keys_per_second > 0:
        raise ValueError("keys_per_second must be > 0")
    log2_t = (rows // 3) * LOG2_6 - 1.0 - math.log2(keys_per_second)
    return math.inf if log2_t > 1023 else 2.0 ** log2_t
