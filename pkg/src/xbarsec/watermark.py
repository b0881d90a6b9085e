"""Watermark protection columns.

Two extra columns hold a seeded conductance pattern drawn from the same
range as data cells. Ownership/integrity is checked by driving a set of
probe inputs and comparing the watermark-column currents against a stored
signature.

Probes are block-sparse: probe ``p`` drives only a contiguous block of about
``PROBE_BLOCK`` logical rows (values in ``[v_read/2, v_read]``) and leaves the
rest at 0 V. Every row is covered by exactly one probe, and a short block
keeps a single-cell change well above the verification tolerance even on
256-row arrays, where a dense probe dilutes it below 1%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import ks_2samp

from .crossbar import CrossbarArray, ideal_mvm
from .device import DEFAULT_DEVICE, MemristorParams, TechNodeParams, tech_node_params
from .permutor import apply_permutor, store_permuted

PLACEMENTS = ("end", "begin", "interleaved")
PROBE_BLOCK = 8
MIN_PROBES = 4
CURRENT_FLOOR = 1e-12  # A; guards relative deviation against zero signatures


class WatermarkError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class WatermarkSpec:
    rows: int
    data_cols: int
    seed: int
    placement: str
    column_indices: tuple[int, ...]
    pattern: np.ndarray  # (rows, 2) logical row order, S
    probe_inputs: np.ndarray  # (k, rows) logical inputs, V
    signature: np.ndarray  # (k, 2) expected watermark-column currents, A
    tolerance: float = 0.02
    backend: str = "ideal"

    def __post_init__(self):
        if len(set(self.column_indices)) != len(self.column_indices):
            raise ValueError("watermark column indices must be distinct")
        if any(not 0 <= c < self.data_cols + len(self.column_indices) for c in self.column_indices):
            raise ValueError(f"watermark columns {self.column_indices} out of range")
        if self.signature.shape != (len(self.probe_inputs), len(self.column_indices)):
            raise ValueError(f"signature shape {self.signature.shape} does not match probes")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")

    @property
    def probe_count(self) -> int:
        return len(self.probe_inputs)

    def to_dict(self) -> dict:
        """Compact serializable form; pattern, probes and the ideal signature
        are regenerated from the seed."""
        return {
            "rows": self.rows,
            "data_cols": self.data_cols,
            "seed": self.seed,
            "placement": self.placement,
            "tolerance": self.tolerance,
            "probe_count": self.probe_count,
            "column_indices": list(self.column_indices),
        }

    @classmethod
    def from_dict(cls, d: dict, node: TechNodeParams | str = "45nm",
                  device: MemristorParams = DEFAULT_DEVICE) -> "WatermarkSpec":
        spec = make_watermark(d["rows"], d["seed"], d["placement"], node, device,
                              cols=d["data_cols"], tolerance=d["tolerance"])
        if list(spec.column_indices) != list(d["column_indices"]) or spec.probe_count != d["probe_count"]:
            raise ValueError("stored watermark record does not match its regenerated spec")
        return spec


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    deviation: np.ndarray = field(repr=False)  # (k, 2)
    worst_deviation: float
    columns: tuple[int, ...]


def probe_count(rows: int) -> int:
    return max(MIN_PROBES, math.ceil(rows / PROBE_BLOCK))


def make_probes(rows: int, v_read: float, rng: np.random.Generator) -> np.ndarray:
    k = probe_count(rows)
    probes = np.zeros((k, rows))
    blocks = np.array_split(np.arange(rows), k)
    for p, blk in enumerate(blocks):
        if len(blk) == 0:  # fewer rows than probes: reuse a full-support probe
            blk = np.arange(rows)
        probes[p, blk] = rng.uniform(0.5 * v_read, v_read, size=len(blk))
    return probes


def placement_indices(cols: int, placement: str, rng: np.random.Generator, n_wm: int = 2) -> tuple[int, ...]:
    if placement == "end":
        return tuple(range(cols, cols + n_wm))
    if placement == "begin":
        return tuple(range(n_wm))
    if placement == "interleaved":
        return tuple(sorted(int(c) for c in rng.choice(cols + n_wm, size=n_wm, replace=False)))
    raise ValueError(f"unknown placement {placement!r}; expected one of {PLACEMENTS}")


def make_watermark(rows: int, seed: int, placement: str = "end", node: TechNodeParams | str = "45nm",
                   device: MemristorParams = DEFAULT_DEVICE, *, cols: int,
                   tolerance: float = 0.02) -> WatermarkSpec:
    """Seeded watermark for an array of ``rows`` x ``cols`` data cells.

    The signature is the ideal MVM of the probes through the pattern; use
    :func:`sign_watermark` to re-sign through the parasitic backend.
    """
    if rows < 1:
        raise ValueError("rows must be >= 1")
    if isinstance(node, str):
        node = tech_node_params(node)
    pat_ss, probe_ss, place_ss = np.random.SeedSequence(seed & 0xFFFF_FFFF_FFFF_FFFF).spawn(3)
    pattern = np.random.default_rng(pat_ss).uniform(device.g_off, device.g_on, size=(rows, 2))
    probes = make_probes(rows, node.v_read, np.random.default_rng(probe_ss))
    indices = placement_indices(cols, placement, np.random.default_rng(place_ss))
    return WatermarkSpec(
        rows=rows, data_cols=cols, seed=seed, placement=placement, column_indices=indices,
        pattern=pattern, probe_inputs=probes, signature=probes @ pattern, tolerance=tolerance,
    )


def embed_watermark(array: CrossbarArray, spec: WatermarkSpec) -> CrossbarArray:
    """Insert the watermark columns at ``spec.column_indices``.

    With a permutor attached the pattern is stored row-permuted, so logical
    probes still see the logical pattern.
    """
    if array.watermark is not None:
        raise WatermarkError("array already carries a watermark")
    if spec.rows != array.rows:
        raise ValueError(f"watermark is for {spec.rows} rows, array has {array.rows}")
    if spec.data_cols != array.cols:
        raise ValueError(f"watermark is for {spec.data_cols} data columns, array has {array.cols}")
    pattern = spec.pattern if array.key is None else store_permuted(spec.pattern, array.key)
    total = array.cols + len(spec.column_indices)
    grid = np.empty((array.rows, total))
    wm = np.asarray(spec.column_indices)
    mask = np.ones(total, dtype=bool)
    mask[wm] = False
    grid[:, mask] = array.conductances
    grid[:, wm] = pattern
    return array.replace(conductances=grid, watermark=spec)


def measure_probes(array: CrossbarArray, spec: WatermarkSpec | None = None, backend: str = "ideal") -> np.ndarray:
    """Column currents (k x total columns) for each probe input."""
    spec = spec or array.watermark
    if backend == "ideal":
        return ideal_mvm(array, spec.probe_inputs)
    if backend == "parasitic":
        from .parasitics import build_network, column_currents, solve_network

        v = spec.probe_inputs if array.key is None else apply_permutor(spec.probe_inputs, array.key)
        net = build_network(array)
        return column_currents(net, solve_network(net, v))
    raise ValueError(f"unknown backend {backend!r}")


def sign_watermark(array: CrossbarArray, backend: str = "parasitic") -> WatermarkSpec:
    """Re-derive the signature of an embedded, untampered watermark through
    ``backend`` so verification compares like with like."""
    spec = array.watermark
    if spec is None:
        raise WatermarkError("array has no watermark")
    measured = measure_probes(array, spec, backend)
    return replace(spec, signature=measured[:, list(spec.column_indices)], backend=backend)


def verify_watermark(measured, spec: WatermarkSpec) -> VerificationReport:
    measured = np.asarray(measured, dtype=float)
    if measured.ndim != 2 or measured.shape[0] != spec.probe_count:
        raise ValueError(f"expected {spec.probe_count} probe rows, got shape {measured.shape}")
    if measured.shape[1] != spec.data_cols + len(spec.column_indices):
        raise ValueError(f"expected {spec.data_cols + len(spec.column_indices)} columns, got {measured.shape[1]}")
    got = measured[:, list(spec.column_indices)]
    dev = np.abs(got - spec.signature) / np.maximum(np.abs(spec.signature), CURRENT_FLOOR)
    worst = float(dev.max())
    return VerificationReport(passed=worst <= spec.tolerance, deviation=dev, worst_deviation=worst,
                              columns=tuple(spec.column_indices))


def check_array(array: CrossbarArray, spec: WatermarkSpec | None = None) -> VerificationReport:
    """Measure through the spec's own backend and verify."""
    spec = spec or array.watermark
    return verify_watermark(measure_probes(array, spec, spec.backend), spec)


def tamper_cell(array: CrossbarArray, row: int, wm_col: int) -> CrossbarArray:
    """Drive one physical watermark cell to the opposite end of the window:
    cells in the upper half go to ``g_off``, the rest to ``g_on``."""
    grid = np.array(array.conductances)
    col = array.wm_indices[wm_col]
    dev = array.device
    mid = 0.5 * (dev.g_on + dev.g_off)
    grid[row, col] = dev.g_off if grid[row, col] >= mid else dev.g_on
    return array.replace(conductances=grid)


def camouflage_stats(array: CrossbarArray, spec: WatermarkSpec | None = None, probe_count: int = 32,
                     seed: int = 0) -> float:
    """Two-sample KS statistic between watermark- and data-column currents.

    Each probe drives one seeded random row at ``v_read`` (distinct rows, so
    at most ``rows`` probes), which makes every current sample an
    independent cell readout. Dense probes would share one input vector
    across all columns and cluster the samples. Lower is better.
    """
    spec = spec or array.watermark
    if spec is None or array.watermark is None:
        raise WatermarkError("array has no watermark")
    rng = np.random.default_rng(seed)
    rows = rng.permutation(array.rows)[: max(1, probe_count)]
    v = np.zeros((len(rows), array.rows))
    v[np.arange(len(rows)), rows] = array.node.v_read
    cur = ideal_mvm(array, v)
    wm = cur[:, list(spec.column_indices)].ravel()
    data = cur[:, array.data_indices].ravel()
    return float(ks_2samp(wm, data).statistic)


def ks_critical(n1: int, n2: int, alpha: float = 0.05) -> float:
    """Asymptotic two-sample KS critical value at level ``alpha``."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n1 + n2) / (n1 * n2))
