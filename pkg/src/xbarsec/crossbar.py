"""Crossbar array data model and the ideal (parasitic-free) MVM.

The conductance grid is kept in *physical* storage order: when a permutor
key is attached its rows are already permuted, and watermark columns sit in
the same grid at their placement indices. Reading the grid is therefore
exactly what a white-box attacker sees.
"""

from __future__ import annotations

import dataclasses
import io
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .device import DEFAULT_DEVICE, MemristorParams, TechNodeParams, conductance_from_weight, tech_node_params
from .permutor import PermKey, apply_permutor, store_permuted

if TYPE_CHECKING:
    from .watermark import WatermarkSpec

# slack for the conductance-window check, relative to g_on
_G_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class CrossbarArray:
    conductances: np.ndarray  # (rows, cols + wm_cols), physical order
    rows: int
    cols: int
    node: TechNodeParams
    device: MemristorParams = DEFAULT_DEVICE
    key: Optional[PermKey] = None
    watermark: Optional["WatermarkSpec"] = None

    def __post_init__(self):
        g = np.array(self.conductances, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "conductances", g)
        if g.shape != (self.rows, self.cols + self.wm_cols):
            raise ValueError(
                f"grid shape {g.shape} does not match {self.rows}x({self.cols}+{self.wm_cols})"
            )
        slack = _G_RTOL * self.device.g_on
        if g.size and (g.min() < self.device.g_off - slack or g.max() > self.device.g_on + slack):
            raise ValueError("conductances outside [g_off, g_on]")
        if self.key is not None and self.key.rows != self.rows:
            raise ValueError(f"key is for {self.key.rows} rows, array has {self.rows}")
        if self.watermark is not None:
            idx = self.watermark.column_indices
            if len(set(idx)) != len(idx) or any(not 0 <= c < self.total_cols for c in idx):
                raise ValueError(f"invalid watermark columns {idx} for {self.total_cols} columns")

    @property
    def wm_cols(self) -> int:
        return 0 if self.watermark is None else len(self.watermark.column_indices)

    @property
    def total_cols(self) -> int:
        return self.cols + self.wm_cols

    @property
    def wm_indices(self) -> tuple[int, ...]:
        return () if self.watermark is None else tuple(self.watermark.column_indices)

    @property
    def data_indices(self) -> np.ndarray:
        """Physical positions of the data columns, in logical column order."""
        mask = np.ones(self.total_cols, dtype=bool)
        mask[list(self.wm_indices)] = False
        return np.flatnonzero(mask)

    @property
    def has_permutor(self) -> bool:
        return self.key is not None

    def replace(self, **changes) -> "CrossbarArray":
        return dataclasses.replace(self, **changes)


def program_weights(weights, node: TechNodeParams | str = "45nm", device: MemristorParams = DEFAULT_DEVICE,
                    rows: int | None = None, cols: int | None = None) -> CrossbarArray:
    """Program a weight matrix in [0, 1] into a fresh, unsecured array.

    ``rows``/``cols``, when given, are the array dimensions the matrix must
    match.
    """
    if isinstance(node, str):
        node = tech_node_params(node)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError(f"weights must be 2-D, got shape {w.shape}")
    m, n = w.shape
    if (rows is not None and rows != m) or (cols is not None and cols != n):
        raise ValueError(f"weights have shape {w.shape}, array is {rows}x{cols}")
    return CrossbarArray(conductance_from_weight(w, device), m, n, node, device)


def attach_permutor(array: CrossbarArray, key: PermKey) -> CrossbarArray:
    """Store the array's rows under ``key`` and attach the key."""
    if array.key is not None:
        raise RuntimeError("array already has a permutor key")
    return array.replace(conductances=store_permuted(array.conductances, key), key=key)


def _physical_inputs(array: CrossbarArray, v, check_range: bool) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != array.rows:
        raise ValueError(f"input length {v.shape[-1]} does not match {array.rows} rows")
    if check_range:
        bad = (v < 0) | (v > array.node.v_read)
        if bad.any():
            raise ValueError(f"inputs outside [0, {array.node.v_read}] V at {np.argwhere(bad)[:5].tolist()}")
    if array.key is not None:
        v = apply_permutor(v, array.key)
    return v


def ideal_mvm(array: CrossbarArray, v, check_range: bool = True) -> np.ndarray:
    """Column currents ``I_j = sum_i G[i, j] * v_i`` with no parasitics.

    ``v`` holds logical inputs (one vector or a batch of row vectors); they
    are routed through the permutor when a key is attached. Output columns
    are in physical order, watermark columns included.
    """
    return _physical_inputs(array, v, check_range) @ array.conductances


def read_raw_conductances(array: CrossbarArray) -> np.ndarray:
    return array.conductances.copy()


def save_csv(array: CrossbarArray, path: str | os.PathLike) -> None:
    """Write ``M,N,wm_cols,node`` followed by the physical grid, row-major.

    Security metadata (key, watermark spec) is deliberately not written.
    """
    buf = io.StringIO()
    buf.write("M,N,wm_cols,node\n")
    buf.write(f"{array.rows},{array.cols},{array.wm_cols},{array.node.node_id}\n")
    np.savetxt(buf, array.conductances, delimiter=",", fmt="%.17g")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_csv(path: str | os.PathLike) -> tuple[np.ndarray, dict]:
    """Read a grid written by :func:`save_csv`; returns ``(grid, header)``."""
    with open(path) as fh:
        fh.readline()
        m, n, wm, label = fh.readline().strip().split(",")
        grid = np.loadtxt(fh, delimiter=",", ndmin=2)
    header = {"M": int(m), "N": int(n), "wm_cols": int(wm), "node": label}
    if grid.shape != (header["M"], header["N"] + header["wm_cols"]):
        raise ValueError(f"grid shape {grid.shape} disagrees with header {header}")
    return grid, header
