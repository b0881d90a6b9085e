"""Memristor device constants and per-technology-node electrical parameters.

Every other module reads its constants from here. Node parameters can be
overridden from an INI file with one section per node label, keys named
exactly like the :class:`TechNodeParams` fields, values in SI units::

    [45nm]
    r_switch = 42.0
    p_switch = 1.5e-7

    [5nm]            ; new nodes must define every field
    v_read = 0.2
    ...
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np


class UnknownNodeError(KeyError):
    """Raised when a technology-node label is not configured."""

    def __init__(self, label: str):
        super().__init__(label)
        self.label = label

    def __str__(self) -> str:
        return f"unknown technology node {self.label!r}"


@dataclass(frozen=True)
class MemristorParams:
    g_on: float = 100e-6
    g_off: float = 1e-6
    g_leak: float = 1e-9

    def __post_init__(self):
        if not (self.g_on > self.g_off > self.g_leak > 0):
            raise ValueError(
                f"need g_on > g_off > g_leak > 0, got {self.g_on}, {self.g_off}, {self.g_leak}"
            )

    @property
    def window(self) -> float:
        return self.g_on - self.g_off


DEFAULT_DEVICE = MemristorParams()


@dataclass(frozen=True)
class TechNodeParams:
    """Electrical parameters of one technology node (SI units throughout).

    Resistances are per element: ``r_wire`` is one wire segment between
    adjacent cells, ``r_switch`` is one permutor pass transistor in a row's
    input path. ``p_switch`` and ``p_wm_col`` are static peripheral power
    per permutor transistor and per watermark column.
    """

    node_id: str
    v_read: float
    r_wire: float
    c_wire: float
    r_access: float
    r_switch: float
    r_driver: float
    r_sense: float
    p_switch: float
    p_wm_col: float

    def __post_init__(self):
        for name in ("r_wire", "r_access", "r_switch", "r_driver", "r_sense"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{self.node_id}: {name} must be > 0, got {getattr(self, name)}")
        if not self.v_read > 0:
            raise ValueError(f"{self.node_id}: v_read must be > 0, got {self.v_read}")
        for name in ("c_wire", "p_switch", "p_wm_col"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{self.node_id}: {name} must be >= 0, got {getattr(self, name)}")

    def replace(self, **changes) -> "TechNodeParams":
        return dataclasses.replace(self, **changes)

    def ideal(self) -> "TechNodeParams":
        """Copy with every parasitic and series resistance at zero.

        Bypasses validation on purpose; only the network solver accepts
        zero resistances (zero-ohm branches are merged into single nodes).
        """
        obj = object.__new__(TechNodeParams)
        fields = dataclasses.asdict(self)
        fields.update(r_wire=0.0, r_switch=0.0, r_driver=0.0, r_sense=0.0, c_wire=0.0)
        for k, v in fields.items():
            object.__setattr__(obj, k, v)
        return obj


PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(TechNodeParams) if f.name != "node_id")

_DEFAULTS: dict[str, TechNodeParams] = {
    "45nm": TechNodeParams(
        node_id="45nm", v_read=0.2, r_wire=2.5, c_wire=0.20e-15, r_access=2.0e3,
        r_switch=1.0e3, r_driver=500.0, r_sense=1.0, p_switch=0.2e-6, p_wm_col=20e-6,
    ),
    "22nm": TechNodeParams(
        node_id="22nm", v_read=0.2, r_wire=5.0, c_wire=0.15e-15, r_access=3.0e3,
        r_switch=1.5e3, r_driver=700.0, r_sense=1.0, p_switch=0.2e-6, p_wm_col=20e-6,
    ),
    "7nm": TechNodeParams(
        node_id="7nm", v_read=0.2, r_wire=15.0, c_wire=0.08e-15, r_access=5.0e3,
        r_switch=2.5e3, r_driver=1.0e3, r_sense=1.0, p_switch=0.2e-6, p_wm_col=20e-6,
    ),
}

KNOWN_NODES = tuple(_DEFAULTS)


def tech_node_params(node_id: str, config: Mapping[str, TechNodeParams] | None = None) -> TechNodeParams:
    """Look up the parameter record for ``node_id``.

    ``config`` is the mapping returned by :func:`load_node_config`; its
    entries take precedence over the built-in defaults.
    """
    if config is not None and node_id in config:
        return config[node_id]
    try:
        return _DEFAULTS[node_id]
    except KeyError:
        raise UnknownNodeError(node_id) from None


def load_node_config(path: str | os.PathLike) -> dict[str, TechNodeParams]:
    """Parse an INI override file into validated node records.

    Sections naming a built-in node override only the listed keys; any other
    section defines a new node and must list every field.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    with open(path) as fh:
        parser.read_file(fh)
    nodes = {}
    for label in parser.sections():
        section = parser[label]
        unknown = set(section) - set(PARAM_FIELDS)
        if unknown:
            raise ValueError(f"[{label}]: unknown keys {sorted(unknown)}")
        values = {k: float(section[k]) for k in section}
        if label in _DEFAULTS:
            nodes[label] = _DEFAULTS[label].replace(**values)
        else:
            missing = set(PARAM_FIELDS) - set(values)
            if missing:
                raise ValueError(f"[{label}]: new node is missing {sorted(missing)}")
            nodes[label] = TechNodeParams(node_id=label, **values)
    return nodes


def write_node_config(path: str | os.PathLike, nodes: Mapping[str, TechNodeParams]) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for label, tn in nodes.items():
        parser[label] = {k: repr(float(getattr(tn, k))) for k in PARAM_FIELDS}
    with open(path, "w") as fh:
        parser.write(fh)


def conductance_from_weight(w, mp: MemristorParams = DEFAULT_DEVICE):
    """Map normalized weights in [0, 1] linearly onto [g_off, g_on].

    Accepts a scalar or an array; raises ``ValueError`` listing the offending
    indices when any weight falls outside [0, 1].
    """
    arr = np.asarray(w, dtype=float)
    bad = ~((arr >= 0.0) & (arr <= 1.0))
    if bad.any():
        where = [tuple(int(i) for i in idx) for idx in np.argwhere(bad)[:10]]
        raise ValueError(f"weights outside [0, 1] at indices {where}")
    # clamp keeps w=1 exactly at g_on under rounding
    g = np.minimum(mp.g_off + arr * (mp.g_on - mp.g_off), mp.g_on)
    return float(g) if g.ndim == 0 else g


def cell_path_resistance(g: float, tn: TechNodeParams, with_permutor: bool = False) -> float:
    """Series resistance of one read path: memristor, access transistor and
    optionally the permutor pass transistor."""
    if not g > 0:
        raise ValueError(f"conductance must be > 0, got {g}")
    r = 1.0 / g + tn.r_access
    if with_permutor:
        r += tn.r_switch
    return r
