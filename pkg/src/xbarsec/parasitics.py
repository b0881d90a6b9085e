"""Parasitic-aware DC evaluation of a crossbar.

Network topology, for an M x Nt array (Nt = data + watermark columns)::

    source i --[r_driver (+ r_switch)]-- w(i,0) -r_wire- w(i,1) - ... - w(i,Nt-1)
                                           |                |
                                   [1/G + r_access]   [1/G + r_access]
                                           |                |
                                         b(i,0)           b(i,1)
                                           |r_wire          |r_wire
                                          ...              ...
                                        b(M-1,0) -[r_sense]- ground

Node ``w(i, j)`` has index ``i*Nt + j``; ``b(i, j)`` has ``M*Nt + i*Nt + j``.
Zero-ohm branches are allowed: their end nodes are merged into one
supernode before stamping, so the fully ideal limit needs no special case.
Capacitance only enters through :func:`estimate_delay`.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .crossbar import CrossbarArray, _physical_inputs
from .device import cell_path_resistance
from .permutor import switch_count

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9
MAX_REFINE = 3


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeSolution:
    voltages: np.ndarray  # (batch, 2*M*Nt) internal node voltages
    source_voltages: np.ndarray  # (batch, M) physical row drive
    residual: float
    iterations: int


@dataclass(frozen=True)
class SimResult:
    column_currents: np.ndarray  # physical column order, A
    delay: float
    power: float
    node: str
    rows: int
    cols: int
    permutor: bool
    watermark: bool
    data_indices: np.ndarray = field(repr=False)

    @property
    def data_currents(self) -> np.ndarray:
        return self.column_currents[self.data_indices]

    @property
    def mean_current(self) -> float:
        """Mean over data columns only, so watermark columns do not skew
        comparisons against an unsecured baseline."""
        return float(self.data_currents.mean())

    @property
    def config(self) -> str:
        return {(False, False): "baseline", (True, False): "permutor",
                (False, True): "watermark", (True, True): "both"}[(self.permutor, self.watermark)]


class ResistiveNetwork:
    """Sparse branch list of the crossbar network plus its reduced nodal system.

    The system ``A x = B u`` has one unknown per free supernode; ``u`` holds
    the fixed potentials ``[ground, source_0, ..., source_{M-1}]``.
    """

    def __init__(self, array: CrossbarArray):
        tn = array.node
        m, nt = array.rows, array.total_cols
        self.rows, self.cols = m, nt
        self.n_internal = 2 * m * nt
        self.ground = self.n_internal
        self.r_source = tn.r_driver + (tn.r_switch if array.has_permutor else 0.0)
        self.r_sense = tn.r_sense

        w = np.arange(m * nt).reshape(m, nt)
        b = w + m * nt
        g = array.conductances
        r_cell = 1.0 / g + tn.r_access

        n1, n2, res = [], [], []

        def add(a, c, r):
            r = np.broadcast_to(np.asarray(r, dtype=float), np.shape(a))
            n1.append(np.ravel(a))
            n2.append(np.ravel(c))
            res.append(r.ravel())

        add(w, b, r_cell)  # cells first: branches [0, m*nt)
        add(w[:, :-1], w[:, 1:], tn.r_wire)
        add(b[:-1, :], b[1:, :], tn.r_wire)
        add(self.ground + 1 + np.arange(m), w[:, 0], self.r_source)
        add(b[-1, :], np.full(nt, self.ground), tn.r_sense)
        self.n1 = np.concatenate(n1)
        self.n2 = np.concatenate(n2)
        self.resistance = np.concatenate(res)
        if (self.resistance < 0).any() or not np.isfinite(self.resistance).all():
            raise SolverError("branch resistances must be finite and >= 0")
        self.n_cells = m * nt
        self._reduce()

    # -- topology ---------------------------------------------------------
    def _reduce(self):
        n_all = self.n_internal + 1 + self.rows
        short = self.resistance == 0
        if short.any():
            adj = sp.coo_matrix(
                (np.ones(short.sum()), (self.n1[short], self.n2[short])), shape=(n_all, n_all)
            )
            _, label = connected_components(adj, directed=False)
        else:
            label = np.arange(n_all)
        fixed_label = label[self.ground:]
        if len(np.unique(fixed_label)) != len(fixed_label):
            raise SolverError("zero-ohm path shorts a source to ground or to another source")
        # renumber: free supernodes 0..n_free-1, fixed supernodes n_free..
        is_fixed = np.zeros(label.max() + 1, dtype=bool)
        is_fixed[fixed_label] = True
        free_labels = np.flatnonzero(~is_fixed & np.isin(np.arange(label.max() + 1), label))
        index = np.full(label.max() + 1, -1)
        index[free_labels] = np.arange(len(free_labels))
        index[fixed_label] = len(free_labels) + np.arange(len(fixed_label))
        self.n_free = len(free_labels)
        self.node_index = index[label]  # every original node -> reduced index

        keep = ~short
        a, c = self.node_index[self.n1[keep]], self.node_index[self.n2[keep]]
        gb = 1.0 / self.resistance[keep]
        n, f = self.n_free, len(fixed_label)
        full = sp.coo_matrix(
            (np.concatenate([gb, gb, -gb, -gb]),
             (np.concatenate([a, c, a, c]), np.concatenate([a, c, c, a]))),
            shape=(n + f, n + f),
        ).tocsc()
        self.A = full[:n, :n].tocsc()
        self.B = -full[:n, n:].tocsr()
        self.A.sum_duplicates()
        lonely = np.asarray(abs(self.A).sum(axis=1)).ravel() == 0
        if lonely.any():
            raise SolverError(f"{lonely.sum()} floating nodes")

    @cached_property
    def _lu(self):
        try:
            return spla.splu(self.A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"singular nodal matrix ({self.A.shape[0]} unknowns): {exc}") from exc

    @property
    def stamp_matrix(self) -> sp.csc_matrix:
        return self.A

    def fixed_potentials(self, v_phys: np.ndarray) -> np.ndarray:
        v_phys = np.atleast_2d(v_phys)
        return np.hstack([np.zeros((v_phys.shape[0], 1)), v_phys])

    def write_matrix_market(self, target) -> None:
        """Dump the reduced stamp matrix in Matrix Market coordinate format."""
        from scipy.io import mmwrite

        mmwrite(target, self.A, comment="crossbar nodal conductance matrix (S)")


def build_network(array: CrossbarArray) -> ResistiveNetwork:
    return ResistiveNetwork(array)


def solve_network(net: ResistiveNetwork, v_phys) -> NodeSolution:
    """DC operating point for physical row drive ``v_phys`` (one vector or a batch).

    Direct sparse LU with up to :data:`MAX_REFINE` rounds of iterative
    refinement; raises :class:`SolverError` if the relative residual stays
    above :data:`RESIDUAL_TOL`.
    """
    v_phys = np.atleast_2d(np.asarray(v_phys, dtype=float))
    if v_phys.shape[1] != net.rows:
        raise ValueError(f"input length {v_phys.shape[1]} does not match {net.rows} rows")
    u = net.fixed_potentials(v_phys)  # (batch, 1 + M)
    rhs = np.asarray(net.B @ u.T)  # (n_free, batch)
    lu = net._lu
    x = lu.solve(rhs) if net.n_free else np.zeros_like(rhs)
    scale = np.linalg.norm(rhs, axis=0)
    scale[scale == 0] = 1.0
    iters = 1
    resid = np.max(np.linalg.norm(rhs - net.A @ x, axis=0) / scale) if net.n_free else 0.0
    while resid > RESIDUAL_TOL and iters <= MAX_REFINE:
        x = x + lu.solve(rhs - net.A @ x)
        resid = np.max(np.linalg.norm(rhs - net.A @ x, axis=0) / scale)
        iters += 1
    if not np.isfinite(resid) or resid > RESIDUAL_TOL:
        raise SolverError(f"relative residual {resid:.3e} exceeds {RESIDUAL_TOL:g} after {iters} solves")
    reduced = np.hstack([x.T, u])  # (batch, n_free + n_fixed)
    volts = reduced[:, net.node_index[: net.n_internal]]
    return NodeSolution(voltages=volts, source_voltages=v_phys, residual=float(resid), iterations=iters)


def _cell_currents(net: ResistiveNetwork, sol: NodeSolution) -> np.ndarray:
    """Per-cell currents, shape (batch, M, Nt)."""
    k = slice(0, net.n_cells)
    dv = sol.voltages[:, net.n1[k]] - sol.voltages[:, net.n2[k]]
    return (dv / net.resistance[k]).reshape(-1, net.rows, net.cols)


def column_currents(net: ResistiveNetwork, sol: NodeSolution) -> np.ndarray:
    """Sense current per column, shape (batch, Nt).

    ``V(b(M-1, j)) / r_sense``; with a zero-ohm sense the column's cell
    currents are summed instead (equal by KCL on the bitline).
    """
    if net.r_sense > 0:
        sink = sol.voltages[:, net.n_internal - net.cols:]
        return sink / net.r_sense
    return _cell_currents(net, sol).sum(axis=1)


def source_currents(net: ResistiveNetwork, sol: NodeSolution) -> np.ndarray:
    """Current delivered by each row driver, shape (batch, M)."""
    if net.r_source > 0:
        head = sol.voltages[:, 0: net.rows * net.cols: net.cols]
        return (sol.source_voltages - head) / net.r_source
    return _cell_currents(net, sol).sum(axis=2)


def estimate_delay(array: CrossbarArray) -> float:
    """Elmore delay from the row driver at column 0 to the far array corner.

    Sum of four RC terms: the source (driver, plus pass transistor when the
    permutor is present) charging the wordline, the distributed wordline,
    the fastest cell read path charging the bitline, and the distributed
    bitline. The read path is :func:`cell_path_resistance` at ``g_on``, so
    it also carries the pass transistor when the permutor is present.
    """
    tn = array.node
    c = tn.c_wire
    m, nt = array.rows, array.total_cols
    r_src = tn.r_driver + (tn.r_switch if array.has_permutor else 0.0)
    r_cell_min = cell_path_resistance(array.device.g_on, tn, array.has_permutor)
    return (
        r_src * nt * c
        + tn.r_wire * c * nt * (nt + 1) / 2
        + r_cell_min * m * c
        + tn.r_wire * c * m * (m + 1) / 2
    )


def peripheral_power(array: CrossbarArray) -> float:
    tn = array.node
    p = 0.0
    if array.has_permutor:
        p += switch_count(array.rows) * tn.p_switch
    p += array.wm_cols * tn.p_wm_col
    return p


def estimate_power(net: ResistiveNetwork, sol: NodeSolution, array: CrossbarArray) -> np.ndarray:
    """Total power per batch entry: DC power drawn from the row drivers plus
    static permutor and watermark peripheral power."""
    p_array = (sol.source_voltages * source_currents(net, sol)).sum(axis=1)
    return p_array + peripheral_power(array)


def simulate(array: CrossbarArray, inputs, check_range: bool = True,
             net: ResistiveNetwork | None = None) -> SimResult:
    """Solve the network for a batch of logical inputs and average the results."""
    v_phys = np.atleast_2d(_physical_inputs(array, inputs, check_range))
    net = net or build_network(array)
    sol = solve_network(net, v_phys)
    cur = column_currents(net, sol)
    return SimResult(
        column_currents=cur.mean(axis=0),
        delay=estimate_delay(array),
        power=float(estimate_power(net, sol, array).mean()),
        node=array.node.node_id,
        rows=array.rows,
        cols=array.cols,
        permutor=array.has_permutor,
        watermark=array.watermark is not None,
        data_indices=array.data_indices,
    )


def matrix_market_text(array: CrossbarArray) -> str:
    buf = io.BytesIO()
    build_network(array).write_matrix_market(buf)
    return buf.getvalue().decode()
