"""Measurement protocol: baseline, each security mechanism alone, then both.

For every (node, size) the four configurations share weights, inputs, key
and watermark seed, so the overhead deltas isolate the mechanisms.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import data
from .crossbar import CrossbarArray, attach_permutor, program_weights
from .device import DEFAULT_DEVICE, KNOWN_NODES, MemristorParams, TechNodeParams, tech_node_params
from .parasitics import SimResult, estimate_delay, peripheral_power, simulate
from .permutor import generate_key
from .watermark import embed_watermark, make_watermark

log = logging.getLogger(__name__)

CONFIGS = ("baseline", "permutor", "watermark", "both")
PAPER_SIZES = ((10, 10), (128, 10), (256, 128))
TARGET_OVERHEADS = (8.8, 5.5, 9.8)  # current drop %, delay increase %, power increase %
CALIBRATION_PARAMS = ("r_switch", "r_driver", "p_switch", "p_wm_col")
DEFAULT_BATCH = 8

CSV_FIELDS = ("node", "rows", "cols", "config", "current_A", "delay_s", "power_W",
              "current_drop_pct", "delay_inc_pct", "power_inc_pct")


class CalibrationError(RuntimeError):
    def __init__(self, message: str, best: TechNodeParams, residual: float):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class ExperimentGrid:
    nodes: tuple[str, ...] = KNOWN_NODES
    sizes: tuple[tuple[int, int], ...] = PAPER_SIZES
    configs: tuple[str, ...] = CONFIGS
    seed: int = 0
    dataset: str = "uniform-random"
    dataset_path: str | None = None
    batch: int = DEFAULT_BATCH

    def __post_init__(self):
        if not (self.nodes and self.sizes and self.configs):
            raise ValueError("grid lists must be nonempty")
        if any(r < 1 or c < 1 for r, c in self.sizes):
            raise ValueError("array sizes must be positive")
        bad = set(self.configs) - set(CONFIGS)
        if bad:
            raise ValueError(f"unknown configs {sorted(bad)}")
        if self.dataset not in ("mnist", "lora", "csv", "uniform-random"):
            raise ValueError(f"unknown dataset {self.dataset!r}")


@dataclass(frozen=True)
class OverheadRow:
    node: str
    rows: int
    cols: int
    config: str
    current_A: float
    delay_s: float
    power_W: float
    current_drop_pct: float
    delay_inc_pct: float
    power_inc_pct: float


def has_permutor(config: str) -> bool:
    return config in ("permutor", "both")


def has_watermark(config: str) -> bool:
    return config in ("watermark", "both")


def make_weights(rows: int, cols: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, rows, cols]).uniform(size=(rows, cols))


def input_batch(rows: int, seed: int, dataset: str = "uniform-random", path: str | None = None,
                count: int = DEFAULT_BATCH) -> data.SampleBatch:
    if dataset == "uniform-random":
        return data.uniform_batch(rows, count, seed)
    if dataset == "lora":
        return data.lora_batch(rows, count, seed)
    if dataset == "csv":
        if path is None:
            raise ValueError("csv dataset needs a path")
        return data.csv_batch(path, rows)
    if dataset == "mnist":
        if path is None:
            raise ValueError("mnist dataset needs an IDX image file path")
        return data.mnist_batch(data.read_idx(path), rows, count=count)
    raise ValueError(f"unknown dataset {dataset!r}")


def build_array(node: TechNodeParams, rows: int, cols: int, config: str, seed: int,
                device: MemristorParams = DEFAULT_DEVICE, weights=None) -> CrossbarArray:
    if config not in CONFIGS:
        raise ValueError(f"unknown config {config!r}")
    w = make_weights(rows, cols, seed) if weights is None else weights
    array = program_weights(w, node, device, rows=rows, cols=cols)
    if has_permutor(config):
        array = attach_permutor(array, generate_key(rows, seed))
    if has_watermark(config):
        array = embed_watermark(array, make_watermark(rows, seed, "end", node, device, cols=cols))
    return array


def run_config(node: TechNodeParams | str, size: tuple[int, int], config: str, inputs=None, seed: int = 0,
               device: MemristorParams = DEFAULT_DEVICE, weights=None) -> SimResult:
    """Simulate one configuration; ``inputs`` are logical voltages (batch x M).

    Defaults to a seeded uniform-random input batch and seeded uniform weights.
    """
    if isinstance(node, str):
        node = tech_node_params(node)
    rows, cols = size
    if inputs is None:
        inputs = input_batch(rows, seed).voltages(node.v_read)
    return simulate(build_array(node, rows, cols, config, seed, device, weights), inputs)


def sweep(grid: ExperimentGrid, node_table: Mapping[str, TechNodeParams] | None = None,
          device: MemristorParams = DEFAULT_DEVICE) -> list[SimResult]:
    """Every (node, size, config) cell, nodes outermost, configs in protocol order."""
    configs = [c for c in CONFIGS if c in grid.configs]
    out = []
    for label in grid.nodes:
        for rows, cols in grid.sizes:
            for config in configs:
                try:
                    node = tech_node_params(label, node_table)
                    batch = input_batch(rows, grid.seed, grid.dataset, grid.dataset_path, grid.batch)
                    v = batch.voltages(node.v_read)
                    out.append(run_config(node, (rows, cols), config, v, grid.seed, device))
                except Exception as exc:
                    raise RuntimeError(f"sweep cell ({label}, {rows}x{cols}, {config}) failed: {exc}") from exc
                log.info("done %s %dx%d %s", label, rows, cols, config)
    return out


def _pct_drop(base: float, x: float) -> float:
    return 0.0 if base == 0 else (base - x) / base * 100.0


def _pct_inc(base: float, x: float) -> float:
    return 0.0 if base == 0 else (x - base) / base * 100.0


def overhead_report(results: Iterable[SimResult]) -> list[OverheadRow]:
    """Deltas of each result against the baseline of its (node, size) group."""
    results = list(results)
    groups: dict[tuple, list[SimResult]] = {}
    for r in results:
        groups.setdefault((r.node, r.rows, r.cols), []).append(r)
    rows = []
    for (node, m, n), members in groups.items():
        base = next((r for r in members if r.config == "baseline"), None)
        if base is None:
            raise ValueError(f"group ({node}, {m}x{n}) has no baseline result")
        for r in sorted(members, key=lambda r: CONFIGS.index(r.config)):
            rows.append(OverheadRow(
                node=node, rows=m, cols=n, config=r.config,
                current_A=r.mean_current, delay_s=r.delay, power_W=r.power,
                current_drop_pct=_pct_drop(base.mean_current, r.mean_current),
                delay_inc_pct=_pct_inc(base.delay, r.delay),
                power_inc_pct=_pct_inc(base.power, r.power),
            ))
    return rows


def emit_report(rows: Sequence[OverheadRow], fmt: str = "csv", path: str | os.PathLike | None = None) -> str:
    """Render rows as CSV or JSON; also writes ``path`` when given."""
    if not rows:
        raise ValueError("no rows to report")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([dataclasses.asdict(r) for r in rows], indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def parse_report_csv(text: str) -> list[OverheadRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for rec in reader:
        out.append(OverheadRow(
            node=rec["node"], rows=int(rec["rows"]), cols=int(rec["cols"]), config=rec["config"],
            **{k: float(rec[k]) for k in CSV_FIELDS[4:]},
        ))
    return out


# -- calibration --------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    params: TechNodeParams
    residual: float
    evaluations: int
    overheads: tuple[float, float, float]


class _Overheads:
    """Overheads of config=both vs baseline as a function of node parameters.

    Power is linear in the peripheral coefficients, so network solves are
    cached on the resistive parameters only.
    """

    def __init__(self, rows: int, cols: int, seed: int, device: MemristorParams):
        self.rows, self.cols, self.seed, self.device = rows, cols, seed, device
        self.weights = make_weights(rows, cols, seed)
        self.inputs = input_batch(rows, seed).vectors
        self._cache: dict[tuple, tuple] = {}

    @property
    def solves(self) -> int:
        return 2 * len(self._cache)

    def arrays(self, tn: TechNodeParams) -> tuple[CrossbarArray, CrossbarArray]:
        return tuple(build_array(tn, self.rows, self.cols, cfg, self.seed, self.device, self.weights)
                     for cfg in ("baseline", "both"))

    def array_power(self, tn: TechNodeParams) -> tuple[tuple[float, float], tuple[float, float]]:
        """(mean current, array-only power) for baseline and both."""
        key = (tn.r_switch, tn.r_driver, tn.r_wire, tn.r_access, tn.r_sense, tn.v_read)
        if key not in self._cache:
            v = self.inputs * tn.v_read
            arrays = self.arrays(tn)
            sims = [simulate(a, v) for a in arrays]
            self._cache[key] = tuple((s.mean_current, s.power - peripheral_power(a)) for s, a in zip(sims, arrays))
        return self._cache[key]

    def __call__(self, tn: TechNodeParams) -> tuple[float, float, float]:
        base, both = self.arrays(tn)
        (i0, p0), (i1, p1) = self.array_power(tn)
        p0 += peripheral_power(base)
        p1 += peripheral_power(both)
        return (_pct_drop(i0, i1), _pct_inc(estimate_delay(base), estimate_delay(both)), _pct_inc(p0, p1))


def _objective(got: Sequence[float], targets: Sequence[float]) -> float:
    return float(sum(((g - t) / t) ** 2 for g, t in zip(got, targets)))


def _descend(model: _Overheads, tn: TechNodeParams, names: Sequence[str], targets: Sequence[float],
             tol: float, max_evals: int) -> tuple[TechNodeParams, int]:
    """Log-space coordinate descent over ``names`` against the leading targets."""
    best = _objective(model(tn), targets)
    evals = 1
    step = 2.0

    def moved(params: TechNodeParams, name: str, factor: float) -> TechNodeParams:
        change = {name: getattr(params, name) * factor}
        # current drop tracks r_switch / r_driver; move them together so the
        # r_driver coordinate shifts delay without undoing the current fit
        if name == "r_driver" and "r_switch" in names:
            change["r_switch"] = params.r_switch * factor
        return params.replace(**change)

    while best > tol and step > 1.0 + 1e-4 and evals < max_evals:
        improved = False
        for name in names:
            for factor in (step, 1.0 / step):
                # keep stepping while the direction pays off
                while evals < max_evals:
                    trial = moved(tn, name, factor)
                    obj = _objective(model(trial), targets)
                    evals += 1
                    if obj >= best:
                        break
                    best, tn, improved = obj, trial, True
                    log.debug("calibrate %s=%.4g obj=%.3g", name, getattr(tn, name), obj)
            if best <= tol or evals >= max_evals:
                break
        if not improved:
            step = math.sqrt(step)
    return tn, evals


def _fit_power(model: _Overheads, tn: TechNodeParams, names: Sequence[str], target: float) -> TechNodeParams:
    """Solve the (linear) power target for the peripheral coefficients.

    One equation, several unknowns: take the minimum-norm least-squares
    solution, clipped at zero.
    """
    base, both = model.arrays(tn)
    (_, p0), (_, p1) = model.array_power(tn)
    p0 += peripheral_power(base)
    zeroed = tn.replace(**{n: 0.0 for n in names})
    fixed = peripheral_power(model.arrays(zeroed)[1])
    need = p0 * (1.0 + target / 100.0) - p1 - fixed
    counts = []
    for n in names:
        unit = model.arrays(zeroed.replace(**{n: 1.0}))[1]
        counts.append(peripheral_power(unit) - fixed)
    sol = np.linalg.lstsq(np.array([counts]), np.array([need]), rcond=None)[0]
    return tn.replace(**{n: float(max(x, 0.0)) for n, x in zip(names, sol)})


def calibrate(targets: Sequence[float] = TARGET_OVERHEADS, node: TechNodeParams | str = "45nm",
              size: tuple[int, int] = (256, 128), free_params: Sequence[str] = CALIBRATION_PARAMS,
              seed: int = 0, device: MemristorParams = DEFAULT_DEVICE, tol: float = 1e-6,
              max_evals: int = 200, fail_residual: float = 0.5) -> CalibrationResult:
    """Fit node parameters so config=both reproduces the target overheads.

    ``targets`` are (current drop %, delay increase %, power increase %);
    the residual is the sum of squared relative errors. Current and delay do
    not depend on the peripheral power coefficients, so the resistive free
    parameters are fitted to those two first by derivative-free coordinate
    descent in log space (each parameter is multiplied or divided by a step
    factor while that helps, the factor is square-rooted after a pass
    without progress, and stepping ``r_driver`` also scales ``r_switch``).
    The power target is then linear in the free power coefficients and is
    solved directly.
    """
    if len(targets) != 3 or any(t <= 0 for t in targets):
        raise ValueError("need three positive targets")
    tn = tech_node_params(node) if isinstance(node, str) else node
    unknown = set(free_params) - set(CALIBRATION_PARAMS)
    if unknown:
        raise ValueError(f"cannot calibrate {sorted(unknown)}")
    model = _Overheads(size[0], size[1], seed, device)
    resistive = [n for n in free_params if n.startswith("r_")]
    power = [n for n in free_params if n.startswith("p_")]
    got = model(tn)
    evals = 1
    if _objective(got, targets) <= tol:
        return CalibrationResult(params=tn, residual=_objective(got, targets), evaluations=0, overheads=tuple(got))
    if resistive:
        tn, n = _descend(model, tn, resistive, targets if not power else targets[:2], tol, max_evals)
        evals += n
    if power:
        tn = _fit_power(model, tn, power, targets[2])
    got = model(tn)
    best = _objective(got, targets)
    log.info("calibration: %d evaluations, %d solves, residual %.3g", evals, model.solves, best)
    if best > fail_residual:
        raise CalibrationError(f"calibration residual {best:.3g} above {fail_residual}", tn, best)
    return CalibrationResult(params=tn, residual=best, evaluations=evals, overheads=tuple(got))


def apply_calibration(fitted: TechNodeParams, nodes: Iterable[str] = KNOWN_NODES,
                      free_params: Sequence[str] = CALIBRATION_PARAMS,
                      reference: str = "45nm") -> dict[str, TechNodeParams]:
    """Transfer a fit at ``reference`` to other nodes by scaling each node's
    default by the fitted-to-default ratio of the reference node."""
    ref = tech_node_params(reference)
    out = {}
    for label in nodes:
        if label == reference:
            out[label] = fitted
            continue
        tn = tech_node_params(label)
        scaled = {}
        for name in free_params:
            d_ref = getattr(ref, name)
            scaled[name] = getattr(fitted, name) if d_ref == 0 else getattr(tn, name) * getattr(fitted, name) / d_ref
        out[label] = tn.replace(**scaled)
    return out
