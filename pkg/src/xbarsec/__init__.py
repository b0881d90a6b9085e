"""Secured memristive crossbar simulator.

Parasitic-aware 1T1R crossbar MVM with a keyed triplet-swap input permutor,
watermark protection columns, a white-box adversary model and an overhead
measurement pipeline.
"""

from .device import (
    DEFAULT_DEVICE,
    MemristorParams,
    TechNodeParams,
    UnknownNodeError,
    cell_path_resistance,
    conductance_from_weight,
    load_node_config,
    tech_node_params,
)
from .crossbar import CrossbarArray, ideal_mvm, program_weights, read_raw_conductances
from .permutor import (
    PermKey,
    apply_permutor,
    generate_key,
    key_space_bits,
    key_to_permutation,
    store_permuted,
    transistor_overhead,
)
from .watermark import WatermarkSpec, camouflage_stats, embed_watermark, make_watermark, verify_watermark
from .parasitics import (
    SimResult,
    build_network,
    column_currents,
    estimate_delay,
    estimate_power,
    simulate,
    solve_network,
)

__version__ = "0.1.0"
