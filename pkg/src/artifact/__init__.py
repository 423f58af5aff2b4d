"""Architecture reconstruction from cache side-channel traces of deep-learning inference."""

from .arch import ArchGraph, OpKind, canonical_form, isomorphic, validate_graph
from .blocks import Block, mine_blocks, segment_trace
from .defenses import DefenseConfig, DefenseKind, apply_defense, evaluate_defense
from .estimate import IOSpec, TimingLUT, build_lut, eliminate, estimate_params
from .generate import populate_graphs, tiling_candidates
from .metrics import evaluate, ged, l1_params
from .pipeline import reconstruct
from .sim import CostModel, NoiseModel, simulate
from .space import SearchSpace, get_space
from .trace import ProcessedTrace, RawEvent, condense, parse_raw, read_processed

__version__ = "0.1.0"

__all__ = [
    "ArchGraph", "Block", "CostModel", "DefenseConfig", "DefenseKind", "IOSpec", "NoiseModel", "OpKind",
    "ProcessedTrace", "RawEvent", "SearchSpace", "TimingLUT", "apply_defense", "build_lut", "canonical_form",
    "condense", "eliminate", "estimate_params", "evaluate", "evaluate_defense", "ged", "get_space",
    "isomorphic", "l1_params", "mine_blocks", "parse_raw", "populate_graphs", "read_processed", "reconstruct",
    "segment_trace", "simulate", "tiling_candidates", "validate_graph",
]
