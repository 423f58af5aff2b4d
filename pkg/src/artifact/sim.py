"""Synthetic victim: turns an ``ArchGraph`` into a raw Flush+Reload trace.

Time and GEMM counts are functions of the matrix-multiplication size of each
op.  The GEMM counts follow a blocked-GEMM rule: dense convolutions and
linear layers run ``ceil(out/column_panel)`` outer iterations and copy
``ceil(M/m_block) * ceil(K/k_block)`` operand panels, where ``(M, K)`` are the
im2col matrix dims.  Depthwise convolutions run one GEMM per channel.
"""
from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

from .arch import (ArchGraph, OpKind, OpParams, Shape,
                   propagate_shape, trace_node_order, validate_graph)
from .trace import GEMM_CONV, GEMM_ONCOPY, OP_SYMBOLS, RawEvent

# PyTorch reports depthwise convolutions under the dense Conv2d symbol
PYTORCH_SYMBOLS: dict[OpKind, str] = {**OP_SYMBOLS, OpKind.DEPTHCONV2D: OP_SYMBOLS[OpKind.CONV2D]}
DISTINCT_SYMBOLS: dict[OpKind, str] = dict(OP_SYMBOLS)

SYMBOL_STYLES = {"pytorch": PYTORCH_SYMBOLS, "distinct": DISTINCT_SYMBOLS}


class SimulationError(ValueError):
    """The graph handed to the simulator is not valid."""


class ConfigError(ValueError):
    """Malformed cost/noise configuration."""


def _from_mapping(cls, data: Mapping, what: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {what} fields: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


@dataclass(frozen=True)
class CostModel:
    """Cycle and GEMM-count model shared by the simulator and the profiler."""

    cycles_per_mac: float = 1_800_000 / 243_000
    base_latency: int = 200_000
    depthwise_factor: float = 3_468_000 / (9_000 * 1_800_000 / 243_000)
    column_panel: int = 16
    m_block: int = 960
    k_block: int = 24
    # GEMM hits sit this far inside an invocation's span
    gemm_margin: int = 30_000

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"cost model {f.name} must be > 0")
        if 2 * self.gemm_margin >= self.base_latency:
            raise ConfigError("gemm_margin must be below half the base latency")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CostModel":
        return _from_mapping(cls, data, "cost model")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return "sha256:" + hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class NoiseModel:
    """Observation noise of the probe.

    Each invocation produces 1..``dup_hits_max`` hits of its symbol, every hit
    is jittered uniformly by ``±jitter`` cycles, and after every genuine hit a
    spurious hit of a random monitored symbol follows with ``spurious_prob``.
    """

    dup_hits_max: int = 3
    jitter: int = 500
    spurious_prob: float = 0.001
    seed: int = 0
    dup_spacing: int = 1_500
    spurious_offset: int = 2_000

    def __post_init__(self) -> None:
        if self.dup_hits_max < 1:
            raise ConfigError("dup_hits_max must be >= 1")
        if self.jitter < 0 or self.dup_spacing < 0 or self.spurious_offset < 1:
            raise ConfigError("jitter, dup_spacing must be >= 0 and spurious_offset >= 1")
        if not 0 <= self.spurious_prob < 1:
            raise ConfigError("spurious_prob must be in [0, 1)")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "NoiseModel":
        return cls(dup_hits_max=1, jitter=0, spurious_prob=0.0, seed=seed)

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(**{**asdict(self), "seed": seed})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseModel":
        return _from_mapping(cls, data, "noise model")


def load_config(path: str | Path) -> tuple[CostModel, NoiseModel]:
    """Read ``{"cost": {...}, "noise": {...}}``; missing sections use defaults."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - {"version", "cost", "noise"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if data.get("version", 1) != 1:
        raise ConfigError(f"unsupported config version {data['version']}")
    return CostModel.from_dict(data.get("cost", {})), NoiseModel.from_dict(data.get("noise", {}))


def save_config(path: str | Path, cost: CostModel, noise: NoiseModel) -> None:
    body = {"version": 1, "cost": cost.to_dict(), "noise": noise.to_dict()}
    Path(path).write_text(json.dumps(body, indent=1) + "\n")


# ------------------------------------------------------------- cost model


def _prod(xs: Sequence[int]) -> int:
    return math.prod(xs) if xs else 1


def mac_count(op: OpKind, params: OpParams | None, in_shape: Shape) -> int:
    """Multiply-accumulates for convs and linear layers, element count otherwise."""
    if op.is_conv:
        out = propagate_shape(op, params, [in_shape])
        taps = params.kernel ** op.spatial_rank
        macs = _prod(out[1:]) * taps * params.in_ch * params.out_ch
        return macs // params.in_ch if op is OpKind.DEPTHCONV2D else macs
    if op is OpKind.LINEAR:
        return _prod(in_shape[:-1]) * params.in_dim * params.out_dim
    return _prod(in_shape)


def gemm_counts(op: OpKind, params: OpParams | None, in_shape: Shape, cost: CostModel) -> tuple[int, int]:
    """(GEMM(conv), GEMM(oncopy)) invocation counts of one op."""
    if op.is_conv:
        out = propagate_shape(op, params, [in_shape])
        m = _prod(out[1:])
        taps = params.kernel ** op.spatial_rank
        if op is OpKind.DEPTHCONV2D:
            per_channel = math.ceil(m / cost.m_block) * math.ceil(taps / cost.k_block)
            return params.out_ch, params.out_ch * per_channel
        k = params.in_ch * taps
        return (math.ceil(params.out_ch / cost.column_panel),
                math.ceil(m / cost.m_block) * math.ceil(k / cost.k_block))
    if op is OpKind.LINEAR:
        rows = _prod(in_shape[:-1])
        return (math.ceil(params.out_dim / cost.column_panel),
                math.ceil(rows / cost.m_block) * math.ceil(params.in_dim / cost.k_block))
    return 0, 0


def op_span(op: OpKind, params: OpParams | None, in_shape: Shape, cost: CostModel) -> int:
    """Cycles from the start of this invocation to the start of the next."""
    work = mac_count(op, params, in_shape) * cost.cycles_per_mac
    if op is OpKind.DEPTHCONV2D:
        work *= cost.depthwise_factor
    return int(round(cost.base_latency + work))


@dataclass(frozen=True)
class OpTiming:
    span: int
    gemm_conv: int
    gemm_oncopy: int


def op_timing(op: OpKind, params: OpParams | None, in_shape: Shape, cost: CostModel) -> OpTiming:
    gc, go = gemm_counts(op, params, in_shape, cost)
    return OpTiming(op_span(op, params, in_shape, cost), gc, go)


# -------------------------------------------------------------- simulator


def schedule(g: ArchGraph, cost: CostModel, order: Sequence[int] | None = None) -> list[tuple[int, OpTiming]]:
    """Per-node timing in emission order (``order`` defaults to the trace order)."""
    shapes = g.shapes()
    out = []
    for nid in (trace_node_order(g) if order is None else order):
        node = g.node(nid)
        srcs = g.inputs(nid)
        in_shape = shapes[srcs[0]] if srcs else g.input_shape
        out.append((nid, op_timing(node.op, node.params, in_shape, cost)))
    return out


def _interleave(n_conv: int, n_oncopy: int) -> list[str]:
    """Spread the GEMM(conv) hits evenly through the GEMM(oncopy) stream."""
    total = n_conv + n_oncopy
    return [GEMM_CONV if (k + 1) * n_conv // total > k * n_conv // total else GEMM_ONCOPY
            for k in range(total)]


def emit_invocation(t0: int, symbol: str, timing: OpTiming, cost: CostModel,
                    noise: NoiseModel, rng: random.Random) -> list[tuple[int, str]]:
    """Genuine hits (before jitter) for one op invocation starting at ``t0``."""
    hits = [(t0 + i * noise.dup_spacing, symbol) for i in range(rng.randint(1, noise.dup_hits_max))]
    n = timing.gemm_conv + timing.gemm_oncopy
    if n:
        lo = t0 + cost.gemm_margin
        width = max(timing.span - 2 * cost.gemm_margin, 1)
        for k, sym in enumerate(_interleave(timing.gemm_conv, timing.gemm_oncopy)):
            hits.append((lo + (k * width) // n, sym))
    return hits


def simulate(g: ArchGraph, cost: CostModel | None = None, noise: NoiseModel | None = None,
             style: str = "pytorch", start: int = 1_000_000,
             order: Sequence[int] | None = None) -> list[RawEvent]:
    """Raw trace of one inference of ``g``.

    ``style`` picks the symbol table (``"pytorch"`` reports depthwise convs as
    ``Conv2d``; ``"distinct"`` keeps them apart).  ``order`` overrides the
    emission order, which must be a topological order of ``g``.
    """
    cost = cost or CostModel()
    problems = validate_graph(g)
    if problems:
        raise SimulationError("; ".join(f"{v.code}: {v.message}" for v in problems))
    return simulate_schedule(g, schedule(g, cost, order), cost, noise, style, start)


def simulate_schedule(g: ArchGraph, sched: Sequence[tuple[int, OpTiming]], cost: CostModel,
                      noise: NoiseModel | None = None, style: str = "pytorch",
                      start: int = 1_000_000) -> list[RawEvent]:
    """Raw trace for an explicit per-node timing schedule."""
    noise = noise or NoiseModel()
    try:
        symbols = SYMBOL_STYLES[style]
    except KeyError:
        raise SimulationError(f"unknown symbol style {style!r}") from None
    rng = random.Random(noise.seed)
    spurious_pool = sorted(set(symbols.values())) + [GEMM_CONV, GEMM_ONCOPY]
    hits: list[tuple[int, str]] = []
    t = start
    for nid, timing in sched:
        hits.extend(emit_invocation(t, symbols[g.node(nid).op], timing, cost, noise, rng))
        t += timing.span
    return finalize_hits(hits, noise, rng, spurious_pool)


def finalize_hits(hits: list[tuple[int, str]], noise: NoiseModel, rng: random.Random,
                  spurious_pool: Sequence[str]) -> list[RawEvent]:
    """Apply jitter and spurious hits, then sort into a raw trace."""
    out: list[tuple[int, int, str]] = []
    for seq, (t, sym) in enumerate(hits):
        if noise.jitter:
            t += rng.randint(-noise.jitter, noise.jitter)
        out.append((max(t, 0), seq, sym))
        if noise.spurious_prob and rng.random() < noise.spurious_prob:
            out.append((max(t, 0) + rng.randint(1, noise.spurious_offset), seq, rng.choice(spurious_pool)))
    out.sort()
    return [RawEvent(t, sym) for t, _, sym in out]
