"""Parameter estimation and candidate elimination.

Every trace entry is matched against profiled timings: a hypothesis for an
op survives when its predicted span and GEMM counts agree with what was
observed.  A candidate graph survives when some assignment of surviving
hypotheses propagates shapes consistently from the task input to the task
output.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .arch import (ArchGraph, ConvParams, EmbeddingParams, LinearParams, NarrowParams, Node,
                   NoParams, OpKind, OpParams, PoolParams, Shape, ShapeError, TransposeParams,
                   param_values, params_from_dict, params_to_dict, propagate_shape,
                   trace_node_order, validate_graph)
from .sim import CostModel, OpTiming, op_timing
from .space import ParamGrid, SearchSpace
from .trace import ProcessedEntry, ProcessedTrace

DEFAULT_TOLERANCE = 0.05
GEMM_SLACK = 2
DEFAULT_BEAM = 256


class NoHypothesisError(ValueError):
    """No parameterization of an entry matches its observed timing."""


class BeamOverflowError(RuntimeError):
    """Too many live hypotheses at one trace entry."""


# ------------------------------------------------------------------ LUT

LutKey = tuple[OpKind, OpParams, Shape]


class TimingLUT:
    """Profiled (span, GEMM counts) per (op, params, input shape).

    Lookups of unseen keys are profiled on demand and remembered.
    """

    def __init__(self, cost: CostModel | None = None, provenance: str | None = None):
        self.cost = cost or CostModel()
        self.provenance = provenance or self.cost.digest()
        self.entries: dict[LutKey, OpTiming] = {}
        self.misses = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: LutKey) -> bool:
        return key in self.entries

    def profile(self, op: OpKind, params: OpParams, in_shape: Shape) -> OpTiming:
        key = (op, params, tuple(in_shape))
        hit = self.entries.get(key)
        if hit is None:
            self.misses += 1
            hit = op_timing(op, params, key[2], self.cost)
            if hit.span <= 0:
                raise ValueError(f"non-positive span profiled for {key}")
            self.entries[key] = hit
        return hit

    def to_jsonl(self) -> str:
        lines = [json.dumps({"provenance": self.provenance, "cost": self.cost.to_dict()})]
        for (op, params, shape), t in self.entries.items():
            lines.append(json.dumps({"op": op.value, "params": params_to_dict(params),
                                     "in_shape": list(shape), "span": t.span,
                                     "gemm_conv": t.gemm_conv, "gemm_oncopy": t.gemm_oncopy}))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path) -> "TimingLUT":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        lut = cls(CostModel.from_dict(head["cost"]), head["provenance"])
        for line in lines[1:]:
            r = json.loads(line)
            op = OpKind(r["op"])
            key = (op, params_from_dict(op, r["params"]), tuple(r["in_shape"]))
            if key in lut.entries:
                raise ValueError(f"duplicate LUT key {key}")
            lut.entries[key] = OpTiming(r["span"], r["gemm_conv"], r["gemm_oncopy"])
        return lut


def build_lut(grid: ParamGrid, cost: CostModel | None = None) -> TimingLUT:
    """Eagerly profile every conv and linear combination of ``grid``."""
    lut = TimingLUT(cost)
    for cin in grid.conv_channels:
        for cout in grid.conv_channels:
            for k in grid.conv_kernels:
                for s in grid.conv_strides:
                    shape = (cin,) + (grid.conv_input_length,) * grid.conv_op.spatial_rank
                    lut.profile(grid.conv_op, ConvParams(cin, cout, k, s, 0), shape)
    for din in grid.linear_in:
        for dout in grid.linear_out:
            lut.profile(OpKind.LINEAR, LinearParams(din, dout), (din,))
    return lut


# ------------------------------------------------------------ hypotheses


@dataclass(frozen=True)
class Hypothesis:
    op: OpKind
    params: OpParams
    out_shape: Shape
    residual: int = 0


def depthwise_channel_hypotheses(gemm_conv: int) -> tuple[int, ...]:
    """Channel counts consistent with a depthwise GEMM(conv) count.

    Depthwise layers run one GEMM per channel and channel counts are even in
    practice, so an odd count is one spurious or one missed hit away from the
    true value.
    """
    if gemm_conv <= 0:
        return ()
    if gemm_conv % 2 == 0:
        return (gemm_conv,)
    return tuple(c for c in (gemm_conv - 1, gemm_conv + 1) if c > 0)


def _narrow_slices(extent: int, policy: str) -> list[tuple[int, int]]:
    out = []
    if policy == "full" and extent <= 256:
        return [(s, n) for n in range(1, extent + 1) for s in range(extent - n + 1)]
    if extent % 2 == 0 and extent >= 2:
        out += [(0, extent // 2), (extent // 2, extent // 2)]
    if policy != "halving":
        out.append((0, extent))
    return out


def _raw_hypotheses(op: OpKind, in_shapes: Sequence[Shape], space: SearchSpace,
                    entry: ProcessedEntry, upstream_stride: int | None,
                    in_channels: Iterable[int] | None) -> Iterable[tuple[OpKind, OpParams]]:
    x = tuple(in_shapes[0]) if in_shapes else ()
    if op in (OpKind.CONV1D, OpKind.CONV2D):
        chans = tuple(in_channels) if in_channels is not None else (x[0],) if x else ()
        for cin in chans:
            for cout in space.conv_channels:
                for k in space.conv_kernels:
                    for s in space.conv_strides:
                        yield op, ConvParams(cin, cout, k, s, space.pad_for(k))
        if op is OpKind.CONV2D and space.depthwise_as_conv2d:
            yield from _raw_hypotheses(OpKind.DEPTHCONV2D, in_shapes, space, entry, upstream_stride, in_channels)
        return
    if op is OpKind.DEPTHCONV2D:
        for c in depthwise_channel_hypotheses(entry.gemm_conv):
            if x and x[0] != c:
                continue
            for k in space.depthwise_kernels:
                for s in space.conv_strides:
                    yield op, ConvParams(c, c, k, s, space.pad_for(k))
        return
    if op is OpKind.LINEAR:
        if not x or (space.linear_in and x[-1] not in space.linear_in):
            return
        for dout in space.linear_out or space.conv_channels:
            yield op, LinearParams(x[-1], dout)
        return
    if op is OpKind.EMBEDDING:
        for d in space.embedding_dims:
            yield op, EmbeddingParams(space.embedding_vocab, d)
        return
    if op is OpKind.MAXPOOL1D:
        if len(x) != 2:
            return
        windows = {x[1]}
        if upstream_stride:
            windows.add(upstream_stride)
        for w in sorted(windows):
            yield op, PoolParams(w)
        return
    if op is OpKind.TRANSPOSE:
        for a in range(len(x)):
            for b in range(a + 1, len(x)):
                yield op, TransposeParams(a, b)
        return
    if op is OpKind.NARROW:
        for axis, extent in enumerate(x):
            for start, length in _narrow_slices(extent, space.narrow):
                yield op, NarrowParams(axis, start, length)
        return
    yield op, NoParams()


def timing_matches(t: OpTiming, entry: ProcessedEntry, span: float | None, tolerance: float) -> bool:
    if math.isinf(tolerance):
        return True
    if abs(t.gemm_conv - entry.gemm_conv) > GEMM_SLACK or abs(t.gemm_oncopy - entry.gemm_oncopy) > GEMM_SLACK:
        return False
    return span is None or abs(t.span - span) <= tolerance * span


def estimate_params(entry: ProcessedEntry, prev_shape: Shape | Sequence[Shape], lut: TimingLUT,
                    space: SearchSpace, tolerance: float = DEFAULT_TOLERANCE, *,
                    span: float | None = None, upstream_stride: int | None = None,
                    in_channels: Iterable[int] | None = None) -> list[Hypothesis]:
    """Parameter hypotheses for one entry that fit its input and its timing.

    ``prev_shape`` is the input shape, or a list of operand shapes for a
    binary op.  ``span`` is the observed cycles until the next entry (None
    for the last entry).  With an infinite ``tolerance`` no timing filter is
    applied.  Raises ``NoHypothesisError`` when nothing fits.
    """
    if prev_shape and isinstance(prev_shape[0], (tuple, list)):
        in_shapes = [tuple(s) for s in prev_shape]
    else:
        in_shapes = [tuple(prev_shape)] * entry.op.arity
    out = []
    for op, params in _raw_hypotheses(entry.op, in_shapes, space, entry, upstream_stride, in_channels):
        shapes = in_shapes
        if in_channels is not None and op.is_conv:
            shapes = [(params.in_ch,) + tuple(in_shapes[0][1:])]
        try:
            y = propagate_shape(op, params, shapes)
        except ShapeError:
            continue
        if any(d <= 0 for d in y):
            continue
        t = lut.profile(op, params, shapes[0])
        if not timing_matches(t, entry, span, tolerance):
            continue
        residual = 0 if span is None else int(round(abs(t.span - span)))
        out.append(Hypothesis(op, params, y, residual))
    if not out:
        raise NoHypothesisError(f"no hypothesis for entry {entry.index} ({entry.op.value}) on input {in_shapes}")
    return out


# ----------------------------------------------------------- elimination


def squeeze_shape(shape: Shape) -> Shape:
    """Drop leading singleton dims, keeping at least rank 1."""
    s = tuple(shape)
    while len(s) > 1 and s[0] == 1:
        s = s[1:]
    return s


@dataclass(frozen=True)
class IOSpec:
    input_shape: Shape
    output_shape: Shape

    def output_ok(self, shape: Shape) -> bool:
        return squeeze_shape(shape) == squeeze_shape(self.output_shape)


@dataclass(frozen=True)
class Score:
    matched_entries: int
    timing_residual: int


@dataclass(frozen=True)
class Reconstruction:
    graph: ArchGraph
    score: Score
    candidate_index: int = -1


@dataclass(frozen=True)
class _Meta:
    shape: Shape
    stride: int | None = None


def structural_violations(g: ArchGraph) -> list[str]:
    """Conventions of fused conv/BN/activation units.

    A convolution feeds only its BatchNorm, and a BatchNorm that feeds an
    activation feeds nothing else.
    """
    bad = []
    for n in g.nodes:
        cons = g.consumers(n.id)
        if n.op.is_conv:
            if len(cons) != 1 or g.node(cons[0]).op is not OpKind.BATCHNORM:
                bad.append(f"conv {n.id} must feed exactly one BatchNorm")
        elif n.op is OpKind.BATCHNORM:
            if any(g.node(c).op is OpKind.RELU6 for c in cons) and len(cons) > 1:
                bad.append(f"BatchNorm {n.id} feeding an activation has other consumers")
    return bad


@dataclass
class EliminationReport:
    candidates: int
    survivors: list[Reconstruction]
    rejected: dict[str, int] = field(default_factory=dict)


class _Estimator:
    def __init__(self, trace: ProcessedTrace, lut: TimingLUT, space: SearchSpace, io: IOSpec,
                 tolerance: float, beam: int, any_order: bool = False):
        self.trace, self.lut, self.space, self.io = trace, lut, space, io
        self.any_order = any_order
        self.tolerance, self.beam = tolerance, beam
        self.spans = trace.spans()
        self.cache: dict[tuple, list[Hypothesis]] = {}

    def hyps(self, pos: int, metas: tuple[_Meta, ...]) -> list[Hypothesis]:
        key = (pos, metas)
        got = self.cache.get(key)
        if got is None:
            entry = self.trace.entries[pos]
            stride = next((m.stride for m in metas if m.stride), None)
            try:
                got = estimate_params(entry, [m.shape for m in metas], self.lut, self.space,
                                      self.tolerance, span=self.spans[pos], upstream_stride=stride)
            except NoHypothesisError:
                got = []
            self.cache[key] = got
        return got

    def run(self, g: ArchGraph) -> tuple[Reconstruction | None, str]:
        # node i stands for entry i when execution order is not trusted
        order = sorted(n.id for n in g.nodes) if self.any_order else trace_node_order(g)
        if len(order) != len(self.trace.entries):
            return None, "length"
        if [g.node(v).op for v in order] != list(self.trace.labels):
            return None, "labels"
        if self.space.fused_units and structural_violations(g):
            return None, "structure"
        pos = {v: p for p, v in enumerate(order)}
        last_use = {v: max((pos[c] for c in g.consumers(v)), default=-1) for v in order}
        source = _Meta(tuple(self.io.input_shape))
        # live tensors -> (residual, assignment chain)
        states: dict[tuple, tuple[int, tuple | None]] = {(): (0, None)}
        for p, v in enumerate(order):
            sink = p == len(order) - 1
            nxt: dict[tuple, tuple[int, tuple | None]] = {}
            srcs = g.inputs(v)
            for live, (res, chain) in states.items():
                lookup = dict(live)
                if any(s not in lookup for s in srcs):
                    continue
                metas = tuple(lookup[s] for s in srcs) if srcs else (source,) * g.node(v).op.arity
                for h in self.hyps(p, metas):
                    if sink and not self.io.output_ok(h.out_shape):
                        continue
                    stride = h.params.stride if h.op.is_conv else next((m.stride for m in metas if m.stride), None)
                    kept = tuple((u, m) for u, m in live if last_use[u] > p)
                    if last_use[v] > p:
                        kept = tuple(sorted(kept + ((v, _Meta(h.out_shape, stride)),), key=lambda um: um[0]))
                    r = res + h.residual
                    prev = nxt.get(kept)
                    if prev is None or r < prev[0]:
                        nxt[kept] = (r, (chain, v, h))
            if not nxt:
                return None, f"entry {p}"
            if len(nxt) > self.beam:
                raise BeamOverflowError(f"{len(nxt)} live hypotheses at entry {p} exceed the cap of {self.beam}")
            states = nxt
        res, chain = min(states.values(), key=lambda rc: rc[0])
        chosen: dict[int, Hypothesis] = {}
        while chain is not None:
            chain, v, h = chain
            chosen[v] = h
        nodes = tuple(Node(n.id, chosen[n.id].op, chosen[n.id].params) for n in g.nodes)
        rec = _spread_narrows(ArchGraph(nodes, g.edges, tuple(self.io.input_shape)))
        return Reconstruction(rec, Score(len(order), res)), "survived"


def _spread_narrows(g: ArchGraph) -> ArchGraph:
    """Give sibling slices of one tensor disjoint positions in execution order.

    Where a slice starts is invisible to timing, so equal-length slices of
    the same tensor are assumed to partition it in the order they run.
    """
    order = {v: p for p, v in enumerate(trace_node_order(g))}
    params: dict[int, OpParams] = {}
    shapes = g.shapes()
    for n in g.nodes:
        narrows = sorted((c for c in g.consumers(n.id) if g.node(c).op is OpKind.NARROW), key=order.get)
        groups: dict[tuple[int, int], list[int]] = {}
        for c in narrows:
            p = g.node(c).params
            groups.setdefault((p.axis, p.length), []).append(c)
        for (axis, length), members in groups.items():
            if len(members) > 1 and length * len(members) <= shapes[n.id][axis]:
                for i, c in enumerate(members):
                    params[c] = NarrowParams(axis, i * length, length)
    return g.with_params(params) if params else g


def _eliminate_chunk(args) -> list[tuple[int, Reconstruction | None, str]]:
    graphs, start, trace, lut, space, io, tolerance, beam, any_order = args
    est = _Estimator(trace, lut, space, io, tolerance, beam, any_order)
    out = []
    for i, g in enumerate(graphs):
        rec, why = est.run(g)
        if rec is not None:
            rec = Reconstruction(rec.graph, rec.score, start + i)
        out.append((start + i, rec, why))
    return out


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None or jobs == 0:
        return os.cpu_count() or 1
    if jobs < 0:
        raise ValueError("jobs must be >= 0")
    return jobs


def eliminate_report(cands: Iterable[ArchGraph], trace: ProcessedTrace, lut: TimingLUT,
                     space: SearchSpace, io: IOSpec | Mapping, tolerance: float = DEFAULT_TOLERANCE,
                     beam: int = DEFAULT_BEAM, jobs: int = 1, any_order: bool = False) -> EliminationReport:
    if not isinstance(io, IOSpec):
        io = IOSpec(tuple(io["input_shape"]), tuple(io["output_shape"]))
    graphs = list(cands)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(graphs) < 2 * jobs:
        results = _eliminate_chunk((graphs, 0, trace, lut, space, io, tolerance, beam, any_order))
    else:
        size = math.ceil(len(graphs) / (jobs * 4))
        chunks = [(graphs[i:i + size], i, trace, lut, space, io, tolerance, beam, any_order)
                  for i in range(0, len(graphs), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for part in pool.map(_eliminate_chunk, chunks) for r in part]
    rejected: dict[str, int] = {}
    survivors = []
    for _, rec, why in sorted(results, key=lambda r: r[0]):
        if rec is None:
            key = "timing/shape" if why.startswith("entry") else why
            rejected[key] = rejected.get(key, 0) + 1
        else:
            survivors.append(rec)
    return EliminationReport(len(graphs), survivors, rejected)


def eliminate(cands: Iterable[ArchGraph], trace: ProcessedTrace, lut: TimingLUT, space: SearchSpace,
              io: IOSpec | Mapping, tolerance: float = DEFAULT_TOLERANCE, beam: int = DEFAULT_BEAM,
              jobs: int = 1, any_order: bool = False) -> list[Reconstruction]:
    """Fully parameterized reconstructions of the candidates that survive.

    Each survivor carries its lowest-residual parameterization.  The result
    is ordered by candidate index and does not depend on ``jobs``.
    """
    return eliminate_report(cands, trace, lut, space, io, tolerance, beam, jobs, any_order).survivors


def reconstruction_valid(rec: Reconstruction) -> bool:
    return not validate_graph(rec.graph)


def params_vector(g: ArchGraph) -> list[int]:
    return [v for n in g.nodes for v in param_values(n.params)]
