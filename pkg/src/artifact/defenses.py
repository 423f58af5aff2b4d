"""Obfuscation countermeasures and their effect on reconstruction.

Each defense is a transform of the victim run: it changes what the probe
observes without changing what the network computes.
"""
from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

from .arch import (ArchGraph, ConvParams, Edge, LinearParams, Node, NoParams, OpKind, Shape,
                   trace_node_order, validate_graph)
from .estimate import DEFAULT_TOLERANCE, IOSpec, TimingLUT, eliminate_report
from .generate import CandidateExplosionError, populate_graphs, populate_graphs_any_order
from .metrics import evaluate
from .sim import CostModel, NoiseModel, OpTiming, op_timing, schedule, simulate, simulate_schedule
from .space import SearchSpace
from .trace import DEFAULT_THRESHOLD, ProcessedEntry, ProcessedTrace, RawEvent, condense


class DefenseKind(str, Enum):
    NONE = "none"
    PAD_OPERANDS = "pad"
    NULL_OPS = "null"
    SHUFFLE_ORDER = "shuffle"
    DECOY_PARALLEL = "decoy"


class InvalidDecoyError(ValueError):
    pass


@dataclass(frozen=True)
class DefenseConfig:
    """``strength`` is the pad fraction (0..1) for padding, the number of
    inserted identities for null ops, and unused otherwise.

    Padding touches each op with probability ``pad_prob`` per query.
    """

    kind: DefenseKind = DefenseKind.NONE
    strength: float = 0.0
    pad_prob: float = 0.25
    decoy: ArchGraph | None = None
    null_op: OpKind = OpKind.BATCHNORM
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DefenseKind(self.kind))
        if self.kind is DefenseKind.PAD_OPERANDS and not 0 <= self.strength <= 1:
            raise ValueError("pad strength must be in [0, 1]")
        if self.kind is DefenseKind.NULL_OPS and (self.strength < 0 or self.strength != int(self.strength)):
            raise ValueError("null-op strength must be a non-negative integer")
        if not 0 <= self.pad_prob <= 1:
            raise ValueError("pad_prob must be in [0, 1]")
        if self.kind is DefenseKind.DECOY_PARALLEL:
            if self.decoy is None:
                raise InvalidDecoyError("decoy defense needs a decoy graph")
            problems = validate_graph(self.decoy)
            if problems:
                raise InvalidDecoyError("invalid decoy graph: " + "; ".join(v.message for v in problems))


@dataclass
class Query:
    events: list[RawEvent]
    # True where the event came from the decoy network
    decoy_mask: list[bool] = field(default_factory=list)
    graph: ArchGraph | None = None
    order: list[int] | None = None


def default_decoy() -> ArchGraph:
    """A small conv stack run alongside the victim."""
    from .fixtures.builders import GraphBuilder
    b = GraphBuilder((3, 16, 16))
    x = b.add(OpKind.CONV2D, ConvParams(3, 8, 3, 1, 1))
    x = b.add(OpKind.RELU6, None, b.add(OpKind.BATCHNORM, None, x))
    x = b.add(OpKind.CONV2D, ConvParams(8, 8, 3, 1, 1), x)
    b.add(OpKind.RELU6, None, b.add(OpKind.BATCHNORM, None, x))
    return b.build()


# --------------------------------------------------------------- transforms


def _padded_timing(op: OpKind, params, in_shape: Shape, frac: float, cost: CostModel) -> OpTiming:
    if frac <= 0 or not op.is_matrix:
        return op_timing(op, params, in_shape, cost)
    if op is OpKind.DEPTHCONV2D:
        c = math.ceil(params.in_ch * (1 + frac))
        return op_timing(op, replace(params, in_ch=c, out_ch=c), (c,) + tuple(in_shape[1:]), cost)
    if op.is_conv:
        return op_timing(op, replace(params, out_ch=math.ceil(params.out_ch * (1 + frac))), in_shape, cost)
    return op_timing(op, LinearParams(params.in_dim, math.ceil(params.out_dim * (1 + frac))), in_shape, cost)


def padded_schedule(g: ArchGraph, strength: float, pad_prob: float, cost: CostModel,
                    rng: random.Random) -> list[tuple[int, OpTiming]]:
    """Per-node timings with randomly zero-padded matrix operands.

    Padding widens an op's output operand by a fraction up to ``strength``;
    the extra rows are discarded, so results are unchanged.
    """
    shapes = g.shapes()
    out = []
    for nid in trace_node_order(g):
        node = g.node(nid)
        srcs = g.inputs(nid)
        in_shape = shapes[srcs[0]] if srcs else g.input_shape
        frac = rng.uniform(0, strength) if strength and rng.random() < pad_prob else 0.0
        out.append((nid, _padded_timing(node.op, node.params, in_shape, frac, cost)))
    return out


def insert_null_ops(g: ArchGraph, k: int, rng: random.Random, op: OpKind = OpKind.BATCHNORM) -> ArchGraph:
    """Insert ``k`` identity layers after randomly chosen inner nodes.

    The network output is never a host: an identity after it would only
    extend the final chain, which the attacker peels off for free.
    """
    nodes = list(g.nodes)
    edges = list(g.edges)
    next_id = max(n.id for n in nodes) + 1
    for _ in range(k):
        inner = sorted({e.src for e in edges})
        host = rng.choice(inner)
        nid = next_id
        next_id += 1
        nodes.append(Node(nid, op, NoParams()))
        edges = [Edge(nid, e.dst, e.slot) if e.src == host else e for e in edges]
        edges.append(Edge(host, nid, 0))
    out = ArchGraph(tuple(nodes), tuple(edges), g.input_shape)
    # renumber to execution order so node ids keep matching trace positions
    order = trace_node_order(out)
    new = {old: i for i, old in enumerate(order)}
    return ArchGraph(tuple(Node(new[n.id], n.op, n.params) for n in sorted(out.nodes, key=lambda n: new[n.id])),
                     tuple(Edge(new[e.src], new[e.dst], e.slot) for e in out.edges), out.input_shape)


def random_topological_order(g: ArchGraph, rng: random.Random) -> list[int]:
    indeg = {n.id: len(g.inputs(n.id)) for n in g.nodes}
    ready = sorted(v for v, d in indeg.items() if d == 0)
    order = []
    while ready:
        v = ready.pop(rng.randrange(len(ready)))
        order.append(v)
        for c in g.consumers(v):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return order


def _merge(victim: list[RawEvent], decoy: list[RawEvent]) -> tuple[list[RawEvent], list[bool]]:
    tagged = sorted([(e.timestamp, 0, i, e) for i, e in enumerate(victim)] +
                    [(e.timestamp, 1, i, e) for i, e in enumerate(decoy)])
    return [t[3] for t in tagged], [bool(t[1]) for t in tagged]


def apply_defense(g: ArchGraph, d: DefenseConfig, cost: CostModel | None = None,
                  noise: NoiseModel | None = None, queries: int = 1, style: str = "pytorch",
                  start: int = 1_000_000) -> list[Query]:
    """Raw observations of ``queries`` defended inferences of ``g``.

    Query ``q`` uses victim noise seed ``noise.seed + q``; defense randomness
    comes from ``d.seed`` so the victim's own noise is the same with and
    without the defense.
    """
    if queries < 1:
        raise ValueError("queries must be >= 1")
    problems = validate_graph(g)
    if problems:
        raise ValueError("invalid victim graph: " + "; ".join(v.message for v in problems))
    cost = cost or CostModel()
    noise = noise or NoiseModel()
    out = []
    for q in range(queries):
        qnoise = noise.with_seed(noise.seed + q)
        rng = random.Random(f"{d.kind.value}:{d.seed}:{q}")
        if d.kind is DefenseKind.NONE:
            out.append(Query(simulate(g, cost, qnoise, style, start), graph=g))
        elif d.kind is DefenseKind.PAD_OPERANDS:
            sched = padded_schedule(g, d.strength, d.pad_prob, cost, rng)
            out.append(Query(simulate_schedule(g, sched, cost, qnoise, style, start), graph=g))
        elif d.kind is DefenseKind.NULL_OPS:
            h = insert_null_ops(g, int(d.strength), rng, d.null_op)
            out.append(Query(simulate(h, cost, qnoise, style, start), graph=h))
        elif d.kind is DefenseKind.SHUFFLE_ORDER:
            order = random_topological_order(g, rng)
            out.append(Query(simulate(g, cost, qnoise, style, start, order=order), graph=g, order=order))
        else:
            victim = simulate(g, cost, qnoise, style, start)
            span = sum(t.span for _, t in schedule(g, cost))
            offset = rng.randrange(max(start - span // 2, 0), start + span)
            dnoise = qnoise.with_seed(rng.randrange(1 << 30))
            decoy = simulate(d.decoy, cost, dnoise, style, offset)
            events, mask = _merge(victim, decoy)
            out.append(Query(events, mask, graph=g))
    return out


def strip_decoy(q: Query) -> list[RawEvent]:
    """Oracle filter: the query with every decoy event removed."""
    if not q.decoy_mask:
        return list(q.events)
    return [e for e, is_decoy in zip(q.events, q.decoy_mask) if not is_decoy]


# ------------------------------------------------------------- aggregation


def median_trace(traces: Sequence[ProcessedTrace]) -> ProcessedTrace:
    """Per-entry median span and GEMM counts over queries with the same op sequence.

    Queries whose op sequence differs from the most common one are ignored.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    seqs = [tuple(t.labels) for t in traces]
    common = statistics.mode(seqs)
    kept = [t for t, s in zip(traces, seqs) if s == common]
    spans = [t.spans()[:-1] for t in kept]
    entries = []
    ts = kept[0].entries[0].timestamp
    for i, op in enumerate(common):
        gc = int(statistics.median(t.entries[i].gemm_conv for t in kept))
        go = int(statistics.median(t.entries[i].gemm_oncopy for t in kept))
        entries.append(ProcessedEntry(i, op, ts, gc, go))
        if i < len(common) - 1:
            ts += statistics.median(s[i] for s in spans)
    return ProcessedTrace(tuple(entries), {"aggregated_queries": len(kept)})


def consensus_events(queries: Sequence[Sequence[RawEvent]], tolerance: int = DEFAULT_THRESHOLD // 4,
                     quorum: float = 0.5) -> list[RawEvent]:
    """Raw events that recur across queries, with the rest filtered out.

    Op hits are mined as (symbol, offset) items: hits of one symbol within
    ``tolerance`` cycles are one item, and items seen in more than
    ``quorum`` of the queries are kept.  Victim ops recur at fixed offsets
    from the query start, while decoy ops move with the decoy's launch time.

    GEMM hits between two kept op hits are taken from the query with the
    fewest of them in that interval, since foreign work only adds hits.
    """
    n = len(queries)
    if n == 0:
        raise ValueError("no queries to align")
    hits = sorted((e.timestamp, e.symbol, q) for q, evs in enumerate(queries) for e in evs if not e.is_gemm)
    items: list[tuple[int, str]] = []
    open_items: dict[str, tuple[int, dict[int, int]]] = {}

    def flush(sym: str) -> None:
        first, seen = open_items.pop(sym)
        if len(seen) > quorum * n:
            items.append((int(statistics.median(seen.values())), sym))

    for t, sym, q in hits:
        if sym in open_items and t - open_items[sym][0] > tolerance:
            flush(sym)
        if sym not in open_items:
            open_items[sym] = (t, {})
        open_items[sym][1].setdefault(q, t)
    for sym in list(open_items):
        flush(sym)
    items.sort()

    gemms = [[e for e in evs if e.is_gemm] for evs in queries]
    out = [RawEvent(t, sym) for t, sym in items]
    bounds = [t for t, _ in items] + [max((e.timestamp for evs in queries for e in evs), default=0) + 1]
    for lo, hi in zip(bounds, bounds[1:]):
        # within an interval, the query with the fewest GEMM hits is the least polluted
        best = min((([e for e in g if lo <= e.timestamp < hi]) for g in gemms), key=len)
        out.extend(best)
    out.sort(key=lambda e: (e.timestamp, e.symbol))
    return out


# -------------------------------------------------------------- evaluation


@dataclass
class DefenseReport:
    """Attack outcome under a defense.

    ``survivor_count`` is None when generation hit the candidate cap; then
    ``candidates`` holds the raw count that exceeded it.
    """

    kind: str
    queries: int
    survivor_count: int | None
    candidates: int
    ged: int | None
    l1: int | None
    per_query: list[dict] = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "queries": self.queries, "survivor_count": self.survivor_count,
                "candidates": self.candidates, "ged": self.ged, "l1": self.l1,
                "per_query": self.per_query, "note": self.note}

    def table(self) -> str:
        survivors = "over cap" if self.survivor_count is None else self.survivor_count
        lines = [f"defense {self.kind}  queries {self.queries}",
                 f"candidates {self.candidates}  survivors {survivors}  ged {self.ged}  l1 {self.l1}"]
        if self.note:
            lines.append(self.note)
        for i, q in enumerate(self.per_query):
            n_s = "over cap" if q["survivors"] is None else q["survivors"]
            lines.append(f"  query {i}: entries {q['entries']} candidates {q['candidates']} survivors {n_s}")
        return "\n".join(lines)


def _attack(trace: ProcessedTrace, truth: ArchGraph, space: SearchSpace, cost: CostModel,
            tolerance: float, any_order: bool) -> tuple[int, int | None, int | None, int | None]:
    io = IOSpec(truth.input_shape, truth.output_shape)
    try:
        cands = populate_graphs_any_order(trace) if any_order else populate_graphs(trace)
    except CandidateExplosionError as exc:
        return exc.count, None, None, None
    rep = eliminate_report(cands, trace, TimingLUT(cost), space, io, tolerance, any_order=any_order)
    best = None
    for r in rep.survivors:
        e = evaluate(r.graph, truth)
        if best is None or (e.ged, e.l1) < best:
            best = (e.ged, e.l1)
    return len(cands), len(rep.survivors), *(best or (None, None))


def evaluate_defense(g: ArchGraph, d: DefenseConfig, space: SearchSpace, cost: CostModel | None = None,
                     noise: NoiseModel | None = None, queries: int = 1, style: str = "pytorch",
                     tolerance: float = DEFAULT_TOLERANCE) -> DefenseReport:
    """Run the attack against defended queries and score it against ``g``.

    With several queries of a padding defense the attacker aggregates the
    traces by per-entry median first; decoy queries are aligned across
    queries before elimination.  Under order shuffling the attacker can no
    longer assume execution order and uses the order-agnostic generator.
    """
    cost = cost or CostModel()
    noise = noise or NoiseModel()
    qs = apply_defense(g, d, cost, noise, queries, style)
    traces = [condense(q.events) for q in qs]
    any_order = d.kind is DefenseKind.SHUFFLE_ORDER
    per_query = []
    for t in traces:
        n_c, n_s, ged_, l1_ = _attack(t, g, space, cost, tolerance, any_order)
        per_query.append({"entries": len(t), "candidates": n_c, "survivors": n_s, "ged": ged_, "l1": l1_})
    note = ""
    if queries > 1 and d.kind in (DefenseKind.PAD_OPERANDS, DefenseKind.NONE):
        agg = median_trace(traces)
        n_c, n_s, ged_, l1_ = _attack(agg, g, space, cost, tolerance, any_order)
        note = "aggregated by per-entry median"
    elif queries > 1 and d.kind is DefenseKind.DECOY_PARALLEL:
        aligned = condense(consensus_events([q.events for q in qs]))
        note = "aligned op sequence: " + " ".join(op.value for op in aligned.labels)
        n_c, n_s, ged_, l1_ = _attack(aligned, g, space, cost, tolerance, any_order)
    else:
        q0 = per_query[0]
        n_c, n_s, ged_, l1_ = q0["candidates"], q0["survivors"], q0["ged"], q0["l1"]
    return DefenseReport(d.kind.value, queries, n_s, n_c, ged_, l1_, per_query, note)
