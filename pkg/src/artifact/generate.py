"""Candidate computational graphs consistent with an observed op sequence.

Framework execution is single-threaded, so a join's two input branches appear
as contiguous runs of the trace, the first branch wholly before the second.
A run ending in a unary op chains onto the run before it.  A run ending in a
binary op either splits the preceding entries into two contiguous branches or
keeps one branch and takes the other input from an earlier tensor (a skip).

Node ``i`` of every candidate corresponds to trace entry ``i``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .arch import ArchGraph, CanonicalKey, Edge, Node, OpKind, Shape, canonical_form, canonical_order, invariant, refine_colors
from .trace import ProcessedTrace

DEFAULT_CAP = 10 ** 7

# head modes for the first node of a run
_SOURCE = 0   # reads the graph input (only the very first trace entry)
_AFTER = 1    # reads any earlier node except the one just before the run


class EmptyTraceError(ValueError):
    pass


class CandidateExplosionError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} raw candidates exceeds the cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass
class CandidateSet:
    candidates: list[ArchGraph]
    source_len: int
    labels: tuple[OpKind, ...] = ()
    raw_count: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self) -> Iterator[ArchGraph]:
        return iter(self.candidates)

    def __getitem__(self, i: int) -> ArchGraph:
        return self.candidates[i]

    def index_of(self, g: ArchGraph) -> int | None:
        """Position of the candidate isomorphic to ``g`` (parameters ignored)."""
        edges = _edge_key(g)
        labels = [n.op for n in sorted(g.nodes, key=lambda n: n.id)]
        for i, c in enumerate(self.candidates):
            if _edge_key(c) == edges and [n.op for n in c.nodes] == labels:
                return i
        inv = invariant(g)
        key = None
        for i, c in enumerate(self.candidates):
            if invariant(c) == inv:
                key = key or canonical_form(g.strip_params())
                if canonical_form(c) == key:
                    return i
        return None


def _labels_of(trace: ProcessedTrace | Sequence[OpKind]) -> tuple[OpKind, ...]:
    if isinstance(trace, ProcessedTrace):
        return tuple(trace.labels)
    return tuple(OpKind(x) for x in trace)


def count_candidates(trace: ProcessedTrace | Sequence[OpKind]) -> int:
    """Number of graphs the constructive recursion emits (before deduplication)."""
    labels = _labels_of(trace)
    if not labels:
        raise EmptyTraceError("trace is empty")

    @lru_cache(maxsize=None)
    def f(i: int, j: int, head: int) -> int:
        if not labels[j].is_binary:
            if j > i:
                return f(i, j - 1, head)
            return 1 if head == _SOURCE else i - 1
        if j == i:
            # both inputs already computed: any unordered pair of earlier nodes
            return 0 if head == _SOURCE else i * (i - 1) // 2
        total = f(i, j - 1, head) * (j - 1)
        for k in range(i + 1, j):
            total += f(i, k - 1, head) * f(k, j - 1, _AFTER)
        return total

    try:
        return f(0, len(labels) - 1, _SOURCE)
    finally:
        f.cache_clear()


EdgeList = tuple[tuple[int, int, int], ...]


def _enumerate_edges(labels: Sequence[OpKind]) -> list[EdgeList]:
    n = len(labels)

    @lru_cache(maxsize=None)
    def g(i: int, j: int, head: int) -> tuple[EdgeList, ...]:
        if not labels[j].is_binary:
            if j > i:
                return tuple(e + ((j - 1, j, 0),) for e in g(i, j - 1, head))
            if head == _SOURCE:
                return ((),)
            return tuple(((s, j, 0),) for s in range(i - 1))
        if j == i:
            if head == _SOURCE:
                return ()
            return tuple(((a, j, 0), (b, j, 1)) for a in range(i) for b in range(a + 1, i))
        out: list[EdgeList] = []
        for e in g(i, j - 1, head):
            for ref in range(j - 1):
                out.append(e + ((j - 1, j, 0), (ref, j, 1)))
        for k in range(i + 1, j):
            for left in g(i, k - 1, head):
                for right in g(k, j - 1, _AFTER):
                    out.append(left + right + ((k - 1, j, 0), (j - 1, j, 1)))
        return tuple(out)

    try:
        return list(g(0, n - 1, _SOURCE))
    finally:
        g.cache_clear()


def _graph(labels: Sequence[OpKind], edges: Iterable[tuple[int, int, int]], input_shape: Shape) -> ArchGraph:
    nodes = tuple(Node(i, op) for i, op in enumerate(labels))
    return ArchGraph(nodes, tuple(Edge(*e) for e in edges), input_shape)


def _edge_key(g: ArchGraph) -> tuple[tuple[int, int], ...]:
    return tuple(sorted((e.src, e.dst) for e in g.edges))


def dedup_graphs(graphs: Iterable[ArchGraph]) -> list[ArchGraph]:
    """Drop labeled-isomorphic duplicates, keeping the first of each class.

    Output is sorted by edge list.  Canonical forms are only computed for
    graphs whose invariant collides with another's.
    """
    buckets: dict[int, list[ArchGraph]] = {}
    for gr in graphs:
        buckets.setdefault(invariant(gr), []).append(gr)
    kept = []
    for group in buckets.values():
        if len(group) == 1:
            kept.append(group[0])
            continue
        seen: dict[CanonicalKey, ArchGraph] = {}
        for gr in group:
            seen.setdefault(canonical_form(gr), gr)
        kept.extend(seen.values())
    return sorted(kept, key=_edge_key)


def _dedup_edge_lists(labels: Sequence[OpKind], edge_lists: Iterable[EdgeList],
                      input_shape: Shape) -> list[ArchGraph]:
    """:func:`dedup_graphs` for raw edge lists, building graphs only for survivors."""
    unique: dict[tuple[tuple[int, int], ...], EdgeList] = {}
    for edges in edge_lists:
        unique.setdefault(tuple(sorted((s, d) for s, d, _ in edges)), edges)
    buckets: dict[int, list[tuple[EdgeList, list[int]]]] = {}
    for key, edges in unique.items():
        colors, history = refine_colors(labels, key)
        buckets.setdefault(hash(history), []).append((edges, colors))
    kept = []
    for group in buckets.values():
        if len(group) == 1:
            kept.append(_graph(labels, group[0][0], input_shape))
            continue
        seen: dict[CanonicalKey, ArchGraph] = {}
        for edges, colors in group:
            gr = _graph(labels, edges, input_shape)
            seen.setdefault(canonical_order(gr, colors=colors)[0], gr)
        kept.extend(seen.values())
    return sorted(kept, key=_edge_key)


def populate_graphs(trace: ProcessedTrace | Sequence[OpKind], input_shape: Shape = (),
                    cap: int = DEFAULT_CAP) -> CandidateSet:
    """All distinct candidate graphs whose execution order replays ``trace``."""
    labels = _labels_of(trace)
    raw = count_candidates(labels)
    if raw > cap:
        raise CandidateExplosionError(raw, cap)
    return CandidateSet(_dedup_edge_lists(labels, _enumerate_edges(labels), input_shape),
                        len(labels), labels, raw_count=raw)


def populate_graphs_any_order(trace: ProcessedTrace | Sequence[OpKind], input_shape: Shape = (),
                              cap: int = 100_000) -> CandidateSet:
    """Candidates for which the trace is *some* dependency-respecting order.

    This is the attacker's fallback when the victim may execute independent
    ops in any order: every node reads earlier entries, node 0 is the only
    source and the last entry the only sink.
    """
    labels = _labels_of(trace)
    if not labels:
        raise EmptyTraceError("trace is empty")
    n = len(labels)
    choices: list[list[tuple[int, ...]]] = [[()]]
    for i in range(1, n):
        if labels[i].is_binary:
            choices.append([(a, b) for a in range(i) for b in range(a + 1, i)])
        else:
            choices.append([(a,) for a in range(i)])
    if labels[0].is_binary:
        return CandidateSet([], n, labels)
    raw = 1
    for c in choices:
        raw *= len(c)
    if raw > cap:
        raise CandidateExplosionError(raw, cap)
    graphs = []
    consumers = [0] * n

    def rec(i: int, edges: list[tuple[int, int, int]]) -> None:
        if i == n:
            if all(consumers[v] for v in range(n - 1)):
                graphs.append(_graph(labels, edges, input_shape))
            return
        for ins in choices[i]:
            for src in ins:
                consumers[src] += 1
            rec(i + 1, edges + [(src, i, slot) for slot, src in enumerate(ins)])
            for src in ins:
                consumers[src] -= 1

    rec(1, [])
    return CandidateSet(dedup_graphs(graphs), n, labels, raw_count=raw)


# ------------------------------------------------------------ block level


def block_graph(block_ops: Sequence[Sequence[OpKind]], input_shape: Shape = ()) -> ArchGraph:
    """Op-level graph of a block sequence.

    Ops inside a block chain together.  A block closing with a binary op
    joins its body (slot 0) with the block's input (slot 1).
    """
    labels: list[OpKind] = []
    edges: list[tuple[int, int, int]] = []
    for ops in block_ops:
        start = len(labels)
        for pos, op in enumerate(ops):
            op = OpKind(op)
            nid = len(labels)
            if op.is_binary and pos != len(ops) - 1:
                raise ValueError(f"block {tuple(o.value for o in ops)} joins before its end")
            if op.is_binary:
                if start == 0 or pos == 0:
                    raise ValueError("a joining block needs a body and a preceding block")
                edges += [(nid - 1, nid, 0), (start - 1, nid, 1)]
            elif nid > 0:
                edges.append((nid - 1, nid, 0))
            labels.append(op)
    return _graph(labels, edges, input_shape)


def populate_graphs_blocks(block_seq: Sequence, input_shape: Shape = ()) -> CandidateSet:
    """Candidates for one block sequence; joins are resolved inside each block."""
    if not block_seq:
        raise EmptyTraceError("block sequence is empty")
    ops = [tuple(getattr(b, "ops", b)) for b in block_seq]
    g = block_graph(ops, input_shape)
    return CandidateSet([g], len(g), tuple(g.labels), raw_count=1,
                        meta={"blocks": [[o.value for o in b] for b in ops]})


def _join_key_dp(labels: Sequence[OpKind], vocab: Sequence[tuple[OpKind, ...]]):
    """Per-suffix sets of join signatures ``(join position, skip source)``."""
    n = len(labels)
    memo: dict[int, frozenset[frozenset]] = {n: frozenset([frozenset()])}
    for i in range(n - 1, -1, -1):
        keys: set[frozenset] = set()
        for b in vocab:
            m = len(b)
            if tuple(labels[i:i + m]) != b:
                continue
            if b[-1].is_binary and i == 0:
                continue
            if i + m not in memo or not memo[i + m]:
                continue
            this = {(i + m - 1, i - 1)} if b[-1].is_binary else set()
            for rest in memo[i + m]:
                keys.add(frozenset(this) | rest)
        memo[i] = frozenset(keys)
    return memo[0]


def tiling_candidates(trace: ProcessedTrace | Sequence[OpKind], blocks: Sequence,
                      input_shape: Shape = (), cap: int = DEFAULT_CAP) -> CandidateSet:
    """Distinct graphs over every tiling of ``trace`` by the mined ``blocks``.

    Each tiling fixes where every join takes its skip from; tilings that place
    the same joins the same way describe the same graph and are merged.
    """
    labels = _labels_of(trace)
    vocab = sorted({tuple(OpKind(o) for o in getattr(b, "ops", b)) for b in blocks},
                   key=lambda b: (len(b), [o.value for o in b]))
    keys = _join_key_dp(labels, vocab)
    if len(keys) > cap:
        raise CandidateExplosionError(len(keys), cap)
    chain = [(i - 1, i, 0) for i in range(1, len(labels)) if not labels[i].is_binary]
    graphs = []
    for key in sorted(keys, key=sorted):
        joins = dict(key)
        edges = list(chain)
        for j in range(len(labels)):
            if labels[j].is_binary:
                if j not in joins:
                    break
                edges += [(j - 1, j, 0), (joins[j], j, 1)]
        else:
            graphs.append(_graph(labels, edges, input_shape))
    return CandidateSet(graphs, len(labels), labels, raw_count=len(keys),
                        meta={"blocks": [[o.value for o in b] for b in vocab]})


# ---------------------------------------------------------------- output


def graph_digest(g: ArchGraph) -> str:
    return hashlib.sha256(g.to_json(indent=None).encode()).hexdigest()


def write_candidates(cands: CandidateSet, directory: str | Path) -> Path:
    """Numbered ArchGraph files plus a manifest with the count and a digest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    digests = []
    width = max(len(str(len(cands))), 4)
    for i, g in enumerate(cands):
        g.save(out / f"cand_{i:0{width}d}.json")
        digests.append(graph_digest(g))
    overall = hashlib.sha256("".join(digests).encode()).hexdigest()
    manifest = {"count": len(cands), "source_len": cands.source_len, "raw_count": cands.raw_count,
                "labels": [op.value for op in cands.labels], "digest": overall,
                "files": [f"cand_{i:0{width}d}.json" for i in range(len(cands))]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return out / "manifest.json"


def read_candidates(directory: str | Path) -> CandidateSet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    graphs = [ArchGraph.load(d / name) for name in manifest["files"]]
    digest = hashlib.sha256("".join(graph_digest(g) for g in graphs).encode()).hexdigest()
    if digest != manifest["digest"]:
        raise ValueError(f"candidate directory {d} does not match its manifest digest")
    return CandidateSet(graphs, manifest["source_len"], tuple(OpKind(x) for x in manifest["labels"]),
                        raw_count=manifest.get("raw_count", len(graphs)))
