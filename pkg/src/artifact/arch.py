"""Computational-graph data model, parameter schemas and shape propagation.

An ``ArchGraph`` is a labeled DAG whose nodes are DL computations.  Edges carry
an input slot so binary joins (``Add``/``Multiply``) know which operand is
which.  The batch dimension is omitted from every shape.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence, Union

Shape = tuple[int, ...]

ARCH_FORMAT_VERSION = 1


class OpKind(str, Enum):
    CONV1D = "Conv1d"
    CONV2D = "Conv2d"
    DEPTHCONV2D = "DepthConv2d"
    BATCHNORM = "BatchNorm"
    RELU6 = "ReLU6"
    SIGMOID = "Sigmoid"
    LINEAR = "Linear"
    EMBEDDING = "Embedding"
    MAXPOOL1D = "MaxPool1d"
    AVGPOOL = "AvgPool"
    ADD = "Add"
    MULTIPLY = "Multiply"
    TRANSPOSE = "Transpose"
    NARROW = "Narrow"

    def __str__(self) -> str:
        return self.value

    @property
    def arity(self) -> int:
        return 2 if self in (OpKind.ADD, OpKind.MULTIPLY) else 1

    @property
    def is_binary(self) -> bool:
        return self.arity == 2

    @property
    def is_conv(self) -> bool:
        return self in (OpKind.CONV1D, OpKind.CONV2D, OpKind.DEPTHCONV2D)

    @property
    def is_matrix(self) -> bool:
        """True for ops executed as matrix multiplications (GEMM)."""
        return self.is_conv or self is OpKind.LINEAR

    @property
    def spatial_rank(self) -> int:
        return 1 if self is OpKind.CONV1D else 2


class GraphError(ValueError):
    """Structural problem with a graph (cycle, bad edge, multiple sinks)."""


class ShapeError(ValueError):
    """Shapes cannot be propagated through an op."""


class ShapeMismatchError(ShapeError):
    """Binary op received operands of different shapes."""


class IncompatibleShapeError(ShapeError):
    """Op parameters do not fit the input shape."""


class FormatError(ValueError):
    """Malformed serialized graph."""


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class ConvParams:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class LinearParams:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class EmbeddingParams:
    vocab: int
    dim: int


@dataclass(frozen=True)
class PoolParams:
    window: int


@dataclass(frozen=True)
class TransposeParams:
    axis_a: int
    axis_b: int


@dataclass(frozen=True)
class NarrowParams:
    axis: int
    start: int
    length: int


@dataclass(frozen=True)
class NoParams:
    """Parameters of an op that has none (BatchNorm, ReLU6, Add, ...)."""


OpParams = Union[ConvParams, LinearParams, EmbeddingParams, PoolParams,
                 TransposeParams, NarrowParams, NoParams]

PARAM_TYPES: dict[OpKind, type] = {
    OpKind.CONV1D: ConvParams,
    OpKind.CONV2D: ConvParams,
    OpKind.DEPTHCONV2D: ConvParams,
    OpKind.LINEAR: LinearParams,
    OpKind.EMBEDDING: EmbeddingParams,
    OpKind.MAXPOOL1D: PoolParams,
    OpKind.TRANSPOSE: TransposeParams,
    OpKind.NARROW: NarrowParams,
}

# fields that may be zero; every other count must be strictly positive
_NON_NEGATIVE = {"padding", "axis_a", "axis_b", "axis", "start"}


def param_type(op: OpKind) -> type:
    return PARAM_TYPES.get(op, NoParams)


def is_parameterized(op: OpKind) -> bool:
    return op in PARAM_TYPES


def params_to_dict(params: OpParams) -> dict[str, int]:
    return {f.name: getattr(params, f.name) for f in fields(params)}


def params_from_dict(op: OpKind, data: Mapping[str, Any]) -> OpParams:
    cls = param_type(op)
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise FormatError(f"unknown params for {op}: {sorted(unknown)}")
    try:
        return cls(**{k: int(v) for k, v in data.items()})
    except TypeError as exc:
        raise FormatError(f"bad params for {op}: {exc}") from None


def param_values(params: OpParams | None) -> tuple[int, ...]:
    """Numeric parameter values in field order (used by the l1 metric)."""
    if params is None:
        return ()
    return tuple(getattr(params, f.name) for f in fields(params))


def check_params(op: OpKind, params: OpParams) -> list[str]:
    """Return human-readable problems with ``params`` for ``op``."""
    problems = []
    if not isinstance(params, param_type(op)):
        return [f"{op} expects {param_type(op).__name__}, got {type(params).__name__}"]
    for f in fields(params):
        value = getattr(params, f.name)
        if f.name in _NON_NEGATIVE:
            if value < 0:
                problems.append(f"{f.name} must be >= 0, got {value}")
        elif value <= 0:
            problems.append(f"{f.name} must be > 0, got {value}")
    if op is OpKind.DEPTHCONV2D and params.in_ch != params.out_ch:
        problems.append(f"depthwise conv needs in_ch == out_ch, got {params.in_ch} != {params.out_ch}")
    return problems


# ------------------------------------------------------------------- shapes


def conv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    padded = length + 2 * padding
    if kernel > padded:
        raise IncompatibleShapeError(f"kernel {kernel} exceeds padded extent {padded}")
    return (padded - kernel) // stride + 1


def _axis(axis: int, rank: int) -> int:
    if not -rank <= axis < rank:
        raise IncompatibleShapeError(f"axis {axis} out of range for rank {rank}")
    return axis % rank


def propagate_shape(op: OpKind, params: OpParams | None, inputs: Sequence[Shape]) -> Shape:
    """Output shape of ``op`` applied to ``inputs``.

    Raises ``ShapeMismatchError`` for binary ops with unequal operands and
    ``IncompatibleShapeError`` when params do not fit the input.
    """
    if len(inputs) != op.arity:
        raise ShapeError(f"{op} takes {op.arity} input(s), got {len(inputs)}")
    if params is None:
        params = NoParams()
    if not isinstance(params, param_type(op)):
        raise IncompatibleShapeError(f"{op} expects {param_type(op).__name__}")
    x = tuple(inputs[0])

    if op.is_binary:
        y = tuple(inputs[1])
        if x != y:
            raise ShapeMismatchError(f"{op} operands differ: {x} vs {y}")
        return x

    if op in (OpKind.BATCHNORM, OpKind.RELU6, OpKind.SIGMOID):
        return x

    if op.is_conv:
        rank = op.spatial_rank + 1
        if len(x) != rank:
            raise IncompatibleShapeError(f"{op} needs rank-{rank} input, got {x}")
        if x[0] != params.in_ch:
            raise IncompatibleShapeError(f"{op} expects {params.in_ch} channels, got {x[0]}")
        spatial = tuple(conv_out_len(n, params.kernel, params.stride, params.padding) for n in x[1:])
        return (params.out_ch,) + spatial

    if op is OpKind.LINEAR:
        if not x or x[-1] != params.in_dim:
            raise IncompatibleShapeError(f"Linear expects last dim {params.in_dim}, got {x}")
        return x[:-1] + (params.out_dim,)

    if op is OpKind.EMBEDDING:
        if len(x) != 1:
            raise IncompatibleShapeError(f"Embedding needs a rank-1 index tensor, got {x}")
        return x + (params.dim,)

    if op is OpKind.MAXPOOL1D:
        if len(x) != 2:
            raise IncompatibleShapeError(f"MaxPool1d needs (channels, length), got {x}")
        if params.window > x[1]:
            raise IncompatibleShapeError(f"pool window {params.window} exceeds length {x[1]}")
        return (x[0], x[1] // params.window)

    if op is OpKind.AVGPOOL:
        # global pooling fused with the flatten that feeds the classifier
        if len(x) < 2:
            raise IncompatibleShapeError(f"AvgPool needs spatial dims, got {x}")
        return (x[0],)

    if op is OpKind.TRANSPOSE:
        a, b = _axis(params.axis_a, len(x)), _axis(params.axis_b, len(x))
        out = list(x)
        out[a], out[b] = out[b], out[a]
        return tuple(out)

    if op is OpKind.NARROW:
        axis = _axis(params.axis, len(x))
        if params.start + params.length > x[axis]:
            raise IncompatibleShapeError(
                f"narrow [{params.start}, {params.start + params.length}) exceeds extent {x[axis]}")
        out = list(x)
        out[axis] = params.length
        return tuple(out)

    raise ShapeError(f"no shape rule for {op}")  # pragma: no cover


# -------------------------------------------------------------------- graph


@dataclass(frozen=True)
class Node:
    id: int
    op: OpKind
    params: OpParams | None = None


@dataclass(frozen=True, order=True)
class Edge:
    src: int
    dst: int
    slot: int = 0


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    node: int | None = None


@dataclass(frozen=True)
class ArchGraph:
    """Immutable labeled DAG of computations.

    Source nodes (no in-edges) read the graph input.  ``params`` may be left
    as ``None`` on every node to describe a label-only candidate.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    input_shape: Shape
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _inputs: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _consumers: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: (e.dst, e.slot, e.src))))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        index = {n.id: n for n in self.nodes}
        inputs: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        consumers: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            if e.dst in inputs:
                inputs[e.dst].append(e.src)
            if e.src in consumers:
                consumers[e.src].append(e.dst)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_inputs", {k: tuple(v) for k, v in inputs.items()})
        object.__setattr__(self, "_consumers", {k: tuple(v) for k, v in consumers.items()})

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def node(self, node_id: int) -> Node:
        return self._index[node_id]

    def inputs(self, node_id: int) -> tuple[int, ...]:
        """Producer ids of ``node_id`` in slot order."""
        return self._inputs[node_id]

    def consumers(self, node_id: int) -> tuple[int, ...]:
        return self._consumers[node_id]

    @property
    def sources(self) -> list[int]:
        return [n.id for n in self.nodes if not self._inputs[n.id]]

    @property
    def sinks(self) -> list[int]:
        return [n.id for n in self.nodes if not self._consumers[n.id]]

    @property
    def sink(self) -> int:
        sinks = self.sinks
        if len(sinks) != 1:
            raise GraphError(f"expected exactly one sink, found {len(sinks)}")
        return sinks[0]

    @property
    def labels(self) -> list[OpKind]:
        return [n.op for n in self.nodes]

    @property
    def has_params(self) -> bool:
        return all(n.params is not None for n in self.nodes)

    def shapes(self) -> dict[int, Shape]:
        """Output shape of every node; raises ``ShapeError`` on the first failure."""
        out: dict[int, Shape] = {}
        for nid in topological_order(self):
            node = self._index[nid]
            srcs = self._inputs[nid]
            ins = [out[s] for s in srcs] if srcs else [self.input_shape]
            try:
                out[nid] = propagate_shape(node.op, node.params, ins)
            except ShapeError as exc:
                raise type(exc)(f"node {nid} ({node.op}): {exc}") from None
        return out

    @property
    def output_shape(self) -> Shape:
        return self.shapes()[self.sink]

    def with_params(self, params: Mapping[int, OpParams]) -> "ArchGraph":
        nodes = tuple(replace(n, params=params.get(n.id, n.params)) for n in self.nodes)
        return ArchGraph(nodes, self.edges, self.input_shape)

    def with_ops(self, ops: Mapping[int, OpKind]) -> "ArchGraph":
        nodes = tuple(replace(n, op=ops.get(n.id, n.op)) for n in self.nodes)
        return ArchGraph(nodes, self.edges, self.input_shape)

    def strip_params(self) -> "ArchGraph":
        nodes = tuple(replace(n, params=None) for n in self.nodes)
        return ArchGraph(nodes, self.edges, self.input_shape)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": ARCH_FORMAT_VERSION,
            "input_shape": list(self.input_shape),
            "nodes": [
                {"id": n.id, "op": n.op.value,
                 "params": None if n.params is None else params_to_dict(n.params)}
                for n in self.nodes
            ],
            "edges": [[e.src, e.dst, e.slot] for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArchGraph":
        if not isinstance(data, Mapping):
            raise FormatError("graph must be a JSON object")
        allowed = {"version", "input_shape", "nodes", "edges"}
        unknown = set(data) - allowed
        if unknown:
            raise FormatError(f"unknown graph fields: {sorted(unknown)}")
        version = data.get("version", ARCH_FORMAT_VERSION)
        if version != ARCH_FORMAT_VERSION:
            raise FormatError(f"unsupported graph format version {version}")
        for key in ("input_shape", "nodes", "edges"):
            if key not in data:
                raise FormatError(f"missing graph field {key!r}")
        nodes = []
        for raw in data["nodes"]:
            unknown = set(raw) - {"id", "op", "params"}
            if unknown:
                raise FormatError(f"unknown node fields: {sorted(unknown)}")
            try:
                op = OpKind(raw["op"])
            except (KeyError, ValueError):
                raise FormatError(f"bad op in node {raw!r}") from None
            params = raw.get("params")
            nodes.append(Node(int(raw["id"]), op, None if params is None else params_from_dict(op, params)))
        edges = []
        for raw in data["edges"]:
            if len(raw) != 3:
                raise FormatError(f"edge must be [src, dst, slot], got {raw!r}")
            edges.append(Edge(int(raw[0]), int(raw[1]), int(raw[2])))
        return cls(tuple(nodes), tuple(edges), tuple(data["input_shape"]))

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "ArchGraph":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ArchGraph":
        return cls.from_json(Path(path).read_text())


def chain(ops: Iterable[tuple[OpKind, OpParams | None]], input_shape: Shape) -> ArchGraph:
    """Build a straight-line graph (handy for single-op profiling and tests)."""
    nodes = [Node(i, op, p) for i, (op, p) in enumerate(ops)]
    edges = [Edge(i - 1, i, 0) for i in range(1, len(nodes))]
    return ArchGraph(tuple(nodes), tuple(edges), input_shape)


# ---------------------------------------------------------------- ordering


def topological_order(g: ArchGraph) -> list[int]:
    """Kahn order with ties broken by node id; raises ``GraphError`` on cycles."""
    indeg = {n.id: len(g.inputs(n.id)) for n in g.nodes}
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order = []
    heapq.heapify(ready)
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for c in g.consumers(nid):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(g.nodes):
        raise GraphError("graph has a cycle")
    return order


def trace_node_order(g: ArchGraph) -> list[int]:
    """Node ids in framework execution order.

    Post-order walk from the sink: a node's inputs are emitted in slot order,
    each fully before the next, and a node already emitted is not repeated.
    """
    sink = g.sink
    done: set[int] = set()
    active: set[int] = set()
    order: list[int] = []
    # explicit stack keeps deep NAS graphs clear of the recursion limit
    stack: list[tuple[int, int]] = [(sink, 0)]
    active.add(sink)
    while stack:
        nid, k = stack[-1]
        ins = g.inputs(nid)
        if k < len(ins):
            stack[-1] = (nid, k + 1)
            child = ins[k]
            if child in done:
                continue
            if child in active:
                raise GraphError("graph has a cycle")
            active.add(child)
            stack.append((child, 0))
        else:
            stack.pop()
            active.discard(nid)
            done.add(nid)
            order.append(nid)
    return order


def trace_order(g: ArchGraph) -> list[OpKind]:
    """Labels in the order the graph's computations would appear in a trace."""
    return [g.node(nid).op for nid in trace_node_order(g)]


# --------------------------------------------------------------- validation


def validate_graph(g: ArchGraph, check_shapes: bool = True) -> list[Violation]:
    """All invariant violations of ``g`` (empty list means valid).

    With ``check_shapes`` every node must carry params and shapes must
    propagate from ``input_shape`` to the sink.
    """
    out: list[Violation] = []
    ids = [n.id for n in g.nodes]
    if not ids:
        return [Violation("empty", "graph has no nodes")]
    if len(set(ids)) != len(ids):
        out.append(Violation("duplicate-id", "node ids are not unique"))
    known = set(ids)
    slots: dict[int, list[int]] = {}
    for e in g.edges:
        if e.src not in known or e.dst not in known:
            out.append(Violation("dangling-edge", f"edge {e.src}->{e.dst} references unknown node"))
            continue
        slots.setdefault(e.dst, []).append(e.slot)
    for n in g.nodes:
        got = sorted(slots.get(n.id, []))
        if not got:
            if n.op.is_binary:
                out.append(Violation("arity", f"{n.op} has 0 inputs, expects 2", n.id))
        elif got != list(range(n.op.arity)):
            out.append(Violation("arity", f"{n.op} has input slots {got}, expects {list(range(n.op.arity))}", n.id))
    if out:
        return out
    try:
        topological_order(g)
    except GraphError as exc:
        return [Violation("cycle", str(exc))]
    if len(g.sinks) != 1:
        out.append(Violation("sinks", f"expected exactly one sink, found {len(g.sinks)}"))
        return out
    if check_shapes:
        for n in g.nodes:
            if n.params is None:
                out.append(Violation("params", "params not set", n.id))
                continue
            for problem in check_params(n.op, n.params):
                out.append(Violation("params", problem, n.id))
        if out:
            return out
        try:
            g.shapes()
        except ShapeError as exc:
            out.append(Violation("shape", str(exc)))
    return out


# ---------------------------------------------------------- canonical form

CanonicalKey = tuple[tuple[str, ...], tuple[tuple[int, int], ...]]


_OP_RANK = {op: i for i, op in enumerate(sorted(OpKind, key=lambda o: o.value))}


def refine_colors(labels: Sequence[OpKind], pairs: Iterable[tuple[int, int]],
            rounds: int | None = None) -> tuple[list[int], tuple]:
    """Colour refinement: stable per-node colours and the round-by-round history.

    Colours are ranks of (own colour, predecessor colours, successor colours)
    signatures, so they order nodes the same way in isomorphic graphs and
    refine the label order.  The history describes the whole refinement and
    is what two graphs must share to be possibly isomorphic.
    """
    n = len(labels)
    preds: list[list[int]] = [[] for _ in range(n)]
    succs: list[list[int]] = [[] for _ in range(n)]
    n_edges = 0
    for s, d in pairs:
        preds[d].append(s)
        succs[s].append(d)
        n_edges += 1
    color = [_OP_RANK[op] for op in labels]
    history = [n_edges, tuple(sorted(color))]
    for _ in range(n if rounds is None else rounds):
        sigs = [(color[v], tuple(sorted(color[u] for u in preds[v])), tuple(sorted(color[w] for w in succs[v])))
                for v in range(n)]
        table = {sig: i for i, sig in enumerate(sorted(set(sigs)))}
        history.append(tuple(sorted(sigs)))
        stable = len(table) == len(set(color))
        color = [table[sig] for sig in sigs]
        if stable:
            break
    return color, tuple(history)


def _colors(g: ArchGraph) -> dict[int, int]:
    ids = sorted(n.id for n in g.nodes)
    pos = {nid: i for i, nid in enumerate(ids)}
    color, _ = refine_colors([g.node(nid).op for nid in ids], [(pos[e.src], pos[e.dst]) for e in g.edges])
    return {nid: color[i] for i, nid in enumerate(ids)}


def canonical_orders(g: ArchGraph, limit: int = 200_000,
                     colors: Mapping[int, int] | Sequence[int] | None = None) -> Iterator[list[int]]:
    """Topological orders that emit a node of the smallest available colour at each step.

    The set of such orders is carried onto itself by every isomorphism, so
    minimizing over it gives a canonical key; ties only remain between nodes
    that refinement cannot tell apart.  ``colors`` (indexable by node id)
    skips recomputing the refinement.
    """
    indeg = {n.id: len(g.inputs(n.id)) for n in g.nodes}
    color = _colors(g) if colors is None else colors
    ready = {nid for nid, d in indeg.items() if d == 0}
    order: list[int] = []
    count = 0

    def rec() -> Iterator[list[int]]:
        nonlocal count
        if not ready:
            if len(order) == len(indeg):
                count += 1
                if count > limit:
                    raise GraphError(f"canonical search exceeded {limit} orderings")
                yield list(order)
            return
        best = min(color[r] for r in ready)
        for nid in sorted(r for r in ready if color[r] == best):
            ready.discard(nid)
            order.append(nid)
            released = []
            for c in g.consumers(nid):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.add(c)
                    released.append(c)
            yield from rec()
            for c in g.consumers(nid):
                indeg[c] += 1
            ready.difference_update(released)
            order.pop()
            ready.add(nid)

    yield from rec()


def order_key(g: ArchGraph, order: Sequence[int]) -> CanonicalKey:
    pos = {nid: i for i, nid in enumerate(order)}
    return (tuple(g.node(nid).op.value for nid in order),
            tuple(sorted((pos[e.src], pos[e.dst]) for e in g.edges)))


def canonical_order(g: ArchGraph, limit: int = 200_000,
                    colors: Mapping[int, int] | Sequence[int] | None = None) -> tuple[CanonicalKey, list[int]]:
    """Canonical key and the node order that realizes it.

    The key is the smallest (label sequence, sorted edge list) over
    :func:`canonical_orders`, so two graphs share a key exactly when they are
    isomorphic as labeled digraphs (input slots ignored).
    """
    best_key: CanonicalKey | None = None
    best_order: list[int] = []
    for order in canonical_orders(g, limit, colors):
        key = order_key(g, order)
        if best_key is None or key < best_key:
            best_key, best_order = key, order
    if best_key is None:
        raise GraphError("graph has a cycle")
    return best_key, best_order


def canonical_form(g: ArchGraph) -> CanonicalKey:
    return canonical_order(g)[0]


def invariant(g: ArchGraph, rounds: int | None = None) -> int:
    """Hash that agrees on isomorphic graphs (colour refinement over labels).

    Different graphs may collide, so equal values only mean "maybe
    isomorphic"; it is a cheap filter in front of :func:`canonical_form`.
    """
    ids = sorted(n.id for n in g.nodes)
    pos = {nid: i for i, nid in enumerate(ids)}
    return edge_invariant([g.node(nid).op for nid in ids],
                          [(pos[e.src], pos[e.dst]) for e in g.edges], rounds)


def edge_invariant(labels: Sequence[OpKind], pairs: Iterable[tuple[int, int]], rounds: int | None = None) -> int:
    """:func:`invariant` for a graph given as node labels and (src, dst) pairs."""
    return hash(refine_colors(labels, pairs, rounds)[1])


def isomorphic(a: ArchGraph, b: ArchGraph) -> bool:
    if len(a) != len(b) or len(a.edges) != len(b.edges):
        return False
    if sorted(a.labels) != sorted(b.labels) or invariant(a) != invariant(b):
        return False
    return canonical_form(a) == canonical_form(b)
