"""Ground-truth victim networks used throughout the tests and demos."""
from __future__ import annotations

from ..arch import (ArchGraph, ConvParams, Edge, EmbeddingParams, LinearParams, NarrowParams,
                    Node, NoParams, OpKind, OpParams, PoolParams, Shape, TransposeParams,
                    trace_node_order)


class GraphBuilder:
    """Incremental graph construction; ids are renumbered to trace order on build."""

    def __init__(self, input_shape: Shape):
        self.input_shape = tuple(input_shape)
        self._nodes: list[tuple[OpKind, OpParams]] = []
        self._edges: list[Edge] = []

    def add(self, op: OpKind, params: OpParams | None = None, *srcs: int) -> int:
        nid = len(self._nodes)
        self._nodes.append((op, params if params is not None else NoParams()))
        for slot, s in enumerate(srcs):
            self._edges.append(Edge(s, nid, slot))
        return nid

    def build(self) -> ArchGraph:
        raw = ArchGraph(tuple(Node(i, op, p) for i, (op, p) in enumerate(self._nodes)),
                        tuple(self._edges), self.input_shape)
        order = trace_node_order(raw)
        if len(order) != len(self._nodes):
            raise ValueError("builder produced nodes unreachable from the sink")
        new = {old: i for i, old in enumerate(order)}
        nodes = tuple(Node(new[old], self._nodes[old][0], self._nodes[old][1]) for old in order)
        edges = tuple(Edge(new[e.src], new[e.dst], e.slot) for e in self._edges)
        return ArchGraph(nodes, edges, self.input_shape)


def toynet() -> ArchGraph:
    """Conv-BN, depthwise-BN-ReLU6, and a skip from the first BN into the join.

    The depthwise layer is a 1x1 kernel: that is what keeps the 30x30 spatial
    size of the skip branch equal to the main branch so the join can add them.
    """
    b = GraphBuilder((3, 32, 32))
    c1 = b.add(OpKind.CONV2D, ConvParams(3, 10, 3, 1, 0))
    bn1 = b.add(OpKind.BATCHNORM, None, c1)
    dw = b.add(OpKind.DEPTHCONV2D, ConvParams(10, 10, 1, 1, 0), bn1)
    bn2 = b.add(OpKind.BATCHNORM, None, dw)
    r = b.add(OpKind.RELU6, None, bn2)
    b.add(OpKind.ADD, None, r, bn1)
    return b.build()


MALCONV_LENGTH = 2_000_000


def malconv(length: int = MALCONV_LENGTH) -> ArchGraph:
    """Gated byte-level convnet: two strided convs over halves of an 8-dim embedding."""
    b = GraphBuilder((length,))
    emb = b.add(OpKind.EMBEDDING, EmbeddingParams(257, 8))
    t = b.add(OpKind.TRANSPOSE, TransposeParams(0, 1), emb)
    n1 = b.add(OpKind.NARROW, NarrowParams(0, 0, 4), t)
    c1 = b.add(OpKind.CONV1D, ConvParams(4, 128, 500, 500, 0), n1)
    n2 = b.add(OpKind.NARROW, NarrowParams(0, 4, 4), t)
    c2 = b.add(OpKind.CONV1D, ConvParams(4, 128, 500, 500, 0), n2)
    gate = b.add(OpKind.SIGMOID, None, c2)
    m = b.add(OpKind.MULTIPLY, None, c1, gate)
    pooled_len = (length - 500) // 500 + 1
    p = b.add(OpKind.MAXPOOL1D, PoolParams(pooled_len), m)
    t2 = b.add(OpKind.TRANSPOSE, TransposeParams(0, 1), p)
    fc1 = b.add(OpKind.LINEAR, LinearParams(128, 128), t2)
    fc2 = b.add(OpKind.LINEAR, LinearParams(128, 1), fc1)
    b.add(OpKind.SIGMOID, None, fc2)
    return b.build()


def make_divisible(v: float, divisor: int = 8, min_value: int | None = None) -> int:
    min_value = min_value or divisor
    new_v = max(min_value, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


# stage widths and searched blocks of the CPU-targeted ProxylessNAS model;
# each block is (kernel, expand ratio)
PROXYLESS_CPU_WIDTHS = (40, 24, 32, 48, 88, 104, 216, 360, 1432)
PROXYLESS_CPU_STAGES = (
    ((3, 6), (3, 3), (3, 3), (3, 3)),
    ((3, 6), (3, 3), (3, 3), (5, 3)),
    ((3, 6), (3, 3)),
    ((5, 6), (3, 3), (3, 3), (3, 3)),
    ((5, 6), (5, 3), (5, 3), (3, 3)),
    ((5, 6),),
)
PROXYLESS_CPU_DOWNSAMPLE = (True, True, True, False, True, False)


def _conv_bn_relu(b: GraphBuilder, x: int, cin: int, cout: int, k: int, s: int) -> int:
    c = b.add(OpKind.CONV2D, ConvParams(cin, cout, k, s, k // 2), x)
    return b.add(OpKind.RELU6, None, b.add(OpKind.BATCHNORM, None, c))


def _inverted_residual(b: GraphBuilder, x: int, cin: int, cout: int, k: int, s: int, e: int) -> int:
    hidden = make_divisible(cin * e)
    h = _conv_bn_relu(b, x, cin, hidden, 1, 1)
    d = b.add(OpKind.DEPTHCONV2D, ConvParams(hidden, hidden, k, s, k // 2), h)
    h = b.add(OpKind.RELU6, None, b.add(OpKind.BATCHNORM, None, d))
    pw = b.add(OpKind.CONV2D, ConvParams(hidden, cout, 1, 1, 0), h)
    out = b.add(OpKind.BATCHNORM, None, pw)
    if s == 1 and cin == cout:
        out = b.add(OpKind.ADD, None, out, x)
    return out


def proxylessnas_cpu(num_classes: int = 1000) -> ArchGraph:
    """ProxylessNAS (CPU) on a 224x224 RGB input."""
    w = PROXYLESS_CPU_WIDTHS
    b = GraphBuilder((3, 224, 224))
    # stem reads the graph input, so its conv has no source edge
    c = b.add(OpKind.CONV2D, ConvParams(3, w[0], 3, 2, 1))
    x = b.add(OpKind.RELU6, None, b.add(OpKind.BATCHNORM, None, c))
    # depthwise-separable first block, no activation after the projection
    d = b.add(OpKind.DEPTHCONV2D, ConvParams(w[0], w[0], 3, 1, 1), x)
    h = b.add(OpKind.RELU6, None, b.add(OpKind.BATCHNORM, None, d))
    x = b.add(OpKind.BATCHNORM, None, b.add(OpKind.CONV2D, ConvParams(w[0], w[1], 1, 1, 0), h))
    cin = w[1]
    for stage, (blocks, down) in enumerate(zip(PROXYLESS_CPU_STAGES, PROXYLESS_CPU_DOWNSAMPLE)):
        cout = w[stage + 2]
        for i, (k, e) in enumerate(blocks):
            s = 2 if down and i == 0 else 1
            x = _inverted_residual(b, x, cin, cout, k, s, e)
            cin = cout
    x = _conv_bn_relu(b, x, cin, w[-1], 1, 1)
    x = b.add(OpKind.AVGPOOL, None, x)
    b.add(OpKind.LINEAR, LinearParams(w[-1], num_classes), x)
    return b.build()
