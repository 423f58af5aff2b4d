import random

import pytest
from hypothesis import given, settings, strategies as st

from artifact.arch import (ArchGraph, ConvParams, Edge, IncompatibleShapeError, LinearParams, NarrowParams,
                           Node, OpKind, PoolParams, ShapeMismatchError, TransposeParams, canonical_form,
                           chain, conv_out_len, invariant, isomorphic, propagate_shape, topological_order,
                           trace_node_order, trace_order, validate_graph)
from artifact.fixtures.builders import malconv, proxylessnas_cpu, toynet

from artifact.estimate import squeeze_shape

from oracles import random_dag


def test_conv2d_output_shape():
    assert propagate_shape(OpKind.CONV2D, ConvParams(3, 10, 3, 1, 0), [(3, 32, 32)]) == (10, 30, 30)


def test_conv1d_strided_shape():
    assert propagate_shape(OpKind.CONV1D, ConvParams(4, 128, 500, 500, 0), [(4, 2_000_000)]) == (128, 4000)


@given(length=st.integers(1, 300), kernel=st.integers(1, 20), stride=st.integers(1, 8), pad=st.integers(0, 5))
def test_conv_length_matches_sliding_window_count(length, kernel, stride, pad):
    padded = length + 2 * pad
    if kernel > padded:
        with pytest.raises(IncompatibleShapeError):
            conv_out_len(length, kernel, stride, pad)
        return
    windows = len(range(0, padded - kernel + 1, stride))
    assert conv_out_len(length, kernel, stride, pad) == windows


def test_elementwise_and_layout_ops():
    assert propagate_shape(OpKind.BATCHNORM, None, [(8, 5, 5)]) == (8, 5, 5)
    assert propagate_shape(OpKind.TRANSPOSE, TransposeParams(0, 1), [(2_000_000, 8)]) == (8, 2_000_000)
    assert propagate_shape(OpKind.NARROW, NarrowParams(0, 4, 4), [(8, 100)]) == (4, 100)
    assert propagate_shape(OpKind.MAXPOOL1D, PoolParams(4000), [(128, 4000)]) == (128, 1)
    assert propagate_shape(OpKind.LINEAR, LinearParams(128, 1), [(1, 128)]) == (1, 1)
    assert propagate_shape(OpKind.AVGPOOL, None, [(1280, 7, 7)]) == (1280,)


def test_binary_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        propagate_shape(OpKind.ADD, None, [(8, 4, 4), (8, 2, 2)])


def test_kernel_larger_than_input():
    with pytest.raises(IncompatibleShapeError):
        propagate_shape(OpKind.CONV2D, ConvParams(3, 3, 7, 1, 0), [(3, 5, 5)])


@pytest.mark.parametrize("build", [toynet, malconv, proxylessnas_cpu])
def test_fixtures_are_valid_and_numbered_in_trace_order(build):
    g = build()
    assert validate_graph(g) == []
    assert trace_node_order(g) == sorted(n.id for n in g.nodes)


def test_fixture_output_shapes():
    assert toynet().output_shape == (10, 30, 30)
    assert malconv().output_shape in {(1,), (1, 1)}
    assert proxylessnas_cpu().output_shape == (1000,)


def test_validate_reports_problems():
    g = ArchGraph((Node(0, OpKind.BATCHNORM), Node(1, OpKind.ADD)), (Edge(0, 1, 0),), (4,))
    codes = {v.code for v in validate_graph(g)}
    assert codes


def test_json_roundtrip_fixture(tmp_path):
    g = toynet()
    path = tmp_path / "g.json"
    g.save(path)
    assert ArchGraph.load(path) == g


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.integers(1, 10))
def test_json_roundtrip_random(seed, n):
    g = random_dag(random.Random(seed), n)
    assert ArchGraph.from_json(g.to_json()) == g


def _relabel(g: ArchGraph, perm: dict[int, int]) -> ArchGraph:
    return ArchGraph(tuple(Node(perm[n.id], n.op, n.params) for n in g.nodes),
                     tuple(Edge(perm[e.src], perm[e.dst], e.slot) for e in g.edges), g.input_shape)


@settings(max_examples=80)
@given(st.integers(0, 10_000), st.integers(1, 9), st.randoms(use_true_random=False))
def test_canonical_form_ignores_node_ids(seed, n, rnd):
    g = random_dag(random.Random(seed), n)
    ids = [x.id for x in g.nodes]
    shuffled = ids[:]
    rnd.shuffle(shuffled)
    h = _relabel(g, dict(zip(ids, shuffled)))
    assert canonical_form(g) == canonical_form(h)
    assert invariant(g) == invariant(h)
    assert isomorphic(g, h)


def test_canonical_form_separates_different_graphs():
    g = toynet().strip_params()
    h = ArchGraph(g.nodes, tuple(Edge(e.src if not (e.dst == 5 and e.slot == 1) else 0, e.dst, e.slot)
                                 for e in g.edges), g.input_shape)
    assert not isomorphic(g, h)


def test_trace_order_of_toynet():
    assert [op.value for op in trace_order(toynet())] == [
        "Conv2d", "BatchNorm", "DepthConv2d", "BatchNorm", "ReLU6", "Add"]


def test_topological_order_respects_edges():
    g = proxylessnas_cpu()
    pos = {v: i for i, v in enumerate(topological_order(g))}
    assert all(pos[e.src] < pos[e.dst] for e in g.edges)


def test_chain_builder():
    g = chain([(OpKind.CONV2D, ConvParams(3, 4, 3, 1, 1)), (OpKind.RELU6, None)], (3, 8, 8))
    assert g.output_shape == (4, 8, 8)
    assert len(g) == 2


def test_gate_and_slice_examples():
    assert propagate_shape(OpKind.SIGMOID, None, [(8, 2_000_000)]) == (8, 2_000_000)
    assert propagate_shape(OpKind.NARROW, NarrowParams(0, 0, 4), [(8, 2_000_000)]) == (4, 2_000_000)


shapes = st.lists(st.integers(1, 9), min_size=1, max_size=4).map(tuple)


@given(shapes, st.data())
def test_transpose_twice_is_identity(shape, data):
    if len(shape) < 2:
        return
    a = data.draw(st.integers(0, len(shape) - 2))
    b = data.draw(st.integers(a + 1, len(shape) - 1))
    p = TransposeParams(a, b)
    assert propagate_shape(OpKind.TRANSPOSE, p, [propagate_shape(OpKind.TRANSPOSE, p, [shape])]) == shape


@given(shapes, st.sampled_from([OpKind.BATCHNORM, OpKind.RELU6, OpKind.SIGMOID, OpKind.ADD, OpKind.MULTIPLY]))
def test_shape_preserving_ops(shape, op):
    assert propagate_shape(op, None, [shape] * op.arity) == shape


def test_every_label_has_one_arity():
    binary = {op for op in OpKind if op.arity == 2}
    assert binary == {OpKind.ADD, OpKind.MULTIPLY}
    assert all(op.arity == 1 for op in OpKind if op not in binary)


def test_malconv_validates_with_scalar_output():
    g = malconv()
    assert g.shapes()[1] == (8, 2_000_000)  # embedded bytes, channels first
    assert validate_graph(g) == [] and validate_graph(g) == []
    assert squeeze_shape(g.output_shape) == (1,)
    assert len(trace_order(g)) == 13


def test_single_node_trace_order():
    g = chain([(OpKind.LINEAR, LinearParams(4, 1))], (4,))
    assert trace_order(g) == [OpKind.LINEAR]


def test_add_with_one_input_is_arity_violation():
    g = ArchGraph((Node(0, OpKind.RELU6), Node(1, OpKind.ADD)), (Edge(0, 1, 0),), (4,))
    assert "arity" in {v.code for v in validate_graph(g)}


def test_unknown_json_fields_rejected():
    data = toynet().to_dict()
    data["weights"] = []
    with pytest.raises(Exception):
        ArchGraph.from_dict(data)
