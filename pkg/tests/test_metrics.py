import random

import pytest
from hypothesis import given, settings, strategies as st

from artifact.arch import ArchGraph, ConvParams, OpKind, canonical_form
from artifact.fixtures import fixture_names, load_fixture
from artifact.fixtures.builders import malconv, toynet
from artifact.metrics import GEDSizeError, evaluate, ged, ged_with_mapping, l1_params

from oracles import exhaustive_ged, nx_ged, random_dag

LABELS = (OpKind.CONV2D, OpKind.BATCHNORM, OpKind.RELU6)


def pair(seed, na, nb):
    rng = random.Random(seed)
    return random_dag(rng, na, LABELS), random_dag(rng, nb, LABELS)


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.integers(1, 6), st.integers(1, 6))
def test_ged_matches_exhaustive_search(seed, na, nb):
    a, b = pair(seed, na, nb)
    assert ged(a, b) == exhaustive_ged(a, b)


@pytest.mark.parametrize("seed", range(4))
def test_ged_matches_exhaustive_search_seven_nodes(seed):
    a, b = pair(seed, 7, 7)
    assert ged(a, b) == exhaustive_ged(a, b)


@settings(max_examples=25)
@given(st.integers(0, 100_000), st.integers(1, 5), st.integers(1, 5))
def test_ged_matches_networkx(seed, na, nb):
    a, b = pair(seed, na, nb)
    assert ged(a, b) == nx_ged(a, b)


def test_ged_symmetric_on_100_pairs():
    rng = random.Random(5)
    for _ in range(100):
        a = random_dag(rng, rng.randint(1, 8), LABELS)
        b = random_dag(rng, rng.randint(1, 8), LABELS)
        assert ged(a, b) == ged(b, a)


@settings(max_examples=40)
@given(st.integers(0, 100_000), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_ged_triangle_inequality(seed, na, nb, nc):
    rng = random.Random(seed)
    a, b, c = (random_dag(rng, n, LABELS) for n in (na, nb, nc))
    assert ged(a, c) <= ged(a, b) + ged(b, c)


@pytest.mark.parametrize("name", fixture_names())
def test_fixture_against_itself_is_zero(name):
    g = load_fixture(name).arch
    rep = evaluate(g, g)
    assert (rep.ged, rep.l1, rep.isomorphic) == (0, 0, True)


def test_l1_counts_parameter_differences():
    g = toynet()
    p = g.node(0).params
    h = g.with_params({0: ConvParams(p.in_ch, p.out_ch + 2, p.kernel, p.stride, p.padding)})
    assert l1_params(g, h) == 2
    assert ged(g, h) == 0


def test_l1_of_unrelated_graphs_counts_unmatched_nodes():
    assert l1_params(toynet(), malconv()) > 0


def test_mapping_is_returned_for_identical_graphs():
    g = toynet()
    d, mapping = ged_with_mapping(g, g)
    assert d == 0 and sorted(mapping) == [n.id for n in g.nodes]


def test_large_graphs_refused():
    a, b = pair(1, 12, 13)
    with pytest.raises(GEDSizeError):
        ged(a, b, limit=10)


def test_dropping_the_skip_costs_one_edit():
    g = toynet()
    skip = [e for e in g.edges if e.dst == 5 and e.src != 4]
    h = ArchGraph(g.nodes, tuple(e for e in g.edges if e not in skip), g.input_shape)
    assert ged(g, h) == exhaustive_ged(g, h) == 1


def test_kernel_three_versus_five():
    g = toynet()
    p = g.node(0).params
    h = g.with_params({0: ConvParams(p.in_ch, p.out_ch, 5, p.stride, p.padding)})
    assert l1_params(g, h) == 2


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.integers(1, 7), st.integers(1, 7))
def test_zero_distance_iff_same_canonical_form(seed, na, nb):
    a, b = pair(seed, na, nb)
    assert (ged(a, b) == 0) == (canonical_form(a) == canonical_form(b))
