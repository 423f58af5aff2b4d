import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from artifact.arch import OpKind, canonical_form, trace_order
from artifact.blocks import Block
from artifact.fixtures.builders import malconv, toynet
from artifact.generate import (CandidateExplosionError, EmptyTraceError, block_graph, count_candidates,
                               populate_graphs, populate_graphs_any_order, populate_graphs_blocks,
                               read_candidates, tiling_candidates, write_candidates)

from oracles import brute_candidates, random_dag

C, B, R, A, M = OpKind.CONV2D, OpKind.BATCHNORM, OpKind.RELU6, OpKind.ADD, OpKind.MULTIPLY


def test_toynet_trace_gives_ten_candidates():
    assert len(populate_graphs(trace_order(toynet()))) == 10


def test_toynet_truth_is_a_candidate():
    g = toynet()
    assert populate_graphs(trace_order(g)).index_of(g) is not None


def test_malconv_count_matches_brute_force():
    labels = trace_order(malconv())
    assert len(populate_graphs(labels)) == len(brute_candidates(labels))


@pytest.mark.parametrize("length", range(1, 8))
def test_all_short_traces_match_brute_force(length):
    for labels in itertools.product([C, R, A], repeat=length):
        assert len(populate_graphs(labels)) == len(brute_candidates(labels)), labels


def test_random_traces_up_to_twelve_match_brute_force():
    rng = random.Random(12)
    checked = 0
    while checked < 120:
        n = rng.randint(8, 12)
        labels = [C] + [rng.choice([C, B, R]) for _ in range(n - 1)]
        for i in rng.sample(range(2, n), rng.randint(1, min(3, n - 2))):
            labels[i] = rng.choice([A, M])
        if count_candidates(labels) > 3000:
            continue  # keeps the exhaustive side affordable
        assert len(populate_graphs(labels)) == len(brute_candidates(labels)), labels
        checked += 1


@settings(max_examples=80)
@given(st.integers(0, 100_000), st.integers(1, 10))
def test_every_candidate_replays_the_trace(seed, n):
    g = random_dag(random.Random(seed), n)
    labels = trace_order(g)
    cands = populate_graphs(labels)
    assert all(trace_order(c) == labels for c in cands)
    assert cands.index_of(g) is not None


@settings(max_examples=40)
@given(st.integers(0, 100_000), st.integers(1, 9))
def test_candidates_are_pairwise_distinct(seed, n):
    cands = populate_graphs(trace_order(random_dag(random.Random(seed), n)))
    keys = [canonical_form(c) for c in cands]
    assert len(set(keys)) == len(keys)


@settings(max_examples=40)
@given(st.integers(0, 100_000), st.integers(1, 7))
def test_any_order_candidates_cover_in_order_ones(seed, n):
    labels = trace_order(random_dag(random.Random(seed), n))
    ordered = {canonical_form(c) for c in populate_graphs(labels)}
    free = {canonical_form(c) for c in populate_graphs_any_order(labels)}
    assert ordered <= free


def test_empty_trace_rejected():
    with pytest.raises(EmptyTraceError):
        populate_graphs([])


def test_trace_starting_with_join_has_no_candidates():
    assert len(populate_graphs([A, C])) == 0


def test_cap_raises_before_enumerating():
    labels = [C] + [R, A] * 12
    with pytest.raises(CandidateExplosionError) as exc:
        populate_graphs(labels, cap=100)
    assert exc.value.count > 100


def test_candidate_directory_roundtrip(tmp_path):
    cands = populate_graphs(trace_order(toynet()))
    manifest = write_candidates(cands, tmp_path / "c")
    assert json.loads(manifest.read_text())["count"] == 10
    back = read_candidates(tmp_path / "c")
    assert back.candidates == cands.candidates


def test_candidate_directory_tamper_detected(tmp_path):
    cands = populate_graphs(trace_order(toynet()))
    write_candidates(cands, tmp_path / "c")
    first = sorted((tmp_path / "c").glob("cand_*.json"))[0]
    first.write_text(first.read_text().replace("BatchNorm", "ReLU6", 1))
    with pytest.raises(ValueError):
        read_candidates(tmp_path / "c")


def test_block_graph_links_blocks_in_sequence():
    g = block_graph([[C, B, R], [C, B, A]])
    assert trace_order(g) == [C, B, R, C, B, A]
    assert {(e.src, e.dst) for e in g.edges if e.dst == 5} == {(4, 5), (2, 5)}


def test_single_block_sequence_has_one_candidate():
    assert len(populate_graphs_blocks([[C, B, R], [C, B, R]])) == 1


def test_tiling_candidates_subset_of_op_level():
    labels = [C, B, R, C, B, A, C, B, R, C, B, A]
    blocks = [Block((C, B, R)), Block((C, B, A)), Block((C, B))]
    tiled = {canonical_form(c) for c in tiling_candidates(labels, blocks)}
    assert tiled
    assert tiled <= {canonical_form(c) for c in populate_graphs(labels)}
