import pytest
from hypothesis import given, settings, strategies as st

from artifact.arch import OpKind, trace_order
from artifact.blocks import (Block, CoverageError, count_tilings, enumerate_tilings, min_tiling, mine_blocks,
                             mine_report, rule_violations, segment_trace, window_counts)
from artifact.fixtures.builders import proxylessnas_cpu
from artifact.space import BlockRules, mnasnet_space

from oracles import naive_window_counts, shortest_tiling

C, D, B, R, A = OpKind.CONV2D, OpKind.DEPTHCONV2D, OpKind.BATCHNORM, OpKind.RELU6, OpKind.ADD
labels_st = st.lists(st.sampled_from([C, D, B, R, A]), max_size=200)

EXPECTED_BLOCKS = {
    2: (C, B),
    3: (C, B, R),
    4: (C, B, C, B),
    5: (D, B, R, C, B),
    6: (D, B, R, C, B, A),
    8: (C, B, R, D, B, R, C, B),
    9: (C, B, R, D, B, R, C, B, A),
}


@settings(max_examples=150)
@given(labels_st, st.integers(1, 9))
def test_window_counts_match_naive_counter(labels, w):
    assert dict(window_counts(labels, w)) == naive_window_counts(labels, w)


@pytest.fixture(scope="module")
def nas_report():
    return mine_report(trace_order(proxylessnas_cpu()), mnasnet_space())


def test_mined_shapes_match_reference_cells(nas_report):
    by_window = {b.window: b.ops for b in nas_report.blocks}
    for w, ops in EXPECTED_BLOCKS.items():
        assert by_window[w] == ops
    assert nas_report.counts[7] == 0
    assert by_window[1] == (OpKind.AVGPOOL, OpKind.LINEAR)


def test_mined_blocks_tile_the_trace():
    labels = trace_order(proxylessnas_cpu())
    blocks = mine_blocks(labels, mnasnet_space())
    seg = segment_trace(labels, blocks)
    assert [op for b in seg for op in b.ops] == list(labels)


def test_rules_reject_malformed_cells():
    rules = BlockRules()
    assert rule_violations((C, B, R), rules) == []
    assert "conv_then_bn" in rule_violations((C, R), rules)
    assert "no_mid_merge" in rule_violations((C, B, A, C, B), rules)
    assert "depthwise_tail" in rule_violations((D, B, R, C), rules)


def test_rules_can_be_switched_off():
    loose = mnasnet_space().with_rules(conv_then_bn=False, depthwise_tail=False, no_mid_merge=False)
    strict = mine_report(trace_order(proxylessnas_cpu()), mnasnet_space())
    relaxed = mine_report(trace_order(proxylessnas_cpu()), loose)
    assert relaxed.counts[7] > 0 and strict.counts[7] == 0


def test_uncoverable_trace_reports_gaps():
    with pytest.raises(CoverageError) as exc:
        segment_trace([C, B, R, A, R], [Block((C, B, R))])
    assert exc.value.gaps == [(3, 5)]


def test_greedy_falls_back_to_exact_tiling():
    blocks = [Block((C, B, R)), Block((C, B)), Block((R, C))]
    seg = segment_trace([C, B, R, C], blocks)
    assert [b.ops for b in seg] == [(C, B), (R, C)]


@settings(max_examples=60)
@given(st.lists(st.sampled_from([C, B, R]), min_size=1, max_size=14))
def test_tiling_count_matches_enumeration(labels):
    blocks = [Block((C,)), Block((C, B)), Block((B, R)), Block((B,)), Block((R,)), Block((C, B, R))]
    tilings = list(enumerate_tilings(labels, blocks))
    assert count_tilings(labels, blocks) == len(tilings)
    best = min_tiling(labels, blocks)
    assert len(best) == min(len(t) for t in tilings)


def test_block_validation():
    with pytest.raises(ValueError):
        Block(tuple([C] * 10))
    assert Block.from_dict(Block((C, B), 4, 2).to_dict()) == Block((C, B), 4, 2)


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        mine_blocks([], mnasnet_space())


def test_direct_window_count():
    assert window_counts([C, B, C, B], 2)[(C, B)] == 2


def test_trace_equal_to_one_block():
    cell = EXPECTED_BLOCKS[8]
    assert len(segment_trace(list(cell), [Block(cell), Block((C, B))])) == 1


def test_fixture_tiling_is_shortest_on_prefix():
    labels = trace_order(proxylessnas_cpu())
    blocks = mine_blocks(labels, mnasnet_space())
    # cut the prefix at a block boundary of the greedy tiling near entry 40
    seg, cut = segment_trace(labels, blocks), 0
    for b in seg:
        if cut + len(b.ops) > 40:
            break
        cut += len(b.ops)
    prefix = labels[:cut]
    assert len(segment_trace(prefix, blocks)) == shortest_tiling(prefix, blocks)
    assert len(segment_trace(labels, blocks)) == shortest_tiling(labels, blocks)
