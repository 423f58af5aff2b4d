import pytest

from artifact.blocks import mine_blocks
from artifact.fixtures import load_fixture
from artifact.pipeline import reconstruct
from artifact.trace import ProcessedTrace


@pytest.mark.parametrize("name", ["toynet", "malconv"])
def test_op_level_pipeline_recovers_truth(name):
    fx = load_fixture(name)
    res = reconstruct(fx.processed, fx.space, fx.io)
    assert len(res.survivors) == fx.expected["survivors"]
    err = res.score(fx.arch)
    assert (err.ged, err.l1) == (0, 0)


def test_summary_and_dict():
    fx = load_fixture("toynet")
    res = reconstruct(fx.processed, fx.space, fx.io)
    assert res.summary() == "10 candidates, 1 compatible"
    data = res.to_dict()
    assert data["candidates"] == 10 and data["survivors"] == 1


def test_block_level_uses_mined_blocks():
    fx = load_fixture("proxylessnas-cpu")
    blocks = mine_blocks(fx.processed, fx.space)
    res = reconstruct(fx.processed, fx.space, fx.io, level="block", blocks=blocks, cap=20_000)
    assert res.blocks == blocks
    assert len(res.candidates) > 1


def test_unknown_level():
    fx = load_fixture("toynet")
    with pytest.raises(ValueError):
        reconstruct(fx.processed, fx.space, fx.io, level="layer")


def test_score_without_survivors_is_none():
    fx = load_fixture("toynet")
    res = reconstruct(fx.processed, load_fixture("malconv").space, fx.io)
    assert res.survivors == [] and res.score(fx.arch) is None
