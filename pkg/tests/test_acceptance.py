"""End-to-end acceptance checks, one per criterion.

Each check prints a single ``criterion N: PASS|FAIL  detail`` line.  Run the
file directly (``python tests/test_acceptance.py``) to get just those lines,
or through pytest, where every check is also an ordinary test.
"""
import itertools
import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from artifact.arch import OpKind, trace_order
from artifact.blocks import mine_report, window_counts
from artifact.defenses import (DefenseConfig, DefenseKind, apply_defense, consensus_events, default_decoy,
                               evaluate_defense, median_trace)
from artifact.estimate import (IOSpec, NoHypothesisError, TimingLUT, depthwise_channel_hypotheses, eliminate_report,
                               estimate_params)
from artifact.fixtures import fixture_names, load_fixture
from artifact.generate import populate_graphs
from artifact.metrics import evaluate, ged
from artifact.pipeline import reconstruct
from artifact.sim import CostModel, NoiseModel, simulate
from artifact.space import generic_space
from artifact.trace import ProcessedEntry, condense, diff_traces

from oracles import brute_candidates, exhaustive_ged, naive_window_counts, parameterize, random_dag

REFERENCE_CELLS = {
    1: ("AvgPool", "Linear"),
    2: ("Conv2d", "BatchNorm"),
    3: ("Conv2d", "BatchNorm", "ReLU6"),
    4: ("Conv2d", "BatchNorm", "Conv2d", "BatchNorm"),
    5: ("DepthConv2d", "BatchNorm", "ReLU6", "Conv2d", "BatchNorm"),
    6: ("DepthConv2d", "BatchNorm", "ReLU6", "Conv2d", "BatchNorm", "Add"),
    8: ("Conv2d", "BatchNorm", "ReLU6", "DepthConv2d", "BatchNorm", "ReLU6", "Conv2d", "BatchNorm"),
    9: ("Conv2d", "BatchNorm", "ReLU6", "DepthConv2d", "BatchNorm", "ReLU6", "Conv2d", "BatchNorm", "Add"),
}


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return ok


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ----------------------------------------------------------------- checks


def check_1() -> bool:
    fx = load_fixture("toynet")
    cands, secs = _timed(lambda: populate_graphs(fx.processed))
    return report(1, len(cands) == 10 and secs < 1, f"{len(cands)} candidates (want 10) in {secs:.3f}s (limit 1s)")


def check_2() -> bool:
    fx = load_fixture("malconv")

    def run():
        trace = condense(simulate(fx.arch, CostModel(), NoiseModel(seed=0), fx.style))
        return reconstruct(trace, fx.space, fx.io)

    res, secs = _timed(run)
    err = res.score(fx.arch)
    ok = (len(res.candidates) == 20 and len(res.survivors) == 1 and err is not None
          and (err.ged, err.l1) == (0, 0) and secs < 60)
    detail = (f"{len(res.candidates)} candidates (want 20), {len(res.survivors)} survivors (want 1), "
              f"ged {err.ged if err else None}, l1 {err.l1 if err else None}, {secs:.1f}s (limit 60s)")
    return report(2, ok, detail)


def check_3() -> bool:
    fx = load_fixture("proxylessnas-cpu")
    t0 = time.perf_counter()
    mined = mine_report(fx.processed, fx.space)
    shapes = {b.window: tuple(op.value for op in b.ops) for b in mined.blocks}
    shapes_ok = shapes == REFERENCE_CELLS and mined.counts[7] == 0
    res = reconstruct(fx.processed, fx.space, fx.io, level="block", blocks=mined.blocks, cap=10**6)
    secs = time.perf_counter() - t0
    err = res.score(fx.arch)
    counts = [mined.counts[w] for w in range(1, 10)]
    want = fx.expected["block_counts"]
    diff = ", ".join(f"w{w}: {c} vs {t}" for w, (c, t) in enumerate(zip(counts, want), 1) if c != t)
    ok = (shapes_ok and len(res.candidates) == 180_224 and len(res.survivors) == 1 and err is not None
          and (err.ged, err.l1) == (0, 0) and secs < 7200)
    detail = (f"block shapes {'match' if shapes_ok else 'differ'}, {len(res.candidates)} candidates "
              f"(want 180224), {len(res.survivors)} survivors, ged {err.ged if err else None}, "
              f"l1 {err.l1 if err else None}, {secs:.0f}s; occurrence counts "
              + (f"differ ({diff})" if diff else "match"))
    return report(3, ok, detail)


def check_4() -> bool:
    hyps = set(depthwise_channel_hypotheses(143))
    entry = ProcessedEntry(0, OpKind.DEPTHCONV2D, 0, 143, 0)
    fitted = set()
    for c in (142, 143, 144):
        try:
            found = estimate_params(entry, (c, 28, 28), TimingLUT(), load_fixture("proxylessnas-cpu").space,
                                    float("inf"))
        except NoHypothesisError:
            continue
        fitted |= {h.params.in_ch for h in found}
    ok = hyps == {142, 144} and fitted == {142, 144}
    return report(4, ok, f"hypotheses {sorted(hyps)}, channels fitted through estimation {sorted(fitted)}")


def check_5(graphs: int = 1000) -> bool:
    rng = random.Random(0)
    cost, lut, space = CostModel(), TimingLUT(), generic_space([8])
    missing, eliminated, joins = 0, 0, 0
    for _ in range(graphs):
        g = parameterize(random_dag(rng, rng.randint(2, 12)), rng)
        joins = max(joins, sum(1 for n in g.nodes if n.op.arity == 2))
        trace = condense(simulate(g, cost, NoiseModel.noiseless()))
        cands = populate_graphs(trace, g.input_shape)
        i = cands.index_of(g)
        if i is None:
            missing += 1
            continue
        rep = eliminate_report([cands[i]], trace, lut, space, IOSpec(g.input_shape, g.output_shape))
        if not rep.survivors or evaluate(rep.survivors[0].graph, g).ged != 0:
            eliminated += 1
    ok = missing == 0 and eliminated == 0
    return report(5, ok, f"{graphs} random graphs (<=12 nodes, <={joins} joins): "
                         f"{missing} missing from candidates, {eliminated} eliminated")


def _arity_patterns(max_len: int = 12, max_joins: int = 3):
    c, a = OpKind.CONV2D, OpKind.ADD
    for n in range(1, max_len + 1):
        for k in range(max_joins + 1):
            for pos in itertools.combinations(range(2, n), k):
                yield [a if i in pos else c for i in range(n)]


def check_6() -> bool:
    mismatches, traces = 0, 0
    # every join pattern up to twelve symbols with a single unary label, the
    # hardest case for duplicate removal
    for labels in _arity_patterns():
        traces += 1
        mismatches += len(populate_graphs(labels, cap=10**6)) != len(brute_candidates(labels))
    # every mixed-label trace up to seven symbols
    for n in range(1, 8):
        for labels in itertools.product([OpKind.CONV2D, OpKind.RELU6, OpKind.ADD], repeat=n):
            traces += 1
            mismatches += len(populate_graphs(labels)) != len(brute_candidates(labels))
    rng = random.Random(6)
    fsm_mismatch = 0
    ops = [OpKind.CONV2D, OpKind.DEPTHCONV2D, OpKind.BATCHNORM, OpKind.RELU6, OpKind.ADD]
    for _ in range(500):
        labels = [rng.choice(ops) for _ in range(rng.randint(0, 200))]
        w = rng.randint(1, 9)
        fsm_mismatch += dict(window_counts(labels, w)) != naive_window_counts(labels, w)
    ok = mismatches == 0 and fsm_mismatch == 0
    return report(6, ok, f"{mismatches} count mismatches over {traces} traces; "
                         f"{fsm_mismatch} window-count mismatches over 500 random traces")


def _noise_sweep(name: str, seeds: int) -> tuple[int, list[str]]:
    fx = load_fixture(name)
    clean = condense(simulate(fx.arch, CostModel(), NoiseModel.noiseless(), fx.style))
    good, notes = 0, []
    for seed in range(seeds):
        trace = condense(simulate(fx.arch, CostModel(), NoiseModel(seed=seed), fx.style))
        res = reconstruct(trace, fx.space, fx.io)
        err = res.score(fx.arch)
        if len(res.survivors) == 1 and err.ged == 0:
            good += 1
        else:
            notes.append(f"{name} seed {seed}: " + "; ".join(diff_traces(trace, clean)[:2]))
    return good, notes


def check_7(seeds: int = 60) -> bool:
    parts, ok = [], True
    unexplained = []
    for name in ("toynet", "malconv"):
        good, notes = _noise_sweep(name, seeds)
        parts.append(f"{name} {good}/{seeds}")
        ok &= good >= 0.95 * seeds
        unexplained += [n for n in notes if "GEMM" not in n]
        for n in notes:
            sys.__stdout__.write(f"    {n}\n")
    ok &= not unexplained
    return report(7, ok, ", ".join(parts) + f" seeds succeed (need 95%); "
                         f"{len(unexplained)} failures not explained by GEMM mis-attribution")


def check_8() -> bool:
    g = load_fixture("toynet").arch
    space = load_fixture("toynet").space
    ref = condense(simulate(g, CostModel(), NoiseModel.noiseless()))
    worst = 0.0
    for seed in range(5):
        qs = apply_defense(g, DefenseConfig(DefenseKind.PAD_OPERANDS, 0.2, seed=seed),
                           noise=NoiseModel(seed=100 * seed), queries=25)
        agg = median_trace([condense(q.events) for q in qs])
        if agg.labels != ref.labels:
            worst = float("inf")
            continue
        for got, want in zip(agg.spans()[:-1], ref.spans()[:-1]):
            worst = max(worst, abs(got - want) / want)
    pad_ok = worst <= 0.05

    base = evaluate_defense(g, DefenseConfig(), space, noise=NoiseModel(seed=0)).survivor_count
    shuffled = evaluate_defense(g, DefenseConfig(DefenseKind.SHUFFLE_ORDER, seed=0), space,
                                noise=NoiseModel(seed=0)).survivor_count
    shuffle_ok = shuffled > base

    decoy_hits = 0
    for seed in range(10):
        qs = apply_defense(g, DefenseConfig(DefenseKind.DECOY_PARALLEL, decoy=default_decoy(), seed=seed),
                           noise=NoiseModel(seed=seed), queries=5)
        decoy_hits += condense(consensus_events([q.events for q in qs])).labels == ref.labels
    decoy_ok = decoy_hits == 10
    detail = (f"pad worst span error {worst:.3f} (limit 0.05) {'ok' if pad_ok else 'FAILED'}; "
              f"shuffle survivors {shuffled} vs undefended {base} {'ok' if shuffle_ok else 'FAILED'}; "
              f"decoy alignment {decoy_hits}/10 {'ok' if decoy_ok else 'FAILED'}")
    return report(8, pad_ok and shuffle_ok and decoy_ok, detail)


def check_9() -> bool:
    zero = all((lambda r: (r.ged, r.l1) == (0, 0))(evaluate(load_fixture(n).arch, load_fixture(n).arch))
               for n in fixture_names())
    rng = random.Random(9)
    labels = (OpKind.CONV2D, OpKind.BATCHNORM, OpKind.RELU6)
    asym = 0
    for _ in range(100):
        a = random_dag(rng, rng.randint(1, 10), labels)
        b = random_dag(rng, rng.randint(1, 10), labels)
        asym += ged(a, b) != ged(b, a)
    disagree, pairs = 0, 0
    for _ in range(150):
        a = random_dag(rng, rng.randint(1, 7), labels)
        b = random_dag(rng, rng.randint(1, 7), labels)
        pairs += 1
        disagree += ged(a, b) != exhaustive_ged(a, b)
    ok = zero and asym == 0 and disagree == 0
    return report(9, ok, f"self-distance zero on fixtures: {zero}; {asym}/100 asymmetric pairs; "
                         f"{disagree}/{pairs} disagreements with exhaustive search")


CHECKS = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9]


@pytest.mark.parametrize("check", CHECKS[:4], ids=lambda f: f.__name__)
def test_quick_criteria(check):
    assert check()


@pytest.mark.slow
@pytest.mark.parametrize("check", CHECKS[4:], ids=lambda f: f.__name__)
def test_slow_criteria(check):
    assert check()


if __name__ == "__main__":
    results = [check() for check in CHECKS]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
