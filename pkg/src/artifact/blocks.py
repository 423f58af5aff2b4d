"""Frequent contiguous-subsequence mining of repeated blocks in a trace."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterator, Sequence

from .arch import OpKind
from .space import BlockRules, SearchSpace
from .trace import ProcessedTrace

MAX_WINDOW = 9


@dataclass(frozen=True)
class Block:
    ops: tuple[OpKind, ...]
    count: int = 1
    window: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(OpKind(o) for o in self.ops))
        if not 1 <= len(self.ops) <= MAX_WINDOW:
            raise ValueError(f"block length must be 1..{MAX_WINDOW}, got {len(self.ops)}")
        if self.count < 1:
            raise ValueError("block count must be >= 1")
        if not self.window:
            object.__setattr__(self, "window", len(self.ops))

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def name(self) -> str:
        return "-".join(o.value for o in self.ops)

    def to_dict(self) -> dict:
        return {"ops": [o.value for o in self.ops], "count": self.count, "window": self.window}

    @classmethod
    def from_dict(cls, data: dict) -> "Block":
        return cls(tuple(OpKind(o) for o in data["ops"]), int(data.get("count", 1)),
                   int(data.get("window", 0)))


class CoverageError(ValueError):
    def __init__(self, gaps: list[tuple[int, int]]):
        spans = ", ".join(f"[{a}, {b})" for a, b in gaps)
        super().__init__(f"blocks do not cover trace entries {spans}")
        self.gaps = gaps


def _labels(trace: ProcessedTrace | Sequence[OpKind]) -> tuple[OpKind, ...]:
    if isinstance(trace, ProcessedTrace):
        return tuple(trace.labels)
    return tuple(OpKind(x) for x in trace)


def window_counts(labels: Sequence[OpKind], window: int) -> Counter:
    """Occurrences of every contiguous subsequence of length ``window``."""
    labels = tuple(labels)
    return Counter(labels[i:i + window] for i in range(len(labels) - window + 1))


def rule_violations(ops: Sequence[OpKind], rules: BlockRules) -> list[str]:
    """Names of the structural block rules that ``ops`` breaks."""
    ops = tuple(ops)
    bad = []
    if rules.conv_then_bn:
        ok = ops[0].is_conv and all(
            i + 1 < len(ops) and ops[i + 1] is OpKind.BATCHNORM
            for i, op in enumerate(ops) if op is OpKind.CONV2D)
        if not ok:
            bad.append("conv_then_bn")
    if rules.depthwise_tail and OpKind.DEPTHCONV2D in ops:
        last = max(i for i, op in enumerate(ops) if op is OpKind.DEPTHCONV2D)
        tail = ops[last + 1:]
        if tail and tail[-1].is_binary:
            tail = tail[:-1]
        if tail != (OpKind.BATCHNORM, OpKind.RELU6, OpKind.CONV2D, OpKind.BATCHNORM):
            bad.append("depthwise_tail")
    if rules.no_mid_merge and any(op.is_binary for op in ops[:-1]):
        bad.append("no_mid_merge")
    return bad


@dataclass
class MiningReport:
    blocks: list[Block]
    counts: dict[int, int]            # window -> count of the chosen block (0 if none)
    candidates: dict[int, int]        # window -> distinct subsequences seen

    def table(self) -> str:
        lines = ["window  count  block"]
        for w in range(1, MAX_WINDOW + 1):
            chosen = [b for b in self.blocks if b.window == w]
            names = ", ".join(b.name for b in chosen) if chosen else "-"
            lines.append(f"{w:>6}  {self.counts.get(w, 0):>5}  {names}")
        return "\n".join(lines)


def mine_report(trace: ProcessedTrace | Sequence[OpKind], space: SearchSpace) -> MiningReport:
    labels = _labels(trace)
    rules = space.block_rules
    blocks: list[Block] = []
    counts: dict[int, int] = {}
    seen: dict[int, int] = {}
    for w in range(2, space.max_block + 1):
        c = window_counts(labels, w)
        seen[w] = len(c)
        valid = [(seq, n) for seq, n in c.items()
                 if set(seq) <= space.allowed_ops and not rule_violations(seq, rules)]
        if not valid:
            counts[w] = 0
            continue
        if rules.most_frequent:
            valid = [min(valid, key=lambda sn: (-sn[1], [o.value for o in sn[0]]))]
        else:
            valid.sort(key=lambda sn: (-sn[1], [o.value for o in sn[0]]))
        for seq, n in valid:
            blocks.append(Block(seq, n, w))
        counts[w] = valid[0][1]
    # terminal ops that no repeated block uses, taken as one trailing unit
    used = {op for b in blocks for op in b.ops}
    k = len(labels)
    while k > 0 and labels[k - 1] not in used:
        k -= 1
    tail = labels[k:]
    if tail and len(tail) <= MAX_WINDOW:
        blocks.insert(0, Block(tail, 1, 1))
        counts[1] = 1
    else:
        counts[1] = 0
    seen[1] = len(window_counts(labels, 1))
    return MiningReport(blocks, dict(sorted(counts.items())), dict(sorted(seen.items())))


def mine_blocks(trace: ProcessedTrace | Sequence[OpKind], space: SearchSpace) -> list[Block]:
    """At most one block per window size plus the terminal unit.

    The terminal unit is the longest trace suffix made of ops that none of
    the repeated blocks contains (the classifier head); it is reported under
    window 1.
    """
    if len(_labels(trace)) == 0:
        raise ValueError("trace is empty")
    return mine_report(trace, space).blocks


def _matches(labels: Sequence[OpKind], i: int, ops: Sequence[OpKind]) -> bool:
    return tuple(labels[i:i + len(ops)]) == tuple(ops)


def _gaps(labels: Sequence[OpKind], blocks: Sequence[Block]) -> list[tuple[int, int]]:
    covered = [False] * len(labels)
    for b in blocks:
        for i in range(len(labels) - len(b) + 1):
            if _matches(labels, i, b.ops):
                for k in range(i, i + len(b)):
                    covered[k] = True
    gaps, start = [], None
    for i, c in enumerate(covered + [True]):
        if not c and start is None:
            start = i
        elif c and start is not None:
            gaps.append((start, i))
            start = None
    return gaps


def segment_trace(trace: ProcessedTrace | Sequence[OpKind], blocks: Sequence[Block]) -> list[Block]:
    """Greedy longest-block-first tiling of the trace.

    When the greedy choice strands a suffix the minimal-length tiling is used
    instead; if no tiling exists the uncovered spans are reported.
    """
    labels = _labels(trace)
    vocab = sorted(blocks, key=lambda b: (-len(b), b.name))
    out: list[Block] = []
    i = 0
    while i < len(labels):
        hit = next((b for b in vocab if _matches(labels, i, b.ops)), None)
        if hit is None:
            break
        out.append(hit)
        i += len(hit)
    if i == len(labels):
        return out
    best = min_tiling(labels, blocks)
    if best is None:
        raise CoverageError(_gaps(labels, blocks) or [(i, len(labels))])
    return best


def min_tiling(labels: Sequence[OpKind], blocks: Sequence[Block]) -> list[Block] | None:
    """A tiling with the fewest blocks (ties broken toward longer blocks first)."""
    labels = tuple(labels)
    n = len(labels)
    vocab = sorted(blocks, key=lambda b: (-len(b), b.name))
    inf = n + 1
    best: list[tuple[int, Block | None]] = [(inf, None)] * n + [(0, None)]
    for i in range(n - 1, -1, -1):
        for b in vocab:
            j = i + len(b)
            if j <= n and best[j][0] < inf and _matches(labels, i, b.ops) and best[j][0] + 1 < best[i][0]:
                best[i] = (best[j][0] + 1, b)
    if best[0][0] >= inf:
        return None
    out, i = [], 0
    while i < n:
        b = best[i][1]
        out.append(b)
        i += len(b)
    return out


def count_tilings(labels: Sequence[OpKind], blocks: Sequence[Block]) -> int:
    labels = tuple(labels)
    vocab = {b.ops for b in blocks}
    n = len(labels)
    ways = [0] * n + [1]
    for i in range(n - 1, -1, -1):
        ways[i] = sum(ways[i + len(b)] for b in vocab if _matches(labels, i, b))
    return ways[0]


def enumerate_tilings(labels: Sequence[OpKind], blocks: Sequence[Block]) -> Iterator[list[Block]]:
    labels = tuple(labels)
    vocab = sorted(blocks, key=lambda b: (-len(b), b.name))

    def rec(i: int, acc: list[Block]) -> Iterator[list[Block]]:
        if i == len(labels):
            yield list(acc)
            return
        for b in vocab:
            if _matches(labels, i, b.ops):
                acc.append(b)
                yield from rec(i + len(b), acc)
                acc.pop()

    yield from rec(0, [])
