"""Reconstruction error: graph edit distance and parameter distance."""
from __future__ import annotations

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Mapping

from .arch import ArchGraph, GraphError, canonical_order, canonical_orders, order_key, param_values

GED_NODE_LIMIT = 40


class GEDSizeError(ValueError):
    pass


def _edge_set(g: ArchGraph) -> set[tuple[int, int]]:
    return {(e.src, e.dst) for e in g.edges}


def ged_with_mapping(a: ArchGraph, b: ArchGraph, limit: int = GED_NODE_LIMIT) -> tuple[int, dict[int, int | None]]:
    """Exact unit-cost edit distance by A* over node assignments.

    Node insert, delete and relabel, and directed edge insert and delete, each
    cost 1.  Input slots are ignored.
    """
    if len(a) == len(b) and len(a.edges) == len(b.edges):
        try:
            ka, oa = canonical_order(a)
            kb, ob = canonical_order(b)
        except GraphError:
            ka = kb = None
        if ka is not None and ka == kb:
            return 0, dict(zip(oa, ob))
    if max(len(a), len(b)) > limit:
        raise GEDSizeError(f"exact GED is limited to {limit} nodes")

    order = sorted((n.id for n in a.nodes), key=lambda u: -(len(a.inputs(u)) + len(a.consumers(u))))
    bids = [n.id for n in b.nodes]
    ea, eb = _edge_set(a), _edge_set(b)
    la = {n.id: n.op for n in a.nodes}
    lb = {n.id: n.op for n in b.nodes}
    pos = {u: i for i, u in enumerate(order)}

    def heuristic(k: int, used: frozenset) -> int:
        rest_a = Counter(la[u] for u in order[k:])
        rest_b = Counter(lb[v] for v in bids if v not in used)
        common = sum((rest_a & rest_b).values())
        node_lb = max(sum(rest_a.values()), sum(rest_b.values())) - common
        fut_a = sum(1 for s, d in ea if pos[s] >= k or pos[d] >= k)
        fut_b = sum(1 for s, d in eb if s not in used or d not in used)
        return node_lb + abs(fut_a - fut_b)

    def step_cost(k: int, target: int | None, assign: tuple) -> int:
        u = order[k]
        c = 1 if target is None else int(la[u] is not lb[target])
        for j in range(k):
            w = order[j]
            tw = assign[j]
            for (x, y), (tx, ty) in (((u, w), (target, tw)), ((w, u), (tw, target))):
                has_a = (x, y) in ea
                has_b = tx is not None and ty is not None and (tx, ty) in eb
                c += has_a != has_b
        return c

    n = len(order)
    tie = itertools.count()
    # (f, g, tie, depth, assignment, used targets, complete)
    heap = [(heuristic(0, frozenset()), 0, next(tie), 0, (), frozenset(), False)]
    while heap:
        f, g, _, k, assign, used, complete = heapq.heappop(heap)
        if complete:
            return g, dict(zip(order, assign))
        if k == n:
            # insert whatever of b is left, with every edge touching it
            rest = {v for v in bids if v not in used}
            extra = len(rest) + sum(1 for s, d in eb if s in rest or d in rest)
            heapq.heappush(heap, (g + extra, g + extra, next(tie), k, assign, used, True))
            continue
        for target in [v for v in bids if v not in used] + [None]:
            nu = used | {target} if target is not None else used
            ng = g + step_cost(k, target, assign)
            heapq.heappush(heap, (ng + heuristic(k + 1, nu), ng, next(tie), k + 1, assign + (target,), nu, False))
    raise RuntimeError("A* exhausted without reaching a goal")  # pragma: no cover


def ged(a: ArchGraph, b: ArchGraph, limit: int = GED_NODE_LIMIT) -> int:
    return ged_with_mapping(a, b, limit)[0]


def _canonical_orders(g: ArchGraph, key, limit: int = 10_000) -> list[list[int]]:
    out = []
    for order in canonical_orders(g):
        if order_key(g, order) == key:
            out.append(order)
            if len(out) >= limit:
                break
    return out


def _l1_under(a: ArchGraph, b: ArchGraph, mapping: Mapping[int, int | None]) -> int:
    total = 0
    for u, v in mapping.items():
        pa = param_values(a.node(u).params)
        if v is None or a.node(u).op is not b.node(v).op:
            total += sum(abs(x) for x in pa)
            continue
        pb = param_values(b.node(v).params)
        total += sum(abs(x - y) for x, y in zip(pa, pb))
    matched = {v for u, v in mapping.items() if v is not None and a.node(u).op is b.node(v).op}
    total += sum(sum(abs(x) for x in param_values(n.params)) for n in b.nodes if n.id not in matched)
    return total


def l1_params(a: ArchGraph, b: ArchGraph) -> int:
    """Sum of absolute parameter differences over corresponding nodes.

    Nodes correspond through a label-preserving isomorphism when one exists
    (the smallest distance over all of them), otherwise through an optimal
    edit mapping; unmatched nodes count their full parameter magnitude.
    """
    if len(a) == len(b) and len(a.edges) == len(b.edges):
        ka, oa = canonical_order(a.strip_params())
        kb, ob = canonical_order(b.strip_params())
        if ka == kb:
            best = None
            for other in _canonical_orders(b, kb):
                d = _l1_under(a, b, dict(zip(oa, other)))
                best = d if best is None else min(best, d)
                if best == 0:
                    break
            return best
    _, mapping = ged_with_mapping(a, b)
    return _l1_under(a, b, mapping)


@dataclass(frozen=True)
class ErrorReport:
    ged: int
    l1: int
    isomorphic: bool

    def to_dict(self) -> dict:
        return {"ged": self.ged, "l1": self.l1, "isomorphic": self.isomorphic}


def evaluate(reconstructed: ArchGraph, truth: ArchGraph) -> ErrorReport:
    d = ged(reconstructed, truth)
    return ErrorReport(d, l1_params(reconstructed, truth), d == 0)
