"""Generation followed by elimination, at op or block level."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

from .arch import ArchGraph
from .blocks import Block, mine_blocks
from .estimate import DEFAULT_BEAM, DEFAULT_TOLERANCE, EliminationReport, IOSpec, TimingLUT, eliminate_report
from .generate import DEFAULT_CAP, CandidateSet, populate_graphs, tiling_candidates
from .metrics import ErrorReport, evaluate
from .space import SearchSpace
from .trace import ProcessedTrace


@dataclass
class PipelineResult:
    candidates: CandidateSet
    elimination: EliminationReport
    blocks: list[Block] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def survivors(self) -> list[ArchGraph]:
        return [r.graph for r in self.elimination.survivors]

    def summary(self) -> str:
        return f"{len(self.candidates)} candidates, {len(self.survivors)} compatible"

    def score(self, truth: ArchGraph) -> ErrorReport | None:
        """Error of the best survivor against ``truth``."""
        reports = [evaluate(g, truth) for g in self.survivors]
        return min(reports, key=lambda r: (r.ged, r.l1), default=None)

    def to_dict(self) -> dict:
        return {"candidates": len(self.candidates), "raw_count": self.candidates.raw_count,
                "survivors": len(self.survivors),
                "survivor_indices": [r.candidate_index for r in self.elimination.survivors],
                "rejected": dict(self.elimination.rejected),
                "blocks": [b.to_dict() for b in self.blocks], "seconds": round(self.seconds, 3)}


def reconstruct(trace: ProcessedTrace, space: SearchSpace, io: IOSpec, *, level: str = "op",
                blocks: Sequence[Block] | None = None, lut: TimingLUT | None = None,
                tolerance: float = DEFAULT_TOLERANCE, cap: int = DEFAULT_CAP, beam: int = DEFAULT_BEAM,
                jobs: int = 1) -> PipelineResult:
    """Candidates for ``trace`` and the ones that survive parameter estimation.

    ``level="block"`` tiles the trace with ``blocks`` (mined from the trace
    itself when not given) instead of enumerating op-level connections.
    """
    t0 = time.perf_counter()
    lut = lut or TimingLUT()
    used: list[Block] = []
    if level == "block":
        used = list(blocks) if blocks is not None else mine_blocks(trace, space)
        cands = tiling_candidates(trace, used, io.input_shape, cap)
    elif level == "op":
        cands = populate_graphs(trace, io.input_shape, cap)
    else:
        raise ValueError(f"level must be 'op' or 'block', got {level!r}")
    rep = eliminate_report(cands, trace, lut, space, io, tolerance, beam, jobs)
    return PipelineResult(cands, rep, used, time.perf_counter() - t0)
