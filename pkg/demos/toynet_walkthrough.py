"""ToyNet from raw probe hits to a recovered architecture.

Simulates one noisy inference, condenses the hits into a processed trace,
lists the candidate graphs and shows which one survives parameter
estimation.  Run with ``python demos/toynet_walkthrough.py``.
"""
from artifact import CostModel, NoiseModel, TimingLUT, condense, eliminate, evaluate, populate_graphs, simulate
from artifact.fixtures import load_fixture

fx = load_fixture("toynet")
raw = simulate(fx.arch, CostModel(), NoiseModel(seed=0), fx.style)
print(f"{len(raw)} raw probe hits, first few:")
for ev in raw[:6]:
    print("   ", ev.timestamp, ev.symbol)

trace = condense(raw)
print("\nprocessed trace:")
for entry, span in zip(trace, trace.spans() + [None]):
    print(f"    {entry.op.value:<12} start {entry.timestamp:>9}  span {span}  "
          f"gemm {entry.gemm_conv}/{entry.gemm_oncopy}")

cands = populate_graphs(trace, fx.arch.input_shape)
print(f"\n{len(cands)} candidate graphs; edges of each:")
for i, g in enumerate(cands):
    print(f"    #{i}", [(e.src, e.dst) for e in g.edges])

survivors = eliminate(cands, trace, TimingLUT(), fx.space, fx.io)
print(f"\n{len(survivors)} survivor(s)")
for s in survivors:
    rep = evaluate(s.graph, fx.arch)
    print(f"    candidate #{s.candidate_index}: ged {rep.ged}, l1 {rep.l1}")
    for n in s.graph.nodes:
        print(f"        {n.id} {n.op.value} {n.params}")
