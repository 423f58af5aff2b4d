"""MalConv end to end, including how noise changes the outcome.

The first part reconstructs from one seeded query.  The second sweeps a
handful of seeds and prints the trace diagnostics for any seed where the
attack does not land on the truth.
"""
import sys

from artifact import CostModel, NoiseModel, condense, reconstruct, simulate
from artifact.fixtures import load_fixture
from artifact.trace import diff_traces

fx = load_fixture("malconv")
trace = condense(simulate(fx.arch, CostModel(), NoiseModel(seed=0), fx.style))
res = reconstruct(trace, fx.space, fx.io)
err = res.score(fx.arch)
print(res.summary(), f"in {res.seconds:.2f} s")
print("best survivor:", f"ged {err.ged}, l1 {err.l1}" if err else "none")

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 20
clean = condense(simulate(fx.arch, CostModel(), NoiseModel.noiseless(), fx.style))
ok = 0
for seed in range(seeds):
    t = condense(simulate(fx.arch, CostModel(), NoiseModel(seed=seed), fx.style))
    r = reconstruct(t, fx.space, fx.io)
    e = r.score(fx.arch)
    if len(r.survivors) == 1 and e.ged == 0:
        ok += 1
    else:
        print(f"seed {seed}: {r.summary()}")
        for line in diff_traces(t, clean):
            print("    ", line)
print(f"{ok}/{seeds} seeds recovered exactly")
