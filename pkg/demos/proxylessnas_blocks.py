"""Block mining and block-level reconstruction for ProxylessNAS-CPU.

Op-level enumeration is hopeless on a trace this long, so the trace is cut
into recurring blocks first.  The full reconstruction takes under a minute.
"""
from artifact import reconstruct
from artifact.blocks import mine_report, segment_trace
from artifact.fixtures import load_fixture

fx = load_fixture("proxylessnas-cpu")
trace = fx.processed
print(f"{len(trace)} processed entries")

rep = mine_report(trace, fx.space)
print(rep.table())

seq = segment_trace(trace, rep.blocks)
print(f"\nshortest tiling uses {len(seq)} blocks, by width:")
print("   ", " ".join(str(b.window) for b in seq))

res = reconstruct(trace, fx.space, fx.io, level="block", blocks=rep.blocks)
err = res.score(fx.arch)
print("\n" + res.summary(), f"in {res.seconds:.1f} s")
if err:
    print(f"best survivor: ged {err.ged}, l1 {err.l1}")
