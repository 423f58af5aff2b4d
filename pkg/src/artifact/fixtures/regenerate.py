"""Rebuild the fixture data files: ``python -m artifact.fixtures.regenerate``.

Golden traces come from the simulator with the default cost model and a
fixed noise seed; the observed traces are transcriptions of published
captures and are written verbatim.
"""
from __future__ import annotations

import argparse
import hashlib
import json
from pathlib import Path

from ..sim import CostModel, NoiseModel, simulate
from ..trace import condense, write_processed, write_raw
from . import DATA_DIR, MANIFEST
from .builders import malconv, proxylessnas_cpu, toynet

GOLDEN_SEED = 0

TOYNET_OBSERVED = """\
#meta {"source": "probe capture", "version": 1}
0,Conv2D,52230076,1,2
1,BatchNorm2D,54230076,0,0
2,Conv2D,55600076,10,10
3,BatchNorm2D,59268076,0,0
4,ReLU6,59880076,0,0
5,TensorAdd,60270076,0,0
"""

# the capture reports one GEMM total per entry; it is kept in the oncopy column
MALCONV_OBSERVED = """\
#meta {"gemm_columns": "total in oncopy", "source": "probe capture", "version": 1}
0,Embedding,4,0,0
1,transpose,210610,0,0
2,narrow,210754,0,0
3,Conv1d,941689,0,8371993
4,narrow,9473620,0,0
5,Conv1d,10144145,0,8355807
6,Sigmoid,18655690.5,0,0
7,* (multiply),18775738,0,0
8,MaxPool1d,18835039,0,0
9,transpose,18949264,0,0
10,Linear,18949546,0,96
11,Linear,18949831,0,0
12,Sigmoid,18949905,0,0
"""

FIXTURES = {
    "toynet": dict(build=toynet, space="toynet", style="pytorch", observed=TOYNET_OBSERVED,
                   expected={"entries": 6, "candidates": 10, "survivors": 1, "ged": 0, "l1": 0}),
    "malconv": dict(build=malconv, space="malconv", style="pytorch", observed=MALCONV_OBSERVED,
                    expected={"entries": 13, "candidates": 20, "survivors": 1, "ged": 0, "l1": 0}),
    "proxylessnas-cpu": dict(build=proxylessnas_cpu, space="mnasnet", style="distinct", observed=None,
                             expected={"entries": 178, "candidates": 180_224, "survivors": 1, "ged": 0,
                                       "l1": 0, "block_counts": [1, 38, 19, 5, 17, 10, 0, 15, 8]}),
}


def regenerate(data_dir: Path = DATA_DIR, seed: int = GOLDEN_SEED) -> dict:
    data_dir.mkdir(parents=True, exist_ok=True)
    cost, noise = CostModel(), NoiseModel(seed=seed)
    manifest = {"golden_seed": seed, "cost_model": cost.digest(), "fixtures": {}, "digests": {}}
    for name, spec in FIXTURES.items():
        g = spec["build"]()
        raw = simulate(g, cost, noise, spec["style"])
        files = {"arch": f"{name}.arch.json", "raw": f"{name}.raw", "processed": f"{name}.processed"}
        g.save(data_dir / files["arch"])
        write_raw(raw, data_dir / files["raw"])
        write_processed(condense(raw), data_dir / files["processed"])
        if spec["observed"]:
            files["observed"] = f"{name}_observed.processed"
            (data_dir / files["observed"]).write_text(spec["observed"], encoding="ascii", newline="\n")
        manifest["fixtures"][name] = {"files": files, "space": spec["space"], "style": spec["style"],
                                      "expected": spec["expected"]}
        for fname in files.values():
            manifest["digests"][fname] = hashlib.sha256((data_dir / fname).read_bytes()).hexdigest()
    (data_dir / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    ap.add_argument("--seed", type=int, default=GOLDEN_SEED)
    args = ap.parse_args(argv)
    m = regenerate(args.out, args.seed)
    print(f"wrote {len(m['digests'])} files to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
