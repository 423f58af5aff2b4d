"""What each defense does to the ToyNet attack.

Prints one report per defense: candidate counts, survivors and the error
of the best survivor, with per-query detail for multi-query attacks.
"""
from artifact import DefenseConfig, DefenseKind, NoiseModel, evaluate_defense
from artifact.defenses import default_decoy
from artifact.fixtures import load_fixture

fx = load_fixture("toynet")
configs = [
    (DefenseConfig(), 1),
    (DefenseConfig(DefenseKind.PAD_OPERANDS, 0.2, seed=1), 25),
    (DefenseConfig(DefenseKind.NULL_OPS, 2, seed=1), 1),
    (DefenseConfig(DefenseKind.SHUFFLE_ORDER, seed=1), 1),
    (DefenseConfig(DefenseKind.DECOY_PARALLEL, decoy=default_decoy(), seed=1), 5),
]
for d, queries in configs:
    rep = evaluate_defense(fx.arch, d, fx.space, noise=NoiseModel(seed=3), queries=queries)
    text = rep.table().splitlines()
    # the padding run has 25 query lines; the summary is enough
    print("\n".join(text[:3] if queries > 5 else text))
    print()
