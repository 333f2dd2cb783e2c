"""
Admissibility Effect Run

Compares drivable-area compliance of models trained with and without the
prior term. For each seed a 200-scene training set and a separate 52-scene
evaluation set are generated; the same model is trained with alpha = 0.5
and alpha = 0 and evaluated with k = 12 samples per agent.

The prior term is expected to help: mean DAC with alpha = 0.5 should be at
least the alpha = 0 value for a majority of seeds.

Run from the repository root:
    python -m reference_scripts.admissibility_effect
"""

from pathlib import Path
from typing import Final, List, Tuple

import pandas as pd

from trajformer.metrics import DEFAULT_EVAL_K, METRIC_FIELDS
from trajformer.synth import SynthConfig, synth_scenes
from trajformer.trainer import TrainConfig, evaluate, train
from trajformer.utils.console import print_error, print_info, print_success

OUTPUT_DIR: Final[Path] = Path("runs/admissibility_effect")
SEEDS: Final[Tuple[int, ...]] = (0, 1, 2)
ALPHAS: Final[Tuple[float, ...]] = (0.5, 0.0)
EVAL_SEED_OFFSET: Final[int] = 1000

TRAIN_SET: Final[SynthConfig] = SynthConfig(per_class=50)
EVAL_SET: Final[SynthConfig] = SynthConfig(
    per_class=12, class_counts={"straight": 13, "left-turn": 13})

BASE_CONFIG: Final[TrainConfig] = TrainConfig(
    batch_size=16,
    total_steps=600,
    warmup_steps=60,
    peak_lr=1e-3,
    model_config="tf12-ref",
    log_every=100
)


def run_seed(seed: int) -> List[dict]:
    """Train and evaluate both alpha settings for one seed."""
    train_scenes = synth_scenes(TRAIN_SET, seed)
    eval_scenes = synth_scenes(EVAL_SET, seed + EVAL_SEED_OFFSET)
    rows = []
    for alpha in ALPHAS:
        cfg = BASE_CONFIG._replace(alpha=alpha, seed=seed)
        print_info(f"seed {seed}: training with alpha = {alpha}")
        checkpoint = train(train_scenes, cfg,
                           out_dir=OUTPUT_DIR / f"seed{seed}_alpha{alpha}")
        report = evaluate(checkpoint, eval_scenes, DEFAULT_EVAL_K, seed)
        rows.append({"seed": seed, "alpha": alpha,
                     **{name: getattr(report.aggregate, name)
                        for name in METRIC_FIELDS}})
    return rows


if __name__ == "__main__":
    results = pd.DataFrame(
        [row for seed in SEEDS for row in run_seed(seed)])
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
    results.to_csv(OUTPUT_DIR / "results.csv", index=False)

    dac = results.pivot(index="seed", columns="alpha", values="dac")
    print_info(results.to_string(index=False))
    wins = int((dac[0.5] >= dac[0.0]).sum())
    message = f"DAC with alpha = 0.5 >= alpha = 0 in {wins} of {len(SEEDS)} seeds"
    if wins >= 2:
        print_success(message)
    else:
        print_error(message)
