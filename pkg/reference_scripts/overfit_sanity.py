"""
Overfit Sanity Run

Trains tf12-ref on a four-scene synthetic set (one scene per maneuver
class) and checks that the model can memorize it:
- nll_term drops by at least 2 nats between the first and last steps
- the z = 0 mode trajectory reaches minADE < 0.5 m on every training scene

Run from the repository root:
    python -m reference_scripts.overfit_sanity
"""

from pathlib import Path
from typing import Final, List, NamedTuple

import numpy as np
import pandas as pd

from trajformer.metrics import min_ade
from trajformer.model import Trajformer
from trajformer.scene import Scene
from trajformer.synth import SynthConfig, synth_scenes
from trajformer.trainer import LOSS_CURVE_FILE, TrainConfig, train
from trajformer.utils.console import print_error, print_info, print_success
from trajformer.utils.file_handler_utilities import write_to_csv

OUTPUT_DIR: Final[Path] = Path("runs/overfit_sanity")
SEED: Final[int] = 0
REQUIRED_NLL_DROP: Final[float] = 2.0
MODE_ADE_LIMIT: Final[float] = 0.5

RUN_CONFIG: Final[TrainConfig] = TrainConfig(
    batch_size=4,
    total_steps=500,
    warmup_steps=50,
    peak_lr=3e-3,
    alpha=0.5,
    seed=SEED,
    model_config="tf12-ref",
    log_every=50
)


class ModeResult(NamedTuple):
    """minADE of the zero-draw trajectory of one scene."""
    scene_id: str
    mode_ade: float


def mode_errors(model: Trajformer, scenes: List[Scene]) -> List[ModeResult]:
    """Decode every agent with z = 0 and score it against ground truth."""
    horizon = model.spec.flow.future_steps
    results = []
    for scene in scenes:
        zeros = np.zeros((scene.num_agents, 1, horizon, 2))
        positions = model.sample(scene, 1, SEED, z=zeros).positions
        errors = [min_ade(agent_samples, gt)
                  for agent_samples, gt in zip(positions, scene.futures())]
        results.append(ModeResult(scene.scene_id, float(np.mean(errors))))
    return results


if __name__ == "__main__":
    scenes = synth_scenes(SynthConfig(per_class=1), SEED)
    print_info(f"Overfitting {len(scenes)} scenes for "
               f"{RUN_CONFIG.total_steps} steps")
    checkpoint = train(scenes, RUN_CONFIG, out_dir=OUTPUT_DIR)

    curve = pd.read_csv(OUTPUT_DIR / LOSS_CURVE_FILE)
    drop = curve["nll_term"].iloc[0] - curve["nll_term"].iloc[-1]
    results = mode_errors(checkpoint.model, scenes)
    write_to_csv(results, OUTPUT_DIR / "mode_ade.csv", {
        "scene_id": lambda result: result.scene_id,
        "mode_ade": lambda result: f"{result.mode_ade:.4f}",
    })

    print_info(f"nll_term {curve['nll_term'].iloc[0]:.3f} -> "
               f"{curve['nll_term'].iloc[-1]:.3f} (drop {drop:.3f} nats)")
    for result in results:
        print_info(f"{result.scene_id}: mode minADE {result.mode_ade:.3f} m")

    worst = max(result.mode_ade for result in results)
    if drop >= REQUIRED_NLL_DROP and worst < MODE_ADE_LIMIT:
        print_success("Overfit sanity passed")
    else:
        print_error("Overfit sanity failed")
