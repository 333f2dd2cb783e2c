"""
Parameter Budget Table

Lists the trainable parameter count of every named configuration next to
the reported model sizes (164K for the 12-layer model, 192K for the
24-layer one), and the on-disk size of a freshly written checkpoint
including its optimizer state.

Run from the repository root:
    python -m reference_scripts.parameter_budget
"""

import tempfile
from pathlib import Path
from typing import Dict, Final, Optional

import pandas as pd

from trajformer.checkpoint import Checkpoint, save_checkpoint
from trajformer.model import Trajformer
from trajformer.model_specs import MODEL_CONFIGS
from trajformer.optim import AdamState
from trajformer.utils.console import print_info, print_success

OUTPUT_FILE: Final[Path] = Path("runs/parameter_budget.csv")
REPORTED_SIZES: Final[Dict[str, int]] = {
    "tf12-ref": 164_000,
    "tf24-ref": 192_000,
}
TOLERANCE: Final[float] = 0.1


def checkpoint_bytes(model: Trajformer) -> int:
    """Size of a checkpoint directory holding `model` and zero moments."""
    with tempfile.TemporaryDirectory() as directory:
        save_checkpoint(Checkpoint(model=model,
                                   adam=AdamState.for_params(model.params)),
                        directory)
        return sum(path.stat().st_size for path in Path(directory).iterdir())


def budget_row(name: str) -> dict:
    model = Trajformer.initialize(name, seed=0)
    count = model.count_parameters()
    reported: Optional[int] = REPORTED_SIZES.get(name)
    return {
        "config": name,
        "layers": model.spec.encoder.layers,
        "model_dim": model.spec.encoder.model_dim,
        "parameters": count,
        "reported": reported,
        "within_budget": None if reported is None
        else abs(count - reported) <= TOLERANCE * reported,
        "checkpoint_bytes": checkpoint_bytes(model),
    }


if __name__ == "__main__":
    table = pd.DataFrame([budget_row(name) for name in MODEL_CONFIGS])
    OUTPUT_FILE.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(OUTPUT_FILE, index=False)
    print_info(table.to_string(index=False))
    print_success(f"Budget table written to {OUTPUT_FILE}")
