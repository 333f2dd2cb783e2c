"""
Training loop, evaluation driver and prediction helpers.

Training runs a fixed number of Adam steps on the symmetric cross-entropy
objective with linear warm-up and decay. Steps are numbered from 1; the
loss logged for a step is the loss of the batch before that step's update,
and its `lr` column is the rate applied by that update.

Batching: when the batch size does not exceed the dataset, batches are
consecutive slices of a stream of epoch permutations (each drawn from the
("shuffle", epoch) substream); otherwise every batch is drawn with
replacement from the ("shuffle", "step", step) substream.
"""

from pathlib import Path
from typing import Any, Dict, Final, Iterator, List, NamedTuple, Optional, \
    Sequence, Tuple

import numpy as np

import trajformer.numerics as num
from trajformer.checkpoint import Checkpoint, save_checkpoint
from trajformer.errors import ConfigError, ContractError, NumericError
from trajformer.flow import TrajectorySamples, prediction_document
from trajformer.metrics import (
    DEFAULT_EVAL_K, EvaluationReport, evaluation_report, scene_metrics)
from trajformer.model import Trajformer
from trajformer.model_specs import MODEL_CONFIGS, get_model_spec
from trajformer.objective import total_loss
from trajformer.optim import AdamState, LrSchedule, adam_step, lr_at
from trajformer.scene import Scene
from trajformer.seeding import substream
from trajformer.utils.console import print_info, print_success
from trajformer.utils.file_handler_utilities import write_to_csv

LOSS_CURVE_FILE = "loss_curve.csv"


class TrainConfig(NamedTuple):
    """Training hyperparameters.

    Attributes:
        batch_size: Scenes per step
        total_steps: Number of optimizer steps
        warmup_steps: Length of the linear warm-up
        peak_lr: Learning rate at the end of warm-up
        alpha: Weight of the prior term
        k_mc: Monte-Carlo samples per agent for the prior term
        seed: Master seed of every random stream
        model_config: Name of the encoder/decoder configuration
        dtype: Parameter precision, "float32" or "float64"
        log_every: Steps between console status lines (0 disables them)
    """
    batch_size: int = 128
    total_steps: int = 2000
    warmup_steps: int = 200
    peak_lr: float = 3e-4
    alpha: float = 0.5
    k_mc: int = 4
    seed: int = 0
    model_config: str = "tf12-ref"
    dtype: str = "float32"
    log_every: int = 50

    def validate(self) -> "TrainConfig":
        """Raise ConfigError on invalid values."""
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 1 or self.warmup_steps < 1:
            raise ConfigError("total_steps and warmup_steps must be positive")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.k_mc < 1:
            raise ConfigError(f"k_mc must be >= 1, got {self.k_mc}")
        if self.model_config not in MODEL_CONFIGS:
            raise ConfigError(f"Unknown model config: {self.model_config}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"Unsupported dtype: {self.dtype}")
        self.schedule().validate()
        return self

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.peak_lr, self.warmup_steps, self.total_steps)


class LossRecord(NamedTuple):
    """One row of the loss curve."""
    step: int
    nll_term: float
    prior_term: float
    total: float
    lr: float


LOSS_HEADER_MAPPING: Final[Dict[str, Any]] = {
    "step": lambda record: record.step,
    "nll_term": lambda record: repr(record.nll_term),
    "prior_term": lambda record: repr(record.prior_term),
    "total": lambda record: repr(record.total),
    "lr": lambda record: repr(record.lr),
}


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def batch_indices(
    dataset_size: int,
    batch_size: int,
    seed: int
) -> Iterator[np.ndarray]:
    """Endless stream of index batches (see module docstring)."""
    if batch_size > dataset_size:
        step = 0
        while True:
            step += 1
            yield substream(seed, "shuffle", "step", step) \
                .integers(0, dataset_size, batch_size)
    epoch = 0
    pending = np.empty(0, dtype=np.int64)
    while True:
        while pending.size < batch_size:
            order = substream(seed, "shuffle", epoch).permutation(dataset_size)
            pending = np.concatenate([pending, order])
            epoch += 1
        yield pending[:batch_size]
        pending = pending[batch_size:]


def train_with_history(
    dataset: Sequence[Scene],
    cfg: TrainConfig,
    out_dir: Optional[str | Path] = None
) -> Tuple[Checkpoint, List[LossRecord]]:
    """
    Train a fresh model and return it with its loss curve.

    Args:
        dataset: Training scenes
        cfg: Training configuration
        out_dir: If given, the loss curve CSV and the final checkpoint are
            written there

    Raises:
        ContractError: If the dataset is empty
        ConfigError: If the configuration is invalid
        NumericError: If a loss or gradient becomes non-finite; the message
            names the step
    """
    if not dataset:
        raise ContractError("Training needs a non-empty dataset")
    cfg.validate()
    spec = get_model_spec(cfg.model_config)
    model = Trajformer.initialize(spec, cfg.seed, dtype=np.dtype(cfg.dtype))
    adam = AdamState.for_params(model.params)
    schedule = cfg.schedule()
    batches = batch_indices(len(dataset), cfg.batch_size, cfg.seed)
    print_info(f"Training {spec.name} ({model.count_parameters():,} params) "
               f"on {len(dataset)} scenes, seed {cfg.seed}")

    history: List[LossRecord] = []
    for step in range(1, cfg.total_steps + 1):
        scenes = [dataset[index] for index in next(batches)]
        lr = lr_at(schedule, step)
        dropout_rng = substream(cfg.seed, "dropout", step) \
            if spec.encoder.dropout > 0 else None
        try:
            with num.Tape() as tape:
                tape.watch(*model.leaves())
                loss = total_loss(model, scenes, cfg.alpha, cfg.k_mc,
                                  cfg.seed, draw_key=step,
                                  dropout_rng=dropout_rng)
            tape.backward(loss.total)
        except NumericError as error:
            raise NumericError(
                f"Non-finite value at training step {step}: {error}") \
                from error
        grads = {name: param.grad for name, param in model.params.items()}
        adam_step(adam, model.params, grads, lr)

        record = LossRecord(step=step, lr=lr, **loss.values())
        history.append(record)
        if cfg.log_every and (step % cfg.log_every == 0 or step == 1):
            print_info(f"step {step:5d}  nll {record.nll_term:9.4f}  "
                       f"prior {record.prior_term:9.4f}  "
                       f"total {record.total:9.4f}  lr {lr:.2e}")

    ckpt = Checkpoint(model=model, adam=adam, train_config=cfg._asdict(),
                      step=cfg.total_steps)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_to_csv(history, out_dir / LOSS_CURVE_FILE, LOSS_HEADER_MAPPING)
        save_checkpoint(ckpt, out_dir)
        print_success(f"Checkpoint written to {out_dir}")
    return ckpt, history


def train(
    dataset: Sequence[Scene],
    cfg: TrainConfig,
    out_dir: Optional[str | Path] = None
) -> Checkpoint:
    """Train a fresh model; see `train_with_history`."""
    return train_with_history(dataset, cfg, out_dir)[0]


# --------------------------------------------------------------------------
# Prediction and evaluation
# --------------------------------------------------------------------------

def _as_model(source: Checkpoint | Trajformer) -> Trajformer:
    return source.model if isinstance(source, Checkpoint) else source


def predict_samples(
    source: Checkpoint | Trajformer,
    scene: Scene,
    k: int,
    seed: int
) -> TrajectorySamples:
    return _as_model(source).sample(scene, k, seed)


def predict_scene(
    source: Checkpoint | Trajformer,
    scene: Scene,
    k: int,
    seed: int
) -> Dict[str, Any]:
    """Prediction file content for one scene."""
    samples = predict_samples(source, scene, k, seed)
    return prediction_document(
        scene.scene_id, [track.agent_id for track in scene.tracks], samples)


def evaluate_predictions(
    dataset: Sequence[Scene],
    predictions: Sequence[np.ndarray]
) -> EvaluationReport:
    """
    Score externally supplied predictions.

    Args:
        dataset: Scenes with ground truth
        predictions: One (A, k, T, 2) array per scene

    Raises:
        ContractError: If the dataset is empty or the counts differ
    """
    if not dataset:
        raise ContractError("Evaluation needs a non-empty dataset")
    if len(predictions) != len(dataset):
        raise ContractError(
            f"{len(predictions)} predictions for {len(dataset)} scenes")
    reports = [scene_metrics(scene, samples)
               for scene, samples in zip(dataset, predictions)]
    return evaluation_report([scene.scene_id for scene in dataset], reports)


def evaluate(
    source: Checkpoint | Trajformer,
    dataset: Sequence[Scene],
    k: int = DEFAULT_EVAL_K,
    seed: int = 0
) -> EvaluationReport:
    """
    Sample k hypotheses per agent for every scene and compute all metrics.

    Raises:
        ContractError: If the dataset is empty or k < 1
    """
    if not dataset:
        raise ContractError("Evaluation needs a non-empty dataset")
    model = _as_model(source)
    predictions = [model.sample(scene, k, seed).positions
                   for scene in dataset]
    return evaluate_predictions(dataset, predictions)
