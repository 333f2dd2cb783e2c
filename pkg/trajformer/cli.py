"""
Command-line interface.

    synth    write a synthetic dataset directory
    train    train a model and write its checkpoint and loss curve
    predict  sample futures for one scene and write the prediction file
    eval     score a checkpoint on a dataset (JSON report plus CSV table)
    params   print the trainable parameter count of a configuration
    plot     render a scene and a prediction file as SVG

Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors. Status
lines go to the error stream; `params` prints its integer on standard
output.
"""

from typing import Optional, Sequence

import click

from trajformer.checkpoint import load_checkpoint
from trajformer.errors import TrajformerError
from trajformer.flow import read_prediction, write_prediction
from trajformer.metrics import DEFAULT_EVAL_K, write_report
from trajformer.model import count_parameters
from trajformer.model_specs import CLI_MODEL_CONFIGS
from trajformer.plotting import write_plot
from trajformer.scene import load_dataset, load_scene, save_dataset
from trajformer.synth import SynthConfig, synth_scenes
from trajformer.trainer import TrainConfig, evaluate, predict_scene, train
from trajformer.utils.console import print_error, print_info, print_success

DEFAULT_SEED = 0
EXISTING_DIR = click.Path(exists=True, file_okay=False)
EXISTING_FILE = click.Path(exists=True, dir_okay=False)


def _seed_option(command):
    return click.option(
        "--seed", type=int, default=DEFAULT_SEED, show_default=True,
        help="Master seed of every random stream")(command)


def _announce_seed(seed: int) -> None:
    print_info(f"Using seed {seed}")


@click.group()
def cli() -> None:
    """Trajectory prediction with a self-attention encoder and a
    normalizing-flow decoder."""


@cli.command()
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Output dataset directory")
@_seed_option
@click.option("--per-class", type=click.IntRange(min=0), default=10,
              show_default=True, help="Scenes per maneuver class")
def synth(out: str, seed: int, per_class: int) -> None:
    """Generate a synthetic dataset."""
    _announce_seed(seed)
    scenes = synth_scenes(SynthConfig(per_class=per_class), seed)
    save_dataset(scenes, out)
    print_success(f"Wrote {len(scenes)} scenes to {out}")


@cli.command(name="train")
@click.option("--data", required=True, type=EXISTING_DIR,
              help="Training dataset directory")
@click.option("--config", "model_config", required=True,
              type=click.Choice(CLI_MODEL_CONFIGS), help="Model configuration")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Output checkpoint directory")
@click.option("--alpha", type=click.FloatRange(min=0.0),
              default=TrainConfig().alpha, show_default=True,
              help="Weight of the prior term")
@click.option("--steps", type=click.IntRange(min=2),
              default=TrainConfig().total_steps, show_default=True,
              help="Optimizer steps")
@_seed_option
@click.option("--batch-size", type=click.IntRange(min=1),
              default=TrainConfig().batch_size, show_default=True)
@click.option("--warmup", type=click.IntRange(min=1), default=None,
              help="Warm-up steps [default: min(200, steps // 10)]")
def train_command(
    data: str,
    model_config: str,
    out: str,
    alpha: float,
    steps: int,
    seed: int,
    batch_size: int,
    warmup: Optional[int]
) -> None:
    """Train a model on a dataset directory."""
    _announce_seed(seed)
    if warmup is None:
        warmup = max(1, min(TrainConfig().warmup_steps, steps // 10))
    cfg = TrainConfig(batch_size=batch_size, total_steps=steps,
                      warmup_steps=warmup, alpha=alpha, seed=seed,
                      model_config=model_config)
    train(load_dataset(data), cfg, out_dir=out)


@cli.command()
@click.option("--ckpt", required=True, type=EXISTING_DIR,
              help="Checkpoint directory")
@click.option("--scene", "scene_path", required=True, type=EXISTING_FILE,
              help="Scene file")
@click.option("--k", type=click.IntRange(min=1), default=DEFAULT_EVAL_K,
              show_default=True, help="Samples per agent")
@_seed_option
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Prediction file")
def predict(ckpt: str, scene_path: str, k: int, seed: int, out: str) -> None:
    """Sample k futures per agent for one scene."""
    _announce_seed(seed)
    document = predict_scene(load_checkpoint(ckpt), load_scene(scene_path),
                             k, seed)
    write_prediction(document, out)
    print_success(f"Prediction written to {out}")


@cli.command(name="eval")
@click.option("--ckpt", required=True, type=EXISTING_DIR,
              help="Checkpoint directory")
@click.option("--data", required=True, type=EXISTING_DIR,
              help="Evaluation dataset directory")
@click.option("--k", type=click.IntRange(min=1), default=DEFAULT_EVAL_K,
              show_default=True, help="Samples per agent")
@_seed_option
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="JSON report; the CSV table is written next to it")
def eval_command(ckpt: str, data: str, k: int, seed: int, out: str) -> None:
    """Compute minADE, minFDE, rF, DAO and DAC on a dataset."""
    _announce_seed(seed)
    report = evaluate(load_checkpoint(ckpt), load_dataset(data), k, seed)
    csv_path = write_report(report, out)
    summary = report.aggregate
    print_info(f"minADE {summary.min_ade:.3f}  minFDE {summary.min_fde:.3f}  "
               f"rF {summary.rf:.3f}  DAO {summary.dao:.2f}  "
               f"DAC {summary.dac:.3f}")
    print_success(f"Report written to {out} and {csv_path}")


@cli.command()
@click.option("--config", "model_config", required=True,
              type=click.Choice(CLI_MODEL_CONFIGS), help="Model configuration")
def params(model_config: str) -> None:
    """Print the trainable parameter count."""
    click.echo(count_parameters(model_config))


@cli.command()
@click.option("--scene", "scene_path", required=True, type=EXISTING_FILE,
              help="Scene file")
@click.option("--pred", required=True, type=EXISTING_FILE,
              help="Prediction file")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Output SVG file")
def plot(scene_path: str, pred: str, out: str) -> None:
    """Render a scene and its sampled futures as SVG."""
    scene = load_scene(scene_path)
    prediction = read_prediction(pred)
    if prediction["scene_id"] != scene.scene_id:
        print_info(f"Prediction is for scene '{prediction['scene_id']}', "
                   f"plotting over '{scene.scene_id}'")
    write_plot(scene, prediction, out)
    print_success(f"Plot written to {out}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line and return its exit code.

    Args:
        argv: Arguments without the program name; sys.argv when None

    Returns:
        0 on success, 2 on usage errors, 1 on runtime errors
    """
    try:
        cli.main(args=list(argv) if argv is not None else None,
                 prog_name="trajformer", standalone_mode=False)
    except click.UsageError as error:
        error.show()
        return 2
    except click.ClickException as error:
        error.show()
        return 1
    except click.Abort:
        print_error("Aborted")
        return 1
    except (TrajformerError, OSError) as error:
        print_error(f"Error: {error}")
        return 1
    return 0
