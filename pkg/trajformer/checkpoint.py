"""
Checkpoint directories.

A checkpoint is a directory holding `manifest.json` (format version, model
configuration, training configuration, optimizer hyperparameters, step and
the name/shape/dtype/file of every tensor) and one raw binary per tensor:
little-endian floats in the model's precision (32-bit by default), row-major,
no header. Model weights are stored
under their canonical names, Adam moments as `adam.m.<name>` and
`adam.v.<name>`.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from trajformer.errors import CheckpointError
from trajformer.model import Trajformer, parameter_shapes
from trajformer.model_specs import (
    MODEL_CONFIGS, EncoderConfig, FlowConfig, ModelSpec)
from trajformer.optim import AdamState

CHECKPOINT_VERSION = 1
MANIFEST_FILE = "manifest.json"
STORAGE_DTYPES: Dict[str, str] = {"float32": '<f4', "float64": '<f8'}


@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference.

    Attributes:
        model: Model configuration and weights
        adam: Optimizer state
        train_config: Training configuration as plain values
        step: Completed training steps
        version: Format version
    """
    model: Trajformer
    adam: AdamState
    train_config: Dict[str, Any] = field(default_factory=dict)
    step: int = 0
    version: int = CHECKPOINT_VERSION


def _tensor_entries(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    entries = [(name, param.data) for name, param in ckpt.model.params.items()]
    for name in ckpt.model.params:
        entries.append((f"adam.m.{name}", ckpt.adam.m[name]))
        entries.append((f"adam.v.{name}", ckpt.adam.v[name]))
    return entries


def save_checkpoint(ckpt: Checkpoint, directory: str | Path) -> Path:
    """
    Write a checkpoint directory.

    Args:
        ckpt: Checkpoint to persist
        directory: Target directory, created if needed

    Returns:
        Path of the written manifest
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = ckpt.model.spec
    dtype_name = str(ckpt.model.dtype)
    if dtype_name not in STORAGE_DTYPES:
        raise CheckpointError(
            f"Cannot store {dtype_name} tensors (choose from "
            f"{', '.join(STORAGE_DTYPES)})")
    tensors = []
    for name, values in _tensor_entries(ckpt):
        file_name = f"{name}.bin"
        (directory / file_name).write_bytes(np.ascontiguousarray(
            values, dtype=STORAGE_DTYPES[dtype_name]).tobytes())
        tensors.append({"name": name, "shape": list(values.shape),
                        "dtype": dtype_name, "file": file_name})

    manifest = {
        "version": ckpt.version,
        "model_config": spec.name,
        "model_dtype": dtype_name,
        "encoder": spec.encoder._asdict(),
        "flow": spec.flow._asdict(),
        "train_config": ckpt.train_config,
        "step": ckpt.step,
        "adam": {"step": ckpt.adam.step, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
        "tensors": tensors,
    }
    manifest_path = directory / MANIFEST_FILE
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        encoding='utf-8')
    return manifest_path


def _read_tensor(directory: Path, entry: Dict[str, Any]) -> np.ndarray:
    name = entry["name"]
    path = directory / entry["file"]
    if not path.is_file():
        raise CheckpointError(f"Missing tensor file for '{name}': {path}")
    storage = STORAGE_DTYPES.get(entry.get("dtype", "float32"))
    if storage is None:
        raise CheckpointError(
            f"Unsupported dtype {entry['dtype']!r} for tensor '{name}'")
    shape = tuple(int(size) for size in entry["shape"])
    raw = path.read_bytes()
    expected = int(np.prod(shape, dtype=np.int64)) \
        * np.dtype(storage).itemsize
    if len(raw) != expected:
        raise CheckpointError(
            f"Shape drift for tensor '{name}': file holds {len(raw)} bytes, "
            f"shape {shape} needs {expected}")
    return np.frombuffer(raw, dtype=storage).reshape(shape).copy()


def _model_spec(manifest: Dict[str, Any]) -> ModelSpec:
    name = manifest["model_config"]
    known = MODEL_CONFIGS.get(name)
    return ModelSpec(
        name=name,
        encoder=EncoderConfig(**manifest["encoder"]).validate(),
        flow=FlowConfig(**manifest["flow"]).validate(),
        description=known.description if known else "")


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """
    Read a checkpoint directory.

    Raises:
        CheckpointError: If the manifest is missing or unreadable, the
            version differs (both versions are named), a tensor is
            missing, or a tensor's size or shape drifted from the
            configuration (the tensor is named)
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.is_file():
        raise CheckpointError(f"{directory}: missing {MANIFEST_FILE}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as error:
        raise CheckpointError(
            f"{manifest_path}: line {error.lineno} column {error.colno}: "
            f"{error.msg}") from error
    except UnicodeDecodeError as error:
        raise CheckpointError(
            f"{manifest_path}: not UTF-8 text (byte {error.start})") from error

    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint version {version} is not supported "
            f"(expected {CHECKPOINT_VERSION})")
    try:
        spec = _model_spec(manifest)
        entries = {entry["name"]: entry for entry in manifest["tensors"]}
        adam_meta = manifest["adam"]
    except (KeyError, TypeError) as error:
        raise CheckpointError(
            f"{manifest_path}: malformed manifest ({error})") from error

    arrays = {name: _read_tensor(directory, entry)
              for name, entry in entries.items()}
    model = Trajformer.from_arrays(
        spec, arrays, dtype=np.dtype(manifest.get("model_dtype", "float32")))

    moments = {}
    for name, shape in parameter_shapes(spec).items():
        for kind in ("m", "v"):
            key = f"adam.{kind}.{name}"
            if key not in arrays:
                raise CheckpointError(f"Missing tensor: {key}")
            if arrays[key].shape != shape:
                raise CheckpointError(
                    f"Shape drift for tensor '{key}': stored "
                    f"{arrays[key].shape}, configuration expects {shape}")
            moments[key] = arrays[key].astype(model.dtype)
    adam = AdamState(
        step=int(adam_meta["step"]),
        beta1=float(adam_meta["beta1"]),
        beta2=float(adam_meta["beta2"]),
        eps=float(adam_meta["eps"]),
        m={name: moments[f"adam.m.{name}"] for name in model.params},
        v={name: moments[f"adam.v.{name}"] for name in model.params})
    return Checkpoint(model=model, adam=adam,
                      train_config=manifest.get("train_config", {}),
                      step=int(manifest.get("step", 0)), version=version)
