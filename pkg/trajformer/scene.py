"""
Scene data model and scene file I/O.

A scene is a snapshot of A agents, each with t past and T future poses,
together with a birds-eye-view raster, the drivable mask aligned with the
raster grid, and the discrete prior built from that mask.

Grid convention: cell (row, col) covers
    x in [origin.x + col * resolution, origin.x + (col + 1) * resolution)
    y in [origin.y + row * resolution, origin.y + (row + 1) * resolution)
so rows grow with y and columns grow with x.

Scene files are UTF-8 JSON documents:
    {version, id, resolution, origin: {x, y}, prior_floor,
     raster: {h, w, c, data}, mask: {data},
     tracks: [{id, past: [[x, y], ...], future: [[x, y], ...]}]}
`raster.data` is base64 of little-endian 32-bit floats (row-major H x W x C),
`mask.data` is base64 of the row-major mask packed 8 cells per byte, most
significant bit first. A dataset is a directory of scene files plus an
`index.txt` listing their relative paths, one per line.
"""

import base64
import json
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

import trajformer.numerics as num
from trajformer.errors import (
    ContractError, SceneFormatError, SceneInvariantError)

SCENE_FORMAT_VERSION = 1
DEFAULT_PAST_STEPS = 6
DEFAULT_FUTURE_STEPS = 6
TIME_STRIDE_S = 0.5
DEFAULT_PRIOR_FLOOR = 1e-6
DEFAULT_EXTENT_MARGIN_M = 5.0
INDEX_FILE = "index.txt"


class Pose(NamedTuple):
    """2-D position in meters, scene frame."""
    x: float
    y: float


class AgentTrack(NamedTuple):
    """Past and future poses of one agent.

    Attributes:
        agent_id: Identifier unique within the scene
        past: (t, 2) observed poses, oldest first
        future: (T, 2) ground-truth future poses at the same stride
    """
    agent_id: str
    past: np.ndarray
    future: np.ndarray


class BevRaster(NamedTuple):
    """Birds-eye-view raster.

    Attributes:
        data: (H, W, C) values in [0, 1]
        resolution: Meters per pixel
        origin: Scene-frame position of the corner of pixel (0, 0)
    """
    data: np.ndarray
    resolution: float
    origin: Pose

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class DrivableMask(NamedTuple):
    """(H, W) booleans aligned with the raster grid."""
    cells: np.ndarray


class PriorGrid(NamedTuple):
    """Discrete spatial prior over the raster grid.

    Attributes:
        masses: (H, W) non-negative cell masses summing to 1
        floor: Mass given to each non-drivable cell
    """
    masses: np.ndarray
    floor: float


class Scene(NamedTuple):
    """One snapshot: raster, mask, prior and agent tracks."""
    scene_id: str
    raster: BevRaster
    mask: DrivableMask
    prior: PriorGrid
    tracks: Tuple[AgentTrack, ...]

    @property
    def num_agents(self) -> int:
        return len(self.tracks)

    def pasts(self) -> np.ndarray:
        """(A, t, 2) past poses."""
        return np.stack([track.past for track in self.tracks])

    def futures(self) -> np.ndarray:
        """(A, T, 2) ground-truth future poses."""
        return np.stack([track.future for track in self.tracks])


# --------------------------------------------------------------------------
# Grid helpers
# --------------------------------------------------------------------------

def world_to_cell(
    points: np.ndarray,
    origin: Pose,
    resolution: float
) -> np.ndarray:
    """Map (..., 2) scene positions to integer (..., 2) [row, col] cells."""
    points = np.asarray(points, dtype=np.float64)
    col = np.floor((points[..., 0] - origin.x) / resolution)
    row = np.floor((points[..., 1] - origin.y) / resolution)
    return np.stack([row, col], axis=-1).astype(np.int64)


def cell_center(row: int, col: int, origin: Pose, resolution: float) -> Pose:
    """Scene-frame center of cell (row, col)."""
    return Pose(origin.x + (col + 0.5) * resolution,
                origin.y + (row + 0.5) * resolution)


# --------------------------------------------------------------------------
# Patches and prior
# --------------------------------------------------------------------------

def extract_patch(scene: Scene, center: Pose, m: int) -> np.ndarray:
    """
    Crop an m x m x C patch centered at the pixel containing `center`.

    The crop spans rows [r - m/2, r + m/2) and columns [c - m/2, c + m/2)
    around the center pixel (r, c). Raster values are copied unchanged;
    cells outside the raster are 0.

    Raises:
        ContractError: If m is odd or smaller than 2
    """
    if m < 2 or m % 2:
        raise ContractError(f"Patch size m must be even and >= 2, got {m}")
    raster = scene.raster
    row, col = world_to_cell(np.array(center), raster.origin,
                             raster.resolution)
    half = m // 2
    patch = np.zeros((m, m, raster.channels), dtype=raster.data.dtype)

    top, left = row - half, col - half
    src_r0, src_r1 = max(top, 0), min(top + m, raster.height)
    src_c0, src_c1 = max(left, 0), min(left + m, raster.width)
    if src_r0 < src_r1 and src_c0 < src_c1:
        patch[src_r0 - top:src_r1 - top, src_c0 - left:src_c1 - left] = \
            raster.data[src_r0:src_r1, src_c0:src_c1]
    return patch


def build_prior(mask: DrivableMask, eps: float = DEFAULT_PRIOR_FLOOR) \
        -> PriorGrid:
    """
    Build the prior: mass `eps` per non-drivable cell, the rest spread
    uniformly over drivable cells.

    Raises:
        ContractError: If eps is outside (0, 1 / (H * W))
        SceneInvariantError: If no cell is drivable
    """
    cells = np.asarray(mask.cells, dtype=bool)
    total = cells.size
    if not 0 < eps < 1.0 / total:
        raise ContractError(
            f"Prior floor must lie in (0, {1.0 / total:g}), got {eps:g}")
    drivable = int(cells.sum())
    if drivable == 0:
        raise SceneInvariantError(
            "Degenerate prior: mask has no drivable cell")
    blocked = total - drivable
    masses = np.full(cells.shape, eps, dtype=np.float64)
    masses[cells] = (1.0 - blocked * eps) / drivable
    return PriorGrid(masses=masses, floor=eps)


def _bilinear_corners(
    u: np.ndarray,
    v: np.ndarray,
    shape: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Corner cell indices around clamped continuous grid coordinates.

    The continuous coordinate u = (x - origin.x) / resolution - 0.5 puts
    cell centers on integers and is clamped to [0, W - 1] (rows likewise).
    """
    height, width = shape
    col0 = np.minimum(np.floor(u), max(width - 2, 0)).astype(np.int64)
    row0 = np.minimum(np.floor(v), max(height - 2, 0)).astype(np.int64)
    col1 = np.minimum(col0 + 1, width - 1)
    row1 = np.minimum(row0 + 1, height - 1)
    return row0, row1, col0, col1


def prior_logprob(
    prior: PriorGrid,
    p: Pose | np.ndarray,
    origin: Pose = Pose(0.0, 0.0),
    resolution: float = 1.0
) -> float | np.ndarray:
    """
    Log of the bilinearly interpolated prior mass at scene position(s) p.

    Positions outside the grid clamp to the boundary cells.
    """
    points = np.asarray(p, dtype=np.float64)
    height, width = prior.masses.shape
    u = np.clip((points[..., 0] - origin.x) / resolution - 0.5, 0, width - 1)
    v = np.clip((points[..., 1] - origin.y) / resolution - 0.5, 0,
                height - 1)
    row0, row1, col0, col1 = _bilinear_corners(u, v, (height, width))
    fu, fv = u - col0, v - row0
    masses = prior.masses
    value = ((1 - fu) * (1 - fv) * masses[row0, col0]
             + fu * (1 - fv) * masses[row0, col1]
             + (1 - fu) * fv * masses[row1, col0]
             + fu * fv * masses[row1, col1])
    result = np.log(value)
    return float(result) if result.ndim == 0 else result


def prior_logprob_tensor(
    prior: PriorGrid,
    points: num.Tensor,
    origin: Pose,
    resolution: float
) -> num.Tensor:
    """Differentiable `prior_logprob` for an (N, 2) tensor of positions.

    Gradients flow through the interpolation weights; at exact cell
    boundaries the one-sided value of the cell above is used.
    """
    height, width = prior.masses.shape
    dtype = points.dtype
    u = num.clip((points[:, 0] - origin.x) / resolution - 0.5,
                 0.0, width - 1)
    v = num.clip((points[:, 1] - origin.y) / resolution - 0.5,
                 0.0, height - 1)
    row0, row1, col0, col1 = _bilinear_corners(u.data, v.data,
                                               (height, width))
    fu = u - col0.astype(dtype)
    fv = v - row0.astype(dtype)
    masses = prior.masses.astype(dtype)
    value = ((1.0 - fu) * (1.0 - fv) * masses[row0, col0]
             + fu * (1.0 - fv) * masses[row0, col1]
             + (1.0 - fu) * fv * masses[row1, col0]
             + fu * fv * masses[row1, col1])
    return num.log(value)


# --------------------------------------------------------------------------
# Validation and equality
# --------------------------------------------------------------------------

def validate_scene(
    scene: Scene,
    past_steps: int = DEFAULT_PAST_STEPS,
    future_steps: int = DEFAULT_FUTURE_STEPS,
    margin: float = DEFAULT_EXTENT_MARGIN_M
) -> Scene:
    """
    Check every scene invariant.

    Raises:
        SceneInvariantError: Naming the first violated invariant
    """
    raster = scene.raster
    if raster.resolution <= 0:
        raise SceneInvariantError(
            f"resolution must be > 0, got {raster.resolution}")
    if raster.data.ndim != 3 or not np.all(np.isfinite(raster.data)):
        raise SceneInvariantError("raster data must be finite H x W x C")
    if scene.mask.cells.shape != raster.data.shape[:2]:
        raise SceneInvariantError(
            f"mask shape {scene.mask.cells.shape} differs from raster "
            f"{raster.data.shape[:2]}")
    total = float(scene.prior.masses.sum())
    if abs(total - 1.0) > 1e-9 or np.any(scene.prior.masses <= 0):
        raise SceneInvariantError(
            f"prior masses must be positive and sum to 1, got {total!r}")
    if not scene.tracks:
        raise SceneInvariantError("scene needs at least one agent")

    low_x = raster.origin.x - margin
    low_y = raster.origin.y - margin
    high_x = raster.origin.x + raster.width * raster.resolution + margin
    high_y = raster.origin.y + raster.height * raster.resolution + margin
    for index, track in enumerate(scene.tracks):
        for label, poses, expected in (("past", track.past, past_steps),
                                       ("future", track.future,
                                        future_steps)):
            if poses.shape != (expected, 2):
                raise SceneInvariantError(
                    f"tracks[{index}].{label} has {len(poses)} poses, "
                    f"expected {expected}")
            if not np.all(np.isfinite(poses)):
                raise SceneInvariantError(
                    f"tracks[{index}].{label} contains non-finite poses")
            inside = ((poses[:, 0] >= low_x) & (poses[:, 0] <= high_x)
                      & (poses[:, 1] >= low_y) & (poses[:, 1] <= high_y))
            if not np.all(inside):
                raise SceneInvariantError(
                    f"tracks[{index}].{label} leaves the raster extent "
                    f"(margin {margin} m)")
    return scene


def scenes_equal(first: Scene, second: Scene) -> bool:
    """Structural equality over every field, arrays compared exactly."""
    if (first.scene_id != second.scene_id
            or first.raster.resolution != second.raster.resolution
            or first.raster.origin != second.raster.origin
            or first.prior.floor != second.prior.floor
            or len(first.tracks) != len(second.tracks)):
        return False
    if not (np.array_equal(first.raster.data, second.raster.data)
            and np.array_equal(first.mask.cells, second.mask.cells)
            and np.array_equal(first.prior.masses, second.prior.masses)):
        return False
    return all(
        a.agent_id == b.agent_id
        and np.array_equal(a.past, b.past)
        and np.array_equal(a.future, b.future)
        for a, b in zip(first.tracks, second.tracks))


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

def scene_to_document(scene: Scene) -> Dict[str, Any]:
    """Encode a scene as a JSON-ready document."""
    raster = scene.raster
    raster_bytes = np.ascontiguousarray(raster.data, dtype='<f4').tobytes()
    mask_bytes = np.packbits(
        np.asarray(scene.mask.cells, dtype=bool).reshape(-1)).tobytes()
    return {
        "version": SCENE_FORMAT_VERSION,
        "id": scene.scene_id,
        "resolution": float(raster.resolution),
        "origin": {"x": float(raster.origin.x), "y": float(raster.origin.y)},
        "prior_floor": float(scene.prior.floor),
        "raster": {
            "h": raster.height,
            "w": raster.width,
            "c": raster.channels,
            "data": base64.b64encode(raster_bytes).decode('ascii'),
        },
        "mask": {"data": base64.b64encode(mask_bytes).decode('ascii')},
        "tracks": [
            {
                "id": track.agent_id,
                "past": [[float(x), float(y)] for x, y in track.past],
                "future": [[float(x), float(y)] for x, y in track.future],
            }
            for track in scene.tracks
        ],
    }


def _field(
    document: Dict[str, Any],
    path: str,
    source: str,
    prefix: str = ""
) -> Any:
    value: Any = document
    for part in path.split('.'):
        if not isinstance(value, dict) or part not in value:
            raise SceneFormatError(
                f"{source}: missing field '{prefix}{path}'")
        value = value[part]
    return value


def _number_field(
    document: Dict[str, Any],
    path: str,
    source: str,
    kind: type = float
) -> Any:
    value = _field(document, path, source)
    if isinstance(value, bool):
        raise SceneFormatError(f"{source}: field '{path}' is not a number")
    try:
        number = kind(value)
    except (TypeError, ValueError, OverflowError) as error:
        raise SceneFormatError(
            f"{source}: field '{path}' is not a number ({value!r})") \
            from error
    if kind is int and number != value:
        raise SceneFormatError(
            f"{source}: field '{path}' is not an integer ({value!r})")
    if not np.isfinite(number):
        raise SceneFormatError(
            f"{source}: field '{path}' is not finite ({value!r})")
    return number


def _decode_b64(text: Any, path: str, source: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (TypeError, ValueError) as error:
        raise SceneFormatError(
            f"{source}: field '{path}' is not valid base64 ({error})") \
            from error


def _poses(value: Any, path: str, source: str) -> np.ndarray:
    try:
        poses = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as error:
        raise SceneFormatError(
            f"{source}: field '{path}' is not a list of [x, y] pairs") \
            from error
    if poses.ndim != 2 or poses.shape[1] != 2:
        raise SceneFormatError(
            f"{source}: field '{path}' is not a list of [x, y] pairs")
    return poses


def scene_from_document(
    document: Dict[str, Any],
    source: str = "<scene>",
    past_steps: int = DEFAULT_PAST_STEPS,
    future_steps: int = DEFAULT_FUTURE_STEPS,
    margin: float = DEFAULT_EXTENT_MARGIN_M
) -> Scene:
    """Decode and validate a scene document."""
    version = _field(document, "version", source)
    if version != SCENE_FORMAT_VERSION:
        raise SceneFormatError(
            f"{source}: unsupported scene version {version}, expected "
            f"{SCENE_FORMAT_VERSION}")
    height, width, channels = (
        _number_field(document, f"raster.{axis}", source, int)
        for axis in ("h", "w", "c"))
    for axis, size in zip("hwc", (height, width, channels)):
        if size < 1:
            raise SceneFormatError(
                f"{source}: field 'raster.{axis}' must be >= 1, got {size}")

    raster_bytes = _decode_b64(_field(document, "raster.data", source),
                               "raster.data", source)
    expected = height * width * channels * 4
    if len(raster_bytes) != expected:
        raise SceneFormatError(
            f"{source}: field 'raster.data' holds {len(raster_bytes)} bytes, "
            f"expected {expected} for {height}x{width}x{channels}")
    raster_data = np.frombuffer(raster_bytes, dtype='<f4') \
        .astype(np.float32).reshape(height, width, channels)

    mask_bytes = _decode_b64(_field(document, "mask.data", source),
                             "mask.data", source)
    if len(mask_bytes) != (height * width + 7) // 8:
        raise SceneFormatError(
            f"{source}: field 'mask.data' holds {len(mask_bytes)} bytes, "
            f"expected {(height * width + 7) // 8}")
    mask_cells = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8),
                               count=height * width).astype(bool) \
        .reshape(height, width)

    raster = BevRaster(
        data=raster_data,
        resolution=_number_field(document, "resolution", source),
        origin=Pose(_number_field(document, "origin.x", source),
                    _number_field(document, "origin.y", source)))
    mask = DrivableMask(mask_cells)
    floor = _number_field(document, "prior_floor", source) \
        if "prior_floor" in document else DEFAULT_PRIOR_FLOOR

    entries = _field(document, "tracks", source)
    if not isinstance(entries, list):
        raise SceneFormatError(f"{source}: field 'tracks' is not a list")
    tracks: List[AgentTrack] = []
    for index, entry in enumerate(entries):
        prefix = f"tracks[{index}]."
        if not isinstance(entry, dict):
            raise SceneFormatError(
                f"{source}: field 'tracks[{index}]' is not an object")
        tracks.append(AgentTrack(
            agent_id=str(_field(entry, "id", source, prefix)),
            past=_poses(_field(entry, "past", source, prefix),
                        f"{prefix}past", source),
            future=_poses(_field(entry, "future", source, prefix),
                          f"{prefix}future", source)))

    scene = Scene(
        scene_id=str(document.get("id", Path(source).stem)),
        raster=raster,
        mask=mask,
        prior=_prior(mask, floor, source),
        tracks=tuple(tracks))
    return validate_scene(scene, past_steps, future_steps, margin)


def _prior(mask: DrivableMask, floor: float, source: str) -> PriorGrid:
    try:
        return build_prior(mask, floor)
    except ContractError as error:
        raise SceneFormatError(
            f"{source}: field 'prior_floor': {error}") from error


def save_scene(scene: Scene, path: str | Path) -> None:
    """Write a scene file (sorted keys, 2-space indent, trailing newline)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(scene_to_document(scene), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding='utf-8')


def load_scene(
    path: str | Path,
    past_steps: int = DEFAULT_PAST_STEPS,
    future_steps: int = DEFAULT_FUTURE_STEPS,
    margin: float = DEFAULT_EXTENT_MARGIN_M
) -> Scene:
    """
    Read and validate a scene file.

    Raises:
        SceneFormatError: On JSON errors (with line and column) or
            missing/malformed fields (with the field path)
        SceneInvariantError: If the decoded scene violates an invariant
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as error:
        raise SceneFormatError(
            f"{path}: line {error.lineno} column {error.colno}: "
            f"{error.msg}") from error
    except UnicodeDecodeError as error:
        raise SceneFormatError(
            f"{path}: not UTF-8 text (byte {error.start})") from error
    if not isinstance(document, dict):
        raise SceneFormatError(f"{path}: top level must be an object")
    return scene_from_document(document, str(path), past_steps,
                               future_steps, margin)


def save_dataset(scenes: Sequence[Scene], directory: str | Path) -> None:
    """Write scenes as `scene_00000.json`, ... plus the index file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for index, scene in enumerate(scenes):
        name = f"scene_{index:05d}.json"
        save_scene(scene, directory / name)
        names.append(name)
    (directory / INDEX_FILE).write_text(
        "".join(f"{name}\n" for name in names), encoding='utf-8')


def load_dataset(directory: str | Path, **scene_kwargs) -> List[Scene]:
    """Load every scene listed in a dataset directory's index file."""
    directory = Path(directory)
    index_path = directory / INDEX_FILE
    if not index_path.is_file():
        raise SceneFormatError(f"{directory}: missing {INDEX_FILE}")
    try:
        lines = index_path.read_text(encoding='utf-8').splitlines()
    except UnicodeDecodeError as error:
        raise SceneFormatError(
            f"{index_path}: not UTF-8 text (byte {error.start})") from error
    entries = [line.strip() for line in lines]
    return [load_scene(directory / entry, **scene_kwargs)
            for entry in entries if entry]
