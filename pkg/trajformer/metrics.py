"""
Evaluation metrics over k sampled futures.

    min_ade   min over samples of the mean Euclidean error to ground truth
    min_fde   min over samples of the final-step error
    rf        mean final error / min final error (1 when the min is 0)
    dao       distinct drivable cells hit by any point / drivable cells, x 1e4
    dac       fraction of samples whose every point lies on a drivable cell

Points map to cell (floor((y - oy) / res), floor((x - ox) / res)). Points
outside the grid are ignored by dao and count as non-drivable for dac.
Every metric has a `brute_force` mode built from plain loops, used as a
reference for the vectorized path.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Final, List, NamedTuple, Sequence

import numpy as np

from trajformer.errors import ContractError, DimensionError, \
    SceneInvariantError
from trajformer.scene import DrivableMask, Pose, Scene, world_to_cell
from trajformer.utils.file_handler_utilities import write_to_csv

DAO_SCALE = 1e4
DEFAULT_EVAL_K = 12


class MetricsReport(NamedTuple):
    """Metric values of one scene, or their mean over scenes.

    Attributes:
        min_ade: Meters
        min_fde: Meters
        rf: Final-error spread ratio, >= 1
        dao: Drivable-area occupancy, x 1e4
        dac: Drivable-area compliance in [0, 1]
        k: Samples evaluated per agent
    """
    min_ade: float
    min_fde: float
    rf: float
    dao: float
    dac: float
    k: int


class EvaluationReport(NamedTuple):
    """Per-scene reports and their aggregate."""
    scene_ids: List[str]
    per_scene: List[MetricsReport]
    aggregate: MetricsReport


METRIC_FIELDS: Final = ("min_ade", "min_fde", "rf", "dao", "dac")

REPORT_HEADER_MAPPING: Final[Dict[str, Any]] = {
    "scene_id": lambda row: row[0],
    "min_ade": lambda row: repr(row[1].min_ade),
    "min_fde": lambda row: repr(row[1].min_fde),
    "rf": lambda row: repr(row[1].rf),
    "dao": lambda row: repr(row[1].dao),
    "dac": lambda row: repr(row[1].dac),
    "k": lambda row: row[1].k,
}


# --------------------------------------------------------------------------
# Displacement metrics
# --------------------------------------------------------------------------

def _check_samples(samples: np.ndarray, gt: np.ndarray) -> None:
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ContractError(
            f"Metrics need k >= 1 samples of shape (k, T, 2), got "
            f"{samples.shape}")
    if samples.shape[1:] != gt.shape:
        raise DimensionError(
            f"Sample shape {samples.shape[1:]} does not match ground truth "
            f"{gt.shape}")


def _point_distance(first, second) -> float:
    return math.hypot(float(first[0]) - float(second[0]),
                      float(first[1]) - float(second[1]))


def final_errors(samples: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """(k,) final-step Euclidean errors."""
    samples, gt = np.asarray(samples, float), np.asarray(gt, float)
    _check_samples(samples, gt)
    return np.linalg.norm(samples[:, -1] - gt[-1], axis=-1)


def min_ade(
    samples: np.ndarray,
    gt: np.ndarray,
    brute_force: bool = False
) -> float:
    """
    Minimum over samples of the mean displacement error.

    Args:
        samples: (k, T, 2) predicted futures
        gt: (T, 2) ground truth

    Raises:
        ContractError: If k = 0
        DimensionError: If T differs
    """
    samples, gt = np.asarray(samples, float), np.asarray(gt, float)
    _check_samples(samples, gt)
    if brute_force:
        best = math.inf
        for sample in samples:
            total = 0.0
            for point, truth in zip(sample, gt):
                total += _point_distance(point, truth)
            best = min(best, total / len(gt))
        return best
    errors = np.linalg.norm(samples - gt, axis=-1).mean(axis=1)
    return float(errors.min())


def min_fde(
    samples: np.ndarray,
    gt: np.ndarray,
    brute_force: bool = False
) -> float:
    """Minimum over samples of the final-step displacement error."""
    samples, gt = np.asarray(samples, float), np.asarray(gt, float)
    _check_samples(samples, gt)
    if brute_force:
        return min(_point_distance(sample[-1], gt[-1]) for sample in samples)
    return float(final_errors(samples, gt).min())


def rf(
    samples: np.ndarray,
    gt: np.ndarray,
    brute_force: bool = False
) -> float:
    """Mean final error over min final error; 1 when the min is 0."""
    samples, gt = np.asarray(samples, float), np.asarray(gt, float)
    _check_samples(samples, gt)
    if brute_force:
        errors = [_point_distance(sample[-1], gt[-1]) for sample in samples]
        smallest = min(errors)
        if smallest == 0.0:
            return 1.0
        return (sum(errors) / len(errors)) / smallest
    errors = final_errors(samples, gt)
    smallest = errors.min()
    if smallest == 0.0:
        return 1.0
    # mean/min can round below 1 when all errors are equal
    return float(max(errors.mean() / smallest, 1.0))


# --------------------------------------------------------------------------
# Drivable-area metrics
# --------------------------------------------------------------------------

def _cell_of(point, origin: Pose, resolution: float):
    return (math.floor((float(point[1]) - origin.y) / resolution),
            math.floor((float(point[0]) - origin.x) / resolution))


def _inside(cells: np.ndarray, shape) -> np.ndarray:
    return (cells[..., 0] >= 0) & (cells[..., 0] < shape[0]) \
        & (cells[..., 1] >= 0) & (cells[..., 1] < shape[1])


def dao(
    samples: np.ndarray,
    mask: DrivableMask,
    resolution: float,
    origin: Pose = Pose(0.0, 0.0),
    brute_force: bool = False
) -> float:
    """
    Distinct drivable cells occupied by any predicted point, over the
    number of drivable cells, times 1e4.

    Args:
        samples: (..., 2) predicted points of any leading shape
        mask: Drivable mask of the scene
        resolution: Meters per cell
        origin: Scene-frame corner of cell (0, 0)

    Raises:
        SceneInvariantError: If the mask has no drivable cell
    """
    cells_mask = np.asarray(mask.cells, dtype=bool)
    drivable = int(cells_mask.sum())
    if drivable == 0:
        raise SceneInvariantError("dao: mask has no drivable cell")
    points = np.asarray(samples, float).reshape(-1, 2)
    height, width = cells_mask.shape
    if brute_force:
        hit = set()
        for point in points:
            row, col = _cell_of(point, origin, resolution)
            if 0 <= row < height and 0 <= col < width \
                    and cells_mask[row, col]:
                hit.add((row, col))
        return len(hit) / drivable * DAO_SCALE
    cells = world_to_cell(points, origin, resolution)
    cells = cells[_inside(cells, cells_mask.shape)]
    cells = cells[cells_mask[cells[:, 0], cells[:, 1]]]
    occupied = np.unique(cells[:, 0] * width + cells[:, 1]).size
    return occupied / drivable * DAO_SCALE


def dac(
    samples: np.ndarray,
    mask: DrivableMask,
    resolution: float,
    origin: Pose = Pose(0.0, 0.0),
    brute_force: bool = False
) -> float:
    """
    Fraction of samples with every point on a drivable cell.

    Args:
        samples: (k, T, 2) predicted futures

    Raises:
        ContractError: If k = 0
    """
    samples = np.asarray(samples, float)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ContractError(
            f"dac needs k >= 1 samples of shape (k, T, 2), got "
            f"{samples.shape}")
    cells_mask = np.asarray(mask.cells, dtype=bool)
    height, width = cells_mask.shape
    if brute_force:
        compliant = 0
        for sample in samples:
            ok = True
            for point in sample:
                row, col = _cell_of(point, origin, resolution)
                if not (0 <= row < height and 0 <= col < width
                        and cells_mask[row, col]):
                    ok = False
                    break
            compliant += ok
        return compliant / len(samples)
    cells = world_to_cell(samples, origin, resolution)
    inside = _inside(cells, cells_mask.shape)
    rows = np.where(inside, cells[..., 0], 0)
    cols = np.where(inside, cells[..., 1], 0)
    on_road = inside & cells_mask[rows, cols]
    return float(np.all(on_road, axis=1).mean())


# --------------------------------------------------------------------------
# Scene and dataset reports
# --------------------------------------------------------------------------

def scene_metrics(
    scene: Scene,
    samples: np.ndarray,
    brute_force: bool = False
) -> MetricsReport:
    """
    All five metrics for one scene.

    Displacement metrics and dac are averaged over agents; dao is computed
    over the union of every agent's predicted points.

    Args:
        scene: Scene with ground-truth futures
        samples: (A, k, T, 2) predictions in the scene frame
    """
    samples = np.asarray(samples, float)
    if samples.ndim != 4 or samples.shape[0] != scene.num_agents:
        raise DimensionError(
            f"Expected ({scene.num_agents}, k, T, 2) predictions, got "
            f"{samples.shape}")
    futures = scene.futures()
    raster = scene.raster
    ade, fde, spread, compliance = [], [], [], []
    for agent_samples, gt in zip(samples, futures):
        ade.append(min_ade(agent_samples, gt, brute_force))
        fde.append(min_fde(agent_samples, gt, brute_force))
        spread.append(rf(agent_samples, gt, brute_force))
        compliance.append(dac(agent_samples, scene.mask, raster.resolution,
                              raster.origin, brute_force))
    return MetricsReport(
        min_ade=float(np.mean(ade)),
        min_fde=float(np.mean(fde)),
        rf=float(np.mean(spread)),
        dao=dao(samples, scene.mask, raster.resolution, raster.origin,
                brute_force),
        dac=float(np.mean(compliance)),
        k=int(samples.shape[1]))


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise mean of per-scene reports."""
    if not reports:
        raise ContractError("Cannot aggregate an empty list of reports")
    means = {name: float(np.mean([getattr(report, name)
                                  for report in reports]))
             for name in METRIC_FIELDS}
    return MetricsReport(k=reports[0].k, **means)


def evaluation_report(
    scene_ids: Sequence[str],
    per_scene: Sequence[MetricsReport]
) -> EvaluationReport:
    return EvaluationReport(scene_ids=list(scene_ids),
                            per_scene=list(per_scene),
                            aggregate=aggregate(per_scene))


def report_document(report: EvaluationReport) -> Dict[str, Any]:
    """JSON content: {per_scene: [...], aggregate: {...}}."""
    return {
        "per_scene": [
            {"scene_id": scene_id, **entry._asdict()}
            for scene_id, entry in zip(report.scene_ids, report.per_scene)
        ],
        "aggregate": report.aggregate._asdict(),
    }


def write_report(report: EvaluationReport, path: str | Path) -> Path:
    """
    Write the JSON report to `path` and the flat CSV table next to it.

    Returns:
        Path of the CSV file (`path` with a .csv suffix)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(report_document(report), indent=2, sort_keys=True) + "\n",
        encoding='utf-8')
    csv_path = path.with_suffix(".csv") if path.suffix != ".csv" \
        else path.with_name(path.name + ".csv")
    write_to_csv(list(zip(report.scene_ids, report.per_scene)), csv_path,
                 REPORT_HEADER_MAPPING)
    return csv_path
