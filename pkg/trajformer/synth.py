"""
Synthetic driving scenes.

Every scene is one maneuver corridor on a square grid: a centerline
polyline, a drivable corridor of half-width `lane_width` around it, and
one or more agents driving along the centerline at constant speed with a
little truncated Gaussian position noise. Positions are taken at uniform
arc-length steps, so past and future poses share one time stride.

Raster channels:
    0  drivable corridor (the mask, as 0/1)
    1  agent occupancy, a disc around each agent's last observed pose
    2  centerline marking
"""

from typing import Dict, Final, List, NamedTuple, Optional, Tuple

import numpy as np

from trajformer.errors import ConfigError
from trajformer.scene import (
    DEFAULT_FUTURE_STEPS, DEFAULT_PAST_STEPS, DEFAULT_PRIOR_FLOOR,
    TIME_STRIDE_S, AgentTrack, BevRaster, DrivableMask, Pose, Scene,
    build_prior, validate_scene, world_to_cell)
from trajformer.seeding import substream

POLYLINE_SPACING_M = 0.25
AGENT_DISC_RADIUS_M = 1.0
EDGE_MARGIN_M = 1.0


class ManeuverSpec(NamedTuple):
    """Geometry of one maneuver class.

    Attributes:
        name: Class name, used as the scene id prefix
        turn: +1 left, -1 right, 0 none
        lateral_shift_lanes: Lateral displacement in lane widths
        description: Human-readable summary
    """
    name: str
    turn: int
    lateral_shift_lanes: float
    description: str


MANEUVER_SPECS: Final[Dict[str, ManeuverSpec]] = {
    "straight": ManeuverSpec(
        name="straight",
        turn=0,
        lateral_shift_lanes=0.0,
        description="Straight corridor across the grid"
    ),
    "left-turn": ManeuverSpec(
        name="left-turn",
        turn=1,
        lateral_shift_lanes=0.0,
        description="Quarter-circle turn to the left"
    ),
    "right-turn": ManeuverSpec(
        name="right-turn",
        turn=-1,
        lateral_shift_lanes=0.0,
        description="Quarter-circle turn to the right"
    ),
    "lane-change": ManeuverSpec(
        name="lane-change",
        turn=0,
        lateral_shift_lanes=1.0,
        description="Smooth shift by one lane width"
    ),
}


class SynthConfig(NamedTuple):
    """Generation parameters.

    Attributes:
        per_class: Scenes per maneuver class
        class_counts: Optional per-class override of `per_class`
        speed_range: Agent speed bounds, m/s
        noise_sigma: Position noise, meters (truncated at 3 sigma)
        agents_range: Inclusive bounds on agents per scene
        grid_size: Raster height and width in cells
        resolution: Meters per cell
        lane_width: Lane width and corridor half-width, meters
        turn_radius: Radius of the turn arcs, meters
        past_steps: Observed steps t
        future_steps: Predicted steps T
        dt: Time stride, seconds
        prior_floor: Prior mass of each non-drivable cell
    """
    per_class: int = 10
    class_counts: Optional[Dict[str, int]] = None
    speed_range: Tuple[float, float] = (3.0, 6.0)
    noise_sigma: float = 0.05
    agents_range: Tuple[int, int] = (1, 3)
    grid_size: int = 96
    resolution: float = 0.5
    lane_width: float = 3.5
    turn_radius: float = 10.0
    past_steps: int = DEFAULT_PAST_STEPS
    future_steps: int = DEFAULT_FUTURE_STEPS
    dt: float = TIME_STRIDE_S
    prior_floor: float = DEFAULT_PRIOR_FLOOR

    @property
    def extent(self) -> float:
        return self.grid_size * self.resolution

    def count_for(self, maneuver: str) -> int:
        if self.class_counts is not None and maneuver in self.class_counts:
            return self.class_counts[maneuver]
        return self.per_class

    def validate(self) -> "SynthConfig":
        """
        Raises:
            ConfigError: On out-of-range values, unknown class names, or a
                speed/horizon combination longer than some maneuver path
        """
        low, high = self.speed_range
        if not 0 < low <= high:
            raise ConfigError(f"Invalid speed range {self.speed_range}")
        if not 1 <= self.agents_range[0] <= self.agents_range[1]:
            raise ConfigError(f"Invalid agents range {self.agents_range}")
        if self.per_class < 0 or self.noise_sigma < 0:
            raise ConfigError("per_class and noise_sigma must be >= 0")
        if self.past_steps < 2 or self.future_steps < 1:
            raise ConfigError("Need past_steps >= 2 and future_steps >= 1")
        if self.grid_size < 8 or self.resolution <= 0 or self.dt <= 0:
            raise ConfigError("grid_size >= 8, resolution > 0, dt > 0 needed")
        unknown = set(self.class_counts or {}) - set(MANEUVER_SPECS)
        if unknown:
            raise ConfigError(
                f"Unknown maneuver classes: {', '.join(sorted(unknown))}")
        if not 0 < self.prior_floor < 1.0 / self.grid_size ** 2:
            raise ConfigError(
                f"prior_floor must lie in (0, 1/grid cells), got "
                f"{self.prior_floor}")
        travel = self.travel_distance(high)
        for name in MANEUVER_SPECS:
            length = path_length(centerline(name, self))
            if travel > length:
                raise ConfigError(
                    f"Infeasible config: {travel:.1f} m of travel at "
                    f"{high} m/s exceeds the {length:.1f} m {name} path")
        return self

    def travel_distance(self, speed: float) -> float:
        """Arc length covered by one track (past and future) at `speed`."""
        return speed * self.dt * (self.past_steps + self.future_steps - 1)


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------

def _segment(start, end, spacing: float) -> np.ndarray:
    start, end = np.asarray(start, float), np.asarray(end, float)
    count = max(int(np.ceil(np.linalg.norm(end - start) / spacing)), 1)
    steps = np.linspace(0.0, 1.0, count + 1)[:, None]
    return start + steps * (end - start)


def _turn(cfg: SynthConfig, direction: int) -> np.ndarray:
    extent, radius = cfg.extent, cfg.turn_radius
    spacing = POLYLINE_SPACING_M
    x_turn = extent / 2
    y_start = extent / 2 - direction * radius / 2
    approach = _segment((EDGE_MARGIN_M, y_start), (x_turn, y_start), spacing)
    count = max(int(np.ceil(np.pi / 2 * radius / spacing)), 1)
    angles = np.linspace(0.0, np.pi / 2, count + 1)
    arc = np.stack([x_turn + radius * np.sin(angles),
                    y_start + direction * radius * (1.0 - np.cos(angles))],
                   axis=1)
    y_end = EDGE_MARGIN_M if direction < 0 else extent - EDGE_MARGIN_M
    exit_leg = _segment(arc[-1], (arc[-1][0], y_end), spacing)
    return np.concatenate([approach, arc[1:], exit_leg[1:]])


def centerline(maneuver: str, cfg: SynthConfig) -> np.ndarray:
    """
    (N, 2) dense centerline polyline of a maneuver class, scene frame.

    Raises:
        ConfigError: For an unknown maneuver name
    """
    if maneuver not in MANEUVER_SPECS:
        raise ConfigError(f"Unknown maneuver class: {maneuver}")
    spec = MANEUVER_SPECS[maneuver]
    extent = cfg.extent
    if spec.turn:
        return _turn(cfg, spec.turn)

    shift = spec.lateral_shift_lanes * cfg.lane_width
    xs = _segment((EDGE_MARGIN_M, 0.0), (extent - EDGE_MARGIN_M, 0.0),
                  POLYLINE_SPACING_M)[:, 0]
    progress = np.clip((xs - extent / 3) / (extent / 3), 0.0, 1.0)
    ys = extent / 2 - shift / 2 + shift * (1.0 - np.cos(np.pi * progress)) / 2
    return np.stack([xs, ys], axis=1)


def cumulative_length(polyline: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def path_length(polyline: np.ndarray) -> float:
    return float(cumulative_length(polyline)[-1])


def point_at(polyline: np.ndarray, arc: np.ndarray) -> np.ndarray:
    """Positions at arc lengths `arc` along the polyline."""
    lengths = cumulative_length(polyline)
    return np.stack([np.interp(arc, lengths, polyline[:, 0]),
                     np.interp(arc, lengths, polyline[:, 1])], axis=-1)


def _cell_centers(cfg: SynthConfig) -> np.ndarray:
    index = (np.arange(cfg.grid_size) + 0.5) * cfg.resolution
    xs, ys = np.meshgrid(index, index)
    return np.stack([xs, ys], axis=-1)


def _distance_to(centers: np.ndarray, points: np.ndarray) -> np.ndarray:
    """(H, W) distance from each cell center to the nearest point."""
    flat = centers.reshape(-1, 2)
    nearest = np.full(flat.shape[0], np.inf)
    for point in points:
        nearest = np.minimum(nearest, np.hypot(flat[:, 0] - point[0],
                                               flat[:, 1] - point[1]))
    return nearest.reshape(centers.shape[:2])


def corridor_mask(polyline: np.ndarray, cfg: SynthConfig) -> DrivableMask:
    """Cells whose center lies within `lane_width` of the centerline."""
    distance = _distance_to(_cell_centers(cfg), polyline)
    return DrivableMask(distance <= cfg.lane_width)


# --------------------------------------------------------------------------
# Scenes
# --------------------------------------------------------------------------

def _track(
    polyline: np.ndarray,
    cfg: SynthConfig,
    rng: np.random.Generator,
    agent_id: str
) -> AgentTrack:
    steps = cfg.past_steps + cfg.future_steps
    speed = rng.uniform(*cfg.speed_range)
    travel = cfg.travel_distance(speed)
    start = rng.uniform(0.0, path_length(polyline) - travel)
    arc = start + speed * cfg.dt * np.arange(steps)
    poses = point_at(polyline, arc)
    if cfg.noise_sigma > 0:
        bound = 3.0 * cfg.noise_sigma
        poses = poses + np.clip(rng.normal(0.0, cfg.noise_sigma, poses.shape),
                                -bound, bound)
    return AgentTrack(agent_id=agent_id,
                      past=poses[:cfg.past_steps],
                      future=poses[cfg.past_steps:])


def _raster(
    polyline: np.ndarray,
    mask: DrivableMask,
    tracks: List[AgentTrack],
    cfg: SynthConfig
) -> BevRaster:
    data = np.zeros((cfg.grid_size, cfg.grid_size, 3), dtype=np.float32)
    data[..., 0] = mask.cells
    centers = _cell_centers(cfg)
    last_poses = np.array([track.past[-1] for track in tracks])
    data[..., 1] = _distance_to(centers, last_poses) <= AGENT_DISC_RADIUS_M
    cells = world_to_cell(polyline, Pose(0.0, 0.0), cfg.resolution)
    cells = np.clip(cells, 0, cfg.grid_size - 1)
    data[cells[:, 0], cells[:, 1], 2] = 1.0
    return BevRaster(data=data, resolution=cfg.resolution,
                     origin=Pose(0.0, 0.0))


def synth_scene(
    maneuver: str,
    index: int,
    cfg: SynthConfig,
    seed: int
) -> Scene:
    """Scene `index` of one maneuver class, from the substream
    ("synth", maneuver, index) of `seed`."""
    rng = substream(seed, "synth", maneuver, index)
    polyline = centerline(maneuver, cfg)
    mask = corridor_mask(polyline, cfg)
    low, high = cfg.agents_range
    agents = int(rng.integers(low, high + 1))
    tracks = [_track(polyline, cfg, rng, f"agent-{j}") for j in range(agents)]
    scene = Scene(
        scene_id=f"{maneuver}-{index:04d}",
        raster=_raster(polyline, mask, tracks, cfg),
        mask=mask,
        prior=build_prior(mask, cfg.prior_floor),
        tracks=tuple(tracks))
    return validate_scene(scene, cfg.past_steps, cfg.future_steps)


def synth_scenes(cfg: SynthConfig, seed: int) -> List[Scene]:
    """
    Generate a dataset, class by class in `MANEUVER_SPECS` order.

    Args:
        cfg: Generation parameters
        seed: Master seed

    Returns:
        Scenes ordered by class, then index

    Raises:
        ConfigError: If the configuration is invalid or infeasible
    """
    cfg.validate()
    return [synth_scene(maneuver, index, cfg, seed)
            for maneuver in MANEUVER_SPECS
            for index in range(cfg.count_for(maneuver))]
