"""
SVG rendering of a scene and its predictions.

The drawing shows the drivable mask (one rect per horizontal run of
drivable cells), each agent's past and ground-truth future as polylines,
and every sampled future as its own `<path>` element. Scene y grows
upwards; SVG y grows downwards, so y is flipped.
"""

from pathlib import Path
from typing import Any, Dict, List, NamedTuple

import numpy as np

from trajformer.errors import SceneFormatError
from trajformer.flow import validate_prediction_document
from trajformer.scene import Scene

PIXELS_PER_METER = 8.0


class PlotStyle(NamedTuple):
    """Colors and stroke widths of the plot."""
    background: str = "#ffffff"
    drivable: str = "#d9d9d9"
    past: str = "#1f4e9c"
    ground_truth: str = "#1a8a3a"
    sample: str = "#d9480f"
    stroke_width: float = 2.0
    sample_opacity: float = 0.6


class _Canvas(NamedTuple):
    x0: float
    y0: float
    height_m: float
    scale: float

    def point(self, x: float, y: float) -> str:
        return (f"{(x - self.x0) * self.scale:.2f},"
                f"{(self.height_m - (y - self.y0)) * self.scale:.2f}")


def generate_header(width: float, height: float, style: PlotStyle) -> str:
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'  <rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" '
        f'fill="{style.background}"/>',
    ])


def generate_mask(scene: Scene, canvas: _Canvas, style: PlotStyle) -> str:
    """One rect per horizontal run of drivable cells."""
    cells = np.asarray(scene.mask.cells, dtype=bool)
    res = scene.raster.resolution
    size = res * canvas.scale
    rects: List[str] = [f'  <g id="drivable" fill="{style.drivable}">']
    for row in range(cells.shape[0]):
        padded = np.concatenate([[False], cells[row], [False]])
        edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
        for start, stop in zip(edges[::2], edges[1::2]):
            top = (canvas.height_m - (row + 1) * res) * canvas.scale
            rects.append(
                f'    <rect x="{start * size:.2f}" y="{top:.2f}" '
                f'width="{(stop - start) * size:.2f}" height="{size:.2f}"/>')
    rects.append('  </g>')
    return "\n".join(rects)


def generate_polyline(
    points: np.ndarray,
    canvas: _Canvas,
    color: str,
    style: PlotStyle,
    css_class: str
) -> str:
    coords = " ".join(canvas.point(x, y) for x, y in points)
    return (f'  <polyline class="{css_class}" points="{coords}" fill="none" '
            f'stroke="{color}" stroke-width="{style.stroke_width}"/>')


def generate_sample_path(
    anchor: np.ndarray,
    sample: np.ndarray,
    canvas: _Canvas,
    style: PlotStyle
) -> str:
    """A path from the last observed pose through one sampled future."""
    commands = [f"M {canvas.point(*anchor)}"]
    commands.extend(f"L {canvas.point(x, y)}" for x, y in sample)
    return (f'  <path class="sample" d="{" ".join(commands)}" fill="none" '
            f'stroke="{style.sample}" stroke-opacity="{style.sample_opacity}" '
            f'stroke-width="{style.stroke_width / 2}"/>')


def render_svg(
    scene: Scene,
    prediction: Dict[str, Any],
    style: PlotStyle = PlotStyle(),
    scale: float = PIXELS_PER_METER
) -> str:
    """
    Render a scene and a prediction document as SVG text.

    Args:
        scene: Scene with mask, pasts and ground truth
        prediction: Prediction document for the same scene
        style: Colors and strokes
        scale: Pixels per meter

    Returns:
        Complete SVG document

    Raises:
        SceneFormatError: If the prediction is malformed or names an agent
            the scene does not have
    """
    validate_prediction_document(prediction)
    raster = scene.raster
    width_m = raster.width * raster.resolution
    height_m = raster.height * raster.resolution
    canvas = _Canvas(raster.origin.x, raster.origin.y, height_m, scale)
    tracks = {track.agent_id: track for track in scene.tracks}

    sections = [generate_header(width_m * scale, height_m * scale, style),
                generate_mask(scene, canvas, style)]
    for track in scene.tracks:
        sections.append(generate_polyline(
            track.past, canvas, style.past, style, "past"))
        sections.append(generate_polyline(
            np.concatenate([track.past[-1:], track.future]), canvas,
            style.ground_truth, style, "ground-truth"))
    for agent in prediction["agents"]:
        if agent["id"] not in tracks:
            raise SceneFormatError(
                f"prediction agent '{agent['id']}' is not in scene "
                f"'{scene.scene_id}'")
        anchor = tracks[agent["id"]].past[-1]
        for sample in np.asarray(agent["samples"], dtype=np.float64):
            sections.append(generate_sample_path(anchor, sample, canvas,
                                                 style))
    sections.append("</svg>")
    return "\n".join(sections) + "\n"


def write_plot(
    scene: Scene,
    prediction: Dict[str, Any],
    path: str | Path
) -> None:
    """Render and save an SVG plot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(scene, prediction), encoding='utf-8')
