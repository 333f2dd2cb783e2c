import xml.etree.ElementTree as ET

import numpy as np
import pytest

from trajformer.errors import SceneFormatError
from trajformer.flow import TrajectorySamples, prediction_document
from trajformer.plotting import PIXELS_PER_METER, render_svg, write_plot
from tests.conftest import make_scene

SVG = "{http://www.w3.org/2000/svg}"


def document_for(scene, k: int = 3):
    rng = np.random.default_rng(0)
    positions = scene.futures()[:, None] + rng.normal(
        0, 0.3, size=(scene.num_agents, k, 6, 2))
    samples = TrajectorySamples(positions, np.zeros_like(positions),
                                np.zeros((scene.num_agents, k)))
    return prediction_document(
        scene.scene_id, [track.agent_id for track in scene.tracks], samples)


def test_one_path_per_sample():
    scene = make_scene(3, seed=1)
    root = ET.fromstring(render_svg(scene, document_for(scene, k=4)))
    assert root.tag == f"{SVG}svg"
    assert len(root.findall(f"{SVG}path")) == 3 * 4
    classes = [item.get("class") for item in root.findall(f"{SVG}polyline")]
    assert classes.count("past") == 3
    assert classes.count("ground-truth") == 3


def test_canvas_size_and_mask_runs():
    scene = make_scene(1, grid=16)
    root = ET.fromstring(render_svg(scene, document_for(scene)))
    assert float(root.get("width")) == 16 * PIXELS_PER_METER
    rects = root.find(f"{SVG}g").findall(f"{SVG}rect")
    # rows 2..13 each hold one run of drivable cells
    assert len(rects) == 12
    assert float(rects[0].get("width")) == 12 * PIXELS_PER_METER


def test_y_axis_is_flipped():
    scene = make_scene(1, grid=16)
    root = ET.fromstring(render_svg(scene, document_for(scene)))
    top_row = root.find(f"{SVG}g").findall(f"{SVG}rect")[-1]
    assert float(top_row.get("y")) == 2 * PIXELS_PER_METER


def test_unknown_agent_is_rejected():
    scene = make_scene(2)
    document = document_for(scene)
    document["agents"][1]["id"] = "ghost"
    with pytest.raises(SceneFormatError, match="ghost"):
        render_svg(scene, document)


def test_write_plot(tmp_path):
    scene = make_scene(2)
    path = tmp_path / "plots" / "scene.svg"
    write_plot(scene, document_for(scene), path)
    assert path.read_text(encoding='utf-8').rstrip().endswith("</svg>")
