import numpy as np
import pytest

from ivos.synthlab import (SceneSpec, ShapeSpec, ObjectSpec, Trajectory,
                           render_scene, standard_suite_specs)


@pytest.fixture(scope="session")
def suite():
    """All bundled scenes rendered once: name -> (frames, truth)."""
    return {name: render_scene(spec)
            for name, spec in standard_suite_specs().items()}


@pytest.fixture(scope="session")
def static_scene(suite):
    return suite["static"]


@pytest.fixture(scope="session")
def linear_scene(suite):
    return suite["linear"]


@pytest.fixture(scope="session")
def crossing_scene(suite):
    return suite["crossing"]


def single_rect_scene(cx=10.0, cy=10.0, w=8, h=8, vx=0.0, vy=0.0,
                      num_frames=10, size=64):
    """Minimal one-object scene for hand-computable trajectories."""
    return SceneSpec(
        "test-rect", size, size, num_frames,
        (ObjectSpec(1, ShapeSpec("rectangle", {"width": w, "height": h}), 1,
                    Trajectory(cx, cy, vx=vx, vy=vy), (200, 60, 60)),),
        background_seed=3)


def full_square_mask(side=16, canvas=32, origin=(0, 0)):
    mask = np.zeros((canvas, canvas), dtype=bool)
    y0, x0 = origin[1], origin[0]
    mask[y0:y0 + side, x0:x0 + side] = True
    return mask
