import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ugcs.assets import BUNDLED, load_bundled  # noqa: E402
from ugcs.coordspace import ObjectCloud, build_print, max_graspable_sphere, object_map_from_grasp  # noqa: E402
from ugcs.mesh import icosphere, sample_surface  # noqa: E402

_CACHE = {}
ACCEPTANCE_LINES = []


def gripper_setup(name):
    """(model, sphere fit, 10000-ray print) for a bundled gripper, cached."""
    if name not in _CACHE:
        model = load_bundled(name)
        fit = max_graspable_sphere(model)
        _CACHE[name] = (model, fit, build_print(model, fit))
    return _CACHE[name]


def sphere_cloud(fit, count=2048, seed=0):
    """Surface samples of the maximal sphere (palm frame) with radial normals."""
    mesh = icosphere(fit.radius, 4, fit.center)
    pts, _, _ = sample_surface(mesh, count, np.random.default_rng(seed))
    normals = (pts - fit.center) / np.linalg.norm(pts - fit.center, axis=1, keepdims=True)
    return ObjectCloud(pts, normals, "sphere")


def self_sphere_case(name):
    """Object = the gripper's own maximal sphere, map = ground-truth self map."""
    key = ("self", name)
    if key not in _CACHE:
        model, fit, print_ = gripper_setup(name)
        cloud = sphere_cloud(fit)
        mesh = icosphere(fit.radius, 4, fit.center)
        cmap = object_map_from_grasp(print_, fit.capture_config, model, cloud)
        _CACHE[key] = (model, fit, print_, cloud, mesh, cmap)
    return _CACHE[key]


@pytest.fixture(params=BUNDLED)
def bundled(request):
    return gripper_setup(request.param)


@pytest.fixture
def jaw():
    return gripper_setup("parallel_jaw")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
