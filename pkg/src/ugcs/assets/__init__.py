"""Bundled gripper descriptions."""

import os

ASSET_DIR = os.path.dirname(os.path.abspath(__file__))

BUNDLED = ("parallel_jaw", "three_finger", "hand5")
EXTRA = ("parallel_jaw_mirrored", "parallel_jaw_closed")


def asset_path(name):
    path = os.path.join(ASSET_DIR, name, name + ".urdf")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no bundled gripper named {name!r}")
    return path


def load_bundled(name):
    from ..kinematics import load_gripper

    return load_gripper(asset_path(name))
