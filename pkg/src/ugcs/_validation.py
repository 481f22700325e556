"""Input validation helpers shared by the public API."""

import numpy as np

UNIT_TOL = 1e-6


class UGCSError(Exception):
    """Base class for domain errors raised by this package."""


class InvalidArgumentError(UGCSError, ValueError):
    pass


def check_points(points, name="points", allow_empty=False):
    """Return ``points`` as a float64 (n, 3) array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidArgumentError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise InvalidArgumentError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def check_unit_vectors(dirs, name="dirs", tol=UNIT_TOL):
    arr = check_points(dirs, name)
    norms = np.linalg.norm(arr, axis=1)
    bad = np.abs(norms - 1.0) > tol
    if np.any(bad):
        raise InvalidArgumentError(
            f"{name} must be unit vectors; {int(bad.sum())} deviate by more than {tol:g}"
        )
    return arr


def check_coords(coords, name="coords", allow_empty=False):
    """Return normalized spherical coordinates as a float64 (n, 2) array in [0, 1)."""
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidArgumentError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise InvalidArgumentError(f"{name} must not be empty")
    if not (np.all(arr >= 0.0) and np.all(arr < 1.0)):
        raise InvalidArgumentError(f"{name} must lie in [0, 1)")
    return arr


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
