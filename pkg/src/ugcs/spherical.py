"""Normalized spherical coordinates on the unit sphere.

Coordinates are stored as ``(lambda, phi)`` pairs in ``[0, 1)``.  The angular
convention is ``phi = asin(z)`` (latitude) and ``lambda = atan2(y, x)``
(longitude), mapped from ``[-pi, pi) x [-pi/2, pi/2)`` onto the unit square.
Radians only appear inside formulas.

``(0, 0)`` is the no-contact pole (direction ``-z``); the palm pole sits at
``phi -> 1`` (direction ``+z``).
"""

import numpy as np

from ._validation import check_coords, check_positive_int, check_unit_vectors

NO_CONTACT = (0.0, 0.0)
POLE_EPS = 1e-9
# largest double below 1.0; phi at the +z pole is clamped here
PHI_MAX = float(np.nextafter(1.0, 0.0))

__all__ = [
    "NO_CONTACT",
    "spherical_from_unit",
    "unit_from_spherical",
    "normalized_from_radians",
    "radians_from_normalized",
    "haversine",
    "haversine_matrix",
    "fibonacci_directions",
]


def normalized_from_radians(lam_rad, phi_rad):
    """Map radians to normalized ``(lambda, phi)`` with pole canonicalization."""
    lam_rad = np.asarray(lam_rad, dtype=np.float64)
    phi_rad = np.asarray(phi_rad, dtype=np.float64)
    lam = (lam_rad + np.pi) / (2.0 * np.pi)
    lam = lam - np.floor(lam)
    lam = np.where(lam >= 1.0, 0.0, lam)
    phi = (phi_rad + 0.5 * np.pi) / np.pi
    phi = np.clip(phi, 0.0, PHI_MAX)
    at_pole = np.abs(phi_rad) >= 0.5 * np.pi - POLE_EPS
    lam = np.where(at_pole, 0.0, lam)
    return np.stack([lam, phi], axis=-1)


def radians_from_normalized(coords):
    """Return ``(lam_rad, phi_rad)`` arrays for normalized coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    lam_rad = coords[..., 0] * (2.0 * np.pi) - np.pi
    phi_rad = coords[..., 1] * np.pi - 0.5 * np.pi
    return lam_rad, phi_rad


def spherical_from_unit(dirs):
    """Normalized spherical coordinates of unit direction(s).

    Accepts a single 3-vector or an (n, 3) array and returns a matching
    (2,) or (n, 2) array.
    """
    single = np.ndim(dirs) == 1
    d = check_unit_vectors(dirs)
    z = np.clip(d[:, 2], -1.0, 1.0)
    out = normalized_from_radians(np.arctan2(d[:, 1], d[:, 0]), np.arcsin(z))
    return out[0] if single else out


def unit_from_spherical(coords):
    """Inverse of :func:`spherical_from_unit`."""
    single = np.ndim(coords) == 1
    c = check_coords(coords)
    lam, phi = radians_from_normalized(c)
    cp = np.cos(phi)
    out = np.stack([cp * np.cos(lam), cp * np.sin(lam), np.sin(phi)], axis=-1)
    return out[0] if single else out


def _haversine_rad(lam_a, phi_a, lam_b, phi_b):
    h = np.sin(0.5 * (phi_b - phi_a)) ** 2 + np.cos(phi_a) * np.cos(phi_b) * np.sin(
        0.5 * (lam_b - lam_a)
    ) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * np.arctan2(np.sqrt(h), np.sqrt(1.0 - h))


def haversine(a, b):
    """Great-circle arc length (radians) between normalized coordinates.

    Broadcasts over leading dimensions; scalar result for two single pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    la, pa = radians_from_normalized(a)
    lb, pb = radians_from_normalized(b)
    out = _haversine_rad(la, pa, lb, pb)
    return float(out) if out.ndim == 0 else out


def haversine_matrix(a, b):
    """All-pairs arc lengths, shape (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    la, pa = radians_from_normalized(a)
    lb, pb = radians_from_normalized(b)
    return _haversine_rad(la[:, None], pa[:, None], lb[None, :], pb[None, :])


def fibonacci_directions(count):
    """Deterministic, near-uniform unit directions on the sphere (golden-angle spiral)."""
    count = check_positive_int(count, "count")
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / count
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    theta = golden * i
    dirs = np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
