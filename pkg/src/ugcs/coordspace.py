"""Unified gripper coordinate space construction.

A gripper is fitted with its maximal graspable sphere, then rays cast from the
sphere center give the gripper print: interior surface points paired with the
normalized spherical coordinate of the ray that found them.  Grasps are turned
into object coordinate maps by nearest-print-point assignment.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import bvh as _bvh
from ._validation import InvalidArgumentError, UGCSError, check_coords, check_points
from .kinematics import GraspConfig, LinkPoints, _root_frame_fk, posed_positions
from .mesh import concatenate
from .spherical import fibonacci_directions, spherical_from_unit

CONTACT_THRESHOLD = 0.01
MIN_RAYS = 1000


class SphereFitError(UGCSError):
    pass


class EmptyPrintError(UGCSError):
    pass


@dataclass(frozen=True)
class SphereFit:
    radius: float
    center: np.ndarray  # palm frame
    capture_config: GraspConfig
    open_joints: np.ndarray
    probes: tuple = ()  # (radius, passed) pairs evaluated by the search


@dataclass(frozen=True)
class GripperPrint:
    """Fixed gripper surface points (palm frame) and their sphere coordinates."""

    gripper_id: str
    sphere_center: np.ndarray
    sphere_radius: float
    print_config: GraspConfig
    points: np.ndarray
    coords: np.ndarray
    links: tuple
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pts = check_points(self.points, "print points")
        coords = check_coords(self.coords, "print coords")
        if len(pts) != len(coords) or len(pts) != len(self.links):
            raise InvalidArgumentError("print points, coords and links differ in length")
        if np.any(np.all(coords == 0.0, axis=1)):
            raise InvalidArgumentError("print coordinates must not contain the no-contact pole")
        center = np.asarray(self.sphere_center, dtype=np.float64).reshape(3)
        for arr in (pts, coords, center):
            arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "sphere_center", center)
        object.__setattr__(self, "sphere_radius", float(self.sphere_radius))
        object.__setattr__(self, "links", tuple(self.links))

    def __len__(self):
        return len(self.points)

    def link_points(self, model):
        """Print points re-expressed in their link frames, for posing under any q."""
        if model.name != self.gripper_id:
            raise InvalidArgumentError(
                f"print belongs to gripper {self.gripper_id!r}, model is {model.name!r}"
            )
        key = id(model)
        if key not in self._cache:
            for name in set(self.links):
                if name not in model.link_index:
                    raise InvalidArgumentError(f"print references unknown link {name!r}")
            ids = np.array([model.link_index[n] for n in self.links], dtype=np.int64)
            local = _local_from_palm(model, self.print_config, ids, self.points)
            self._cache[key] = (model, LinkPoints(model, ids, local))
        return self._cache[key][1]


@dataclass(frozen=True)
class ObjectCloud:
    points: np.ndarray
    normals: np.ndarray
    object_id: str = "object"

    def __post_init__(self):
        pts = check_points(self.points, "object points")
        nrm = check_points(self.normals, "object normals")
        if len(pts) != len(nrm):
            raise InvalidArgumentError("object points and normals differ in length")
        if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
            raise InvalidArgumentError("object normals must be unit vectors")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)

    def translated(self, t):
        return ObjectCloud(self.points + np.asarray(t, dtype=np.float64), self.normals, self.object_id)


@dataclass(frozen=True)
class CoordinateMap:
    """Per-object-point coordinates; non-contact points hold exactly (0, 0)."""

    coords: np.ndarray
    contact: np.ndarray
    object_id: str = "object"

    def __post_init__(self):
        coords = check_coords(self.coords, "map coords")
        contact = np.asarray(self.contact, dtype=bool).reshape(-1)
        if len(contact) != len(coords):
            raise InvalidArgumentError("map coords and contact mask differ in length")
        pole = np.all(coords == 0.0, axis=1)
        if np.any(pole & contact):
            raise InvalidArgumentError("contact points must not carry the no-contact coordinate")
        if np.any(~pole & ~contact):
            raise InvalidArgumentError("non-contact points must carry exactly (0, 0)")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "contact", contact)

    def __len__(self):
        return len(self.coords)

    @classmethod
    def from_predictions(cls, coords, object_id="object"):
        """Wrap raw predicted coordinates; exact (0, 0) entries become non-contact."""
        coords = check_coords(coords)
        contact = ~np.all(coords == 0.0, axis=1)
        return cls(coords, contact, object_id)

    @property
    def contact_fraction(self):
        return float(self.contact.mean())


@dataclass(frozen=True)
class GraspRecord:
    gripper_id: str
    object_id: str
    config: GraspConfig


# --- helpers ------------------------------------------------------------------------

def _palm_transform(model, joints):
    T, _, _ = _root_frame_fk(model, joints)
    return T[model.palm_link]


def _local_from_palm(model, config, link_ids, points):
    T, _, _ = _root_frame_fk(model, config.joints)
    T_palm = T[model.palm_link]
    root_pts = points @ T_palm[:3, :3].T + T_palm[:3, 3]
    local = np.empty_like(root_pts)
    for li in np.unique(link_ids):
        m = link_ids == li
        Tl = T[model.link_names[li]]
        local[m] = (root_pts[m] - Tl[:3, 3]) @ Tl[:3, :3]
    return local


class _StackedMeshes:
    """All link meshes of a model with per-triangle link ids, posed cheaply."""

    def __init__(self, model):
        self.model = model
        names = [n for n in model.link_names if model.links[n].mesh is not None]
        meshes = [model.links[n].mesh for n in names]
        merged, src = concatenate(meshes)
        self.link_ids = np.array([model.link_index[names[k]] for k in src], dtype=np.int64)
        tri = merged.vertices[merged.triangles]
        self.a, self.b, self.c = tri[:, 0], tri[:, 1], tri[:, 2]

    def posed(self, joints):
        T, _, _ = _root_frame_fk(self.model, joints)
        Rs = np.stack([T[n][:3, :3] for n in self.model.link_names])
        ps = np.stack([T[n][:3, 3] for n in self.model.link_names])
        R, p = Rs[self.link_ids], ps[self.link_ids]
        return tuple(np.einsum("nij,nj->ni", R, v) + p for v in (self.a, self.b, self.c))

    def distances(self, joints, center, subset=None):
        a, b, c = self.posed(joints)
        if subset is not None:
            a, b, c = a[subset], b[subset], c[subset]
        cp, _ = _bvh.closest_point_on_triangles(center, a, b, c)
        return np.linalg.norm(cp - center, axis=1), cp


def open_configuration(model):
    """Per actuated coordinate, the limit that widens the gripper.

    Aperture is the mean distance of downstream mesh vertices from the palm
    approach axis, with the other coordinates held at zero (clipped to limits).
    """
    mid = np.clip(np.zeros(model.dof), model.lower, model.upper)
    T_palm = _palm_transform(model, mid)
    out = np.empty(model.dof)
    for k in range(model.dof):
        links = [
            n for n in model.link_names
            if model.links[n].mesh is not None and _moves_with(model, n, k)
        ]
        aperture = []
        for val in (model.lower[k], model.upper[k]):
            q = mid.copy()
            q[k] = val
            T, _, _ = _root_frame_fk(model, q)
            d = []
            for n in links:
                v = model.links[n].mesh.vertices @ T[n][:3, :3].T + T[n][:3, 3]
                v_palm = (v - T_palm[:3, 3]) @ T_palm[:3, :3]
                d.append(np.linalg.norm(v_palm[:, :2], axis=1))
            aperture.append(np.mean(np.concatenate(d)) if d else 0.0)
        out[k] = model.lower[k] if aperture[0] > aperture[1] else model.upper[k]
    return out


def _moves_with(model, link_name, coord):
    li = model.link_index[link_name]
    for k, j in enumerate(model.joints):
        if model.ancestor_joints[li, k] and j.type != "fixed" and model._coupling[j.name][0] == coord:
            return True
    return False


# --- maximal sphere -----------------------------------------------------------------

class _SphereOracle:
    """Geometric graspability test for a sphere tangent to the palm."""

    def __init__(self, model, open_joints, max_penetration=1e-3, contact_tol=1e-4,
                 antipodal_dot=-0.5, bisect_steps=48):
        self.model = model
        self.stack = _StackedMeshes(model)
        self.open = np.asarray(open_joints, dtype=np.float64)
        self.closed = np.where(self.open == model.upper, model.lower, model.upper)
        self.T_palm = _palm_transform(model, self.open)
        self.max_penetration = max_penetration
        self.contact_tol = contact_tol
        self.antipodal_dot = antipodal_dot
        self.bisect_steps = bisect_steps
        # coord -> triangles of links that move with it
        self.coord_tris = np.zeros((model.dof, len(self.stack.link_ids)), dtype=bool)
        for k in range(model.dof):
            for n in model.link_names:
                if _moves_with(model, n, k):
                    self.coord_tris[k] |= self.stack.link_ids == model.link_index[n]
        self.link_coords = np.zeros((len(model.link_names), model.dof), dtype=bool)
        for n in model.link_names:
            for k in range(model.dof):
                self.link_coords[model.link_index[n], k] = _moves_with(model, n, k)

    def center(self, radius):
        """Sphere center in the root frame: tangent to the palm along -z."""
        return self.T_palm[:3, 3] - radius * self.T_palm[:3, 2]

    def close(self, radius):
        """Close all actuated coordinates until first contact, per joint group."""
        center = self.center(radius)
        q = self.open.copy()
        active = np.ones(self.model.dof, dtype=bool)
        s_cur = 0.0
        span = self.closed - self.open
        while active.any():
            base = q.copy()

            def at(s, base=base, active=active.copy()):
                qq = base.copy()
                qq[active] = self.open[active] + s * span[active]
                return qq

            tris = self.coord_tris[active].any(axis=0)

            def touching(s, tris=tris):
                if not tris.any():
                    return False
                d, _ = self.stack.distances(at(s), center, tris)
                return bool(d.min() < radius)

            if not touching(1.0):
                q = at(1.0)
                break
            lo, hi = s_cur, 1.0
            if touching(lo):
                hi = lo
            else:
                for _ in range(self.bisect_steps):
                    mid = 0.5 * (lo + hi)
                    if touching(mid):
                        hi = mid
                    else:
                        lo = mid
            q = at(hi)
            d, _ = self.stack.distances(q, center, tris)
            contact_links = np.unique(self.stack.link_ids[tris][d <= radius + self.contact_tol])
            freeze = self.link_coords[contact_links].any(axis=0) & active
            if not freeze.any():
                freeze = active.copy()
            active &= ~freeze
            s_cur = hi
        return q

    def evaluate(self, radius):
        """Return ``(passed, capture joints)`` for a sphere of the given radius."""
        center = self.center(radius)
        d_open, _ = self.stack.distances(self.open, center)
        if d_open.min() < radius - 1e-9:
            return False, self.open
        q = self.close(radius)
        d, cp = self.stack.distances(q, center)
        if radius - d.min() > self.max_penetration:
            return False, q
        touch = d <= radius + self.contact_tol
        if touch.sum() < 2:
            return False, q
        normals = (cp[touch] - center) / d[touch, None]
        gram = normals @ normals.T
        return bool(gram.min() <= self.antipodal_dot), q


def max_graspable_sphere(model, r_min=1e-3, r_max=0.5, resolution=5e-4, coarse_step=5e-3):
    """Largest sphere the gripper can encompass from the palm side.

    The sphere sits tangent to the palm along the approach axis; actuated
    joints close from the open configuration until first contact.  A radius
    passes when the open gripper clears the sphere, the closed grasp
    penetrates at most 1 mm, and two contacts have outward sphere normals with
    dot product <= -0.5.  A coarse downward scan brackets the largest passing
    radius, which is then bisected to ``resolution``.
    """
    if model.dof == 0:
        raise SphereFitError(f"sphere fit failure for gripper {model.name!r}: no actuated joints")
    open_joints = open_configuration(model)
    oracle = _SphereOracle(model, open_joints)
    probes = []

    def test(r):
        ok, q = oracle.evaluate(r)
        probes.append((float(r), ok))
        return ok, q

    n_coarse = int(np.floor((r_max - r_min) / coarse_step + 1e-9))
    grid = r_min + coarse_step * np.arange(n_coarse + 1)
    best = None
    for i in range(len(grid) - 1, -1, -1):
        ok, q = test(grid[i])
        if ok:
            best = (grid[i], q)
            hi = grid[i + 1] if i + 1 < len(grid) else None
            break
    if best is None:
        raise SphereFitError(f"sphere fit failure for gripper {model.name!r}: no graspable radius")
    lo, q_lo = best
    if hi is not None:
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            ok, q = test(mid)
            if ok:
                lo, q_lo = mid, q
            else:
                hi = mid
    T_palm = oracle.T_palm
    center_palm = (oracle.center(lo) - T_palm[:3, 3]) @ T_palm[:3, :3]
    capture = GraspConfig(np.zeros(3), np.zeros(3), q_lo)
    return SphereFit(float(lo), center_palm, capture, open_joints, tuple(probes))


def sphere_oracle(model, radius, open_joints=None):
    """Evaluate the graspability oracle at one radius: ``(passed, joints)``."""
    if open_joints is None:
        open_joints = open_configuration(model)
    return _SphereOracle(model, open_joints).evaluate(radius)


# --- print --------------------------------------------------------------------------

def build_print(model, sphere, capture_config=None, ray_count=10000):
    """Cast Fibonacci rays from the sphere center and record first hits.

    ``sphere`` is a :class:`SphereFit` or a ``(center, radius)`` pair with the
    center in the palm frame.  Points are stored in the palm frame.
    """
    if isinstance(sphere, SphereFit):
        center, radius = sphere.center, sphere.radius
        if capture_config is None:
            capture_config = sphere.capture_config
    else:
        center, radius = sphere
    if capture_config is None:
        raise InvalidArgumentError("capture configuration required")
    if isinstance(ray_count, bool) or not isinstance(ray_count, (int, np.integer)) or ray_count < MIN_RAYS:
        raise InvalidArgumentError(f"ray count must be an integer >= {MIN_RAYS}, got {ray_count!r}")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    if capture_config.joints.shape != (model.dof,):
        raise InvalidArgumentError("capture configuration does not match the model")
    # the print is defined with the root at identity
    capture_config = GraspConfig(np.zeros(3), np.zeros(3), capture_config.joints)

    stack = _StackedMeshes(model)
    a, b, c = stack.posed(capture_config.joints)
    T_palm = _palm_transform(model, capture_config.joints)
    to_palm = lambda v: (v - T_palm[:3, 3]) @ T_palm[:3, :3]  # noqa: E731
    from .mesh import TriMesh

    verts = np.stack([to_palm(a), to_palm(b), to_palm(c)], axis=1).reshape(-1, 3)
    mesh = TriMesh(verts, np.arange(len(verts)).reshape(-1, 3))
    if len(mesh) != len(a):
        raise InvalidArgumentError("gripper mesh has degenerate triangles")
    dirs = fibonacci_directions(int(ray_count))
    t, tri = mesh.ray_cast(np.broadcast_to(center, dirs.shape), dirs)
    hit = np.isfinite(t)
    if not hit.any():
        raise EmptyPrintError(f"sphere fit failure: empty print for gripper {model.name!r}: no ray hit the gripper")
    points = center + t[hit, None] * dirs[hit]
    coords = spherical_from_unit(dirs[hit])
    keep = ~np.all(coords == 0.0, axis=1)
    link_ids = stack.link_ids[tri[hit]][keep]
    links = tuple(model.link_names[i] for i in link_ids)
    return GripperPrint(model.name, center, radius, capture_config, points[keep], coords[keep], links)


# --- object maps --------------------------------------------------------------------

def nearest_lowest_index(tree_points, queries, tree=None):
    """Nearest neighbour indices with exact distance ties broken by lowest index."""
    tree_points = np.asarray(tree_points, dtype=np.float64)
    if tree is None:
        tree = cKDTree(tree_points)
    k = min(4, len(tree_points))
    dist, idx = tree.query(queries, k=k)
    dist = dist.reshape(len(queries), k)
    idx = idx.reshape(len(queries), k)
    # recompute distances with one formula so exact ties compare equal
    d = np.linalg.norm(tree_points[idx] - np.asarray(queries)[:, None, :], axis=2)
    d = np.where(np.isfinite(dist), d, np.inf)
    best = d.min(axis=1, keepdims=True)
    cand = np.where(d == best, idx, np.iinfo(np.int64).max)
    return cand.min(axis=1), best[:, 0]


def object_map_from_grasp(print_, grasp, model, cloud, threshold=CONTACT_THRESHOLD):
    """Ground-truth coordinate map: each object point takes the coordinate of
    its nearest posed print point if that point is within ``threshold``."""
    if not isinstance(cloud, ObjectCloud):
        raise InvalidArgumentError("object must be an ObjectCloud")
    posed = posed_positions(model, grasp, print_.link_points(model))
    idx, dist = nearest_lowest_index(posed, cloud.points)
    contact = dist <= threshold
    coords = np.zeros((len(cloud), 2))
    coords[contact] = print_.coords[idx[contact]]
    return CoordinateMap(coords, contact, cloud.object_id)
