"""Gripper kinematic chains: URDF-subset parsing, forward kinematics, and
analytic point Jacobians with respect to the full configuration vector.

Configuration vectors are ordered ``[translation(3), rotation(3), joints(J)]``
where the rotation is in exponential coordinates and ``joints`` holds one
value per actuated coordinate.  Mimic joints are folded into the coordinate
they follow through a linear coupling ``value = multiplier * q + offset``.
"""

import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from ._validation import InvalidArgumentError, check_points
from .mesh import TriMesh, concatenate, load_mesh

JOINT_TYPES = ("revolute", "prismatic", "fixed")


class GripperParseError(InvalidArgumentError):
    pass


# --- SO(3) ------------------------------------------------------------------------

def skew(v):
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _so3_coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3 with series near zero."""
    if theta < 1e-4:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def exp_so3(rotvec):
    """Rotation matrix from an exponential-coordinate vector (Rodrigues)."""
    r = np.asarray(rotvec, dtype=np.float64)
    a, b, _ = _so3_coeffs(float(np.linalg.norm(r)))
    K = skew(r)
    return np.eye(3) + a * K + b * (K @ K)


def left_jacobian_so3(rotvec):
    """``J`` with ``exp(r + d) ~= exp(J d) exp(r)`` to first order."""
    r = np.asarray(rotvec, dtype=np.float64)
    _, b, c = _so3_coeffs(float(np.linalg.norm(r)))
    K = skew(r)
    return np.eye(3) + b * K + c * (K @ K)


def log_so3(R):
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def wrap_rotvec(r):
    """Re-express a rotation vector with norm <= pi."""
    r = np.asarray(r, dtype=np.float64)
    theta = float(np.linalg.norm(r))
    if theta <= np.pi + 1e-6:
        return r.copy()
    theta_w = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    return r * (theta_w / theta)


def rpy_matrix(rpy):
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def make_transform(R=None, p=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if p is not None:
        T[:3, 3] = p
    return T


def axis_angle_matrix(axis, angle):
    return exp_so3(np.asarray(axis, dtype=np.float64) * angle)


# --- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class GraspConfig:
    """Root pose (translation + exponential-coordinate rotation) and joint values."""

    translation: np.ndarray
    rotvec: np.ndarray
    joints: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r = wrap_rotvec(np.array(self.rotvec, dtype=np.float64).reshape(3))
        q = np.array(self.joints, dtype=np.float64).reshape(-1)
        for arr in (t, r, q):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError("configuration values must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotvec", r)
        object.__setattr__(self, "joints", q)

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:3], vec[3:6], vec[6:])

    @classmethod
    def from_transform(cls, T, joints=()):
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, 3], log_so3(T[:3, :3]), joints)

    @property
    def vector(self):
        return np.concatenate([self.translation, self.rotvec, self.joints])

    @property
    def rotation(self):
        return exp_so3(self.rotvec)

    @property
    def root_transform(self):
        return make_transform(self.rotation, self.translation)

    def with_joints(self, joints):
        return GraspConfig(self.translation, self.rotvec, joints)

    def with_root(self, T):
        T = np.asarray(T, dtype=np.float64)
        return GraspConfig(T[:3, 3], log_so3(T[:3, :3]), self.joints)

    def __eq__(self, other):
        if not isinstance(other, GraspConfig):
            return NotImplemented
        return bool(np.array_equal(self.vector, other.vector))

    def __hash__(self):
        return hash(self.vector.tobytes())


# --- model --------------------------------------------------------------------------

@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin: np.ndarray
    axis: np.ndarray
    lower: float = 0.0
    upper: float = 0.0
    mimic: tuple = None  # (joint name, multiplier, offset)


@dataclass(frozen=True)
class Link:
    name: str
    mesh: TriMesh = None


class GripperModel:
    """Tree-structured kinematic chain of a gripper.

    Parameters
    ----------
    name : str
    links : list of Link
    joints : list of Joint
    palm_link : str
        Link whose frame origin lies on the palm contact surface and whose
        ``-z`` axis is the approach direction.
    """

    def __init__(self, name, links, joints, palm_link):
        self.name = name
        self.links = {link.name: link for link in links}
        if len(self.links) != len(links):
            raise GripperParseError("duplicate link name")
        if palm_link is None:
            raise GripperParseError("no palm frame designated (missing <ugcs palm_link=.../>)")
        if palm_link not in self.links:
            raise GripperParseError(f"unknown link reference: palm link {palm_link!r}")
        self.palm_link = palm_link
        self.joints = self._sort_joints(joints)
        self._resolve_coordinates()
        self._index()

    def _sort_joints(self, joints):
        by_name = {}
        children = {}
        for j in joints:
            if j.name in by_name:
                raise GripperParseError(f"duplicate joint name {j.name!r}")
            if j.type not in JOINT_TYPES:
                raise GripperParseError(f"joint {j.name!r}: unsupported joint type {j.type!r}")
            for ref in (j.parent, j.child):
                if ref not in self.links:
                    raise GripperParseError(f"joint {j.name!r}: unknown link reference {ref!r}")
            if j.parent == j.child:
                raise GripperParseError(f"joint {j.name!r}: self-loop on link {j.parent!r}")
            if j.child in children:
                raise GripperParseError(f"joint {j.name!r}: link {j.child!r} has two parents")
            if j.lower > j.upper:
                raise GripperParseError(f"joint {j.name!r}: lower limit exceeds upper limit")
            by_name[j.name] = j
            children[j.child] = j
        roots = [name for name in self.links if name not in children]
        if len(roots) != 1:
            # every link has a parent -> the graph contains a cycle
            if not roots:
                raise GripperParseError("cycle in joint graph")
            raise GripperParseError(f"joint graph is not connected; roots: {roots}")
        self.root = roots[0]
        order = []
        frontier = [self.root]
        while frontier:
            link = frontier.pop(0)
            for j in joints:
                if j.parent == link:
                    order.append(j)
                    frontier.append(j.child)
        if len(order) != len(joints):
            raise GripperParseError("cycle in joint graph")
        return order

    def _resolve_coordinates(self):
        by_name = {j.name: j for j in self.joints}
        self.actuated = [j.name for j in self.joints if j.type != "fixed" and j.mimic is None]
        coord_of = {name: k for k, name in enumerate(self.actuated)}
        self._coupling = {}
        for j in self.joints:
            if j.type == "fixed":
                continue
            mult, off, cur, seen = 1.0, 0.0, j, set()
            while cur.mimic is not None:
                if cur.name in seen:
                    raise GripperParseError(f"joint {j.name!r}: mimic cycle")
                seen.add(cur.name)
                target, m, o = cur.mimic
                if target not in by_name:
                    raise GripperParseError(f"joint {cur.name!r}: mimics unknown joint {target!r}")
                mult, off = mult * m, mult * o + off
                cur = by_name[target]
            if cur.type == "fixed":
                raise GripperParseError(f"joint {j.name!r}: mimics a fixed joint")
            self._coupling[j.name] = (coord_of[cur.name], mult, off)
        self.lower = np.array([by_name[n].lower for n in self.actuated], dtype=np.float64)
        self.upper = np.array([by_name[n].upper for n in self.actuated], dtype=np.float64)

    def _index(self):
        self.link_names = list(self.links)
        self.link_index = {n: k for k, n in enumerate(self.link_names)}
        parent_joint = {j.child: k for k, j in enumerate(self.joints)}
        anc = np.zeros((len(self.link_names), len(self.joints)), dtype=bool)
        for name, li in self.link_index.items():
            cur = name
            while cur in parent_joint:
                k = parent_joint[cur]
                anc[li, k] = True
                cur = self.joints[k].parent
        self.ancestor_joints = anc

    @property
    def dof(self):
        return len(self.actuated)

    def __repr__(self):
        return f"GripperModel({self.name!r}, links={len(self.links)}, actuated={self.dof})"

    def joint_values(self, joints):
        """Physical value of every non-fixed joint given actuated coordinates."""
        joints = np.asarray(joints, dtype=np.float64)
        return {name: m * joints[k] + o for name, (k, m, o) in self._coupling.items()}

    def zero_config(self):
        return GraspConfig(np.zeros(3), np.zeros(3), np.zeros(self.dof))

    def clip_joints(self, joints):
        return np.clip(np.asarray(joints, dtype=np.float64), self.lower, self.upper)

    def scaled(self, factor):
        """Copy with every length (meshes, joint origins, prismatic ranges) scaled."""
        f = float(factor)
        links = [Link(l.name, None if l.mesh is None else l.mesh.scaled(f)) for l in self.links.values()]
        joints = []
        for j in self.joints:
            origin = j.origin.copy()
            origin[:3, 3] *= f
            lin = f if j.type == "prismatic" else 1.0
            mimic = None
            if j.mimic is not None:
                target = next(t for t in self.joints if t.name == j.mimic[0])
                # offsets are in the mimicking joint's units; multipliers convert between types
                tlin = f if target.type == "prismatic" else 1.0
                mimic = (j.mimic[0], j.mimic[1] * lin / tlin, j.mimic[2] * lin)
            joints.append(Joint(j.name, j.type, j.parent, j.child, origin, j.axis.copy(),
                                j.lower * lin, j.upper * lin, mimic))
        return GripperModel(self.name, links, joints, self.palm_link)

    def link_meshes(self):
        return {name: link.mesh for name, link in self.links.items() if link.mesh is not None}


# --- parsing ------------------------------------------------------------------------

def _floats(text, n, what):
    try:
        vals = [float(x) for x in text.split()]
    except ValueError:
        raise GripperParseError(f"{what}: expected {n} numbers, got {text!r}") from None
    if len(vals) != n:
        raise GripperParseError(f"{what}: expected {n} numbers, got {text!r}")
    return np.array(vals)


def _origin(elem, what):
    T = np.eye(4)
    if elem is None:
        return T
    T[:3, 3] = _floats(elem.get("xyz", "0 0 0"), 3, f"{what} origin xyz")
    T[:3, :3] = rpy_matrix(_floats(elem.get("rpy", "0 0 0"), 3, f"{what} origin rpy"))
    return T


def _link_mesh(link_el, base_dir, mesh_cache):
    name = link_el.get("name")
    elems = link_el.findall("collision") or link_el.findall("visual")
    meshes = []
    for el in elems:
        geom = el.find("geometry")
        mesh_el = None if geom is None else geom.find("mesh")
        if mesh_el is None or mesh_el.get("filename") is None:
            raise GripperParseError(f"link {name!r}: geometry must be <mesh filename=...>")
        path = mesh_el.get("filename")
        if path.startswith("file://"):
            path = path[len("file://"):]
        if not os.path.isabs(path):
            path = os.path.join(base_dir or ".", path)
        if path not in mesh_cache:
            if not os.path.exists(path):
                raise GripperParseError(f"link {name!r}: mesh file not found: {path}")
            mesh_cache[path] = load_mesh(path)
        mesh = mesh_cache[path]
        if mesh_el.get("scale") is not None:
            s = _floats(mesh_el.get("scale"), 3, f"link {name!r} mesh scale")
            mesh = TriMesh(mesh.vertices * s, mesh.triangles)
        meshes.append(mesh.transformed(_origin(el.find("origin"), f"link {name!r}")))
    if not meshes:
        return None
    return meshes[0] if len(meshes) == 1 else concatenate(meshes)[0]


def parse_gripper(text, base_dir=None):
    """Build a :class:`GripperModel` from a URDF-subset document.

    Supported: ``<link>`` with ``<visual>``/``<collision>`` mesh geometry,
    ``<joint>`` of type revolute, prismatic or fixed with ``<origin>``,
    ``<axis>``, ``<limit>`` and ``<mimic>``, plus a ``<ugcs palm_link=.../>``
    element naming the palm frame.  Mesh paths resolve against ``base_dir``.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise GripperParseError(f"malformed document: {exc}") from None
    if root.tag != "robot":
        raise GripperParseError(f"expected <robot> root element, got <{root.tag}>")
    name = root.get("name") or "gripper"
    cache = {}
    links = []
    for el in root.findall("link"):
        if el.get("name") is None:
            raise GripperParseError("link without a name")
        links.append(Link(el.get("name"), _link_mesh(el, base_dir, cache)))
    joints = []
    for el in root.findall("joint"):
        jname = el.get("name")
        jtype = el.get("type")
        if jname is None:
            raise GripperParseError("joint without a name")
        if jtype not in JOINT_TYPES:
            raise GripperParseError(f"joint {jname!r}: unsupported joint type {jtype!r}")
        parent = el.find("parent")
        child = el.find("child")
        if parent is None or child is None:
            raise GripperParseError(f"joint {jname!r}: missing parent or child")
        axis = np.array([1.0, 0.0, 0.0])
        if el.find("axis") is not None:
            axis = _floats(el.find("axis").get("xyz", "1 0 0"), 3, f"joint {jname!r} axis")
        if np.linalg.norm(axis) == 0:
            raise GripperParseError(f"joint {jname!r}: zero axis")
        axis = axis / np.linalg.norm(axis)
        mimic = None
        if el.find("mimic") is not None:
            m = el.find("mimic")
            mimic = (m.get("joint"), float(m.get("multiplier", 1.0)), float(m.get("offset", 0.0)))
        lower = upper = 0.0
        limit = el.find("limit")
        if jtype != "fixed":
            if limit is None or limit.get("lower") is None or limit.get("upper") is None:
                if mimic is None:
                    raise GripperParseError(f"joint {jname!r}: missing limits on actuated joint")
            else:
                lower, upper = float(limit.get("lower")), float(limit.get("upper"))
        joints.append(Joint(jname, jtype, parent.get("link"), child.get("link"),
                            _origin(el.find("origin"), f"joint {jname!r}"), axis, lower, upper, mimic))
    ext = root.find("ugcs")
    palm = None if ext is None else ext.get("palm_link")
    return GripperModel(name, links, joints, palm)


def load_gripper(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_gripper(text, base_dir=os.path.dirname(os.path.abspath(path)))


# --- forward kinematics -------------------------------------------------------------

def _check_config(model, q):
    if not isinstance(q, GraspConfig):
        raise InvalidArgumentError("q must be a GraspConfig")
    if q.joints.shape != (model.dof,):
        raise InvalidArgumentError(
            f"configuration has {q.joints.size} joint values, model {model.name!r} has {model.dof}"
        )


def _root_frame_fk(model, joints):
    """Link transforms relative to the root link plus per-joint axis/origin."""
    values = model.joint_values(joints)
    T = {model.root: np.eye(4)}
    axes = np.zeros((len(model.joints), 3))
    origins = np.zeros((len(model.joints), 3))
    for k, j in enumerate(model.joints):
        Tj = T[j.parent] @ j.origin
        axes[k] = Tj[:3, :3] @ j.axis
        origins[k] = Tj[:3, 3]
        if j.type == "revolute":
            Tj = Tj @ make_transform(axis_angle_matrix(j.axis, values[j.name]))
        elif j.type == "prismatic":
            Tj = Tj @ make_transform(p=j.axis * values[j.name])
        T[j.child] = Tj
    return T, axes, origins


def forward_kinematics(model, q):
    """World transform (4x4) of every link under configuration ``q``."""
    _check_config(model, q)
    T_root = q.root_transform
    T, _, _ = _root_frame_fk(model, q.joints)
    return {name: T_root @ T[name] for name in model.link_names}


class LinkPoints:
    """Points (and optional normals) attached to links of a model."""

    def __init__(self, model, link_ids, local, normals=None):
        self.link_ids = np.asarray(link_ids, dtype=np.int64).reshape(-1)
        self.local = check_points(local, "local points", allow_empty=True)
        if len(self.link_ids) != len(self.local):
            raise InvalidArgumentError("link ids and points differ in length")
        if len(self.link_ids) and (self.link_ids.min() < 0 or self.link_ids.max() >= len(model.link_names)):
            raise InvalidArgumentError("link id out of range")
        self.normals = None if normals is None else check_points(normals, "normals", allow_empty=True)
        self.model_name = model.name

    @classmethod
    def from_dict(cls, model, per_link, normals=None):
        """Build from ``{link name: (n, 3) points}``."""
        ids, pts, nrm = [], [], []
        for name, p in per_link.items():
            if name not in model.link_index:
                raise InvalidArgumentError(f"unknown link {name!r}")
            p = check_points(p, f"points for link {name!r}", allow_empty=True)
            ids.append(np.full(len(p), model.link_index[name]))
            pts.append(p)
            if normals is not None:
                nrm.append(check_points(normals[name], f"normals for link {name!r}", allow_empty=True))
        ids = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
        pts = np.concatenate(pts) if pts else np.zeros((0, 3))
        return cls(model, ids, pts, np.concatenate(nrm) if normals is not None else None)

    def __len__(self):
        return len(self.local)

    def subset(self, index):
        index = np.asarray(index)
        normals = None if self.normals is None else self.normals[index]
        out = object.__new__(LinkPoints)
        out.link_ids, out.local, out.normals, out.model_name = self.link_ids[index], self.local[index], normals, self.model_name
        return out


@dataclass(frozen=True)
class PosedPoints:
    positions: np.ndarray
    normals: np.ndarray
    source: list


def _posed_root_frame(model, joints, points):
    T, axes, origins = _root_frame_fk(model, joints)
    Rs = np.stack([T[n][:3, :3] for n in model.link_names])
    ps = np.stack([T[n][:3, 3] for n in model.link_names])
    R = Rs[points.link_ids]
    pr = np.einsum("nij,nj->ni", R, points.local) + ps[points.link_ids]
    return pr, R, axes, origins


def pose_points(model, q, points):
    """World positions/normals of link-attached points under ``q``.

    ``points`` is a :class:`LinkPoints` or a ``{link name: points}`` dict.
    """
    _check_config(model, q)
    if isinstance(points, dict):
        points = LinkPoints.from_dict(model, points)
    pr, R, _, _ = _posed_root_frame(model, q.joints, points)
    R0 = q.rotation
    pos = pr @ R0.T + q.translation
    if points.normals is not None:
        nrm = np.einsum("nij,nj->ni", R, points.normals) @ R0.T
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    else:
        nrm = np.zeros_like(pos)
    source = [(model.link_names[l], k) for k, l in enumerate(points.link_ids)]
    return PosedPoints(pos, nrm, source)


def posed_positions(model, q, points):
    """Positions only; cheaper than :func:`pose_points` for inner loops."""
    pr, _, _, _ = _posed_root_frame(model, q.joints, points)
    return pr @ q.rotation.T + q.translation


def point_jacobians(model, q, points):
    """Positions (n, 3) and Jacobians (n, 3, 6 + J) of link-attached points."""
    _check_config(model, q)
    pr, _, axes, origins = _posed_root_frame(model, q.joints, points)
    R0 = q.rotation
    n = len(pr)
    J = np.zeros((n, 3, 6 + model.dof))
    J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
    rp = pr @ R0.T
    J[:, :, 3:6] = -np.einsum("nij,jk->nik", skew(rp), left_jacobian_so3(q.rotvec))
    anc = model.ancestor_joints[points.link_ids]
    for k, j in enumerate(model.joints):
        if j.type == "fixed":
            continue
        mask = anc[:, k]
        if not np.any(mask):
            continue
        coord, mult, _ = model._coupling[j.name]
        if j.type == "revolute":
            d = np.cross(axes[k], pr[mask] - origins[k])
        else:
            d = np.broadcast_to(axes[k], (int(mask.sum()), 3))
        J[mask, :, 6 + coord] += mult * (d @ R0.T)
    return rp + q.translation, J


def point_jacobian(model, q, link, local_position):
    """3 x (6 + J) Jacobian of one link-attached point."""
    if link not in model.link_index:
        raise InvalidArgumentError(f"unknown link {link!r}")
    pts = LinkPoints(model, [model.link_index[link]], np.asarray(local_position, dtype=np.float64).reshape(1, 3))
    return point_jacobians(model, q, pts)[1][0]
