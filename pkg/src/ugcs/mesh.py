"""Triangle meshes: loading, primitives, sampling, and spatial queries."""

import os
from collections import namedtuple
from functools import cached_property

import numpy as np

from . import bvh as _bvh
from ._validation import InvalidArgumentError, check_points, check_unit_vectors

MIN_TRIANGLE_AREA = 1e-12

RayHit = namedtuple("RayHit", ["point", "triangle_index", "distance"])
RayHit.__doc__ = "First intersection of a ray with a mesh."

DistanceQuery = namedtuple("DistanceQuery", ["distance", "closest", "triangle", "signed"])
DistanceQuery.__doc__ = """Result of :func:`signed_distance`.

``signed`` is False when the mesh is not watertight; ``distance`` is then the
unsigned closest-point distance and callers that need a sign must reject it.
"""


class MeshFormatError(InvalidArgumentError):
    pass


class TriMesh:
    """Immutable triangle mesh.

    Triangles with area below ``1e-12`` m^2 are dropped on construction.
    The BVH and pseudo-normals are built lazily and cached.
    """

    def __init__(self, vertices, triangles):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidArgumentError("triangle index out of range")
        if not np.all(np.isfinite(vertices)):
            raise InvalidArgumentError("mesh vertices must be finite")
        if len(triangles):
            tri = vertices[triangles]
            area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
            triangles = triangles[area >= MIN_TRIANGLE_AREA]
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        self.vertices = vertices
        self.triangles = triangles

    def __len__(self):
        return len(self.triangles)

    def __repr__(self):
        return f"TriMesh(vertices={len(self.vertices)}, triangles={len(self.triangles)})"

    @cached_property
    def face_normals(self):
        tri = self.vertices[self.triangles]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def face_areas(self):
        tri = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    @cached_property
    def _corner_angles(self):
        tri = self.vertices[self.triangles]
        angles = np.empty((len(tri), 3))
        for k in range(3):
            u = tri[:, (k + 1) % 3] - tri[:, k]
            v = tri[:, (k + 2) % 3] - tri[:, k]
            cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
        return angles

    @cached_property
    def vertex_normals(self):
        """Angle-weighted unit vertex normals (zero for unreferenced vertices)."""
        acc = np.zeros_like(self.vertices)
        w = self._corner_angles[:, :, None] * self.face_normals[:, None, :]
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], w[:, k])
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    @cached_property
    def _edges(self):
        # directed edges (a->b), (b->c), (c->a) per triangle
        t = self.triangles
        directed = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        undirected = np.sort(directed, axis=1)
        uniq, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
        return directed, uniq, inverse.reshape(-1), counts

    @cached_property
    def is_watertight(self):
        if len(self.triangles) == 0:
            return False
        directed, _, inverse, counts = self._edges
        if not np.all(counts == 2):
            return False
        # consistent orientation: each undirected edge used once per direction
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))

    @cached_property
    def _edge_pseudo_normals(self):
        """(T, 3, 3): pseudo-normal for edges AB, BC, CA of each triangle."""
        _, uniq, inverse, _ = self._edges
        acc = np.zeros((len(uniq), 3))
        fn = np.repeat(self.face_normals, 3, axis=0)
        np.add.at(acc, inverse, fn)
        return acc[inverse].reshape(-1, 3, 3)

    @cached_property
    def bvh(self):
        return _bvh.BVH(self.vertices, self.triangles)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, transform):
        """Return a copy with a 4x4 homogeneous transform applied."""
        T = np.asarray(transform, dtype=np.float64)
        v = self.vertices @ T[:3, :3].T + T[:3, 3]
        return TriMesh(v, self.triangles)

    def scaled(self, factor):
        return TriMesh(self.vertices * float(factor), self.triangles)

    def ray_cast(self, origins, dirs):
        """Batched first-hit ray casting; returns ``(t, triangle)`` arrays."""
        return self.bvh.raycast(origins, dirs)

    def closest_points(self, points):
        """Batched closest-point query; returns ``(dist2, closest, triangle, feature)``."""
        return self.bvh.closest(points)

    def pseudo_normals(self, triangle, feature):
        """Angle-weighted pseudo-normal of the closest feature."""
        triangle = np.asarray(triangle)
        feature = np.asarray(feature)
        out = self.face_normals[triangle].copy()
        vn = self.vertex_normals[self.triangles[triangle]]
        en = self._edge_pseudo_normals[triangle]
        for code, k in ((_bvh.VERT_A, 0), (_bvh.VERT_B, 1), (_bvh.VERT_C, 2)):
            m = feature == code
            out[m] = vn[m, k]
        for code, k in ((_bvh.EDGE_AB, 0), (_bvh.EDGE_BC, 1), (_bvh.EDGE_CA, 2)):
            m = feature == code
            out[m] = en[m, k]
        return out


def concatenate(meshes):
    """Merge meshes into one; returns ``(mesh, source)`` where ``source[i]`` is
    the position in ``meshes`` of triangle ``i``."""
    verts, tris, src = [], [], []
    offset = 0
    for k, m in enumerate(meshes):
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        src.append(np.full(len(m.triangles), k, dtype=np.int64))
        offset += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), np.zeros(0, dtype=np.int64)
    return TriMesh(np.concatenate(verts), np.concatenate(tris)), np.concatenate(src)


def ray_intersect_first(mesh, origin, direction):
    """Nearest intersection beyond ``1e-9`` m along a single ray, or ``None``."""
    if len(mesh) == 0:
        raise InvalidArgumentError("mesh is empty")
    origin = check_points(origin, "origin")
    direction = check_unit_vectors(direction, "direction")
    t, tri = mesh.ray_cast(origin, direction)
    if not np.isfinite(t[0]):
        return None
    return RayHit(origin[0] + t[0] * direction[0], int(tri[0]), float(t[0]))


def signed_distance(mesh, points):
    """Signed distance from point(s) to ``mesh`` (negative inside).

    The sign comes from the angle-weighted pseudo-normal of the closest
    feature.  Scalar input returns scalar fields in the result.
    """
    single = np.ndim(points) == 1
    if len(mesh) == 0:
        raise InvalidArgumentError("mesh is empty")
    pts = check_points(points)
    d2, cp, tri, feat = mesh.closest_points(pts)
    dist = np.sqrt(d2)
    signed = mesh.is_watertight
    if signed:
        n = mesh.pseudo_normals(tri, feat)
        s = np.einsum("ij,ij->i", pts - cp, n)
        dist = np.where(s < 0.0, -dist, dist)
    if single:
        return DistanceQuery(float(dist[0]), cp[0], int(tri[0]), signed)
    return DistanceQuery(dist, cp, tri, signed)


def sample_surface(mesh, count, rng):
    """Area-weighted uniform samples; returns ``(points, normals, triangle)``."""
    if len(mesh) == 0:
        raise InvalidArgumentError("mesh is empty")
    rng = np.random.default_rng(rng)
    areas = mesh.face_areas
    tri = rng.choice(len(areas), size=count, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    t = mesh.vertices[mesh.triangles[tri]]
    pts = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    return pts, mesh.face_normals[tri].copy(), tri


# --- primitives -----------------------------------------------------------------

def box_mesh(lower, upper):
    """Closed axis-aligned box with outward-facing triangles."""
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriMesh(v, tris)


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    """Geodesic sphere with vertices on the sphere of the given radius."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * float(radius) + np.asarray(center, dtype=np.float64)
    return TriMesh(v, faces)


# --- file formats ---------------------------------------------------------------

def load_obj(path):
    """Wavefront OBJ; polygons are fan-triangulated, everything but v/f ignored."""
    verts, tris = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    k = int(tok.split("/")[0])
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                if len(idx) < 3:
                    raise MeshFormatError(f"{path}:{lineno}: face needs 3 vertices")
                for j in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[j], idx[j + 1]))
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_ply(path):
    """ASCII or binary (little/big endian) PLY with vertex and face elements."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise MeshFormatError(f"{path}: not a PLY file")
        fmt = None
        elements = []
        while True:
            line = fh.readline()
            if not line:
                raise MeshFormatError(f"{path}: unterminated header")
            parts = line.decode("ascii").split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                elements[-1][2].append(parts[1:])
            elif parts[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
            raise MeshFormatError(f"{path}: unsupported PLY format {fmt!r}")
        endian = ">" if fmt == "binary_big_endian" else "<"
        data = {}
        if fmt == "ascii":
            tokens = iter(fh.read().split())
            for name, n, props in elements:
                rows = []
                for _ in range(n):
                    row = {}
                    for prop in props:
                        if prop[0] == "list":
                            k = int(next(tokens))
                            row[prop[-1]] = [float(next(tokens)) for _ in range(k)]
                        else:
                            row[prop[-1]] = float(next(tokens))
                    rows.append(row)
                data[name] = rows
        else:
            for name, n, props in elements:
                rows = []
                for _ in range(n):
                    row = {}
                    for prop in props:
                        if prop[0] == "list":
                            ct = np.dtype(endian + _PLY_TYPES[prop[1]])
                            it = np.dtype(endian + _PLY_TYPES[prop[2]])
                            k = int(np.frombuffer(fh.read(ct.itemsize), ct)[0])
                            row[prop[-1]] = np.frombuffer(fh.read(it.itemsize * k), it).tolist()
                        else:
                            dt = np.dtype(endian + _PLY_TYPES[prop[0]])
                            row[prop[-1]] = float(np.frombuffer(fh.read(dt.itemsize), dt)[0])
                    rows.append(row)
                data[name] = rows
    verts = np.array([[r["x"], r["y"], r["z"]] for r in data.get("vertex", [])]).reshape(-1, 3)
    tris = []
    for r in data.get("face", []):
        idx = r.get("vertex_indices", r.get("vertex_index"))
        if idx is None:
            raise MeshFormatError(f"{path}: face element lacks vertex_indices")
        idx = [int(i) for i in idx]
        for j in range(1, len(idx) - 1):
            tris.append((idx[0], idx[j], idx[j + 1]))
    return TriMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_mesh(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return load_obj(path)
    if ext == ".ply":
        return load_ply(path)
    raise MeshFormatError(f"unsupported mesh format {ext!r} (expected .obj or .ply)")


def save_obj(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write("v {:.17g} {:.17g} {:.17g}\n".format(*v))
        for t in mesh.triangles:
            fh.write("f {} {} {}\n".format(*(t + 1)))
