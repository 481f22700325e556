"""Axis-aligned bounding volume hierarchy over triangles.

Queries are batched: a whole set of rays (or query points) descends the tree
together and each node filters the subset that can still improve on its
current best.  Per-node work is vectorized with numpy.
"""

import numpy as np

RAY_T_MIN = 1e-9
_DET_EPS = 1e-18

# closest-feature codes returned by closest_point_on_triangles
FACE, VERT_A, VERT_B, VERT_C, EDGE_AB, EDGE_BC, EDGE_CA = range(7)


def ray_triangle(origins, dirs, a, b, c):
    """Moller-Trumbore intersection, broadcasting over leading dims.

    Returns the ray parameter ``t`` (``inf`` on miss).  Edges are inclusive.
    """
    e1 = b - a
    e2 = c - a
    pvec = np.cross(dirs, e2)
    det = np.einsum("...i,...i->...", e1, pvec)
    ok = np.abs(det) > _DET_EPS
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins - a
    u = np.einsum("...i,...i->...", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.einsum("...i,...i->...", dirs, qvec) * inv_det
    t = np.einsum("...i,...i->...", e2, qvec) * inv_det
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > RAY_T_MIN)
    return np.where(hit, t, np.inf)


def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangle ``abc`` to ``p`` (Ericson's region test).

    All arguments broadcast against each other with a trailing axis of 3.
    Returns ``(closest, feature)`` where ``feature`` is one of the module
    level codes (face, vertex, or edge).
    """
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    shape = p.shape[:-1]
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c

    def dot(x, y):
        return np.einsum("...i,...i->...", x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty(shape + (3,))
    feat = np.full(shape, -1, dtype=np.int8)
    free = np.ones(shape, dtype=bool)

    def assign(mask, value, code):
        m = mask & free
        if np.any(m):
            out[m] = value[m] if value.shape == out.shape else value
            feat[m] = code
            free[m] = False

    assign((d1 <= 0) & (d2 <= 0), a, VERT_A)
    assign((d3 >= 0) & (d4 <= d3), b, VERT_B)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[..., None] * ab, EDGE_AB)
        assign((d6 >= 0) & (d5 <= d6), c, VERT_C)
        w_ac = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[..., None] * ac, EDGE_CA)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w_bc[..., None] * (c - b), EDGE_BC)
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(free, a + v[..., None] * ab + w[..., None] * ac, FACE)
    return out, feat


class BVH:
    """Median-split AABB tree over the triangles of a mesh.

    Parameters
    ----------
    vertices : (V, 3) array
    triangles : (T, 3) int array
    leaf_size : int
        Maximum number of triangles per leaf.
    """

    def __init__(self, vertices, triangles, leaf_size=4):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.leaf_size = int(leaf_size)
        tri_pts = self.vertices[self.triangles]
        self._a = np.ascontiguousarray(tri_pts[:, 0])
        self._b = np.ascontiguousarray(tri_pts[:, 1])
        self._c = np.ascontiguousarray(tri_pts[:, 2])
        self._build(tri_pts)

    def _build(self, tri_pts):
        n = len(tri_pts)
        centroids = tri_pts.mean(axis=1)
        tri_lo = tri_pts.min(axis=1)
        tri_hi = tri_pts.max(axis=1)
        order = np.arange(n)
        lo, hi, left, right, start, count = [], [], [], [], [], []

        def new_node():
            for arr in (lo, hi):
                arr.append(None)
            for arr in (left, right, start, count):
                arr.append(-1)
            return len(lo) - 1

        root = new_node()
        stack = [(root, 0, n)]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if e - s <= self.leaf_size:
                start[node], count[node] = s, e - s
                continue
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            # stable sort keeps construction deterministic
            sub = np.argsort(cen[:, axis], kind="stable")
            order[s:e] = idx[sub]
            mid = s + (e - s) // 2
            l_node = new_node()
            r_node = new_node()
            left[node], right[node] = l_node, r_node
            stack.append((r_node, mid, e))
            stack.append((l_node, s, mid))

        self.order = order
        lo_arr = np.array(lo)
        hi_arr = np.array(hi)
        pad = 1e-9 * max(1.0, float(np.max(np.abs(self.vertices)))) if n else 0.0
        self.node_lo = lo_arr - pad
        self.node_hi = hi_arr + pad
        self.node_left = np.array(left)
        self.node_right = np.array(right)
        self.node_start = np.array(start)
        self.node_count = np.array(count)

    @property
    def _leaf_table(self):
        """(n_nodes, leaf_size) triangle ids per leaf node, padded with -1."""
        table = getattr(self, "_leaf_table_cache", None)
        if table is None:
            table = np.full((len(self.node_count), self.leaf_size), -1, dtype=np.int64)
            for node in np.flatnonzero(self.node_count >= 0):
                s = self.node_start[node]
                k = self.node_count[node]
                table[node, :k] = self.order[s : s + k]
            self._leaf_table_cache = table
        return table

    @staticmethod
    def _select_best(q, key, tri, n):
        """Per query: smallest ``key``, ties to lowest ``tri``.  Returns the
        positions into the candidate arrays for queries that have any."""
        order = np.lexsort((tri, key, q))
        qs = q[order]
        first = np.ones(len(qs), dtype=bool)
        first[1:] = qs[1:] != qs[:-1]
        return order[first]

    def raycast(self, origins, dirs):
        """First hit of each ray.

        Returns ``(t, tri)`` arrays; misses have ``t = inf`` and ``tri = -1``.
        Ties in ``t`` resolve to the lowest triangle index.
        """
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        nray = len(origins)
        t_best = np.full(nray, np.inf)
        tri_best = np.full(nray, -1, dtype=np.int64)
        if nray == 0 or len(self.triangles) == 0:
            return t_best, tri_best
        with np.errstate(divide="ignore"):
            inv = 1.0 / dirs
        table = self._leaf_table
        ri = np.arange(nray)
        ni = np.zeros(nray, dtype=np.int64)
        while ri.size:
            o = origins[ri]
            iv = inv[ri]
            with np.errstate(invalid="ignore"):
                t1 = (self.node_lo[ni] - o) * iv
                t2 = (self.node_hi[ni] - o) * iv
            tn = np.nan_to_num(np.fmax.reduce(np.fmin(t1, t2), axis=1), nan=-np.inf)
            tf = np.nan_to_num(np.fmin.reduce(np.fmax(t1, t2), axis=1), nan=np.inf)
            keep = (tf >= np.maximum(tn, 0.0)) & (tn <= t_best[ri])
            ri, ni = ri[keep], ni[keep]
            leaf = self.node_count[ni] >= 0
            if np.any(leaf):
                lr = np.repeat(ri[leaf], self.leaf_size)
                lt = table[ni[leaf]].reshape(-1)
                valid = lt >= 0
                lr, lt = lr[valid], lt[valid]
                t = ray_triangle(origins[lr], dirs[lr], self._a[lt], self._b[lt], self._c[lt])
                hit = np.isfinite(t)
                lr, lt, t = lr[hit], lt[hit], t[hit]
                if lr.size:
                    cur = np.unique(lr)
                    q = np.concatenate([lr, cur])
                    key = np.concatenate([t, t_best[cur]])
                    tri = np.concatenate([lt, np.where(tri_best[cur] < 0, np.iinfo(np.int64).max, tri_best[cur])])
                    sel = self._select_best(q, key, tri, nray)
                    t_best[q[sel]] = key[sel]
                    tri_best[q[sel]] = tri[sel]
            inner = ~leaf
            ri = np.concatenate([ri[inner], ri[inner]])
            ni = np.concatenate([self.node_left[ni[inner]], self.node_right[ni[inner]]])
        return t_best, tri_best

    def closest(self, points):
        """Closest surface point for each query point.

        Returns ``(dist2, closest, tri, feature)``; ties resolve to the lowest
        triangle index.
        """
        from scipy.spatial import cKDTree

        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        npts = len(pts)
        tree = getattr(self, "_centroid_tree", None)
        if tree is None:
            tree = self._centroid_tree = cKDTree((self._a + self._b + self._c) / 3.0)
        # the triangle with the nearest centroid bounds the search radius
        _, seed = tree.query(pts)
        seed = np.asarray(seed, dtype=np.int64).reshape(npts)
        cp, _ = closest_point_on_triangles(pts, self._a[seed], self._b[seed], self._c[seed])
        bound = np.sum((cp - pts) ** 2, axis=1) * (1.0 + 1e-9) + 1e-300

        table = self._leaf_table
        pi = np.arange(npts)
        ni = np.zeros(npts, dtype=np.int64)
        leaf_p, leaf_n = [], []
        while pi.size:
            p = pts[pi]
            gap = np.maximum(np.maximum(self.node_lo[ni] - p, p - self.node_hi[ni]), 0.0)
            keep = np.einsum("ij,ij->i", gap, gap) <= bound[pi]
            pi, ni = pi[keep], ni[keep]
            leaf = self.node_count[ni] >= 0
            leaf_p.append(pi[leaf])
            leaf_n.append(ni[leaf])
            inner = ~leaf
            pi = np.concatenate([pi[inner], pi[inner]])
            ni = np.concatenate([self.node_left[ni[inner]], self.node_right[ni[inner]]])
        qp = np.repeat(np.concatenate(leaf_p), self.leaf_size)
        qt = table[np.concatenate(leaf_n)].reshape(-1)
        valid = qt >= 0
        qp, qt = qp[valid], qt[valid]
        cp, feat = closest_point_on_triangles(pts[qp], self._a[qt], self._b[qt], self._c[qt])
        d2 = np.einsum("ij,ij->i", cp - pts[qp], cp - pts[qp])
        sel = self._select_best(qp, d2, qt, npts)
        out_d2 = np.empty(npts)
        out_cp = np.empty((npts, 3))
        out_tri = np.empty(npts, dtype=np.int64)
        out_feat = np.empty(npts, dtype=np.int8)
        q = qp[sel]
        out_d2[q] = d2[sel]
        out_cp[q] = cp[sel]
        out_tri[q] = qt[sel]
        out_feat[q] = feat[sel]
        return out_d2, out_cp, out_tri, out_feat
