"""Grasp synthesis and grasp transfer by gradient-based optimization.

Object points carrying a coordinate are matched to print points by
great-circle distance; the resulting pairs drive a dense point-to-point
distance energy, combined with a penetration hinge and a joint-limit penalty.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._validation import InvalidArgumentError, UGCSError
from .coordspace import CoordinateMap, GripperPrint, ObjectCloud, nearest_lowest_index, open_configuration
from .kinematics import (
    GraspConfig,
    _root_frame_fk,
    exp_so3,
    left_jacobian_so3,
    log_so3,
    make_transform,
    point_jacobians,
    posed_positions,
    skew,
)
from .mesh import TriMesh
from .spherical import haversine, haversine_matrix

CONFIG_FORMAT = "ugcs.optimization_config"
CONFIG_VERSION = 1


class EmptyCorrespondenceError(UGCSError):
    pass


class UninitializableMapError(UGCSError):
    pass


class DivergedError(UGCSError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OptimizationConfig:
    iterations: int = 300
    step_size: float = 1e-2
    decay: float = 0.5
    decay_every: int = 100
    w_dist: float = 1.0
    w_pen: float = 10.0
    w_joint: float = 1.0
    tolerance: float = 1e-12
    seed: int = 0
    lambda_ub: float = 0.2
    phi_lb: float = 0.8
    standoff: float = 0.1
    refine: bool = False
    refine_step: float = 0.5
    init_noise: float = 0.0
    init_rot_noise: float = 0.0
    pole_guard: float = 0.05
    grad_clip: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if isinstance(self.iterations, bool) or int(self.iterations) != self.iterations or self.iterations < 1:
            raise InvalidArgumentError("iterations must be an integer >= 1")
        if not (self.w_dist > 0 and self.w_pen > 0 and self.w_joint > 0):
            raise InvalidArgumentError("energy weights must be positive")
        if not (0 < self.lambda_ub < 1 and 0 < self.phi_lb < 1):
            raise InvalidArgumentError("lambda_ub and phi_lb must lie in (0, 1)")
        if self.step_size <= 0 or self.decay <= 0 or self.decay_every < 1:
            raise InvalidArgumentError("invalid step size schedule")
        if self.grad_clip <= 0:
            raise InvalidArgumentError("grad_clip must be positive")
        if self.standoff < 0 or self.tolerance < 0 or self.init_noise < 0 or self.init_rot_noise < 0:
            raise InvalidArgumentError("standoff, tolerance and noise levels must be non-negative")

    def step_at(self, iteration):
        return self.step_size * self.decay ** (iteration // self.decay_every)

    def to_dict(self):
        return {"format": CONFIG_FORMAT, "version": CONFIG_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        fmt = data.pop("format", CONFIG_FORMAT)
        version = data.pop("version", CONFIG_VERSION)
        data.pop("metadata", None)
        if fmt != CONFIG_FORMAT or version != CONFIG_VERSION:
            raise InvalidArgumentError(f"unsupported config document {fmt!r} v{version}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class CorrespondenceSet:
    object_index: np.ndarray
    print_index: np.ndarray
    arc: np.ndarray

    def __len__(self):
        return len(self.object_index)


@dataclass(frozen=True)
class EnergyReport:
    e_dist: float
    e_pen: float
    e_joint: float
    total: float
    weights: tuple = (1.0, 10.0, 1.0)
    signed: bool = True

    def as_row(self):
        return (self.e_dist, self.e_pen, self.e_joint, self.total)


@dataclass
class SynthesisResult:
    config: GraspConfig
    report: EnergyReport
    initial: EnergyReport
    initial_config: GraspConfig
    trace: list = field(default_factory=list)


# --- correspondence -----------------------------------------------------------------

def arc_argmin(query_coords, ref_coords, chunk=512):
    """Index of the arc-nearest reference coordinate for each query (lowest
    index on ties) and the arc length."""
    n = len(query_coords)
    idx = np.empty(n, dtype=np.int64)
    arc = np.empty(n)
    for s in range(0, n, chunk):
        d = haversine_matrix(query_coords[s : s + chunk], ref_coords)
        k = np.argmin(d, axis=1)
        idx[s : s + chunk] = k
        arc[s : s + chunk] = d[np.arange(len(k)), k]
    return idx, arc


def correspond(cmap, print_, pole_guard=0.05):
    """Match every contact point of ``cmap`` to its arc-nearest print point.

    Points flagged as contact but lying within ``pole_guard`` radians of the
    no-contact pole are treated as non-contact.
    """
    if not isinstance(cmap, CoordinateMap) or not isinstance(print_, GripperPrint):
        raise InvalidArgumentError("correspond expects a CoordinateMap and a GripperPrint")
    mask = cmap.contact.copy()
    if pole_guard > 0 and mask.any():
        mask &= haversine(cmap.coords, np.zeros(2)) >= pole_guard
    obj = np.flatnonzero(mask)
    if obj.size == 0:
        raise EmptyCorrespondenceError("empty correspondence: the map has no contact points")
    idx, arc = arc_argmin(cmap.coords[obj], print_.coords)
    return CorrespondenceSet(obj, idx, arc)


# --- pose initialization ------------------------------------------------------------

def _principal_axis(xy):
    """Dominant direction of 2-D/3-D points, sign fixed so the largest
    magnitude component is positive; ``None`` if undefined."""
    if len(xy) < 2:
        return None
    c = xy - xy.mean(axis=0)
    w, v = np.linalg.eigh(c.T @ c)
    if w[-1] <= 1e-12 * max(1.0, w.sum()) or (len(w) > 1 and w[-1] - w[-2] <= 1e-9 * w[-1]):
        return None
    axis = v[:, -1]
    k = int(np.argmax(np.abs(axis)))
    return axis if axis[k] > 0 else -axis


def palm_patch(cmap, cfg):
    """Indices of map points predicted to touch the palm (with singleton fallback)."""
    lam, phi = cmap.coords[:, 0], cmap.coords[:, 1]
    sel = np.flatnonzero(cmap.contact & (lam <= cfg.lambda_ub) & (phi >= cfg.phi_lb))
    if sel.size:
        return sel, False
    masked = np.flatnonzero(cmap.contact)
    if masked.size == 0:
        raise UninitializableMapError("uninitializable map: no contact points")
    return masked[[int(np.argmax(phi[masked]))]], True


def init_pose(cmap, cloud, print_, cfg, model=None, open_joints=None, corr=None):
    """Initial root transform (4x4) from the palm patch of a coordinate map.

    The palm origin is placed ``cfg.standoff`` along the mean patch normal from
    the mean patch position, with the approach axis (palm ``-z``) against that
    normal.  Spin aligns the principal axis of the print in the palm plane with
    the principal axis of the patch in its tangent plane.  Given ``model`` and
    ``corr``, the sign of that axis is the one with the lower distance energy
    at the open configuration (first sign on ties).
    """
    if len(cmap) != len(cloud):
        raise InvalidArgumentError("map and object cloud differ in length")
    sel, _ = palm_patch(cmap, cfg)
    center = cloud.points[sel].mean(axis=0)
    n = cloud.normals[sel].mean(axis=0)
    if np.linalg.norm(n) < 1e-12:
        raise UninitializableMapError("uninitializable map: palm patch normals cancel out")
    n = n / np.linalg.norm(n)
    position = center + cfg.standoff * n

    e = _principal_axis(np.column_stack([print_.points[:, :2], np.zeros(len(print_))]))
    if e is None:
        e = np.array([1.0, 0.0, 0.0])
    e = e / np.linalg.norm(e)
    z = np.array([0.0, 0.0, 1.0])

    rel = cloud.points[sel] - center
    tangent = rel - np.outer(rel @ n, n)
    u = _principal_axis(tangent)
    if u is not None:
        u = u - (u @ n) * n
    if u is None or np.linalg.norm(u) < 1e-9:
        ref = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = ref - (ref @ n) * n
    u = u / np.linalg.norm(u)

    src = np.column_stack([e, np.cross(z, e), z])
    if model is None:
        dst = np.column_stack([u, np.cross(n, u), n])
        return make_transform(dst @ src.T, position)

    joints = open_configuration(model) if open_joints is None else open_joints
    T, _, _ = _root_frame_fk(model, joints)
    palm_in_root = np.linalg.inv(T[model.palm_link])
    candidates = []
    for axis in (u, -u):
        dst = np.column_stack([axis, np.cross(n, axis), n])
        candidates.append(make_transform(dst @ src.T, position) @ palm_in_root)
    if corr is None or len(corr) == 0:
        return candidates[0]
    fn = GraspEnergy(model, print_, corr.print_index, cloud.points[corr.object_index])
    scores = [fn.report(GraspConfig.from_transform(Tc, joints)).e_dist for Tc in candidates]
    return candidates[1] if scores[1] < scores[0] else candidates[0]


# --- energies -----------------------------------------------------------------------

class GraspEnergy:
    """Weighted distance + penetration + joint-limit energy over configurations.

    ``targets`` are world points matched to print points ``pair_print``; the
    distance term is the sum of squared pair distances.  ``mesh`` enables the
    penetration term over all print points.
    """

    def __init__(self, model, print_, pair_print, targets, mesh=None, weights=(1.0, 10.0, 1.0)):
        self.model = model
        self.points = print_.link_points(model)
        pair_print = np.asarray(pair_print, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
        if len(pair_print) != len(targets) or len(targets) == 0:
            raise EmptyCorrespondenceError("energy needs at least one corresponded pair")
        self.uniq, inv = np.unique(pair_print, return_inverse=True)
        self.count = np.bincount(inv, minlength=len(self.uniq)).astype(np.float64)
        self.target_sum = np.zeros((len(self.uniq), 3))
        np.add.at(self.target_sum, inv, targets)
        self.target_sq = float(np.sum(targets * targets))
        self.pair_inverse = inv
        self.targets = targets
        self.n_pairs = len(targets)
        self.pair_points = self.points.subset(self.uniq)
        self.mesh = mesh
        self.weights = tuple(float(w) for w in weights)
        if mesh is not None:
            lo, hi = mesh.bounds
            self._lo, self._hi = lo - 1e-9, hi + 1e-9
            self.signed = mesh.is_watertight
        else:
            self.signed = True

    def _dist_term(self, pos):
        # sum of |g - o|^2 expanded over unique print points
        s = np.sum(self.count * np.sum(pos * pos, axis=1)) - 2.0 * np.sum(pos * self.target_sum) + self.target_sq
        return max(s, 0.0)

    def _penetration(self, pos):
        """Per-point penetration depth and its gradient w.r.t. the point."""
        depth = np.zeros(len(pos))
        grad = np.zeros_like(pos)
        if self.mesh is None:
            return depth, grad
        inside_box = np.all((pos >= self._lo) & (pos <= self._hi), axis=1)
        idx = np.flatnonzero(inside_box)
        if idx.size == 0:
            return depth, grad
        d2, cp, tri, feat = self.mesh.closest_points(pos[idx])
        diff = pos[idx] - cp
        if self.signed:
            n = self.mesh.pseudo_normals(tri, feat)
        else:
            n = self.mesh.face_normals[tri]
        inside = np.einsum("ij,ij->i", diff, n) < 0.0
        dist = np.sqrt(d2)
        pen = inside & (dist > 0)
        depth[idx[pen]] = dist[pen]
        grad[idx[pen]] = diff[pen] / dist[pen, None]
        return depth, grad

    def _joint_term(self, joints):
        over = np.maximum(joints - self.model.upper, 0.0)
        under = np.maximum(self.model.lower - joints, 0.0)
        value = float(np.sum(over**2) + np.sum(under**2))
        grad = 2.0 * over - 2.0 * under
        return value, grad

    def report(self, q):
        pos = posed_positions(self.model, q, self.pair_points)
        e_dist = self._dist_term(pos)
        e_pen = 0.0
        if self.mesh is not None:
            depth, _ = self._penetration(posed_positions(self.model, q, self.points))
            e_pen = float(depth.sum())
        e_joint, _ = self._joint_term(q.joints)
        wd, wp, wn = self.weights
        return EnergyReport(e_dist, e_pen, e_joint, wd * e_dist + wp * e_pen + wn * e_joint,
                            self.weights, self.signed)

    def value_and_grad(self, q):
        """Total energy, its gradient over the 6 + J configuration, and the report."""
        wd, wp, wn = self.weights
        pos, J = point_jacobians(self.model, q, self.pair_points)
        e_dist = self._dist_term(pos)
        resid = self.count[:, None] * pos - self.target_sum
        grad = wd * 2.0 * np.einsum("ni,nij->j", resid, J)
        e_pen = 0.0
        if self.mesh is not None:
            all_pos = posed_positions(self.model, q, self.points)
            depth, dgrad = self._penetration(all_pos)
            e_pen = float(depth.sum())
            pen = np.flatnonzero(depth > 0)
            if pen.size:
                _, Jp = point_jacobians(self.model, q, self.points.subset(pen))
                grad += wp * np.einsum("ni,nij->j", dgrad[pen], Jp)
        e_joint, gj = self._joint_term(q.joints)
        grad[6:] += wn * gj
        total = wd * e_dist + wp * e_pen + wn * e_joint
        return total, grad, EnergyReport(e_dist, e_pen, e_joint, total, self.weights, self.signed)


def energy(cmap, corr, print_, model, mesh, q, cfg=None):
    """Energy report of configuration ``q`` for a map/correspondence pair."""
    cfg = cfg or OptimizationConfig()
    if not isinstance(cmap, CoordinateMap):
        raise InvalidArgumentError("energy expects a CoordinateMap")
    points = getattr(cmap, "points", None)
    if points is None:
        raise InvalidArgumentError("energy needs object positions; use energy_for_cloud")
    return GraspEnergy(model, print_, corr.print_index, points[corr.object_index], mesh,
                       (cfg.w_dist, cfg.w_pen, cfg.w_joint)).report(q)


def energy_for_cloud(cloud, corr, print_, model, mesh, q, cfg=None):
    cfg = cfg or OptimizationConfig()
    return GraspEnergy(model, print_, corr.print_index, cloud.points[corr.object_index], mesh,
                       (cfg.w_dist, cfg.w_pen, cfg.w_joint)).report(q)


# --- optimizer ----------------------------------------------------------------------

class _Adam:
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _descend(energy_fn, q0, model, cfg):
    """Adam descent from ``q0``.

    Returns the lowest-energy iterate (joints projected onto their limits)
    and the per-iteration energy reports.
    """
    x = q0.vector.copy()
    best_x, best_total = x.copy(), np.inf
    opt = _Adam(len(x), cfg.beta1, cfg.beta2)
    trace = []
    prev = None
    initial_total = None
    above = 0
    for it in range(cfg.iterations):
        q = GraspConfig.from_vector(x)
        total, grad, rep = energy_fn.value_and_grad(q)
        trace.append(rep)
        if initial_total is None:
            initial_total = total
        if not np.isfinite(total):
            raise DivergedError("diverged: non-finite energy", trace)
        if total < best_total:
            best_x, best_total = x.copy(), total
        above = above + 1 if total > 10.0 * initial_total and initial_total > 0 else 0
        if above >= 50:
            raise DivergedError("diverged: energy above 10x its initial value for 50 iterations", trace)
        if prev is not None and abs(prev - total) < cfg.tolerance:
            break
        prev = total
        # a penetration spike would otherwise dominate Adam's second moment
        norm = np.linalg.norm(grad)
        if norm > cfg.grad_clip:
            grad = grad * (cfg.grad_clip / norm)
        x = x - opt.step(grad, cfg.step_at(it))
        # projected step: joints stay within limits, rotation vector in range
        x[6:] = model.clip_joints(x[6:])
        x[3:6] = GraspConfig.from_vector(x).rotvec
    else:
        total, _, rep = energy_fn.value_and_grad(GraspConfig.from_vector(x))
        if np.isfinite(total) and total < best_total:
            best_x = x.copy()
    best_x[6:] = model.clip_joints(best_x[6:])
    return GraspConfig.from_vector(best_x), trace


def _solve_least_squares(fn, q0, model, cfg):
    """Trust-region least squares on the distance and joint-limit residuals.

    The rotation is a left perturbation ``exp(d) R0`` of the initial rotation,
    which keeps the parametrization smooth away from the rotation-vector cut.
    """
    from scipy.optimize import least_squares

    R0 = q0.rotation
    wd = np.sqrt(fn.weights[0])
    wn = np.sqrt(fn.weights[2])
    lower, upper = model.lower, model.upper
    trace = []

    def config(z):
        return GraspConfig(z[:3], log_so3(exp_so3(z[3:6]) @ R0), z[6:])

    def residuals(z):
        q = config(z)
        pos = posed_positions(model, q, fn.pair_points)
        r = wd * (pos[fn.pair_inverse] - fn.targets)
        hinge = wn * (np.maximum(z[6:] - upper, 0.0) + np.minimum(z[6:] - lower, 0.0))
        trace.append(fn.report(q))
        return np.concatenate([r.ravel(), hinge])

    def jacobian(z):
        q = config(z)
        pos, J = point_jacobians(model, q, fn.pair_points)
        J = J.copy()
        J[:, :, 3:6] = -np.einsum("nij,jk->nik", skew(pos - q.translation), left_jacobian_so3(z[3:6]))
        rows = wd * J[fn.pair_inverse].reshape(-1, J.shape[2])
        outside = (z[6:] > upper) | (z[6:] < lower)
        jrows = np.zeros((model.dof, J.shape[2]))
        jrows[np.arange(model.dof), 6 + np.arange(model.dof)] = wn * outside
        return np.vstack([rows, jrows])

    z0 = np.concatenate([q0.translation, np.zeros(3), q0.joints])
    sol = least_squares(residuals, z0, jac=jacobian, method="trf", x_scale="jac",
                        ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=cfg.iterations)
    z = sol.x.copy()
    z[6:] = model.clip_joints(z[6:])
    return config(z), trace


def _noisy(q0, cfg):
    if cfg.init_noise == 0 and cfg.init_rot_noise == 0:
        return q0
    rng = np.random.default_rng(cfg.seed)
    dt = rng.normal(scale=cfg.init_noise, size=3)
    dr = rng.normal(scale=cfg.init_rot_noise, size=3)
    R = exp_so3(dr) @ q0.rotation
    return GraspConfig(q0.translation + dt, log_so3(R), q0.joints)


def synthesize(cmap, print_, model, mesh, cloud, cfg=None, corr=None):
    """Optimize a grasp configuration for a coordinate map on an object.

    Returns a :class:`SynthesisResult`; raises :class:`EmptyCorrespondenceError`
    for maps without contact points and :class:`DivergedError` when the
    energy runs away.
    """
    cfg = cfg or OptimizationConfig()
    if not isinstance(cloud, ObjectCloud):
        raise InvalidArgumentError("cloud must be an ObjectCloud")
    if mesh is not None and not isinstance(mesh, TriMesh):
        raise InvalidArgumentError("mesh must be a TriMesh")
    if len(cmap) != len(cloud):
        raise InvalidArgumentError("map and object cloud differ in length")
    if corr is None:
        corr = correspond(cmap, print_, cfg.pole_guard)
    open_joints = open_configuration(model)
    T_root = init_pose(cmap, cloud, print_, cfg, model, open_joints, corr)
    q0 = _noisy(GraspConfig.from_transform(T_root, open_joints), cfg)

    weights = (cfg.w_dist, cfg.w_pen, cfg.w_joint)
    fn = GraspEnergy(model, print_, corr.print_index, cloud.points[corr.object_index], mesh, weights)
    initial = fn.report(q0)
    q, trace = _descend(fn, q0, model, cfg)
    final = fn.report(q)
    if cfg.refine:
        q_ref = refine_step(q, cmap, cloud, print_, model, cfg)
        rep = fn.report(q_ref)
        if rep.total <= initial.total:
            q, final = q_ref, rep
    if final.total > initial.total:
        q, final = q0, initial
    return SynthesisResult(q, final, initial, q0, trace)


def refine_step(q, cmap, cloud, print_, model, cfg):
    """One gradient step on the distance term with correspondences re-matched
    by Euclidean nearest print point."""
    pts = print_.link_points(model)
    posed = posed_positions(model, q, pts)
    obj = np.flatnonzero(cmap.contact)
    if obj.size == 0:
        return q
    idx, _ = nearest_lowest_index(posed, cloud.points[obj])
    fn = GraspEnergy(model, print_, idx, cloud.points[obj], None, (1.0, 1.0, 1.0))
    pos, J = point_jacobians(model, q, fn.pair_points)
    resid = fn.count[:, None] * pos - fn.target_sum
    # step length scaled by the pair count: refine_step is the fraction of
    # the mean residual removed along the translation
    grad = np.einsum("ni,nij->j", resid, J) / fn.n_pairs
    x = q.vector - cfg.refine_step * grad
    x[6:] = model.clip_joints(x[6:])
    return GraspConfig.from_vector(x)


# --- transfer -----------------------------------------------------------------------

def rigid_align(src, dst):
    """Least-squares rotation R and translation t with ``R @ src + t ~= dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def _check_print(print_, model, role):
    if not isinstance(print_, GripperPrint):
        raise InvalidArgumentError(f"{role} print must be a GripperPrint")
    if not (np.isfinite(print_.sphere_radius) and print_.sphere_radius > 0
            and np.all(np.isfinite(print_.sphere_center))):
        raise InvalidArgumentError(f"{role} print lacks sphere metadata")
    if print_.gripper_id != model.name:
        raise InvalidArgumentError(
            f"{role} print is for gripper {print_.gripper_id!r}, model is {model.name!r}"
        )


def transfer(source_print, source_grasp, source_model, target_print, target_model, cfg=None):
    """Transfer a grasp between grippers through their shared coordinates.

    Each target print point is paired with its arc-nearest source print point;
    the target configuration minimizes the summed squared distance between the
    pairs (source posed by ``source_grasp``) plus the joint-limit penalty.
    """
    cfg = cfg or OptimizationConfig()
    _check_print(source_print, source_model, "source")
    _check_print(target_print, target_model, "target")
    if source_grasp.joints.shape != (source_model.dof,):
        raise InvalidArgumentError("source grasp does not match the source model")
    match, _ = arc_argmin(target_print.coords, source_print.coords)
    src_world = posed_positions(source_model, source_grasp, source_print.link_points(source_model))
    targets = src_world[match]

    open_joints = open_configuration(target_model)
    tgt_pts = target_print.link_points(target_model)
    at_open = posed_positions(target_model, GraspConfig(np.zeros(3), np.zeros(3), open_joints), tgt_pts)
    R, t = rigid_align(at_open, targets)
    q0 = _noisy(GraspConfig.from_transform(make_transform(R, t), open_joints), cfg)

    fn = GraspEnergy(target_model, target_print, np.arange(len(target_print)), targets, None,
                     (cfg.w_dist, cfg.w_pen, cfg.w_joint))
    initial = fn.report(q0)
    q, trace = _solve_least_squares(fn, q0, target_model, cfg)
    final = fn.report(q)
    if final.total > initial.total:
        q, final = q0, initial
    return SynthesisResult(q, final, initial, q0, trace)
