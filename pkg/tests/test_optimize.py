import dataclasses

import numpy as np
import pytest
from conftest import gripper_setup, self_sphere_case
from oracles import brute_closest, central_difference, inside_by_parity

from ugcs._validation import InvalidArgumentError
from ugcs.assets import load_bundled
from ugcs.coordspace import CoordinateMap, GripperPrint, ObjectCloud, build_print, max_graspable_sphere
from ugcs.kinematics import GraspConfig, forward_kinematics, log_so3, posed_positions
from ugcs.mesh import TriMesh, box_mesh, icosphere
from ugcs.optimize import (
    DivergedError,
    EmptyCorrespondenceError,
    GraspEnergy,
    OptimizationConfig,
    UninitializableMapError,
    correspond,
    energy_for_cloud,
    init_pose,
    palm_patch,
    synthesize,
    transfer,
)
from ugcs.spherical import haversine_matrix, spherical_from_unit


def synthetic_print(coords, gripper_id="syn"):
    coords = np.asarray(coords, dtype=np.float64)
    pts = np.random.default_rng(0).normal(size=(len(coords), 3))
    return GripperPrint(gripper_id, np.zeros(3), 0.05, GraspConfig(np.zeros(3), np.zeros(3), []),
                        pts, coords, ["palm"] * len(coords))


def random_coords(rng, n):
    d = rng.normal(size=(n, 3))
    return spherical_from_unit(d / np.linalg.norm(d, axis=1, keepdims=True))


def rotation_error(a, b):
    return float(np.linalg.norm(log_so3(a.T @ b)))


# correspondence

def test_exact_subset_matches_with_zero_arc(rng):
    print_ = synthetic_print(random_coords(rng, 50))
    pick = np.array([4, 17, 33, 49])
    cmap = CoordinateMap(print_.coords[pick], np.ones(4, bool))
    corr = correspond(cmap, print_)
    assert np.array_equal(corr.print_index, pick)
    assert np.all(corr.arc == 0.0)


def test_tie_broken_by_lowest_index():
    # filler near the palm pole, far from the query
    coords = np.full((10, 2), 0.97)
    coords[:, 0] = np.linspace(0.05, 0.95, 10)
    coords[3] = (0.375, 0.5)
    coords[7] = (0.625, 0.5)
    print_ = synthetic_print(coords)
    cmap = CoordinateMap(np.array([[0.5, 0.5]]), [True])
    d = haversine_matrix(cmap.coords, print_.coords)[0]
    assert d[3] == d[7] == d.min()
    assert correspond(cmap, print_).print_index.tolist() == [3]


def test_correspond_matches_brute_force(rng):
    print_ = synthetic_print(random_coords(rng, 5000))
    coords = random_coords(rng, 300)
    contact = rng.random(300) < 0.7
    coords[~contact] = 0.0
    cmap = CoordinateMap(coords, contact)
    corr = correspond(cmap, print_, pole_guard=0.0)
    assert np.array_equal(corr.object_index, np.flatnonzero(contact))
    d = haversine_matrix(coords[contact], print_.coords)
    assert np.array_equal(corr.print_index, np.argmin(d, axis=1))
    assert np.allclose(corr.arc, d.min(axis=1), atol=0)


def test_correspond_ignores_positions():
    # the match depends on coordinates only; scaled geometry changes nothing
    model, fit, print_, cloud, _, cmap = self_sphere_case("parallel_jaw")
    a = correspond(cmap, print_)
    scaled = dataclasses.replace(print_, points=print_.points * 3.0, sphere_radius=3 * print_.sphere_radius)
    b = correspond(cmap, scaled)
    assert np.array_equal(a.print_index, b.print_index)
    assert np.array_equal(a.object_index, b.object_index)


def test_pole_guard_drops_near_pole_predictions():
    print_ = synthetic_print([[0.5, 0.9], [0.5, 0.1]])
    cmap = CoordinateMap(np.array([[0.0, 0.001], [0.5, 0.8]]), [True, True])
    assert correspond(cmap, print_).object_index.tolist() == [1]
    assert correspond(cmap, print_, pole_guard=0.0).object_index.tolist() == [0, 1]


def test_empty_correspondence():
    print_ = synthetic_print([[0.5, 0.9]])
    with pytest.raises(EmptyCorrespondenceError, match="empty correspondence"):
        correspond(CoordinateMap(np.zeros((5, 2)), np.zeros(5, bool)), print_)


# pose initialization

def south_pole_case(radius=0.05, count=4000, seed=3):
    """Sphere cloud whose map puts a palm patch (phi = 0.95) at the south pole."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = radius * d
    coords = np.zeros((count, 2))
    contact = d[:, 2] < 0.2
    patch = d[:, 2] < -0.9
    coords[contact] = np.column_stack([rng.uniform(0.3, 0.9, contact.sum()), rng.uniform(0.2, 0.7, contact.sum())])
    coords[patch] = np.column_stack([rng.uniform(0.0, 0.2, patch.sum()), np.full(patch.sum(), 0.95)])
    return ObjectCloud(pts, d), CoordinateMap(coords, contact), patch


def test_init_pose_south_pole_formula(jaw):
    model, _, print_ = jaw
    cloud, cmap, patch = south_pole_case()
    cfg = OptimizationConfig()
    T = init_pose(cmap, cloud, print_, cfg, model)
    palm = T @ forward_kinematics(model, GraspConfig(np.zeros(3), np.zeros(3), np.zeros(model.dof)))[model.palm_link]
    mean = cloud.points[patch].mean(axis=0)
    n = cloud.normals[patch].mean(axis=0)
    n /= np.linalg.norm(n)
    assert np.linalg.norm(palm[:3, 3] - (mean + 0.1 * n)) <= 1e-9
    # below the patch, approaching upward
    assert palm[2, 3] < mean[2] - 0.09
    approach = -palm[:3, 2]
    assert np.arccos(np.clip(approach @ -n, -1, 1)) <= 1e-6
    assert approach[2] > 0.99


def test_singleton_fallback():
    cloud, _, _ = south_pole_case()
    coords = np.zeros((len(cloud), 2))
    contact = np.zeros(len(cloud), bool)
    contact[:20] = True
    coords[:20] = [0.1, 0.5]
    coords[11] = [0.5, 0.99]  # outside lambda_ub, so the patch is empty
    cmap = CoordinateMap(coords, contact)
    sel, fallback = palm_patch(cmap, OptimizationConfig())
    assert fallback and sel.tolist() == [11]
    T = init_pose(cmap, cloud, synthetic_print([[0.5, 0.9], [0.6, 0.9], [0.7, 0.8]]), OptimizationConfig())
    assert np.allclose(T[:3, 3], cloud.points[11] + 0.1 * cloud.normals[11], atol=1e-12)


def test_uninitializable_map():
    cloud, _, _ = south_pole_case(count=10)
    cmap = CoordinateMap(np.zeros((10, 2)), np.zeros(10, bool))
    with pytest.raises(UninitializableMapError, match="uninitializable"):
        init_pose(cmap, cloud, synthetic_print([[0.5, 0.9]]), OptimizationConfig())


def test_init_pose_translation_equivariant(jaw):
    model, _, print_ = jaw
    cloud, cmap, _ = south_pole_case()
    t = np.array([0.3, -1.2, 0.7])
    a = init_pose(cmap, cloud, print_, OptimizationConfig(), model)
    b = init_pose(cmap, cloud.translated(t), print_, OptimizationConfig(), model)
    assert np.allclose(b[:3, 3] - a[:3, 3], t, atol=1e-9)
    assert np.allclose(b[:3, :3], a[:3, :3], atol=1e-12)


def test_init_pose_deterministic(jaw):
    model, _, print_ = jaw
    cloud, cmap, _ = south_pole_case()
    a = init_pose(cmap, cloud, print_, OptimizationConfig(), model)
    b = init_pose(cmap, cloud, print_, OptimizationConfig(), model)
    assert np.array_equal(a, b)


# energies

def test_coincident_pairs_give_zero_energy(jaw):
    model, fit, print_ = jaw
    q = fit.capture_config
    posed = posed_positions(model, q, print_.link_points(model))
    far = box_mesh([5, 5, 5], [6, 6, 6])
    idx = np.arange(0, len(print_), 7)
    rep = GraspEnergy(model, print_, idx, posed[idx], far).report(q)
    assert rep.e_dist == pytest.approx(0.0, abs=1e-15)
    assert rep.e_pen == 0.0 and rep.e_joint == 0.0
    assert rep.total == pytest.approx(0.0, abs=1e-15)


def test_joint_penalty_example(jaw):
    model, fit, print_ = jaw
    q = GraspConfig(np.zeros(3), np.zeros(3), model.upper + 0.1)
    rep = GraspEnergy(model, print_, [0], [[0.0, 0.0, 0.0]]).report(q)
    assert rep.e_joint == pytest.approx(0.01, rel=1e-12)
    q = GraspConfig(np.zeros(3), np.zeros(3), model.lower - 0.1)
    assert GraspEnergy(model, print_, [0], [[0.0, 0.0, 0.0]]).report(q).e_joint == pytest.approx(0.01, rel=1e-12)


def test_e_dist_is_sum_of_squares(jaw, rng):
    model, fit, print_ = jaw
    q = fit.capture_config
    idx = rng.integers(0, len(print_), 40)
    targets = rng.normal(size=(40, 3)) * 0.05
    rep = GraspEnergy(model, print_, idx, targets).report(q)
    posed = posed_positions(model, q, print_.link_points(model))
    assert rep.e_dist == pytest.approx(np.sum((posed[idx] - targets) ** 2), rel=1e-12)


def test_total_is_weighted_sum(jaw):
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    corr = correspond(cmap, print_)
    cfg = OptimizationConfig(w_dist=2.0, w_pen=3.0, w_joint=5.0)
    q = GraspConfig([0, 0, -0.004], np.zeros(3), model.upper + 0.01)
    rep = energy_for_cloud(cloud, corr, print_, model, mesh, q, cfg)
    assert rep.e_pen > 0 and rep.e_joint > 0
    assert rep.total == pytest.approx(2 * rep.e_dist + 3 * rep.e_pen + 5 * rep.e_joint, rel=1e-14)


def test_penetration_matches_brute_force(jaw, rng):
    model, fit, print_ = jaw
    cube = box_mesh([-0.03, -0.03, -0.08], [0.03, 0.03, -0.02])
    q = GraspConfig([0.002, -0.001, 0.0], [0.05, -0.03, 0.2], [0.02])
    fn = GraspEnergy(model, print_, [0], [[0.0, 0.0, 0.0]], cube)
    rep = fn.report(q)
    posed = posed_positions(model, q, print_.link_points(model))
    depths = []
    for p in posed:
        if inside_by_parity(cube.vertices, cube.triangles, p):
            depths.append(brute_closest(cube.vertices, cube.triangles, p)[0])
    assert len(depths) > 10
    assert rep.e_pen == pytest.approx(sum(depths), rel=1e-9, abs=1e-12)
    assert rep.signed


def test_open_mesh_sets_warning_flag(jaw):
    model, fit, print_ = jaw
    cube = box_mesh([-0.03, -0.03, -0.08], [0.03, 0.03, -0.02])
    open_box = TriMesh(cube.vertices, cube.triangles[:-1])
    rep = GraspEnergy(model, print_, [0], [[0.0, 0.0, 0.0]], open_box).report(fit.capture_config)
    assert rep.signed is False


@pytest.mark.parametrize("weights", [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 10.0, 1.0)])
def test_gradient_matches_finite_differences(weights, rng):
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("three_finger")
    corr = correspond(cmap, print_)
    fn = GraspEnergy(model, print_, corr.print_index, cloud.points[corr.object_index], mesh, weights)
    for _ in range(3):
        x = fit.capture_config.vector + np.concatenate([rng.normal(scale=0.003, size=3), rng.normal(scale=0.05, size=3),
                                                        rng.normal(scale=0.2, size=model.dof)])
        q = GraspConfig.from_vector(x)
        total, grad, _ = fn.value_and_grad(q)
        num = central_difference(lambda v: fn.report(GraspConfig.from_vector(v)).total, x)
        assert np.linalg.norm(grad - num) <= 1e-4 * np.linalg.norm(num)


# synthesis

@pytest.fixture(scope="module")
def jaw_synthesis():
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    return synthesize(cmap, print_, model, mesh, cloud, OptimizationConfig())


def test_synthesis_recovers_capture_grasp(jaw_synthesis):
    model, fit, *_ = self_sphere_case("parallel_jaw")
    q = jaw_synthesis.config
    assert np.linalg.norm(q.translation - fit.capture_config.translation) <= 0.01
    assert rotation_error(q.rotation, fit.capture_config.rotation) <= 0.1


def test_synthesis_never_worse_than_initial(jaw_synthesis):
    assert jaw_synthesis.report.total <= jaw_synthesis.initial.total
    assert len(jaw_synthesis.trace) >= 1


def test_synthesis_respects_joint_limits(jaw_synthesis):
    model = load_bundled("parallel_jaw")
    j = jaw_synthesis.config.joints
    assert np.all(j >= model.lower - 1e-9) and np.all(j <= model.upper + 1e-9)


def test_synthesis_deterministic(jaw_synthesis):
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    again = synthesize(cmap, print_, model, mesh, cloud, OptimizationConfig())
    assert np.array_equal(again.config.vector, jaw_synthesis.config.vector)


def test_seeded_noise_changes_start_not_reproducibility():
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    cfg = OptimizationConfig(iterations=20, init_noise=0.005, init_rot_noise=0.05, seed=4)
    a = synthesize(cmap, print_, model, mesh, cloud, cfg)
    b = synthesize(cmap, print_, model, mesh, cloud, cfg)
    c = synthesize(cmap, print_, model, mesh, cloud, dataclasses.replace(cfg, seed=5))
    assert np.array_equal(a.config.vector, b.config.vector)
    assert not np.array_equal(a.initial_config.vector, c.initial_config.vector)


def test_refinement_step_keeps_energy_bound():
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    res = synthesize(cmap, print_, model, mesh, cloud, OptimizationConfig(iterations=50, refine=True))
    assert res.report.total <= res.initial.total


def test_empty_map_propagates():
    model, fit, print_, cloud, mesh, _ = self_sphere_case("parallel_jaw")
    empty = CoordinateMap(np.zeros((len(cloud), 2)), np.zeros(len(cloud), bool))
    with pytest.raises(EmptyCorrespondenceError):
        synthesize(empty, print_, model, mesh, cloud)


def test_divergence_detected():
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    # steps of 10 m (rotations wrap) throw the gripper far from the object
    cfg = OptimizationConfig(iterations=200, step_size=10.0, grad_clip=1.0)
    with pytest.raises(DivergedError, match="diverged") as info:
        synthesize(cmap, print_, model, mesh, cloud, cfg)
    assert len(info.value.trace) >= 50


def test_map_cloud_length_mismatch():
    model, fit, print_, cloud, mesh, cmap = self_sphere_case("parallel_jaw")
    short = ObjectCloud(cloud.points[:10], cloud.normals[:10])
    with pytest.raises(InvalidArgumentError, match="differ in length"):
        synthesize(cmap, print_, model, mesh, short)


# transfer

def random_grasp(model, rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return GraspConfig(rng.uniform(-0.3, 0.3, 3), axis * rng.uniform(0, np.pi), rng.uniform(model.lower, model.upper))


def test_identity_transfer(bundled, rng):
    model, fit, print_ = bundled
    for _ in range(3):
        src = random_grasp(model, rng)
        res = transfer(print_, src, model, print_, model)
        q = res.config
        assert np.linalg.norm(q.translation - src.translation) <= 1e-3
        assert rotation_error(q.rotation, src.rotation) <= 1e-2
        assert np.max(np.abs(q.joints - src.joints)) <= 1e-2
        assert res.report.total <= res.initial.total


def test_transfer_rigid_equivariance(rng):
    model, fit, print_ = gripper_setup("hand5")
    tgt_model, _, tgt_print = gripper_setup("three_finger")
    src = random_grasp(model, rng)
    a = transfer(print_, src, model, tgt_print, tgt_model).config
    T = np.eye(4)
    T[:3, :3] = GraspConfig(np.zeros(3), [0.3, -0.8, 1.1], []).rotation
    T[:3, 3] = [0.2, 0.1, -0.4]
    b = transfer(print_, src.with_root(T @ src.root_transform), model, tgt_print, tgt_model).config
    expected = T @ a.root_transform
    assert np.linalg.norm(b.translation - expected[:3, 3]) <= 1e-3
    assert rotation_error(b.rotation, expected[:3, :3]) <= 1e-2
    assert np.max(np.abs(b.joints - a.joints)) <= 1e-2


def test_transfer_to_mirrored_jaw_matches_fingertips():
    model, fit, print_ = gripper_setup("parallel_jaw")
    mirrored = load_bundled("parallel_jaw_mirrored")
    m_fit = max_graspable_sphere(mirrored)
    m_print = build_print(mirrored, m_fit)
    src = GraspConfig([0.01, 0.02, 0.03], [0.2, -0.1, 0.4], [0.03])
    q = transfer(print_, src, model, m_print, mirrored).config

    def tips(mdl, cfg):
        T = forward_kinematics(mdl, cfg)
        out = []
        for name in mdl.link_names:
            if name == mdl.palm_link:
                continue
            v = mdl.links[name].mesh.vertices
            out.append(T[name][:3, :3] @ v[np.argmin(v[:, 2])] + T[name][:3, 3])
        return np.array(out)

    a, b = tips(model, src), tips(mirrored, q)
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    assert np.all(d.min(axis=1) <= 5e-3)


def test_transfer_rejects_bad_prints(jaw):
    model, fit, print_ = jaw
    no_sphere = dataclasses.replace(print_, sphere_radius=float("nan"))
    with pytest.raises(InvalidArgumentError, match="sphere metadata"):
        transfer(no_sphere, fit.capture_config, model, print_, model)
    other = load_bundled("three_finger")
    with pytest.raises(InvalidArgumentError, match="print is for gripper"):
        transfer(print_, fit.capture_config, model, print_, other)


# configuration

def test_config_round_trip_and_validation(tmp_path):
    cfg = OptimizationConfig(iterations=12, w_pen=3.5, refine=True, seed=9)
    assert OptimizationConfig.from_dict(cfg.to_dict()) == cfg
    import json

    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert OptimizationConfig.load(path) == cfg
    with pytest.raises(InvalidArgumentError, match="unknown config"):
        OptimizationConfig.from_dict({"iterations": 3, "learning_rate": 1})
    for bad in ({"iterations": 0}, {"w_dist": 0.0}, {"lambda_ub": 1.0}, {"phi_lb": 0.0}, {"iterations": 2.5}):
        with pytest.raises(InvalidArgumentError):
            OptimizationConfig(**bad)
    assert OptimizationConfig().step_at(250) == pytest.approx(1e-2 * 0.25)


def test_icosphere_object_is_watertight():
    assert icosphere(0.05, 4).is_watertight
