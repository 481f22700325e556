"""scikit-learn style wrappers around the print, synthesis and transfer stages."""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidArgumentError
from .coordspace import build_print, max_graspable_sphere
from .kinematics import GraspConfig, GripperModel
from .optimize import OptimizationConfig, synthesize, transfer


def _check_model(model):
    if not isinstance(model, GripperModel):
        raise InvalidArgumentError("expected a GripperModel")
    return model


class GripperPrinter(BaseEstimator):
    """Fits the maximal graspable sphere and the print of one gripper.

    After ``fit(model)``: ``sphere_``, ``print_`` and ``model_``.
    ``transform(configs)`` poses the print points in the world for each config.
    """

    def __init__(self, ray_count=10000, resolution=5e-4):
        self.ray_count = ray_count
        self.resolution = resolution

    def fit(self, model, y=None):
        self.model_ = _check_model(model)
        self.sphere_ = max_graspable_sphere(model, resolution=self.resolution)
        self.print_ = build_print(model, self.sphere_, ray_count=self.ray_count)
        return self

    def transform(self, configs):
        from .kinematics import posed_positions

        check_is_fitted(self, "print_")
        pts = self.print_.link_points(self.model_)
        return [posed_positions(self.model_, q, pts) for q in _configs(configs)]


class _OptimizerParams(BaseEstimator):
    def __init__(self, iterations=300, step_size=1e-2, w_dist=1.0, w_pen=10.0, w_joint=1.0,
                 seed=0, refine=False, init_noise=0.0, init_rot_noise=0.0):
        self.iterations = iterations
        self.step_size = step_size
        self.w_dist = w_dist
        self.w_pen = w_pen
        self.w_joint = w_joint
        self.seed = seed
        self.refine = refine
        self.init_noise = init_noise
        self.init_rot_noise = init_rot_noise

    def _config(self, seed=None):
        params = self.get_params()
        if seed is not None:
            params["seed"] = seed
        return OptimizationConfig(**params)


class GraspSynthesizer(_OptimizerParams):
    """``fit(print_, model)`` then ``predict(maps, clouds, meshes)``.

    Each prediction is a :class:`GraspConfig`; ``reports_`` holds the final
    energy reports of the last ``predict`` call.
    """

    def fit(self, print_, model):
        self.print_ = print_
        self.model_ = _check_model(model)
        return self

    def predict(self, maps, clouds, meshes):
        check_is_fitted(self, "print_")
        maps, clouds, meshes = list(maps), list(clouds), list(meshes)
        if not (len(maps) == len(clouds) == len(meshes)):
            raise InvalidArgumentError("maps, clouds and meshes differ in length")
        cfg = self._config()
        results = [synthesize(m, self.print_, self.model_, mesh, c, cfg)
                   for m, c, mesh in zip(maps, clouds, meshes)]
        self.reports_ = [r.report for r in results]
        return [r.config for r in results]

    def sample(self, cmap, cloud, mesh, n):
        """``n`` grasps for one map, varying the initialization-noise seed."""
        check_is_fitted(self, "print_")
        return [synthesize(cmap, self.print_, self.model_, mesh, cloud, self._config(self.seed + k)).config
                for k in range(n)]


class GraspTransferer(_OptimizerParams):
    """``fit(source_print, source_model, target_print, target_model)``, then
    ``predict(source_grasps)`` returns target-gripper configurations."""

    def fit(self, source_print, source_model, target_print, target_model):
        self.source_print_ = source_print
        self.source_model_ = _check_model(source_model)
        self.target_print_ = target_print
        self.target_model_ = _check_model(target_model)
        return self

    def predict(self, source_grasps):
        check_is_fitted(self, "target_print_")
        cfg = self._config()
        out = []
        self.reports_ = []
        for q in _configs(source_grasps):
            res = transfer(self.source_print_, q, self.source_model_,
                           self.target_print_, self.target_model_, cfg)
            out.append(res.config)
            self.reports_.append(res.report)
        return out


def _configs(configs):
    if isinstance(configs, GraspConfig):
        return [configs]
    configs = list(configs)
    for q in configs:
        if not isinstance(q, GraspConfig):
            raise InvalidArgumentError("expected GraspConfig instances")
    return configs


__all__ = ["GripperPrinter", "GraspSynthesizer", "GraspTransferer"]
