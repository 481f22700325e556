"""Evaluation metrics: joint-value diversity and a geometric grasp-quality proxy."""

from dataclasses import dataclass

import numpy as np

from ._validation import InvalidArgumentError
from .kinematics import GraspConfig, posed_positions

CONTACT_DISTANCE = 2e-3
ANTIPODAL_DOT = -0.5


def diversity(grasps):
    """Population standard deviation of all joint values of all grasps pooled."""
    grasps = list(grasps)
    if len(grasps) < 2:
        raise InvalidArgumentError("diversity needs at least 2 grasps")
    for g in grasps:
        if not isinstance(g, GraspConfig):
            raise InvalidArgumentError("diversity expects GraspConfig instances")
    dof = {g.joints.shape for g in grasps}
    if len(dof) != 1:
        raise InvalidArgumentError("grasps come from different models")
    return float(np.std(np.concatenate([g.joints for g in grasps])))


@dataclass(frozen=True)
class QualityReport:
    contacts: int
    max_penetration: float
    antipodal: bool

    def to_dict(self):
        return {"contacts": self.contacts, "max_penetration": self.max_penetration,
                "antipodal": self.antipodal}


def quality_proxy(model, q, mesh, print_, contact_distance=CONTACT_DISTANCE):
    """Contact count, deepest penetration and antipodal flag of a posed grasp.

    Contacts are print points within ``contact_distance`` of the surface; the
    grasp is antipodal when two contacts see object normals with a dot
    product of at most -0.5.  Inside/outside comes from pseudo-normals, or from
    face normals when the mesh is not closed.
    """
    pts = posed_positions(model, q, print_.link_points(model))
    d2, cp, tri, feat = mesh.closest_points(pts)
    dist = np.sqrt(d2)
    normals = mesh.pseudo_normals(tri, feat) if mesh.is_watertight else mesh.face_normals[tri]
    inside = np.einsum("ij,ij->i", pts - cp, normals) < 0.0
    sd = np.where(inside, -dist, dist)

    contact = np.abs(sd) <= contact_distance
    n = normals[contact]
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    antipodal = False
    if len(n) >= 2:
        # the most opposed pair of contact normals
        antipodal = bool(np.min(n @ n.T) <= ANTIPODAL_DOT)
    max_pen = float(max(0.0, -sd.min())) if len(sd) else 0.0
    return QualityReport(int(contact.sum()), max_pen, antipodal)
