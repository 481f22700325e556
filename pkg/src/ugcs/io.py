"""Versioned JSON documents for spheres, prints, maps and grasps.

Floats are written with 17 significant digits (exact round trip), arrays as
nested lists, and every document carries a metadata block.  Files are written
atomically through a temporary file in the target directory.
"""

import csv
import hashlib
import io as _io
import json
import os
import tempfile

import numpy as np

from ._validation import InvalidArgumentError
from .coordspace import CoordinateMap, GraspRecord, GripperPrint, ObjectCloud
from .kinematics import GraspConfig

VERSION = 1


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _float(x):
    if not np.isfinite(x):
        raise InvalidArgumentError("cannot serialize non-finite value")
    text = "%.17g" % x
    # keep floats recognizable as floats
    return text if any(c in text for c in ".en") else text + ".0"


def _encode(obj, indent, level, out):
    pad = "\n" + " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append(("," if i else "") + pad + json.dumps(k) + ": ")
            _encode(v, indent, level + 1, out)
        out.append("\n" + " " * (indent * level) + "}")
    elif isinstance(obj, list):
        # numeric rows stay on one line
        if all(not isinstance(v, (dict, list)) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                if i:
                    out.append(", ")
                _encode(v, indent, level, out)
            out.append("]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            out.append(("," if i else "") + pad)
            _encode(v, indent, level + 1, out)
        out.append("\n" + " " * (indent * level) + "]")
    elif isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        out.append(json.dumps(obj))
    elif isinstance(obj, float):
        out.append(_float(obj))
    else:
        raise InvalidArgumentError(f"cannot serialize {type(obj).__name__}")


def dumps(doc):
    out = []
    _encode(_plain(doc), 1, 0, out)
    return "".join(out) + "\n"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def metadata(seed=None, inputs=None, **extra):
    from . import __version__

    meta = {"tool": "ugcs", "tool_version": __version__, "seed": seed,
            "inputs": {k: file_digest(p) for k, p in sorted((inputs or {}).items())}}
    meta.update(extra)
    return meta


def write_text_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    write_text_atomic(path, dumps(doc))


def read_json(path, fmt):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from None
    return check_doc(doc, fmt, path)


def check_doc(doc, fmt, where="document"):
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise InvalidArgumentError(f"{where}: expected a {fmt!r} document")
    if doc.get("version") != VERSION:
        raise InvalidArgumentError(f"{where}: unsupported {fmt} version {doc.get('version')!r}")
    return doc


def _header(fmt, meta):
    return {"format": fmt, "version": VERSION, "metadata": meta or {}}


# grasp configurations

def grasp_to_dict(config, model, meta=None, report=None):
    if config.joints.shape != (model.dof,):
        raise InvalidArgumentError("configuration does not match the gripper")
    doc = _header("ugcs.grasp", meta)
    doc["gripper_id"] = model.name
    doc["root_pose"] = {"t": config.translation, "r_exp": config.rotvec}
    doc["joints"] = dict(zip(model.actuated, config.joints.tolist()))
    if report is not None:
        doc["energy"] = {"e_dist": report.e_dist, "e_pen": report.e_pen,
                         "e_joint": report.e_joint, "total": report.total}
    return doc


def grasp_from_dict(doc, model=None, where="grasp"):
    """GraspConfig and gripper id of a grasp document; joint names are checked
    against ``model`` when given."""
    doc = check_doc(doc, "ugcs.grasp", where)
    try:
        pose = doc["root_pose"]
        joints = doc["joints"]
        gid = doc["gripper_id"]
    except KeyError as exc:
        raise InvalidArgumentError(f"{where}: missing field {exc}") from None
    if model is not None:
        if gid != model.name:
            raise InvalidArgumentError(f"{where}: grasp is for {gid!r}, gripper is {model.name!r}")
        if sorted(joints) != sorted(model.actuated):
            raise InvalidArgumentError(f"{where}: joint names do not match gripper {model.name!r}")
        values = [joints[n] for n in model.actuated]
    else:
        values = list(joints.values())
    return GraspConfig(pose["t"], pose["r_exp"], values), gid


# sphere reports

def sphere_to_dict(fit, model, meta=None):
    doc = _header("ugcs.sphere", meta)
    doc["gripper_id"] = model.name
    doc["radius"] = fit.radius
    doc["center"] = fit.center
    doc["capture_config"] = grasp_to_dict(fit.capture_config, model)
    doc["open_joints"] = dict(zip(model.actuated, np.asarray(fit.open_joints).tolist()))
    return doc


# prints

def print_to_dict(print_, meta=None):
    doc = _header("ugcs.print", meta)
    doc.update({
        "gripper_id": print_.gripper_id,
        "sphere": {"center": print_.sphere_center, "radius": print_.sphere_radius},
        "print_config": {"t": print_.print_config.translation, "r_exp": print_.print_config.rotvec,
                         "joints": print_.print_config.joints},
        "points": print_.points,
        "coords": print_.coords,
        "links": list(print_.links),
    })
    return doc


def print_from_dict(doc, where="print"):
    doc = check_doc(doc, "ugcs.print", where)
    try:
        sphere = doc["sphere"]
        cfg = doc["print_config"]
        return GripperPrint(
            doc["gripper_id"],
            np.asarray(sphere["center"], dtype=np.float64),
            float(sphere["radius"]),
            GraspConfig(cfg["t"], cfg["r_exp"], cfg["joints"]),
            np.asarray(doc["points"], dtype=np.float64).reshape(-1, 3),
            np.asarray(doc["coords"], dtype=np.float64).reshape(-1, 2),
            tuple(doc["links"]),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"{where}: malformed print ({exc})") from None


# coordinate maps (carry the sampled object cloud)

def map_to_dict(cmap, cloud, gripper_id=None, meta=None):
    if len(cmap) != len(cloud):
        raise InvalidArgumentError("map and cloud differ in length")
    doc = _header("ugcs.map", meta)
    doc.update({
        "object_id": cmap.object_id,
        "gripper_id": gripper_id,
        "contact_fraction": cmap.contact_fraction,
        "points": cloud.points,
        "normals": cloud.normals,
        "coords": cmap.coords,
        "contact": cmap.contact,
    })
    return doc


def map_from_dict(doc, where="map"):
    doc = check_doc(doc, "ugcs.map", where)
    try:
        cloud = ObjectCloud(np.asarray(doc["points"], dtype=np.float64).reshape(-1, 3),
                            np.asarray(doc["normals"], dtype=np.float64).reshape(-1, 3),
                            doc["object_id"])
        cmap = CoordinateMap(np.asarray(doc["coords"], dtype=np.float64).reshape(-1, 2),
                             np.asarray(doc["contact"], dtype=bool), doc["object_id"])
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"{where}: malformed map ({exc})") from None
    return cmap, cloud


# grasp records (JSON lines)

def record_to_line(record, model):
    doc = {"gripper_id": record.gripper_id, "object_id": record.object_id,
           "grasp": grasp_to_dict(record.config, model)}
    out = []
    _encode(_plain(doc), 0, 0, out)
    return "".join(out).replace("\n", "")


def parse_record(line, model, where="record"):
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{where}: not valid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or "grasp" not in doc:
        raise InvalidArgumentError(f"{where}: missing grasp")
    config, gid = grasp_from_dict(doc["grasp"], None, where)
    gid = doc.get("gripper_id", gid)
    if gid != model.name:
        raise InvalidArgumentError(f"{where}: unknown gripper id {gid!r}")
    config, _ = grasp_from_dict(doc["grasp"], model, where)
    return GraspRecord(gid, str(doc.get("object_id", "")), config)


def trace_csv(trace):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "e_dist", "e_pen", "e_joint", "total"])
    for i, r in enumerate(trace):
        w.writerow([i] + [_float(float(v)) for v in r.as_row()])
    return buf.getvalue()
