"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 sphere fit failure, 4 divergence,
5 empty correspondence.
"""

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import io as uio
from ._validation import InvalidArgumentError
from .assets import BUNDLED, EXTRA, asset_path
from .coordspace import (
    EmptyPrintError,
    ObjectCloud,
    SphereFitError,
    build_print,
    max_graspable_sphere,
    object_map_from_grasp,
)
from .kinematics import load_gripper
from .mesh import load_mesh, sample_surface
from .metrics import diversity, quality_proxy
from .optimize import (
    DivergedError,
    EmptyCorrespondenceError,
    OptimizationConfig,
    UninitializableMapError,
    synthesize,
    transfer,
)

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_DIVERGED, EXIT_EMPTY = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _gripper_file(arg):
    if os.path.exists(arg):
        return arg
    if arg in BUNDLED + EXTRA:
        return asset_path(arg)
    raise FileNotFoundError(arg)


def _existing(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


def _object_id(path):
    return os.path.splitext(os.path.basename(path))[0]


def _opt_config(args):
    cfg = OptimizationConfig.load(_existing(args.config)) if args.config else OptimizationConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _seed(args, default=0):
    return default if args.seed is None else args.seed


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(uio._plain(payload), sort_keys=True))
    else:
        print(text)


# --- subcommands --------------------------------------------------------------------

def cmd_maxsphere(args):
    path = _gripper_file(args.gripper)
    model = load_gripper(path)
    fit = max_graspable_sphere(model)
    meta = uio.metadata(_seed(args), {"gripper": path})
    uio.write_json(args.out, uio.sphere_to_dict(fit, model, meta))
    _emit(args, {"gripper_id": model.name, "radius": fit.radius}, f"radius {fit.radius!r}")
    return EXIT_OK


def cmd_print(args):
    if args.rays < 1:
        raise UsageError("--rays must be a positive integer")
    path = _gripper_file(args.gripper)
    model = load_gripper(path)
    fit = max_graspable_sphere(model)
    pr = build_print(model, fit, ray_count=args.rays)
    meta = uio.metadata(_seed(args), {"gripper": path}, rays=args.rays)
    uio.write_json(args.out, uio.print_to_dict(pr, meta))
    _emit(args, {"gripper_id": model.name, "points": len(pr), "radius": fit.radius},
          f"print {model.name}: {len(pr)} points, radius {fit.radius!r}")
    return EXIT_OK


def cmd_map(args):
    if args.samples < 1:
        raise UsageError("--samples must be a positive integer")
    print_path = _existing(args.print)
    gripper_path = _gripper_file(args.gripper)
    records_path = _existing(args.records)
    mesh_path = _existing(args.object)
    pr = uio.print_from_dict(uio.read_json(print_path, "ugcs.print"), print_path)
    model = load_gripper(gripper_path)
    if pr.gripper_id != model.name:
        raise InvalidArgumentError(f"print is for {pr.gripper_id!r}, gripper is {model.name!r}")
    mesh = load_mesh(mesh_path)
    seed = _seed(args)
    pts, nrm, _ = sample_surface(mesh, args.samples, np.random.default_rng(seed))
    object_id = _object_id(mesh_path)
    cloud = ObjectCloud(pts, nrm, object_id)
    with open(records_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    inputs = {"print": print_path, "gripper": gripper_path, "records": records_path, "object": mesh_path}
    meta = uio.metadata(seed, inputs, samples=args.samples)

    def work(item):
        k, line = item
        rec = uio.parse_record(line, model, f"record {k}")
        if rec.object_id and rec.object_id != object_id:
            raise InvalidArgumentError(f"record {k}: unknown object id {rec.object_id!r}")
        return object_map_from_grasp(pr, rec.config, model, cloud)

    items = [(k, line) for k, line in enumerate(lines) if line.strip()]

    def safe(item):
        try:
            return work(item), None
        except (InvalidArgumentError, ValueError, KeyError, TypeError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(safe, items))

    os.makedirs(args.out_dir, exist_ok=True)
    summary = []
    for (k, _), (cmap, err) in zip(items, results):
        if err is not None:
            print(f"skipped record {k}: {err}", file=sys.stderr)
            continue
        out = os.path.join(args.out_dir, f"map_{k:04d}.json")
        uio.write_json(out, uio.map_to_dict(cmap, cloud, model.name, dict(meta, record=k)))
        summary.append({"record": k, "file": os.path.basename(out), "contact_fraction": cmap.contact_fraction})
        if not args.json:
            print(f"record {k}: contact fraction {cmap.contact_fraction!r}")
    if args.json:
        print(json.dumps({"maps": summary}, sort_keys=True))
    if not summary:
        print("error: no record could be mapped", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_synth(args):
    map_path, print_path = _existing(args.map), _existing(args.print)
    gripper_path, mesh_path = _gripper_file(args.gripper), _existing(args.object)
    cmap, cloud = uio.map_from_dict(uio.read_json(map_path, "ugcs.map"), map_path)
    pr = uio.print_from_dict(uio.read_json(print_path, "ugcs.print"), print_path)
    model = load_gripper(gripper_path)
    if pr.gripper_id != model.name:
        raise InvalidArgumentError(f"print is for {pr.gripper_id!r}, gripper is {model.name!r}")
    mesh = load_mesh(mesh_path)
    cfg = _opt_config(args)
    res = synthesize(cmap, pr, model, mesh, cloud, cfg)
    inputs = {"map": map_path, "print": print_path, "gripper": gripper_path, "object": mesh_path}
    if args.config:
        inputs["config"] = args.config
    meta = uio.metadata(cfg.seed, inputs)
    uio.write_json(args.out, uio.grasp_to_dict(res.config, model, meta, res.report))
    if args.trace:
        uio.write_text_atomic(args.trace, uio.trace_csv(res.trace))
    r = res.report
    _emit(args, {"e_dist": r.e_dist, "e_pen": r.e_pen, "e_joint": r.e_joint, "total": r.total,
                 "initial_total": res.initial.total, "signed": r.signed},
          f"total {r.total!r} (initial {res.initial.total!r}); e_dist {r.e_dist!r}")
    if not r.signed:
        print("warning: object mesh is not watertight; penetration uses face-normal signs", file=sys.stderr)
    return EXIT_OK


def cmd_transfer(args):
    paths = [_existing(args.source_print), _existing(args.source_grasp), _gripper_file(args.source_gripper),
             _existing(args.target_print), _gripper_file(args.target_gripper)]
    sp_path, sg_path, sm_path, tp_path, tm_path = paths
    src_model, tgt_model = load_gripper(sm_path), load_gripper(tm_path)
    src_print = uio.print_from_dict(uio.read_json(sp_path, "ugcs.print"), sp_path)
    tgt_print = uio.print_from_dict(uio.read_json(tp_path, "ugcs.print"), tp_path)
    src_grasp, _ = uio.grasp_from_dict(uio.read_json(sg_path, "ugcs.grasp"), src_model, sg_path)
    cfg = _opt_config(args)
    res = transfer(src_print, src_grasp, src_model, tgt_print, tgt_model, cfg)
    inputs = dict(zip(["source_print", "source_grasp", "source_gripper", "target_print", "target_gripper"], paths))
    if args.config:
        inputs["config"] = args.config
    uio.write_json(args.out, uio.grasp_to_dict(res.config, tgt_model, uio.metadata(cfg.seed, inputs), res.report))
    _emit(args, {"total": res.report.total, "initial_total": res.initial.total},
          f"total {res.report.total!r} (initial {res.initial.total!r})")
    return EXIT_OK


def cmd_eval(args):
    gripper_path, mesh_path, print_path = _gripper_file(args.gripper), _existing(args.object), _existing(args.print)
    model = load_gripper(gripper_path)
    pr = uio.print_from_dict(uio.read_json(print_path, "ugcs.print"), print_path)
    if pr.gripper_id != model.name:
        raise InvalidArgumentError(f"print is for {pr.gripper_id!r}, gripper is {model.name!r}")
    mesh = load_mesh(mesh_path)
    grasps = []
    for path in args.grasps:
        doc = uio.read_json(_existing(path), "ugcs.grasp")
        if doc.get("gripper_id") != model.name:
            raise InvalidArgumentError(
                f"{path}: grasp is for {doc.get('gripper_id')!r}; all grasps must be for {model.name!r}")
        grasps.append(uio.grasp_from_dict(doc, model, path)[0])
    per = [dict(quality_proxy(model, q, mesh, pr).to_dict(), file=os.path.basename(p))
           for q, p in zip(grasps, args.grasps)]
    report = {"gripper_id": model.name, "grasps": per}
    if len(grasps) >= 2:
        report["diversity"] = diversity(grasps)
    if args.out:
        inputs = {"gripper": gripper_path, "object": mesh_path, "print": print_path}
        inputs.update({f"grasp_{i:04d}": p for i, p in enumerate(args.grasps)})
        doc = {"format": "ugcs.eval", "version": uio.VERSION, "metadata": uio.metadata(_seed(args), inputs)}
        doc.update(report)
        uio.write_json(args.out, doc)
    if args.json:
        print(json.dumps(uio._plain(report), sort_keys=True))
    else:
        for g in per:
            print(f"{g['file']}: contacts {g['contacts']}, max penetration {g['max_penetration']!r}, "
                  f"antipodal {str(g['antipodal']).lower()}")
        if "diversity" in report:
            print(f"diversity {report['diversity']!r}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _add_globals(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for batch loops")
    p.add_argument("--rays", type=int, default=d(10000), help="ray count for print construction")
    p.add_argument("--json", action="store_true", default=d(False), help="JSON report on stdout")
    p.add_argument("--config", default=d(None), help="optimization config JSON")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="ugcs", description="Unified gripper coordinate space tools.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("maxsphere", help="fit the maximal graspable sphere")
    p.add_argument("gripper")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_maxsphere)

    p = sub.add_parser("print", help="build a gripper print")
    p.add_argument("gripper")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_print)

    p = sub.add_parser("map", help="coordinate maps from grasp records")
    p.add_argument("print")
    p.add_argument("records")
    p.add_argument("object")
    p.add_argument("--gripper", required=True)
    p.add_argument("--samples", type=int, default=2048)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("synth", help="synthesize a grasp from a coordinate map")
    p.add_argument("map")
    p.add_argument("print")
    p.add_argument("gripper")
    p.add_argument("object")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transfer", help="transfer a grasp between grippers")
    p.add_argument("source_print")
    p.add_argument("source_grasp")
    p.add_argument("source_gripper")
    p.add_argument("target_print")
    p.add_argument("target_gripper")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="quality proxy and diversity of grasps")
    p.add_argument("grasps", nargs="+")
    p.add_argument("--object", required=True)
    p.add_argument("--gripper", required=True)
    p.add_argument("--print", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    for p in sub.choices.values():
        _add_globals(p, suppress=True)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SphereFitError, EmptyPrintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EmptyCorrespondenceError, UninitializableMapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (InvalidArgumentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
