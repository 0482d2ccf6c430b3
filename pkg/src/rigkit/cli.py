"""Command-line front end: file-in/file-out wiring over the library.

Exit codes: 0 success, 1 usage, 2 unreadable or unparseable input,
3 semantic validation failure, 4 optimizer divergence.  Every subcommand
is a pure function of its inputs, flags, and seed; running one twice
writes byte-identical files and stdout.  JSON output always goes through
:func:`rigkit.core.canonical_json`.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import animate, codec, gradcheck
from .core import (
    InvalidSkeletonError,
    Mesh,
    Rig,
    canonical_json,
    hierarchical_order,
    load_rig,
    save_rig,
    spatial_order,
    validate_skeleton,
)
from .deform import (
    fold_root_motion,
    forward_kinematics,
    heuristic_skin_weights,
    linear_blend_skinning,
    load_animation,
    save_animation,
)
from .geometry import Camera, ObjParseError, load_obj, save_obj
from .metrics import MetricConfig, metrics_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGED = 4


class InputError(Exception):
    """Input file unreadable or not in its declared format (exit 2)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for unparseable
    # input files, so usage errors are remapped to 1 here.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load(path: str | Path, loader, kind: str):
    try:
        return loader(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except IsADirectoryError:
        raise InputError(f"{path}: is a directory") from None
    except ObjParseError as e:
        raise InputError(f"{path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputError(
            f"{path}: line {e.lineno}, col {e.colno}: invalid JSON: {e.msg}"
        ) from None
    except (ValueError, KeyError, TypeError, EOFError) as e:
        raise InputError(f"{path}: not a valid {kind} file: {e}") from None


def _load_camera(path: str | Path) -> Camera:
    def loader(p):
        data = json.loads(Path(p).read_text())
        if "rotation" in data:
            return Camera.from_dict(data)
        return Camera.look_at(
            eye=data["eye"],
            target=data["target"],
            up=data.get("up", (0.0, 1.0, 0.0)),
            fx=float(data.get("fx", 1000.0)),
            fy=data.get("fy"),
            width=int(data.get("width", 1024)),
            height=int(data.get("height", 1024)),
        )

    return _load(path, loader, "camera")


def _require_weights(rig: Rig, path: str):
    if rig.weights is None:
        raise ValueError(
            f"{path} has no skin weights; run skin-heuristic first or add a"
            " 'weights' entry"
        )
    return rig.weights


def _cmd_validate(args) -> int:
    rig = _load(args.rig, load_rig, "rig")
    report = validate_skeleton(rig.skeleton)
    out = {
        "ok": report.ok,
        "issues": [{"code": i.code, "message": i.message} for i in report.issues],
        "joint_count": rig.skeleton.joint_count,
        "bone_count": rig.skeleton.bone_count,
    }
    sys.stdout.write(canonical_json(out))
    return EXIT_OK if report.ok else EXIT_VALIDATION


_ORDERS = {"hier": hierarchical_order, "spatial": spatial_order}


def _cmd_tokenize(args) -> int:
    rig = _load(args.rig, load_rig, "rig")
    s = rig.skeleton
    order = _ORDERS[args.order](s)
    if args.scheme == "joint":
        t = codec.tokenize_joint_based(
            s, order,
            shape_tokens=args.shape_tokens,
            require_causal=not args.allow_non_causal,
        )
        if args.permute_prob > 0.0:
            t = codec.randomize_groups(t, args.shuffle_seed, args.permute_prob)
    else:
        if args.permute_prob > 0.0:
            raise ValueError("group shuffling applies to the joint scheme only")
        t = codec.tokenize_bone_based(s, order, shape_tokens=args.shape_tokens)
    codec.write_token_file(args.output, t)
    if args.text:
        sys.stdout.write(codec.format_token_text(t))
    return EXIT_OK


def _cmd_detokenize(args) -> int:
    t = _load(args.tokens, codec.read_token_file, "token")
    if t.scheme == codec.SCHEME_JOINT:
        s, diagnostics = codec.detokenize_joint_based(t)
    else:
        s, diagnostics = codec.detokenize_bone_based(t)
    save_rig(args.output, Rig(s))
    sys.stdout.write(
        canonical_json(
            {
                "joint_count": s.joint_count,
                "scheme": t.scheme,
                "diagnostics": list(diagnostics),
            }
        )
    )
    return EXIT_OK


def _cmd_metrics(args) -> int:
    pred = _load(args.pred, load_rig, "rig")
    gt = _load(args.gt, load_rig, "rig")
    mesh = _load(args.mesh, load_obj, "OBJ") if args.mesh else None
    config = MetricConfig(normalize=not args.no_normalize)
    report = metrics_report(
        pred.skeleton,
        gt.skeleton,
        pred_weights=pred.weights,
        gt_weights=gt.weights,
        mesh=mesh,
        seed=args.seed,
        config=config,
    )
    sys.stdout.write(canonical_json(report))
    return EXIT_OK


def _frame_pose(anim, frame: int, joint_count: int, root: int):
    root_quats, root_trans, joint_quats = anim
    n = root_quats.shape[0]
    if not -n <= frame < n:
        raise ValueError(f"frame {frame} outside clip of {n} frames")
    if joint_quats.shape[1] != joint_count:
        raise ValueError("animation joint count does not match rig")
    return fold_root_motion(
        root_quats[frame], root_trans[frame], joint_quats[frame], root
    )


def _cmd_deform(args) -> int:
    rig = _load(args.rig, load_rig, "rig")
    mesh = _load(args.mesh, load_obj, "OBJ")
    anim = _load(args.animation, load_animation, "animation")
    weights = _require_weights(rig, args.rig)
    s = rig.skeleton
    root = int(np.flatnonzero(s.parents == -1)[0]) if s.joint_count else 0
    pose = _frame_pose(anim, args.frame, s.joint_count, root)
    transforms = forward_kinematics(s, pose)
    posed = linear_blend_skinning(mesh, s, weights, transforms)
    save_obj(args.output, Mesh(posed, mesh.triangles))
    return EXIT_OK


def _cmd_skin_heuristic(args) -> int:
    rig = _load(args.rig, load_rig, "rig")
    mesh = _load(args.mesh, load_obj, "OBJ")
    weights = heuristic_skin_weights(
        mesh, rig.skeleton, k_nearest=args.k_nearest, falloff=args.falloff
    )
    save_rig(args.output, Rig(rig.skeleton, weights))
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    results = gradcheck.run_all(
        seed=args.seed, instances=args.instances, tolerance=args.tolerance
    )
    width = max(len(r.kernel) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{r.kernel:<{width}}  instances={r.instances}"
            f"  max_rel_err={r.max_rel_error:.3e}  tol={r.tolerance:.0e}  {status}"
        )
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def _cmd_synth_tracks(args) -> int:
    rig = _load(args.rig, load_rig, "rig")
    mesh = _load(args.mesh, load_obj, "OBJ")
    anim = _load(args.animation, load_animation, "animation")
    camera = _load_camera(args.camera)
    weights = _require_weights(rig, args.rig)
    params = animate.params_from_animation(*anim)
    tracks = animate.synthesize_tracks(
        mesh,
        rig.skeleton,
        weights,
        params,
        camera,
        noise_px=args.noise_px,
        seed=args.seed,
        vertex_count=args.vertex_count,
    )
    animate.save_tracks(args.output, tracks)
    sys.stdout.write(
        canonical_json(
            {
                "frames": tracks.frame_count,
                "joints": int(tracks.joint_tracks.shape[1]),
                "tracked_vertices": int(tracks.vertex_subset.shape[0]),
                "visible_joints": int(tracks.joint_visibility.sum()),
            }
        )
    )
    return EXIT_OK


def _cmd_animate(args) -> int:
    rig = _load(args.rig, load_rig, "rig")
    mesh = _load(args.mesh, load_obj, "OBJ")
    tracks = _load(args.tracks, animate.load_tracks, "track")
    weights = _require_weights(rig, args.rig)
    s = rig.skeleton
    config = animate.OptimizeConfig(
        learning_rate=args.learning_rate,
        iterations=args.iterations,
        reg_weight=args.reg_weight,
    )
    result = animate.optimize(mesh, s, weights, tracks, config)
    save_animation(args.output, *animate.params_to_animation(result.params))
    if args.export_obj:
        out_dir = Path(args.export_obj)
        out_dir.mkdir(parents=True, exist_ok=True)
        root = int(np.flatnonzero(s.parents == -1)[0])
        for i in range(result.params.frame_count):
            jq, rq, rt = result.params.frame(i)
            pose = fold_root_motion(rq, rt, jq, root)
            posed = linear_blend_skinning(
                mesh, s, weights, forward_kinematics(s, pose)
            )
            save_obj(out_dir / f"frame_{i:04d}.obj", Mesh(posed, mesh.triangles))
    sys.stdout.write(
        canonical_json(
            {
                "iterations": result.iterations,
                "converged": result.converged,
                "final_loss": result.trace[-1] if result.trace.size else 0.0,
                "dropped_terms": result.dropped_terms,
            }
        )
    )
    return EXIT_OK


def _cmd_anneal(args) -> int:
    if args.epochs < 0:
        raise ValueError("epochs must be non-negative")
    lines = []
    for epoch in range(args.epochs + 1):
        r = codec.permutation_probability(epoch, args.epochs)
        lines.append(f"{epoch} {r!r}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rigkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a rig JSON's skeleton structure")
    p.add_argument("rig")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("tokenize", help="serialize a rig into a token file")
    p.add_argument("rig")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--scheme", choices=("joint", "bone"), default="joint")
    p.add_argument("--order", choices=("hier", "spatial"), default="hier")
    p.add_argument("--shape-tokens", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--permute-prob", type=float, default=0.0)
    p.add_argument(
        "--allow-non-causal",
        action="store_true",
        help="serialize orders that put children before parents",
    )
    p.add_argument("--text", action="store_true", help="dump tokens to stdout")
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("detokenize", help="decode a token file back into a rig")
    p.add_argument("tokens")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_detokenize)

    p = sub.add_parser("metrics", help="compare two rigs (optionally with a mesh)")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--mesh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--no-normalize",
        action="store_true",
        help="compare raw coordinates without rescaling into the unit box",
    )
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("deform", help="pose a mesh at one animation frame")
    p.add_argument("rig")
    p.add_argument("mesh")
    p.add_argument("animation")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--frame", type=int, default=-1)
    p.set_defaults(func=_cmd_deform)

    p = sub.add_parser(
        "skin-heuristic", help="attach distance-based weights to a rig"
    )
    p.add_argument("rig")
    p.add_argument("mesh")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--k-nearest", type=int, default=4)
    p.add_argument("--falloff", type=float, default=0.1)
    p.set_defaults(func=_cmd_skin_heuristic)

    p = sub.add_parser("grad-check", help="finite-difference gradient table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=gradcheck.REL_TOL)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser(
        "synth-tracks", help="render 2-d tracks for a known animation"
    )
    p.add_argument("rig")
    p.add_argument("mesh")
    p.add_argument("animation")
    p.add_argument("--camera", required=True, help="camera JSON path")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertex-count", type=int, default=100)
    p.set_defaults(func=_cmd_synth_tracks)

    p = sub.add_parser("animate", help="fit an animation to 2-d tracks")
    p.add_argument("rig")
    p.add_argument("mesh")
    p.add_argument("tracks")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--reg-weight", type=float, default=1e-3)
    p.add_argument("--export-obj", help="directory for per-frame OBJ dumps")
    p.set_defaults(func=_cmd_animate)

    p = sub.add_parser("anneal", help="print the group-shuffle schedule")
    p.add_argument("--epochs", type=int, required=True)
    p.set_defaults(func=_cmd_anneal)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help exits 0, usage errors exit 1
        return int(e.code or 0)
    try:
        return args.func(args)
    except InputError as e:
        print(f"rigkit {args.command}: {e}", file=sys.stderr)
        return EXIT_PARSE
    except animate.DivergenceError as e:
        print(f"rigkit {args.command}: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidSkeletonError, ValueError) as e:
        print(f"rigkit {args.command}: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
