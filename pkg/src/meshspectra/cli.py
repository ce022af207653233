"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 input validation error, 3 numerical
failure. Every command writes a run manifest JSON next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import MetricProjectionError, OperatorParams, modified_operator
from .curvature import curvature_frames
from .descriptors import descriptor_csv, gps, hks, log_time_samples
from .eigen import EigenSolveError, solve_gep, spectrum_csv
from .geometry import GeometryError, geometry, obtuse_fraction, surface_area
from .gradcheck import run_gradcheck
from .learning import HeadConfig, TrainConfig, average_pool, evaluate, train
from .meshio import MeshError, load_mesh

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable config, key order ignored."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, inputs, config, seed, t0):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "config_hash": config_hash(config),
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 4),
    }
    with open(out_dir / f"manifest_{command}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_params_csv(path, mesh) -> OperatorParams:
    """Per-element direct parameters from CSV with a family-name header.

    Rows are "family,index,value" with families edge_log_scale, a1, a2,
    theta, vertex_log_weight.
    """
    params = OperatorParams.identity(mesh)
    edge = params.edge_log_scale.copy()
    aniso = params.face_aniso.copy()
    vertex = params.vertex_log_weight.copy()
    cols = {"a1": 0, "a2": 1, "theta": 2}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["family", "index", "value"]:
            raise ValueError(f"bad params header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fam, idx, val = line.split(",")
            idx, val = int(idx), float(val)
            if fam == "edge_log_scale":
                edge[idx] = val
            elif fam == "vertex_log_weight":
                vertex[idx] = val
            elif fam in cols:
                aniso[idx, cols[fam]] = val
            else:
                raise ValueError(f"line {lineno}: unknown family {fam!r}")
    return OperatorParams(
        edge_log_scale=edge, face_aniso=aniso, vertex_log_weight=vertex
    )


def _operator(args, mesh):
    params = (
        load_params_csv(args.params, mesh)
        if getattr(args, "params", None)
        else OperatorParams.identity(mesh)
    )
    frames = curvature_frames(mesh)[0] if args.mode == "anisotropic" else None
    return modified_operator(mesh, params, mode=args.mode, frames=frames)


def cmd_info(args) -> int:
    mesh = load_mesh(args.mesh, args.format)
    geom = geometry(mesh)
    print(
        f"V={mesh.n_vertices} E={mesh.n_edges} F={mesh.n_faces} "
        f"chi={mesh.euler_characteristic()}"
    )
    print(f"boundary_edges={int(mesh.edge_boundary.sum())}")
    print(f"area={surface_area(geom):.6g}")
    print(f"obtuse_fraction={obtuse_fraction(geom):.4f}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    mesh = load_mesh(args.mesh, args.format)
    asm = _operator(args, mesh)
    eigs = solve_gep(asm.ops, k=args.k, skip=args.skip)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spectrum_csv(eigs, out / "spectrum.csv")
    print(f"wrote {out / 'spectrum.csv'} ({eigs.k} eigenvalues)")
    return EXIT_OK


def cmd_hks(args) -> int:
    mesh = load_mesh(args.mesh, args.format)
    asm = _operator(args, mesh)
    eigs = solve_gep(asm.ops, k=args.k, skip=args.skip)
    if args.times:
        times = np.array([float(t) for t in args.times.split(",")])
    else:
        times = log_time_samples(eigs)
    desc = hks(eigs, times)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    descriptor_csv(desc, out / "hks.csv", out / "hks_meta.json")
    print(f"wrote {out / 'hks.csv'} ({desc.values.shape[1]} time samples)")
    return EXIT_OK


def cmd_gps(args) -> int:
    mesh = load_mesh(args.mesh, args.format)
    asm = _operator(args, mesh)
    eigs = solve_gep(asm.ops, k=args.k, skip=args.skip)
    desc = gps(eigs, args.components)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    descriptor_csv(desc, out / "gps.csv", out / "gps_meta.json")
    print(f"wrote {out / 'gps.csv'} ({desc.values.shape[1]} components)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    mesh = load_mesh(args.mesh, args.format)
    families = tuple(args.families.split(","))
    report = run_gradcheck(
        mesh,
        families=families,
        pairs=args.pairs,
        samples=args.samples,
        seed=args.seed,
        mode=args.mode,
        corrupt=args.corrupt,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gradcheck.json", "w") as fh:
        json.dump(report, fh, indent=2)
    status = "PASS" if report["passed"] else "FAIL"
    print(
        f"{status} max_rel_err matrix={report['max_rel_err']['matrix']:.3e} "
        f"eigen={report['max_rel_err']['eigen']:.3e} "
        f"masked_pairs={report['masked_pairs']}"
    )
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def _load_train_setup(args):
    with open(args.config) as fh:
        cfg_json = json.load(fh)
    head = HeadConfig(**cfg_json.get("head", {}))
    train_kwargs = cfg_json.get("train", {})
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    if "band" in train_kwargs and train_kwargs["band"] is not None:
        train_kwargs["band"] = tuple(train_kwargs["band"])
    cfg = TrainConfig(**train_kwargs)
    data = Path(cfg_json["data_dir"]) if "data_dir" in cfg_json else Path(args.data)
    meshes = []
    targets = []
    for entry in cfg_json["meshes"]:
        meshes.append(load_mesh(data / entry["mesh"]))
        tgt = entry["target"]
        if cfg.loss == "segmentation_ce":
            targets.append(np.loadtxt(data / tgt, dtype=int))
        elif cfg.loss == "spectral_alignment":
            targets.append(np.loadtxt(data / tgt, delimiter=",", usecols=1, skiprows=1))
        else:
            targets.append(np.loadtxt(data / tgt, delimiter=","))
    return meshes, targets, head, cfg, cfg_json


def cmd_train(args) -> int:
    meshes, targets, head, cfg, cfg_json = _load_train_setup(args)
    state = train(meshes, targets, head, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for row in state.log for k in row})
    with open(out / "metrics.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in state.log:
            fh.write(",".join(str(row.get(k, "")) for k in keys) + "\n")
    arrays = dict(state.params.arrays)
    arrays.update({f"extra/{k}": v for k, v in state.extra.items()})
    np.savez(out / "checkpoint.npz", **arrays)
    with open(out / "checkpoint_manifest.json", "w") as fh:
        json.dump(
            {k: list(np.shape(v)) for k, v in arrays.items()}, fh, indent=2
        )
    losses = [r["loss"] for r in state.log if np.isfinite(r.get("loss", np.nan))]
    print(f"trained {len(state.log)} steps, final loss {losses[-1]:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    meshes, targets, head, cfg, cfg_json = _load_train_setup(args)
    from .learning import TrainState, MlpParams, init_head

    params = init_head(meshes[0], head, seed=cfg.seed)
    extra = {}
    if args.checkpoint:
        loaded = np.load(args.checkpoint)
        for k in loaded.files:
            if k.startswith("extra/"):
                extra[k[len("extra/"):]] = loaded[k]
            else:
                params.arrays[k] = loaded[k]
    state = TrainState(head=head, cfg=cfg, params=params, extra=extra)
    results = evaluate(meshes, targets, state)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pooled = [r["pooled"] for r in results if "pooled" in r]
    if pooled:
        P = np.stack(pooled)
        np.savetxt(out / "pooled_descriptors.csv", P, delimiter=",")
        D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
        np.savetxt(out / "pairwise_distances.csv", D, delimiter=",")
    with open(out / "eval.json", "w") as fh:
        json.dump(
            [
                {k: v for k, v in r.items() if k != "pooled"}
                for r in results
            ],
            fh,
            indent=2,
        )
    for i, r in enumerate(results):
        bits = " ".join(
            f"{k}={v:.6g}" for k, v in r.items() if isinstance(v, float)
        )
        print(f"mesh {i}: {bits}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="meshspectra",
        description="Differentiable spectral geometry toolkit for triangle meshes",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def mesh_args(sp):
        sp.add_argument("--mesh", required=True)
        sp.add_argument("--format", default=None, choices=["off", "obj", "ply"])

    def spectral_args(sp):
        mesh_args(sp)
        sp.add_argument("--k", type=int, default=32)
        sp.add_argument("--skip", type=int, default=1)
        sp.add_argument("--params", default=None, help="direct params CSV")
        sp.add_argument(
            "--mode", default="isotropic", choices=["isotropic", "anisotropic"]
        )
        sp.add_argument("--out-dir", default=".")

    sp = sub.add_parser("info", help="mesh summary")
    mesh_args(sp)
    sp.set_defaults(fn=cmd_info, out_dir=None)

    sp = sub.add_parser("spectrum", help="eigenvalue CSV")
    spectral_args(sp)
    sp.set_defaults(fn=cmd_spectrum)

    sp = sub.add_parser("hks", help="heat kernel signature CSV")
    spectral_args(sp)
    sp.add_argument("--times", default=None, help="comma-separated times")
    sp.set_defaults(fn=cmd_hks)

    sp = sub.add_parser("gps", help="global point signature CSV")
    spectral_args(sp)
    sp.add_argument("--components", type=int, default=16)
    sp.set_defaults(fn=cmd_gps)

    sp = sub.add_parser("gradcheck", help="finite-difference audit")
    mesh_args(sp)
    sp.add_argument("--families", default="edge,a1,a2,theta,vertex")
    sp.add_argument("--pairs", type=int, default=16)
    sp.add_argument("--samples", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument(
        "--mode", default="anisotropic", choices=["isotropic", "anisotropic"]
    )
    sp.add_argument("--out-dir", default=".")
    sp.add_argument(
        "--corrupt", action="store_true",
        help="negative control: corrupt one derivative, must fail",
    )
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("train", help="run the training loop")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", default=".")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="frozen-parameter evaluation")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", default=".")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code in (0, None) else EXIT_USAGE

    t0 = time.perf_counter()
    try:
        code = args.fn(args)
    except (MeshError, GeometryError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EigenSolveError, MetricProjectionError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    out_dir = getattr(args, "out_dir", None)
    if out_dir is not None:
        inputs = [p for p in [getattr(args, "mesh", None),
                              getattr(args, "config", None)] if p]
        config = {
            k: v for k, v in vars(args).items()
            if k != "fn" and isinstance(v, (str, int, float, bool, type(None)))
        }
        write_manifest(
            Path(out_dir), args.command, inputs, config,
            getattr(args, "seed", None), t0,
        )
    return code


if __name__ == "__main__":
    sys.exit(main())
