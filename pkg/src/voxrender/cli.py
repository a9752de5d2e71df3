"""Command-line entry point: ``voxrender <subcommand> [flags]``.

Subcommands cover procedural shapes, reference datasets, training, network
rendering, single-image reconstruction, evaluation and gradient checking.
Configs are JSON files; relative paths inside a config resolve against the
config's own directory.  Exit codes: 0 success, 1 failed check, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class InputError(Exception):
    """Unreadable config, checkpoint or input file."""


def _cap_threads() -> None:
    n = os.environ.get("VOXRENDER_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


def _read_config(path) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        cfg = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"unreadable config {p}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"config {p} must hold a JSON object")
    return cfg, p.resolve().parent


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _load_ckpt(path):
    from .diffengine import load_checkpoint
    try:
        return load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"unreadable checkpoint {path}: {exc}") from exc


def _load_grid(path):
    from .voxgrid import load_grid
    try:
        return load_grid(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"unreadable grid {path}: {exc}") from exc


def _net_spec(value):
    from .rendernet import NetworkSpec
    if value is None or value == "desk":
        return NetworkSpec.desk()
    if value == "full":
        return NetworkSpec.full()
    if isinstance(value, dict):
        return NetworkSpec.from_dict(value)
    raise InputError(f"network spec must be 'desk', 'full' or an object, got {value!r}")


def _light(args):
    from .refshade import LightSpec
    return LightSpec.from_angles(args.light_azimuth, args.light_elevation, args.ambient)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


# --- subcommands ----------------------------------------------------------------------

def cmd_gen_shapes(args) -> int:
    from .dataset import save_shapes
    from .shapes import FAMILIES, gen_shapes
    fams = args.families.split(",") if args.families else list(FAMILIES)
    pairs = gen_shapes(fams, args.n, args.seed, args.resolution, args.noise)
    out = Path(args.out)
    paths = save_shapes([g for _, g in pairs], out)
    _write_json(out / "recipes.json", {p.name: r.to_dict() for p, (r, _) in zip(paths, pairs)})
    print(f"wrote {len(paths)} grids to {out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    from .dataset import gen_dataset
    shape_dir = Path(args.shapes)
    paths = sorted(shape_dir.glob("*.vxg")) if shape_dir.is_dir() else [shape_dir]
    if not paths:
        raise InputError(f"no .vxg grids under {shape_dir}")
    try:
        m = gen_dataset(paths, args.style.split(","), args.views, args.seed, args.out,
                        upsample=args.upsample)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from exc
    print(f"wrote {len(m.samples)} samples to {args.out}")
    return EXIT_OK


def cmd_render_ref(args) -> int:
    from .imageio import save_image
    from .refshade import render_reference
    from .voxgrid import Pose
    grid = _load_grid(args.grid)
    styles = args.style.split(",")
    imgs = render_reference(grid, Pose(args.azimuth, args.elevation, args.radius), _light(args),
                            styles, args.upsample, seed=args.seed)
    out = Path(args.out)
    for s, img in imgs.items():
        path = out if len(styles) == 1 and out.suffix else out / f"{s}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(img, path)
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    from . import rendernet as rn
    from .dataset import load_manifest, load_train_set
    from .diffengine import AdamConfig, save_checkpoint
    cfg, base = _read_config(args.config)
    spec = _net_spec(cfg.get("spec"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = rn.build(spec, args.seed)
    extra = {"spec": spec.to_dict(), "seed": args.seed}
    if args.steps == 0:
        save_checkpoint(params, out / "final", extra={**extra, "step": 0})
        print(f"initial checkpoint written to {out / 'final'}")
        return EXIT_OK
    if "dataset" not in cfg:
        raise InputError("train config needs a 'dataset' manifest path")
    try:
        data = load_train_set(load_manifest(_resolve(base, cfg["dataset"])))
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"unreadable dataset: {exc}") from exc
    pf = cfg.get("patch_fractions")
    sched = rn.Schedule(epochs=int(cfg.get("epochs", 10)), batch_size=int(cfg.get("batch_size", 8)),
                        max_steps=args.steps, patch_fractions=tuple(pf) if pf else None,
                        noise=float(cfg.get("noise", 0.0)),
                        lr_final=_opt_float(cfg.get("lr_final")),
                        clip_norm=_opt_float(cfg.get("clip_norm")))
    log = rn.train(params, spec, data, cfg.get("loss", "phong"),
                   AdamConfig(float(cfg.get("lr", 1e-3))), sched, seed=args.seed,
                   log_path=out / "log.csv", checkpoint_dir=out / "ckpt", verbose=args.verbose)
    save_checkpoint(params, out / "final", extra={**extra, "step": len(log.steps)})
    print(f"trained {len(log.steps)} steps, final loss {log.losses[-1]:.5f}")
    return EXIT_OK


def cmd_train_ae(args) -> int:
    from . import priors as pr
    from .diffengine import AdamConfig, save_checkpoint
    from .voxgrid import load_grid
    cfg, base = _read_config(args.config)
    shape_dir = _resolve(base, cfg.get("shapes", args.shapes or "."))
    paths = sorted(shape_dir.glob("*.vxg"))
    if not paths:
        raise InputError(f"no .vxg grids under {shape_dir}")
    grids = [load_grid(p) for p in paths]
    spec = pr.ShapeAESpec.desk(int(cfg.get("latent_dim", 32)), grids[0].shape[0])
    params, spec = pr.build_shape_ae(seed=args.seed, spec=spec)
    out = Path(args.out)
    log = pr.train_shape_ae(params, spec, grids, AdamConfig(float(cfg.get("lr", 1e-3))),
                            int(cfg.get("epochs", 50)), int(cfg.get("batch_size", 8)), args.seed,
                            max_steps=args.steps, log_path=None, verbose=args.verbose)
    stats = pr.latent_stats(pr.encode_all(params, spec, grids))
    save_checkpoint(params, out, extra={"ae_spec": spec.to_dict(), "stats": stats.to_dict(),
                                        "steps": len(log.steps)})
    print(f"shape AE written to {out}")
    return EXIT_OK


def _opt_float(v):
    return None if v is None else float(v)


def _renderer_from(path):
    from . import rendernet as rn
    params, extra = _load_ckpt(path)
    if "spec" not in extra:
        raise InputError(f"checkpoint {path} carries no network spec")
    return params, rn.NetworkSpec.from_dict(extra["spec"])


def cmd_render(args) -> int:
    from . import rendernet as rn
    from .imageio import save_image
    from .voxgrid import Pose
    params, spec = _renderer_from(args.checkpoint)
    grid = _load_grid(args.grid)
    out = rn.forward(params, spec, rn.RenderInputs(grid, Pose(args.azimuth, args.elevation,
                                                              args.radius), _light(args)))
    key = args.style if args.style in out else ("shaded" if "shaded" in out else next(iter(out)))
    img = out[key]
    save_image(img[0] if img.ndim == 4 else img, args.out)
    print(args.out)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    import numpy as np
    from . import invrender as ir
    from . import priors as pr
    from .imageio import load_image, save_image
    cfg, base = _read_config(args.config)
    for key in ("renderer", "image"):
        if key not in cfg:
            raise InputError(f"reconstruct config needs '{key}'")
    rparams, rspec = _renderer_from(_resolve(base, cfg["renderer"]))
    try:
        observed = load_image(_resolve(base, cfg["image"]))
    except (OSError, ValueError) as exc:
        raise InputError(f"unreadable image: {exc}") from exc
    shape_prior, stats = None, None
    if "shape_prior" in cfg:
        ap, extra = _load_ckpt(_resolve(base, cfg["shape_prior"]))
        shape_prior = ir.ShapePrior(ap, pr.ShapeAESpec.from_dict(extra["ae_spec"]))
        stats = pr.LatentStats.from_dict(extra["stats"]) if "stats" in extra else None
    opts = {k: cfg[k] for k in ("alpha", "beta", "n_restarts", "reinit_every", "max_level",
                                "grid_n", "learning_rate", "pose_lr", "optimize_light", "tol",
                                "patience") if k in cfg}
    if "pose_ranges" in cfg:
        opts["pose_ranges"] = tuple(tuple(r) for r in cfg["pose_ranges"])
    if "light" in cfg:
        opts["light"] = tuple(cfg["light"])
    if args.steps is not None:
        opts["max_steps"] = args.steps
    elif "max_steps" in cfg:
        opts["max_steps"] = int(cfg["max_steps"])
    prob = ir.ReconstructionProblem(observed, ir.Renderer(rparams, rspec), shape_prior,
                                    latent_stats=stats, **opts)
    direct = shape_prior is None
    res = ir.reconstruct_direct(prob, args.seed) if direct else ir.reconstruct(prob, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    b = res.best
    rendered = ir.render_of(prob, b, direct)
    save_image(np.clip(rendered, 0, 1), out / "reconstruction.png")
    for i, cand in enumerate(res.round_best):
        save_image(np.clip(ir.render_of(prob, cand, direct), 0, 1), out / f"round_{i:02d}.png")
    report = {"azimuth": b.azimuth, "elevation": b.elevation, "latent": b.z.ravel().tolist()
              if not direct else None, "eta": b.eta.tolist(), "loss": b.loss,
              "initial_loss": res.initial_loss, "round_losses": res.round_losses,
              "best_history": res.best_history, "final_level": res.final_level,
              "final_spacing": list(res.final_spacing), "steps": res.steps,
              "psnr": ir.psnr(rendered, observed), "prior": not direct}
    if "ground_truth" in cfg:
        gt = _load_grid(_resolve(base, cfg["ground_truth"]))
        report["iou"] = ir.iou(ir.candidate_grid(prob, b, direct), gt)
    _write_json(out / "report.json", report)
    print(json.dumps({k: report[k] for k in ("azimuth", "elevation", "loss", "psnr")}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    results = run_suite(tol=args.tol, precision=args.precision, seed=args.seed)
    print("name,kind,error,tolerance,pass")
    for r in results:
        print(f"{r.name},{r.kind},{r.error:.3e},{r.tolerance:.0e},{int(r.passed)}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_eval(args) -> int:
    import csv
    from . import invrender as ir
    from .imageio import load_image
    wr = csv.writer(sys.stdout, lineterminator="\n")
    if args.checkpoint:
        from . import rendernet as rn
        from .dataset import load_manifest, load_train_set
        params, spec = _renderer_from(args.checkpoint)
        try:
            data = load_train_set(load_manifest(args.dataset))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"unreadable dataset: {exc}") from exc
        style = args.style or "phong"
        pred = rn.predict(params, spec, data, style)
        wr.writerow(["sample", "psnr"])
        vals = [ir.psnr(p, t) for p, t in zip(pred, data.targets[style])]
        for i, v in enumerate(vals):
            wr.writerow([i, f"{v:.4f}"])
        wr.writerow(["mean", f"{sum(vals) / len(vals):.4f}"])
        return EXIT_OK
    if args.images:
        wr.writerow(["a", "b", "psnr"])
        a, b = args.images
        try:
            ia, ib = load_image(a), load_image(b)
        except (OSError, ValueError) as exc:
            raise InputError(f"unreadable image: {exc}") from exc
        wr.writerow([a, b, f"{ir.psnr(ia, ib):.4f}"])
    if args.grids:
        wr.writerow(["a", "b", "iou"])
        a, b = args.grids
        wr.writerow([a, b, f"{ir.iou(_load_grid(a), _load_grid(b)):.6f}"])
    if not (args.images or args.grids):
        raise InputError("eval needs --checkpoint/--dataset, --images or --grids")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------

def _pose_flags(p):
    from .voxgrid import R_REF
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=R_REF)
    p.add_argument("--light-azimuth", type=float, default=0.0)
    p.add_argument("--light-elevation", type=float, default=45.0)
    p.add_argument("--ambient", type=float, default=0.2)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxrender", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config")
    common.add_argument("--out", default="out")
    common.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-shapes", parents=[common], help="procedural occupancy grids")
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--families", help="comma list, default all")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_shapes)

    p = sub.add_parser("gen-dataset", parents=[common], help="reference-rendered views + manifest")
    p.add_argument("--shapes", required=True, help="directory of .vxg grids")
    p.add_argument("--style", default="phong,normal,albedo")
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--upsample", type=int, default=2)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("render-ref", parents=[common], help="reference shader on one grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--style", default="phong")
    p.add_argument("--upsample", type=int, default=2)
    _pose_flags(p)
    p.set_defaults(func=cmd_render_ref)

    p = sub.add_parser("train", parents=[common], help="train the rendering network")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-ae", parents=[common], help="train the shape autoencoder prior")
    p.add_argument("--shapes")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("render", parents=[common], help="render a grid with a trained network")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--style", default="shaded")
    _pose_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("reconstruct", parents=[common], help="shape and pose from one image")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference suite")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--precision", choices=("single", "double"), default="double")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", parents=[common], help="PSNR / IOU tables as CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--style")
    p.add_argument("--images", nargs=2)
    p.add_argument("--grids", nargs=2)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
