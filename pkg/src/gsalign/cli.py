"""Command-line entry point.

Subcommands: synth, perturb, register, lift, render, eval, bench, merge,
rmbg. Global flags: --seed (overridden by the GSA_SEED environment
variable), --threads, --log-level, --out-dir. Usage errors and missing
input files exit 2; domain failures exit 1.

Heavy imports happen after argument parsing so that --threads can pin the
BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

log = logging.getLogger("gsalign")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsalign",
                                description="Feature-guided registration of 3D "
                                            "Gaussian splat models under Sim(3).")
    p.add_argument("--seed", type=int, default=0,
                   help="global RNG seed (env GSA_SEED overrides)")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP thread pools")
    p.add_argument("--log-level", default="warning",
                   choices=["debug", "info", "warning", "error"])
    p.add_argument("--out-dir", default=".", help="directory for outputs")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic featured model")
    sp.add_argument("--family", default="superquadric",
                    choices=["superquadric", "box", "composite"])
    sp.add_argument("--exponents", default="1.0,1.0", help="e1,e2 in [0.3,4]")
    sp.add_argument("--half-extents", default="1.0,0.8,0.6")
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--surface-noise", type=float, default=0.0)
    sp.add_argument("--feature-noise", type=float, default=0.0)
    sp.add_argument("--marker", default="on", choices=["on", "off"],
                    help="asymmetry bump breaking near-symmetric shapes")
    sp.add_argument("--marker-direction", default="1.0,0.35,0.2")
    sp.add_argument("--marker-radius-deg", type=float, default=25.0)
    sp.add_argument("--out", default="model.ply")

    pp = sub.add_parser("perturb", help="apply a random similarity transform")
    pp.add_argument("--model", required=True)
    pp.add_argument("--max-rotation-deg", type=float, default=180.0)
    pp.add_argument("--scale-range", default="0.1,10.0")
    pp.add_argument("--translation-radius", type=float, default=2.0)
    pp.add_argument("--out", default="perturbed.ply")
    pp.add_argument("--transform-json", default="transform.json")

    rp = sub.add_parser("register", help="estimate the source-to-target Sim(3)")
    rp.add_argument("--source", required=True)
    rp.add_argument("--target", required=True)
    rp.add_argument("--stage", default="both", choices=["coarse", "fine", "both"])
    rp.add_argument("--tau-f", type=float, default=0.01)
    rp.add_argument("--max-iterations", type=int, default=6)
    rp.add_argument("--subsample", type=int, default=None)
    rp.add_argument("--mode", default="feature", choices=["feature", "rgb"])
    rp.add_argument("--fine-iterations", type=int, default=60)
    rp.add_argument("--fine-views", type=int, default=3)
    rp.add_argument("--fine-lr", type=float, default=0.01)
    rp.add_argument("--fine-resolution", default="128x128")
    rp.add_argument("--init-transform", default=None,
                    help="JSON transform initializing --stage fine")
    rp.add_argument("--emit-aligned", default=None, metavar="PLY",
                    help="write the source transformed by the estimate")
    rp.add_argument("--report", default="report.json")
    rp.add_argument("--no-figures", action="store_true")

    lp = sub.add_parser("lift", help="optimize descriptors from observed maps")
    lp.add_argument("--model", required=True)
    lp.add_argument("--views", required=True,
                    help="JSON list of {map: npy-path, pose: camera-dict}")
    lp.add_argument("--iters", type=int, default=200)
    lp.add_argument("--step", type=float, default=0.25)
    lp.add_argument("--out", default="featured.ply")

    np_ = sub.add_parser("render", help="render a model to PNG/NPY dumps")
    np_.add_argument("--model", required=True)
    np_.add_argument("--pose", default=None, help="camera JSON (default: +z view)")
    np_.add_argument("--mode", default="feature", choices=["feature", "rgb"])
    np_.add_argument("--resolution", default="128x128")
    np_.add_argument("--format", default="both", choices=["png", "npy", "both"])
    np_.add_argument("--out", default="render")

    ep = sub.add_parser("eval", help="score a report against ground truth")
    ep.add_argument("--report", required=True)
    ep.add_argument("--ground-truth", required=True)
    ep.add_argument("--out", default="metrics.json")

    bp = sub.add_parser("bench", help="run a benchmark suite manifest")
    bp.add_argument("--suite", required=True)

    mp = sub.add_parser("merge", help="concatenate target scene and aligned source")
    mp.add_argument("--target-scene", required=True)
    mp.add_argument("--aligned-source", required=True)
    mp.add_argument("--out", default="merged.ply")

    gp = sub.add_parser("rmbg", help="strip background-colored / faint Gaussians")
    gp.add_argument("--model", required=True)
    gp.add_argument("--bg-color", default="1.0,1.0,1.0")
    gp.add_argument("--color-threshold", type=float, default=0.08)
    gp.add_argument("--opacity-floor", type=float, default=0.05)
    gp.add_argument("--out", default="filtered.ply")
    return p


def _floats(text: str, n: int, flag: str) -> tuple:
    parts = text.split(",")
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{flag} needs {n} comma-separated values")
    return tuple(float(v) for v in parts)


def _resolution(text: str) -> tuple[int, int]:
    w, _, h = text.partition("x")
    return int(w), int(h or w)


def _out_path(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return name if os.path.isabs(name) else os.path.join(args.out_dir, name)


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _global_config(args) -> dict:
    return {"seed": args.seed, "out_dir": args.out_dir, "command": args.command}


# ---------------------------------------------------------------------------
# Handlers (imports deferred; see module docstring)
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    from gsalign.ply import write_ply
    from gsalign.reports import save_json
    from gsalign.synth import MarkerParams, ShapeParams, generate_model

    marker = None
    if args.marker == "on":
        marker = MarkerParams(direction=_floats(args.marker_direction, 3,
                                                "--marker-direction"),
                              angular_radius_deg=args.marker_radius_deg)
    params = ShapeParams(family=args.family,
                         exponents=_floats(args.exponents, 2, "--exponents"),
                         half_extents=_floats(args.half_extents, 3, "--half-extents"),
                         marker=marker, gaussian_count=args.count,
                         surface_noise=args.surface_noise,
                         feature_noise=args.feature_noise, seed=args.seed)
    model = generate_model(params)
    out = _out_path(args, args.out)
    write_ply(model, out)
    manifest = {"config": _global_config(args), "model": out,
                "gaussians": len(model),
                "params": {"family": params.family,
                           "exponents": list(params.exponents),
                           "half_extents": list(params.half_extents),
                           "marker": None if marker is None else
                           {"direction": list(marker.direction),
                            "angular_radius_deg": marker.angular_radius_deg},
                           "gaussian_count": params.gaussian_count,
                           "surface_noise": params.surface_noise,
                           "feature_noise": params.feature_noise,
                           "seed": params.seed}}
    save_json(manifest, out + ".manifest.json")
    print(f"wrote {out} ({len(model)} Gaussians)")
    return 0


def _cmd_perturb(args) -> int:
    from gsalign.ply import read_ply, write_ply
    from gsalign.reports import save_json
    from gsalign.synth import PerturbBounds, random_sim3

    model = read_ply(_require_file(args.model))
    bounds = PerturbBounds(
        max_rotation_deg_per_axis=args.max_rotation_deg,
        scale_range=_floats(args.scale_range, 2, "--scale-range"),
        translation_radius=args.translation_radius, seed=args.seed)
    transform = random_sim3(bounds)
    out = _out_path(args, args.out)
    write_ply(model.transformed(transform), out)
    save_json({"config": _global_config(args),
               "applied_transform": transform.to_dict(),
               "ground_truth": transform.inverse().to_dict(),
               "bounds": {"max_rotation_deg_per_axis": bounds.max_rotation_deg_per_axis,
                          "scale_range": list(bounds.scale_range),
                          "translation_radius": bounds.translation_radius,
                          "seed": bounds.seed}},
              _out_path(args, args.transform_json))
    print(f"wrote {out}")
    return 0


def _cmd_register(args) -> int:
    from gsalign.coarse import CoarseConfig, coarse_register
    from gsalign.fine import FineConfig, fine_register
    from gsalign.ply import read_ply, write_ply
    from gsalign.reports import RegistrationReport, save_report
    from gsalign.sim3 import Sim3Transform

    source = read_ply(_require_file(args.source))
    target = read_ply(_require_file(args.target))
    wall = {}
    coarse_trace = fine_trace = None
    estimate = Sim3Transform.identity()
    if args.init_transform:
        with open(_require_file(args.init_transform)) as fh:
            d = json.load(fh)
        estimate = Sim3Transform.from_dict(d.get("ground_truth", d))

    if args.stage in ("coarse", "both"):
        ccfg = CoarseConfig(tau_f=args.tau_f, max_iterations=args.max_iterations,
                            subsample=args.subsample, seed=args.seed)
        t0 = time.perf_counter()
        estimate, coarse_trace = coarse_register(source, target, ccfg)
        wall["coarse"] = (time.perf_counter() - t0) * 1e3
    if args.stage in ("fine", "both"):
        fcfg = FineConfig(num_views=args.fine_views,
                          iterations=args.fine_iterations,
                          learning_rate=args.fine_lr, mode=args.mode,
                          resolution=_resolution(args.fine_resolution))
        t0 = time.perf_counter()
        estimate, fine_trace = fine_register(estimate, source, target, fcfg)
        wall["fine"] = (time.perf_counter() - t0) * 1e3

    config = _global_config(args)
    config.update({"stage": args.stage, "tau_f": args.tau_f,
                   "max_iterations": args.max_iterations,
                   "subsample": args.subsample, "mode": args.mode,
                   "fine_iterations": args.fine_iterations,
                   "fine_views": args.fine_views, "fine_lr": args.fine_lr,
                   "fine_resolution": list(_resolution(args.fine_resolution)),
                   "source": args.source, "target": args.target})
    report = RegistrationReport(estimated_transform=estimate,
                                coarse_trace=coarse_trace, fine_trace=fine_trace,
                                wall_time_ms=wall, config=config)
    report_path = _out_path(args, args.report)
    save_report(report, report_path)
    _write_trace_csv(report, report_path + ".trace.csv")
    if not args.no_figures:
        from gsalign.plots import save_trace_figure
        save_trace_figure(coarse_trace, fine_trace, report_path + ".png")
    if args.emit_aligned:
        write_ply(source.transformed(estimate), _out_path(args, args.emit_aligned))
    print(f"estimated: {estimate}")
    print(f"report: {report_path}")
    return 0


def _write_trace_csv(report, path: str) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "iteration", "value", "matched", "unmatched"])
        if report.coarse_trace is not None:
            for r in report.coarse_trace.iterations:
                writer.writerow(["coarse", r.iteration, repr(r.residual_after),
                                 r.matched, r.unmatched])
        if report.fine_trace is not None:
            for r in report.fine_trace.iterations:
                writer.writerow(["fine", r.iteration, repr(r.loss), "", ""])


def _cmd_lift(args) -> int:
    from gsalign.cameras import CameraPose
    from gsalign.lift import lift_features
    from gsalign.plots import load_raster_npy
    from gsalign.ply import read_ply, write_ply

    model = read_ply(_require_file(args.model))
    with open(_require_file(args.views)) as fh:
        entries = json.load(fh)
    views = [(load_raster_npy(_require_file(e["map"])),
              CameraPose.from_dict(e["pose"])) for e in entries]
    lifted = lift_features(model, views, iters=args.iters, step=args.step)
    out = _out_path(args, args.out)
    write_ply(lifted, out)
    print(f"wrote {out}")
    return 0


def _cmd_render(args) -> int:
    from gsalign.cameras import CameraPose, fibonacci_sphere_views
    from gsalign.plots import save_raster_npy, save_raster_png
    from gsalign.ply import read_ply
    from gsalign.render import render_feature_map, render_rgb

    model = read_ply(_require_file(args.model))
    width, height = _resolution(args.resolution)
    if args.pose:
        with open(_require_file(args.pose)) as fh:
            cam = CameraPose.from_dict(json.load(fh))
    else:
        cam = fibonacci_sphere_views(model.centroid(),
                                     2.5 * max(model.bounding_radius(), 1e-6), 1,
                                     width=width, height=height)[0]
    fmap = (render_feature_map if args.mode == "feature" else render_rgb)(model, cam)
    base = _out_path(args, args.out)
    written = []
    if args.format in ("png", "both"):
        save_raster_png(fmap, base + ".png")
        written.append(base + ".png")
    if args.format in ("npy", "both"):
        save_raster_npy(fmap, base + ".npy")
        written.append(base + ".npy")
    print("rendered " + " ".join(written))
    return 0


def _cmd_eval(args) -> int:
    from gsalign.metrics import metric_set
    from gsalign.reports import load_report, save_json
    from gsalign.sim3 import Sim3Transform

    report = load_report(_require_file(args.report))
    with open(_require_file(args.ground_truth)) as fh:
        d = json.load(fh)
    gt = Sim3Transform.from_dict(d.get("ground_truth", d))
    m = metric_set(report.estimated_transform, gt)
    payload = {"config": _global_config(args), "metrics": m.to_dict()}
    save_json(payload, _out_path(args, args.out))
    print(f"rre_deg={m.rre_deg:.6f} ate={m.ate:.6f} "
          f"scale_error_pct={m.scale_error_pct:.6f}")
    return 0


def _cmd_bench(args) -> int:
    from gsalign.bench import run_suite

    with open(_require_file(args.suite)) as fh:
        manifest = json.load(fh)
    manifest.setdefault("seed", args.seed)
    report = run_suite(manifest, args.out_dir)
    ok = sum(r["status"] == "ok" for r in report["rows"])
    print(f"bench: {ok}/{len(report['rows'])} trials ok -> {args.out_dir}")
    return 0


def _cmd_merge(args) -> int:
    from gsalign.model import concatenate
    from gsalign.ply import read_ply, write_ply

    target = read_ply(_require_file(args.target_scene))
    source = read_ply(_require_file(args.aligned_source))
    merged = concatenate([target, source])
    out = _out_path(args, args.out)
    write_ply(merged, out)
    print(f"wrote {out} ({len(merged)} Gaussians)")
    return 0


def _cmd_rmbg(args) -> int:
    from gsalign.model import BgRemovalConfig, remove_background_gaussians
    from gsalign.ply import read_ply, write_ply
    import numpy as np

    model = read_ply(_require_file(args.model))
    cfg = BgRemovalConfig(
        background_color=np.array(_floats(args.bg_color, 3, "--bg-color")),
        color_distance_threshold=args.color_threshold,
        opacity_floor=args.opacity_floor)
    filtered, removed = remove_background_gaussians(model, cfg)
    out = _out_path(args, args.out)
    write_ply(filtered, out)
    print(f"wrote {out} (removed {removed} of {len(model)})")
    return 0


_HANDLERS = {
    "synth": _cmd_synth, "perturb": _cmd_perturb, "register": _cmd_register,
    "lift": _cmd_lift, "render": _cmd_render, "eval": _cmd_eval,
    "bench": _cmd_bench, "merge": _cmd_merge, "rmbg": _cmd_rmbg,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if os.environ.get("GSA_SEED"):
        args.seed = int(os.environ["GSA_SEED"])
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")

    from gsalign.errors import GsAlignError
    try:
        return _HANDLERS[args.command](args)
    except FileNotFoundError as exc:
        print(f"gsalign: {exc}", file=sys.stderr)
        return 2
    except argparse.ArgumentTypeError as exc:
        print(f"gsalign: usage error: {exc}", file=sys.stderr)
        return 2
    except (GsAlignError, ValueError) as exc:
        print(f"gsalign: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
