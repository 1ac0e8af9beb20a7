"""Command-line surface for the pipeline.

Subcommands: fill (density field and continuum from one frame's Gaussians),
simulate (rollout to trajectory PLYs), render (mask/depth/color images),
identify (two-stage parameter estimation with report, CSV, and figures),
eval (per-frame CD/EMD between two trajectories), and demo-scene (generate a
self-contained synthetic scene for trying the pipeline).

Exit codes: 0 success, 2 input or validation error, 3 numerical divergence.
All randomness derives from --seed through named substreams.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats, geometry, report
from .errors import DivergedError, GicError, IdentificationFailedError, InvalidInputError
from .identify import identify, make_material
from .materials import MaterialSpec
from .mesh import export_mesh
from .metrics import EMD_EXACT_LIMIT, chamfer_distance, emd
from .scene import (
    load_scene,
    load_scene_gaussians,
    load_scene_gic,
    load_scene_observation,
    scene_truth_material,
)
from .solver import simulate, stable_config
from .splat import render, render_depth_only
from .util import substream


def _sampling_seed(seed: int) -> int:
    return int(substream(seed, "sampling").integers(2 ** 62))


def cmd_fill(args) -> int:
    scene = load_scene(args.scene)
    gaussians = load_scene_gaussians(scene, args.frame)
    cfg = replace(scene.fill, seed=_sampling_seed(args.seed))
    print(f"[fill] frame {args.frame}: {len(gaussians)} gaussians")
    candidates = geometry.sample_bbox_particles(gaussians, cfg.n_internal, cfg.seed)
    depths = [render_depth_only(gaussians, cam) for cam in scene.cameras]
    internal = geometry.filter_internal(candidates, scene.cameras, depths)
    print(f"[fill] internal particles: {len(internal)} / {cfg.n_internal} kept")
    field = geometry.coarse_to_fine_fill(gaussians, internal, cfg)
    positions, surface_mask = geometry.extract_with_surface_mask(field, cfg.th_min,
                                                                 cfg.th_max)
    if positions.shape[0] == 0:
        raise InvalidInputError("empty continuum; check thresholds and inputs")
    gic = geometry.make_gaussian_informed(positions, field, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_field(out / "field.gicf", field)
    formats.write_gic_ply(out / "gic.ply", gic, surface_mask=surface_mask)
    formats.write_cloud_ply(out / "continuum.ply", positions, surface_mask=surface_mask)
    formats.write_cloud_ply(out / "surface.ply", positions[surface_mask])
    if args.mesh:
        mesh = export_mesh(field, scene.fill.th_min)
        formats.write_obj(out / "mesh.obj", mesh)
        print(f"[fill] mesh: {len(mesh)} triangles")
    print(f"[fill] field dims {field.dims}, cell {field.cell_size:.6g}")
    print(f"[fill] continuum {len(positions)}, surface {int(surface_mask.sum())}, "
          f"scale {gic.scale:.6g}")
    print(f"[fill] wrote {out}/field.gicf, gic.ply, continuum.ply, surface.ply")
    return 0


def _material_from_args(scene, params_json) -> MaterialSpec:
    values = dict(scene.truth or {})
    if params_json:
        try:
            values.update(json.loads(params_json))
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"--params is not valid JSON: {e.msg}") from None
    if not values:
        raise InvalidInputError("no material parameters: scene has no truth and "
                                "--params was not given")
    v0 = values.pop("v0", (0.0, 0.0, 0.0))
    values.pop("density", None)
    return make_material(scene.material_kind, values, v0=v0, density=scene.density)


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    gic, surface_mask = load_scene_gic(scene)
    mat = _material_from_args(scene, args.params)
    cfg = stable_config(scene.sim, mat)
    traj = simulate(gic, mat, cfg, args.frames, surface_mask)
    out = Path(args.out)
    formats.write_trajectory(out, traj, material=mat)
    print(f"[simulate] {args.frames} frames, {len(gic)} particles, "
          f"{cfg.substeps_per_frame} substeps/frame -> {out}")
    return 0


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    if not 0 <= args.camera_index < len(scene.cameras):
        raise InvalidInputError(f"camera index {args.camera_index} out of range "
                                f"({len(scene.cameras)} cameras)")
    points_path = Path(args.points)
    if not points_path.exists():
        raise InvalidInputError(f"point set not found: {points_path}")
    points = formats.read_gaussian_ply(points_path)
    cam = scene.cameras[args.camera_index]
    out = render(points, cam)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    formats.write_ppm(prefix.with_suffix(".ppm"), out.color)
    formats.write_pgm(prefix.with_suffix(".pgm"), out.mask)
    covered = out.mask > 0.5
    depth = np.where(covered, out.depth / np.where(covered, out.mask, 1.0), np.inf)
    formats.write_pfm(prefix.with_suffix(".pfm"), depth)
    print(f"[render] view {args.camera_index}: coverage "
          f"{covered.mean():.1%} -> {prefix}.ppm/.pgm/.pfm")
    return 0


def cmd_identify(args) -> int:
    t0 = time.time()
    scene = load_scene(args.scene)
    obs = load_scene_observation(scene)
    gic, surface_mask = load_scene_gic(scene)
    truth = scene_truth_material(scene)
    ident_cfg = replace(scene.ident, seed=args.seed)
    if args.no_masks:
        ident_cfg = replace(ident_cfg, mask_weight=0.0)
    result = identify(obs, gic, scene.material_kind, ident_cfg, scene.sim,
                      surface_mask=surface_mask, init_guess=scene.init_guess,
                      truth=truth, density=scene.density)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "material": scene.material_kind,
        "theta_init": result.theta_init.params_dict(),
        "theta_hat": result.theta_hat.params_dict(),
        "v0_hat": [float(v) for v in result.v0_hat],
        "loss_history": [float(v) for v in result.loss_history],
        "cd_history": [float(v) for v in result.cd_history],
        "mask_history": [float(v) for v in result.mask_history],
        "mask_weight": ident_cfg.mask_weight,
        "seed": args.seed,
        "wall_time_s": round(time.time() - t0, 3),
    }
    if result.mae_x100 is not None:
        doc["mae_x100"] = result.mae_x100
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    report.write_csv(out / "loss_history.csv", ["iteration", "total", "surface_cd", "mask_l1"],
                     [(i, float(t), float(c), float(m)) for i, (t, c, m) in
                      enumerate(zip(result.loss_history, result.cd_history,
                                    result.mask_history))])
    report.save_loss_curve(out / "loss_curve.png", result.loss_history,
                           result.cd_history, result.mask_history)
    print(f"[identify] {scene.material_kind}: "
          + ", ".join(f"{k}={v:.6g}" for k, v in result.theta_hat.params_dict().items()
                      if k not in ("density", "v0")))
    print(f"[identify] v0_hat = ({result.v0_hat[0]:.4f}, {result.v0_hat[1]:.4f}, "
          f"{result.v0_hat[2]:.4f})")
    print(f"[identify] loss {result.loss_history[0]:.6g} -> {result.loss_history.min():.6g} "
          f"in {len(result.loss_history) - 1} iterations")
    if result.mae_x100 is not None:
        print("[identify] MAE x100 vs truth: "
              + ", ".join(f"{k}={v:.3g}" for k, v in result.mae_x100.items()))
    print(f"[identify] wrote {out}/report.json, loss_history.csv, loss_curve.png")
    return 0


def cmd_eval(args) -> int:
    traj = formats.read_trajectory(args.traj)
    ref = formats.read_trajectory(args.ref)
    n = min(traj.num_frames, ref.num_frames)
    cd_scale = 1.0e3 if args.mm else 1.0
    cd_label = "CD [10^3 mm^2]" if args.mm else "CD [m^2]"
    rows = []
    emd_vals = []
    for k in range(n):
        a = traj.positions[k]
        b = ref.positions[k]
        cd = chamfer_distance(a, b) * cd_scale
        e = None
        if len(a) == len(b) and len(a) <= EMD_EXACT_LIMIT:
            e = emd(a, b)
        emd_vals.append(e)
        rows.append((float(traj.times[k]), cd, "" if e is None else e))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "frames": n,
        "cd_units": "1e3_mm2" if args.mm else "m2",
        "per_frame": [{"time_s": r[0], "cd": r[1],
                       "emd": None if r[2] == "" else r[2]} for r in rows],
        "mean_cd": float(np.mean([r[1] for r in rows])),
    }
    finite_emd = [e for e in emd_vals if e is not None]
    if finite_emd:
        doc["mean_emd"] = float(np.mean(finite_emd))
    else:
        print(f"[eval] EMD skipped (needs equal sizes <= {EMD_EXACT_LIMIT} points)")
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    report.write_csv(out / "per_frame.csv", ["time_s", "cd", "emd"], rows)
    report.save_metric_curves(out / "metrics.png", [r[0] for r in rows],
                              [r[1] for r in rows], emd_vals, cd_label=cd_label)
    print(report.format_table(["time_s", cd_label, "EMD"],
                              [(r[0], r[1], r[2] if r[2] != "" else "-") for r in rows]))
    print(f"[eval] mean CD {doc['mean_cd']:.6g}"
          + (f", mean EMD {doc['mean_emd']:.6g}" if "mean_emd" in doc else ""))
    print(f"[eval] wrote {out}/metrics.json, per_frame.csv, metrics.png")
    return 0


_DEMO_TRUTH = {
    "elastic": {"E": 1.0e6, "nu": 0.3},
    "plasticine": {"E": 2.0e6, "nu": 0.3, "tau_y": 1.54e4},
    "granular": {"theta_fric": 40.0},
    "newtonian": {"mu_fluid": 200.0, "kappa": 1.0e5},
    "non_newtonian": {"mu_shear": 1.0e4, "kappa": 1.0e6, "tau_y": 3.0e3, "eta": 10.0},
}


def cmd_demo_scene(args) -> int:
    from .synthetic import generate_observation, standard_drop_setup

    kind = args.kind
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "surf").mkdir(exist_ok=True)
    (out / "gauss").mkdir(exist_ok=True)
    gic, surface_mask, cams, sim_cfg, fill_cfg = standard_drop_setup(
        kind, radius=args.radius, n_views=args.views)
    truth_params = dict(_DEMO_TRUTH[kind])
    v0 = [0.3, -0.8, 0.1]
    mat = make_material(kind, truth_params, v0=v0)
    obs, traj = generate_observation(gic, surface_mask, mat, sim_cfg, cams,
                                     frames=args.frames)
    formats.write_gic_ply(out / "gic.ply", gic, surface_mask=surface_mask)
    frames_doc = []
    for k in range(obs.num_frames):
        mask_paths = []
        for j in range(len(cams)):
            rel = f"masks/f{k:03d}_v{j}.pgm"
            formats.write_pgm(out / rel, obs.masks[k][j])
            mask_paths.append(rel)
        surf_rel = f"surf/f{k:03d}.ply"
        formats.write_cloud_ply(out / surf_rel, obs.surfaces[k])
        # stand-in reconstruction: surface particles as small splats
        gauss_rel = f"gauss/f{k:03d}.ply"
        surf_pts = obs.surfaces[k]
        g = geometry.GaussianPointSet(surf_pts, np.full(len(surf_pts), 1.5 * gic.scale),
                                      np.full(len(surf_pts), 0.95),
                                      np.full((len(surf_pts), 3), 0.7))
        formats.write_gaussian_ply(out / gauss_rel, g)
        frames_doc.append({"time_s": float(obs.times[k]), "masks": mask_paths,
                           "surface": surf_rel, "gaussians": gauss_rel})
    scene_doc = {
        "name": f"demo-{kind}",
        "report_units": "m",
        "cameras": [{"extrinsic": c.extrinsic.tolist(), "intrinsic": c.intrinsic.tolist(),
                     "width": c.width, "height": c.height} for c in cams],
        "material": {"kind": kind, "density": 1000.0,
                     "truth": dict(truth_params, v0=v0)},
        "fill": {"dx": fill_cfg.dx, "n_u": fill_cfg.n_u, "th_min": fill_cfg.th_min,
                 "th_max": fill_cfg.th_max, "n_internal": fill_cfg.n_internal},
        "sim": {"dt": sim_cfg.dt, "substeps_per_frame": sim_cfg.substeps_per_frame,
                "gravity": sim_cfg.gravity.tolist(),
                "ground_height": sim_cfg.ground_height,
                "ground_friction": sim_cfg.ground_friction,
                "grid_spacing": sim_cfg.grid_spacing,
                "grid_origin": sim_cfg.grid_origin.tolist(),
                "grid_dims": sim_cfg.grid_dims.tolist()},
        "ident": {"adam": {"iterations": args.iterations},
                  "velocity_iterations": 15},
        "gic": "gic.ply",
        "frames": frames_doc,
    }
    with open(out / "scene.json", "w", encoding="utf-8") as f:
        json.dump(scene_doc, f, indent=1, sort_keys=True)
    print(f"[demo-scene] {kind}: {len(gic)} particles, {obs.num_frames} frames, "
          f"{len(cams)} views -> {out}/scene.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gicsim",
        description="Gaussian-informed continuum generation, simulation, and "
                    "physical parameter identification")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed; all randomness derives from it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fill", help="density field and continuum from one frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mesh", action="store_true", help="also export an OBJ iso-surface")
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("simulate", help="roll out a trajectory from the scene continuum")
    p.add_argument("--scene", required=True)
    p.add_argument("--params", help='material parameter overrides as JSON, e.g. '
                                    '\'{"E": 1e6, "nu": 0.3, "v0": [0, -1, 0]}\'')
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render color/mask/depth images of a point set")
    p.add_argument("--scene", required=True)
    p.add_argument("--points", required=True, help="gaussian or continuum PLY")
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("identify", help="estimate physical parameters from the scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-masks", action="store_true",
                   help="disable the 2D mask term in the objective (ablation)")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("eval", help="per-frame CD/EMD between two trajectories")
    p.add_argument("--traj", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mm", action="store_true", help="report CD in 10^3 mm^2")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-scene", help="write a synthetic drop scene")
    p.add_argument("--kind", choices=list(_DEMO_TRUTH), default="elastic")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--radius", type=float, default=0.1, help="ball radius in meters")
    p.add_argument("--iterations", type=int, default=30,
                   help="Adam iterations stored in the scene's ident config")
    p.set_defaults(func=cmd_demo_scene)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DivergedError, IdentificationFailedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except GicError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
