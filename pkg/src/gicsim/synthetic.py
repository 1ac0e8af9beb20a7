"""Synthetic objects, camera rigs, and self-generated observations.

Builds desk-scale drop scenes end to end: a ball of continuum particles with
splat attributes, a ring of cameras, a ground-truth rollout, surfaces, and
rendered masks. Used by the acceptance suite for self-consistency
identification and by the demo-scene CLI command.
"""

from __future__ import annotations

import numpy as np

from .geometry import (
    DensityField,
    FillConfig,
    GicParticleSet,
    extract_with_surface_mask,
    make_gaussian_informed,
)
from .identify import Observation
from .materials import MaterialSpec
from .solver import SimConfig, Trajectory, simulate, stable_config
from .splat import Camera, render


def look_at_camera(eye, target, width=96, height=96, focal=110.0, up=(0.0, 1.0, 0.0)):
    """World-to-camera extrinsic looking from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    if abs(fwd @ upv) > 0.98:
        upv = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, upv)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    ext = np.eye(4)
    ext[:3, :3] = np.stack([right, down, fwd])
    ext[:3, 3] = -ext[:3, :3] @ eye
    intr = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    return Camera(ext, intr, width, height)


def camera_ring(n_views, radius, target, height, width=96, image_height=96, focal=110.0):
    cams = []
    for k in range(n_views):
        a = 2.0 * np.pi * k / n_views
        eye = np.array([target[0] + radius * np.cos(a), height,
                        target[2] + radius * np.sin(a)])
        cams.append(look_at_camera(eye, target, width, image_height, focal))
    return cams


def ball_field(center, radius, cell_size, pad_cells: int = 3) -> DensityField:
    """Density field of a solid ball: 1 inside, half-cell ramp at the surface."""
    center = np.asarray(center, dtype=np.float64)
    n = int(np.ceil(2 * (radius + pad_cells * cell_size) / cell_size))
    origin = center - 0.5 * n * cell_size
    idx = np.indices((n, n, n)).transpose(1, 2, 3, 0)
    pos = origin + (idx + 0.5) * cell_size
    dist = np.linalg.norm(pos - center, axis=-1)
    values = np.clip((radius - dist) / cell_size + 0.5, 0.0, 1.0)
    return DensityField(origin, cell_size, values)


def make_ball_object(center, radius, fill_cfg: FillConfig):
    """Ball continuum with splat attributes plus its surface mask."""
    field = ball_field(center, radius, fill_cfg.fine_cell_size)
    positions, surface_mask = extract_with_surface_mask(field, fill_cfg.th_min,
                                                        fill_cfg.th_max)
    gic = make_gaussian_informed(positions, field, fill_cfg)
    return gic, surface_mask


def sphere_shell_gaussians(center, radius, count, scale, seed=0):
    """Surface-sampled Gaussian set, the shape a reconstruction would give."""
    from .geometry import GaussianPointSet

    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = np.asarray(center, dtype=np.float64) + radius * d
    return GaussianPointSet(pts, np.full(count, scale), np.ones(count),
                            np.full((count, 3), 0.8))


def drop_scene_config(grid_spacing=0.025, frame_dt=0.02, base_substeps=50) -> SimConfig:
    """Ground-plane drop scene over a fixed grid centered at the origin."""
    return SimConfig(
        dt=frame_dt / base_substeps, substeps_per_frame=base_substeps,
        gravity=np.array([0.0, -9.8, 0.0]), ground_height=0.0,
        ground_friction=0.4, grid_spacing=grid_spacing,
        grid_origin=np.array([-0.6, -3 * grid_spacing, -0.6]),
        grid_dims=np.array([48, 30, 48]),
    )


def generate_observation(gic: GicParticleSet, surface_mask, mat: MaterialSpec,
                         sim_cfg: SimConfig, cameras, frames: int,
                         with_masks: bool = True):
    """Ground-truth rollout packaged as an Observation (soft rendered masks)."""
    cfg = stable_config(sim_cfg, mat)
    traj = simulate(gic, mat, cfg, frames, surface_mask)
    surfaces = [traj.surface(k) for k in range(traj.num_frames)]
    masks = None
    if with_masks:
        masks = []
        for k in range(traj.num_frames):
            moved = GicParticleSet(traj.positions[k], gic.scale, gic.opacities, gic.colors)
            masks.append([render(moved, cam).mask for cam in cameras])
    obs = Observation(traj.times, surfaces, masks, cameras if with_masks else None)
    return obs, traj


def standard_drop_setup(kind: str, radius: float = 0.1, drop_height: float = 0.18,
                        v0=(0.3, -0.8, 0.1), n_views: int = 2,
                        image_size: int = 96):
    """Object, cameras, and simulation config for a self-consistency scene."""
    fill_cfg = FillConfig(dx=0.1, n_u=4)
    gic, surface_mask = make_ball_object([0.0, drop_height, 0.0], radius, fill_cfg)
    cams = camera_ring(n_views, radius=0.85, target=[0.0, 0.12, 0.0], height=0.35,
                       width=image_size, image_height=image_size, focal=1.35 * image_size)
    sim_cfg = drop_scene_config()
    return gic, surface_mask, cams, sim_cfg, fill_cfg
