"""Density-field generation from Gaussian point sets.

Implements the coarse-to-fine filling loop: sample candidate interior
particles in the Gaussian bounding box, keep the ones lying at or behind the
rendered depth in every view, then iteratively upsample / mean-filter /
reassign a voxel density field until the target resolution is reached.
Continuum and surface particles are voxel centers selected by density
thresholds, and continuum particles are given the splat scale and opacity
that let the simulated body render masks.

Particle clouds are plain (N, 3) float64 arrays in scene units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class GaussianPointSet:
    """Isotropic Gaussian kernels at one time state."""

    centers: np.ndarray              # (N, 3) scene units
    scales: np.ndarray               # (N,) > 0
    opacities: np.ndarray            # (N,) in [0, 1]
    colors: np.ndarray               # (N, 3) in [0, 1]

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        n = self.centers.shape[0]
        self.scales = np.broadcast_to(np.asarray(self.scales, dtype=np.float64), (n,)).copy()
        self.opacities = np.broadcast_to(np.asarray(self.opacities, dtype=np.float64), (n,)).copy()
        colors = np.asarray(self.colors, dtype=np.float64)
        if colors.ndim == 1:
            colors = np.broadcast_to(colors, (n, 3)).copy()
        self.colors = colors
        if self.centers.shape != (n, 3) or self.colors.shape != (n, 3):
            raise InvalidInputError("gaussian point set arrays have inconsistent shapes")
        if n and not np.all(np.isfinite(self.centers)):
            raise InvalidInputError("gaussian centers must be finite")
        if n and np.any(self.scales <= 0):
            raise InvalidInputError("gaussian scales must be positive")
        if n and (np.any(self.opacities < 0) or np.any(self.opacities > 1)):
            raise InvalidInputError("gaussian opacities must lie in [0, 1]")

    def __len__(self):
        return self.centers.shape[0]


@dataclass
class DensityField:
    """Axis-aligned voxel grid of occupancy densities in [0, 1].

    ``values[i, j, k]`` is the density of the voxel whose center sits at
    ``origin + (index + 0.5) * cell_size``.
    """

    origin: np.ndarray               # (3,)
    cell_size: float
    values: np.ndarray               # (nx, ny, nz) float64

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.cell_size = float(self.cell_size)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.cell_size <= 0:
            raise InvalidInputError("cell_size must be positive")
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise InvalidInputError("density field values must be a nonempty 3D array")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise InvalidInputError("density values must lie in [0, 1]")

    @property
    def dims(self):
        return self.values.shape

    def voxel_centers(self, indices: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(indices, dtype=np.float64) + 0.5) * self.cell_size


@dataclass
class GicParticleSet:
    """Continuum particles carrying splat attributes (Eq. triplets).

    All particles share one scale; opacity is the density-field value at
    the particle's voxel.
    """

    positions: np.ndarray            # (N, 3)
    scale: float
    opacities: np.ndarray            # (N,) in [0, 1]
    colors: np.ndarray = None        # (N, 3); defaults to white

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.scale = float(self.scale)
        n = self.positions.shape[0]
        self.opacities = np.broadcast_to(np.asarray(self.opacities, dtype=np.float64), (n,)).copy()
        if self.colors is None:
            self.colors = np.ones((n, 3))
        else:
            self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
        if self.scale <= 0:
            raise InvalidInputError("particle scale must be positive")
        if n and (self.opacities.min() < 0 or self.opacities.max() > 1):
            raise InvalidInputError("particle opacities must lie in [0, 1]")

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class FillConfig:
    dx: float = 0.1                  # initial grid size, scene units
    n_u: int = 4                     # upsampling rounds
    th_min: float = 0.5
    th_max: float = 0.8
    n_internal: int = 200_000        # candidate pool before depth filtering
    seed: int = 0

    def __post_init__(self):
        if self.dx <= 0:
            raise InvalidInputError("dx must be positive")
        if self.n_u < 1:
            raise InvalidInputError("n_u must be >= 1")
        if not (0.0 < self.th_min < self.th_max <= 1.0):
            raise InvalidInputError("thresholds must satisfy 0 < th_min < th_max <= 1")
        if self.n_internal <= 0:
            raise InvalidInputError("n_internal must be positive")

    @property
    def fine_cell_size(self) -> float:
        return self.dx / 2 ** (self.n_u - 1)

    @property
    def particle_scale(self) -> float:
        return self.dx / 2 ** self.n_u


def sample_bbox_particles(gaussians: GaussianPointSet, count: int, seed: int) -> np.ndarray:
    """Uniform samples from the axis-aligned bounding box of the centers."""
    if len(gaussians) == 0:
        raise InvalidInputError("cannot sample from an empty gaussian set")
    if count <= 0:
        raise InvalidInputError("sample count must be positive")
    lo = gaussians.centers.min(axis=0)
    hi = gaussians.centers.max(axis=0)
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((count, 3))


def filter_internal(candidates: np.ndarray, cameras, depth_maps) -> np.ndarray:
    """Keep candidates lying at or behind the rendered depth in every view.

    A candidate passes view i when its projected pixel is inside the image
    and the rendered depth there is <= its camera-space depth. Pixels
    without splat coverage carry a +inf sentinel, so candidates projecting
    outside the silhouette fail that view.
    """
    if len(cameras) != len(depth_maps):
        raise InvalidInputError(
            f"camera/depth count mismatch: {len(cameras)} cameras, {len(depth_maps)} depth maps"
        )
    pts = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if pts.shape[0] == 0:
        return pts.reshape(0, 3)
    keep = np.ones(pts.shape[0], dtype=bool)
    for cam, dm in zip(cameras, depth_maps):
        dm = np.asarray(dm, dtype=np.float64)
        if dm.shape != (cam.height, cam.width):
            raise InvalidInputError("depth map resolution does not match its camera")
        rot = cam.extrinsic[:3, :3]
        trans = cam.extrinsic[:3, 3]
        pc = pts @ rot.T + trans
        z = pc[:, 2]
        in_front = z > 1e-9
        zs = np.where(in_front, z, 1.0)
        uv = pc @ cam.intrinsic.T
        px = np.floor(uv[:, 0] / zs).astype(np.int64)
        py = np.floor(uv[:, 1] / zs).astype(np.int64)
        inside = in_front & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        rendered = np.full(pts.shape[0], np.inf)
        rendered[inside] = dm[py[inside], px[inside]]
        keep &= inside & (rendered <= z)
    return pts[keep]


def discretize(field: DensityField, points: np.ndarray) -> np.ndarray:
    """Voxel indices of points: floor((p - origin)/cell), clamped to the grid."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    idx = np.floor((pts - field.origin) / field.cell_size).astype(np.int64)
    return np.clip(idx, 0, np.asarray(field.dims) - 1)


def _reassign(field: DensityField, points: np.ndarray) -> None:
    if points.shape[0] == 0:
        return
    i, j, k = discretize(field, points).T
    field.values[i, j, k] = 1.0


def _upsample_axis(v: np.ndarray, axis: int) -> np.ndarray:
    # Fine sample k sits at coarse coordinate 0.5*k - 0.25 (cell centers);
    # edges clamp to the nearest coarse sample.
    n = v.shape[axis]
    coord = 0.5 * np.arange(2 * n) - 0.25
    base = np.floor(coord)
    frac = coord - base
    raw = base.astype(np.int64)
    i0 = np.clip(raw, 0, n - 1)
    i1 = np.clip(raw + 1, 0, n - 1)
    lo = np.take(v, i0, axis=axis)
    hi = np.take(v, i1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = 2 * n
    w = frac.reshape(shape)
    return lo + w * (hi - lo)


def upsample_trilinear(field: DensityField) -> DensityField:
    """Double the resolution; fine-voxel centers interpolate coarse centers."""
    out = field.values
    for axis in range(3):
        out = _upsample_axis(out, axis)
    out = np.clip(out, field.values.min(), field.values.max())
    return DensityField(field.origin.copy(), field.cell_size / 2.0, out)


def mean_filter(field: DensityField) -> DensityField:
    """3x3x3 box average with neighborhoods clipped at the grid boundary."""
    v = field.values
    sums = v
    counts = np.ones((), dtype=np.float64)
    for axis in range(3):
        padded = np.pad(sums, [(1, 1) if a == axis else (0, 0) for a in range(3)])
        sl = [slice(None)] * 3
        parts = []
        for off in range(3):
            sl[axis] = slice(off, off + sums.shape[axis])
            parts.append(padded[tuple(sl)])
        sums = parts[0] + parts[1] + parts[2]
        c = np.full(v.shape[axis], 3.0)
        c[0] = min(2, v.shape[axis])
        c[-1] = min(2, v.shape[axis])
        if v.shape[axis] == 1:
            c[0] = 1.0
        shape = [1, 1, 1]
        shape[axis] = v.shape[axis]
        counts = counts * c.reshape(shape)
    out = np.clip(sums / counts, v.min(), v.max())
    return DensityField(field.origin.copy(), field.cell_size, out)


def coarse_to_fine_fill(
    gaussians: GaussianPointSet, internal: np.ndarray, cfg: FillConfig
) -> DensityField:
    """Iterative upsample / mean-filter / reassign producing the density field.

    The field covers the Gaussian-center bounding box padded by two coarse
    cells per side so boundary smoothing cannot erode the true surface.
    After the final reassign every voxel containing an input particle holds
    exactly 1. Final grid spacing is dx / 2**(n_u - 1).
    """
    internal = np.asarray(internal, dtype=np.float64).reshape(-1, 3)
    if len(gaussians) == 0 and internal.shape[0] == 0:
        raise InvalidInputError("filling needs at least one gaussian center or internal particle")
    if len(gaussians):
        pts = np.vstack([gaussians.centers, internal]) if internal.size else gaussians.centers
        lo = gaussians.centers.min(axis=0) - 2 * cfg.dx
        hi = gaussians.centers.max(axis=0) + 2 * cfg.dx
    else:
        pts = internal
        lo = internal.min(axis=0) - 2 * cfg.dx
        hi = internal.max(axis=0) + 2 * cfg.dx
    dims = np.maximum(1, np.ceil((hi - lo) / cfg.dx - 1e-9).astype(np.int64))
    field = DensityField(lo, cfg.dx, np.zeros(tuple(dims)))
    for j in range(1, cfg.n_u + 1):
        if j != 1:
            field = upsample_trilinear(field)
            _reassign(field, pts)
        field = mean_filter(field)
        _reassign(field, pts)
    return field


def extract_continuum(field: DensityField, th_min: float) -> np.ndarray:
    """Voxel centers of all voxels with density >= th_min."""
    idx = np.argwhere(field.values >= th_min)
    return field.voxel_centers(idx)


def extract_surface(field: DensityField, th_min: float, th_max: float) -> np.ndarray:
    """Voxel centers with density in [th_min, th_max]; subset of the continuum."""
    if not th_min < th_max:
        raise InvalidInputError("extract_surface requires th_min < th_max")
    idx = np.argwhere((field.values >= th_min) & (field.values <= th_max))
    return field.voxel_centers(idx)


def extract_with_surface_mask(field: DensityField, th_min: float, th_max: float):
    """Continuum positions plus a boolean mask flagging the surface subset."""
    if not th_min < th_max:
        raise InvalidInputError("extract_with_surface_mask requires th_min < th_max")
    idx = np.argwhere(field.values >= th_min)
    vals = field.values[idx[:, 0], idx[:, 1], idx[:, 2]]
    return field.voxel_centers(idx), vals <= th_max


def make_gaussian_informed(
    continuum: np.ndarray, field: DensityField, cfg: FillConfig
) -> GicParticleSet:
    """Attach splat scale dx/2**n_u and per-voxel opacity to continuum points."""
    pts = np.atleast_2d(np.asarray(continuum, dtype=np.float64))
    if pts.shape[0] == 0:
        raise InvalidInputError("cannot build particles from an empty continuum")
    extent = np.asarray(field.dims) * field.cell_size
    rel = pts - field.origin
    if np.any(rel < 0) or np.any(rel >= extent + 1e-12):
        raise InvalidInputError("continuum point outside the density field bounds")
    i, j, k = discretize(field, pts).T
    opac = field.values[i, j, k]
    return GicParticleSet(pts.copy(), cfg.particle_scale, opac)
