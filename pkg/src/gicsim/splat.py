"""Software splatting of isotropic Gaussians.

Projects 3D Gaussians through the affine approximation of the perspective
map and composites them front-to-back into color, foreground-mask, and depth
images. Splats are evaluated within 3 sigma of their projected mean; alpha
is clamped at 0.99 so transmittance stays positive; 0.3 px^2 is added to the
projected covariance diagonal against sub-pixel aliasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidInputError
from .geometry import GaussianPointSet, GicParticleSet

ALPHA_CLAMP = 0.99
COV_REGULARIZATION = 0.3             # px^2 added to the cov2d diagonal
CUTOFF_MAHALANOBIS_SQ = 9.0          # 3 sigma evaluation window
DEFAULT_NEAR = 1e-6


@dataclass
class Camera:
    """Pinhole camera: 4x4 world-to-camera extrinsic, 3x3 intrinsic (pixels)."""

    extrinsic: np.ndarray
    intrinsic: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64).reshape(4, 4)
        self.intrinsic = np.asarray(self.intrinsic, dtype=np.float64).reshape(3, 3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not np.allclose(self.extrinsic[3], [0, 0, 0, 1]):
            raise InvalidInputError("extrinsic bottom row must be (0, 0, 0, 1)")
        k = self.intrinsic
        if k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0:
            raise InvalidInputError("intrinsic must be upper triangular")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image dimensions must be positive")


@dataclass
class Splat2D:
    mean2d: np.ndarray               # (2,) pixels
    cov2d: np.ndarray                # (2, 2) px^2, symmetric positive definite
    depth: float                     # camera-space z
    opacity: float
    color: np.ndarray                # (3,)


@dataclass
class RenderOutput:
    color: np.ndarray                # (H, W, 3)
    mask: np.ndarray                 # (H, W) in [0, 1]
    depth: np.ndarray                # (H, W) accumulated depth


def project_gaussian(center, scale, camera: Camera, near: float = DEFAULT_NEAR):
    """Project one Gaussian; returns a Splat2D, or None when culled by near.

    cov2d = (J R) Sigma0 (J R)^T for Sigma0 = scale^2 I, with J the Jacobian
    of the pixel projection at the camera-space point.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    rot = camera.extrinsic[:3, :3]
    t = rot @ center + camera.extrinsic[:3, 3]
    if t[2] <= near:
        return None
    mean, cov = _project_one(t, float(scale), camera.intrinsic)
    return Splat2D(mean, cov, float(t[2]), 1.0, np.ones(3))


def _project_one(t, scale, intrinsic):
    fx, skew, cx = intrinsic[0]
    fy, cy = intrinsic[1, 1], intrinsic[1, 2]
    z = t[2]
    u = (fx * t[0] + skew * t[1]) / z + cx
    v = fy * t[1] / z + cy
    jac = np.array([
        [fx / z, skew / z, -(fx * t[0] + skew * t[1]) / (z * z)],
        [0.0, fy / z, -fy * t[1] / (z * z)],
    ])
    cov = (scale * scale) * (jac @ jac.T) + COV_REGULARIZATION * np.eye(2)
    return np.array([u, v]), cov


def _project_batch(centers, scales, camera: Camera, near: float):
    """Vectorized projection; returns per-splat arrays plus a validity mask."""
    rot = camera.extrinsic[:3, :3]
    trans = camera.extrinsic[:3, 3]
    pc = centers @ rot.T + trans
    z = pc[:, 2]
    valid = z > near
    zs = np.where(valid, z, 1.0)
    fx, skew, cx = camera.intrinsic[0]
    fy, cy = camera.intrinsic[1, 1], camera.intrinsic[1, 2]
    num_u = fx * pc[:, 0] + skew * pc[:, 1]
    u = num_u / zs + cx
    v = fy * pc[:, 1] / zs + cy
    # rows of J scaled by the world-to-camera rotation
    j0 = (np.array([fx, skew, 0.0]) / zs[:, None]) - (num_u / zs ** 2)[:, None] * np.array([0, 0, 1.0])
    j1 = (np.array([0.0, fy, 0.0]) / zs[:, None]) - (fy * pc[:, 1] / zs ** 2)[:, None] * np.array([0, 0, 1.0])
    a0 = j0 @ rot
    a1 = j1 @ rot
    s2 = scales ** 2
    caa = s2 * np.einsum("ij,ij->i", a0, a0) + COV_REGULARIZATION
    cab = s2 * np.einsum("ij,ij->i", a0, a1)
    cbb = s2 * np.einsum("ij,ij->i", a1, a1) + COV_REGULARIZATION
    return np.stack([u, v], axis=1), np.stack([caa, cab, cbb], axis=1), z, valid


@njit(cache=True)
def _blend_kernel(mean2d, cov3, depth, opacity, color, height, width,
                  out_color, out_mask, out_depth, trans):
    for s in range(mean2d.shape[0]):
        mx = mean2d[s, 0]
        my = mean2d[s, 1]
        a = cov3[s, 0]
        b = cov3[s, 1]
        c = cov3[s, 2]
        det = a * c - b * b
        if det <= 0.0:
            continue
        ia = c / det
        ib = -b / det
        ic = a / det
        half_tr = 0.5 * (a + c)
        lam_max = half_tr + math.sqrt(max(half_tr * half_tr - det, 0.0))
        r = 3.0 * math.sqrt(lam_max)
        x0 = max(int(math.floor(mx - r)), 0)
        x1 = min(int(math.ceil(mx + r)) + 1, width)
        y0 = max(int(math.floor(my - r)), 0)
        y1 = min(int(math.ceil(my + r)) + 1, height)
        op = opacity[s]
        d = depth[s]
        cr = color[s, 0]
        cg = color[s, 1]
        cb = color[s, 2]
        for py in range(y0, y1):
            dy = (py + 0.5) - my
            for px in range(x0, x1):
                dx = (px + 0.5) - mx
                q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
                if q > CUTOFF_MAHALANOBIS_SQ:
                    continue
                alpha = op * math.exp(-0.5 * q)
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                t = trans[py, px]
                w = t * alpha
                out_color[py, px, 0] += w * cr
                out_color[py, px, 1] += w * cg
                out_color[py, px, 2] += w * cb
                out_mask[py, px] += w
                out_depth[py, px] += w * d
                trans[py, px] = t * (1.0 - alpha)


def _splat_arrays(points):
    if isinstance(points, GaussianPointSet):
        if len(points) == 0:
            raise InvalidInputError("cannot render an empty gaussian set")
        return points.centers, points.scales, points.opacities, points.colors
    if isinstance(points, GicParticleSet):
        if len(points) == 0:
            raise InvalidInputError("cannot render an empty particle set")
        scales = np.full(len(points), points.scale)
        return points.positions, scales, points.opacities, points.colors
    raise InvalidInputError(f"cannot render object of type {type(points).__name__}")


def render(points, camera: Camera, near: float = DEFAULT_NEAR) -> RenderOutput:
    """Composite the point set into color, mask, and depth images.

    Splats are sorted front-to-back (ties broken by input index) and blended
    per pixel with transmittance T_i = prod(1 - alpha_j). Pixels without
    splats stay at 0.
    """
    centers, scales, opacities, colors = _splat_arrays(points)
    mean2d, cov3, z, valid = _project_batch(centers, scales, camera, near)
    order = np.argsort(z[valid], kind="stable")
    mean2d = np.ascontiguousarray(mean2d[valid][order])
    cov3 = np.ascontiguousarray(cov3[valid][order])
    depth = np.ascontiguousarray(z[valid][order])
    opacity = np.ascontiguousarray(opacities[valid][order])
    color = np.ascontiguousarray(colors[valid][order])
    h, w = camera.height, camera.width
    out_color = np.zeros((h, w, 3))
    out_mask = np.zeros((h, w))
    out_depth = np.zeros((h, w))
    trans = np.ones((h, w))
    _blend_kernel(mean2d, cov3, depth, opacity, color, h, w,
                  out_color, out_mask, out_depth, trans)
    return RenderOutput(out_color, out_mask, out_depth)


def render_depth_only(points, camera: Camera, near: float = DEFAULT_NEAR) -> np.ndarray:
    """Alpha-normalized depth map: D/A where the mask exceeds 0.5, else +inf."""
    out = render(points, camera, near)
    covered = out.mask > 0.5
    depth = np.full(out.depth.shape, np.inf)
    depth[covered] = out.depth[covered] / out.mask[covered]
    return depth
