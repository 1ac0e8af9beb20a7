import numpy as np
import pytest

from gicsim.errors import InvalidInputError
from gicsim.geometry import GaussianPointSet, GicParticleSet
from gicsim.splat import (
    ALPHA_CLAMP,
    COV_REGULARIZATION,
    CUTOFF_MAHALANOBIS_SQ,
    Camera,
    project_gaussian,
    render,
    render_depth_only,
)


def simple_camera(width=64, height=64, focal=80.0, pixel_centered=False):
    # pixel_centered puts the principal point on a pixel center so a splat on
    # the optical axis is evaluated exactly at its projected mean
    off = 0.5 if pixel_centered else 0.0
    intr = np.array([[focal, 0, width / 2.0 + off], [0, focal, height / 2.0 + off], [0, 0, 1]])
    return Camera(np.eye(4), intr, width, height)


def point_set(centers, scales, opacities, colors=None):
    centers = np.atleast_2d(centers)
    n = len(centers)
    if colors is None:
        colors = np.ones((n, 3))
    return GaussianPointSet(centers, scales, opacities, colors)


# --- oracle: per-pixel blend over all splats with the same windowing rule ----

def render_mask_oracle(points, camera):
    rot = camera.extrinsic[:3, :3]
    trans = camera.extrinsic[:3, 3]
    centers, scales, opac = points.centers, points.scales, points.opacities
    pc = centers @ rot.T + trans
    order = np.argsort(pc[:, 2], kind="stable")
    splats = []
    for s in order:
        if pc[s, 2] <= 1e-6:
            continue
        sp = project_gaussian(centers[s], scales[s], camera)
        splats.append((sp.mean2d, np.linalg.inv(sp.cov2d), opac[s]))
    h, w = camera.height, camera.width
    mask = np.zeros((h, w))
    prod = np.ones((h, w))
    for py in range(h):
        for px in range(w):
            for mean, icov, op in splats:
                d = np.array([px + 0.5, py + 0.5]) - mean
                q = d @ icov @ d
                if q > CUTOFF_MAHALANOBIS_SQ:
                    continue
                alpha = min(op * np.exp(-0.5 * q), ALPHA_CLAMP)
                prod[py, px] *= 1 - alpha
            mask[py, px] = 1 - prod[py, px]
    return mask


# --- projection ---------------------------------------------------------------

def test_project_on_axis_cov():
    cam = simple_camera(focal=100.0)
    s = 0.02
    sp = project_gaussian([0, 0, 1.0], s, cam)
    expected = (100.0 * s) ** 2 * np.eye(2) + COV_REGULARIZATION * np.eye(2)
    assert np.allclose(sp.cov2d, expected, atol=1e-12)
    assert sp.depth == pytest.approx(1.0)


def test_project_principal_point():
    cam = simple_camera()
    sp = project_gaussian([0, 0, 2.0], 0.01, cam)
    assert np.allclose(sp.mean2d, [32.0, 32.0])


def test_project_culled():
    cam = simple_camera()
    assert project_gaussian([0, 0, -1.0], 0.01, cam) is None
    assert project_gaussian([0, 0, 0.0], 0.01, cam) is None


def test_project_matches_fd_jacobian():
    rng = np.random.default_rng(0)
    for _ in range(10):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = rng.uniform(0, np.pi)
        K = np.eye(3) + np.sin(ang) * _skew(axis) + (1 - np.cos(ang)) * (_skew(axis) @ _skew(axis))
        ext = np.eye(4)
        ext[:3, :3] = K
        ext[:3, 3] = rng.uniform(-0.5, 0.5, 3)
        cam = Camera(ext, [[90, 0, 32], [0, 85, 30], [0, 0, 1]], 64, 64)
        center = rng.uniform(-0.3, 0.3, 3) + np.array([0, 0, 0])
        center = K.T @ (np.array([0, 0, 2.5]) - ext[:3, 3])  # keep in front
        center += rng.uniform(-0.2, 0.2, 3)
        scale = rng.uniform(0.005, 0.05)
        sp = project_gaussian(center, scale, cam)

        def proj(p):
            t = ext[:3, :3] @ p + ext[:3, 3]
            uvw = cam.intrinsic @ t
            return uvw[:2] / t[2]

        eps = 1e-6
        J = np.zeros((2, 3))
        for c in range(3):
            dp = np.zeros(3)
            dp[c] = eps
            J[:, c] = (proj(center + dp) - proj(center - dp)) / (2 * eps)
        cov_fd = scale ** 2 * (J @ J.T) + COV_REGULARIZATION * np.eye(2)
        assert np.linalg.norm(sp.cov2d - cov_fd) <= 1e-4 * np.linalg.norm(cov_fd)
        assert np.allclose(sp.mean2d, proj(center), atol=1e-9)


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


# --- rendering ------------------------------------------------------------------

def test_single_opaque_splat_center_mask():
    cam = simple_camera(pixel_centered=True)
    pts = point_set([[0, 0, 2.0]], [0.05], [1.0])
    out = render(pts, cam)
    # opacity 1 clamps to 0.99 and the pixel sits exactly on the mean
    assert out.mask[32, 32] == pytest.approx(ALPHA_CLAMP, abs=1e-12)


def test_two_coincident_splats_blend():
    cam = simple_camera(pixel_centered=True)
    a, b = 0.4, 0.3
    pts = point_set([[0, 0, 2.0], [0, 0, 2.0]], [0.05, 0.05], [a, b])
    out = render(pts, cam)
    # q = 0 at the aligned pixel, so the blended mask is a + (1 - a) b
    assert out.mask[32, 32] == pytest.approx(a + (1 - a) * b, abs=1e-12)


def _center_q(cam, scale, depth):
    # Mahalanobis offset of the evaluated pixel center vs the projected mean
    sp = project_gaussian([0, 0, depth], scale, cam)
    px = int(np.floor(sp.mean2d[0]))
    py = int(np.floor(sp.mean2d[1]))
    d = np.array([px + 0.5, py + 0.5]) - sp.mean2d
    return d @ np.linalg.inv(sp.cov2d) @ d


def test_mask_product_identity():
    rng = np.random.default_rng(1)
    cam = simple_camera(32, 32, focal=40.0)
    centers = rng.uniform(-0.35, 0.35, size=(40, 3))
    centers[:, 2] = rng.uniform(1.0, 3.0, 40)
    pts = point_set(centers, rng.uniform(0.01, 0.08, 40), rng.uniform(0.05, 1.0, 40))
    out = render(pts, cam)
    oracle = render_mask_oracle(pts, cam)
    assert np.max(np.abs(out.mask - oracle)) < 1e-6


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    cam = simple_camera(48, 48)
    centers = rng.uniform(-0.3, 0.3, size=(25, 3))
    centers[:, 2] = rng.uniform(1.0, 3.0, 25)
    scales = rng.uniform(0.01, 0.06, 25)
    opac = rng.uniform(0.1, 1.0, 25)
    colors = rng.uniform(0, 1, size=(25, 3))
    out1 = render(point_set(centers, scales, opac, colors), cam)
    perm = rng.permutation(25)
    out2 = render(point_set(centers[perm], scales[perm], opac[perm], colors[perm]), cam)
    assert np.array_equal(out1.mask, out2.mask)
    assert np.array_equal(out1.color, out2.color)
    assert np.array_equal(out1.depth, out2.depth)


def test_opacity_monotonicity():
    rng = np.random.default_rng(3)
    cam = simple_camera(32, 32, focal=40.0)
    centers = rng.uniform(-0.3, 0.3, size=(10, 3))
    centers[:, 2] = rng.uniform(1.0, 2.5, 10)
    scales = rng.uniform(0.02, 0.07, 10)
    opac = rng.uniform(0.1, 0.8, 10)
    base = render(point_set(centers, scales, opac), cam).mask
    for bump_idx in (0, 4, 9):
        opac2 = opac.copy()
        opac2[bump_idx] = min(1.0, opac2[bump_idx] + 0.15)
        bumped = render(point_set(centers, scales, opac2), cam).mask
        assert np.all(bumped >= base - 1e-12)


def test_occlusion():
    cam = simple_camera(pixel_centered=True)
    near_far = point_set([[0, 0, 1.0], [0, 0, 3.0]], [0.05, 0.05], [1.0, 1.0],
                         colors=np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
    out = render(near_far, cam)
    # far white splat behind an alpha-clamped near black splat: <= 1% leak
    assert out.color[32, 32, 0] <= 0.01


def test_render_empty_raises():
    cam = simple_camera()
    with pytest.raises(InvalidInputError):
        render(GaussianPointSet(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros((0, 3))), cam)


def test_render_gic_particles():
    cam = simple_camera()
    gic = GicParticleSet(np.array([[0, 0, 2.0]]), 0.05, np.array([0.9]))
    out = render(gic, cam)
    assert out.mask.max() > 0.5


# --- depth -----------------------------------------------------------------------

def test_depth_single_splat():
    cam = simple_camera()
    pts = point_set([[0, 0, 2.0]], [0.05], [1.0])
    depth = render_depth_only(pts, cam)
    assert depth[32, 32] == pytest.approx(2.0, abs=1e-3)


def test_depth_empty_scene_is_inf():
    cam = simple_camera()
    pts = point_set([[0, 0, -5.0]], [0.05], [1.0])     # behind the camera
    depth = render_depth_only(pts, cam)
    assert np.all(np.isinf(depth))


def test_depth_plane_median():
    rng = np.random.default_rng(4)
    xy = rng.uniform(-1.5, 1.5, size=(4000, 2))
    centers = np.column_stack([xy, np.full(len(xy), 3.0)])
    pts = point_set(centers, np.full(len(xy), 0.05), np.ones(len(xy)))
    cam = simple_camera()
    depth = render_depth_only(pts, cam)
    finite = depth[np.isfinite(depth)]
    assert len(finite) > 0.9 * depth.size
    assert 2.99 <= np.median(finite) <= 3.01
