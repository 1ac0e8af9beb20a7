import numpy as np
import pytest

from gicsim.errors import DivergedProbeError, InvalidInputError
from gicsim.geometry import FillConfig
from gicsim.identify import (
    Adam,
    AdamParams,
    IdentConfig,
    Observation,
    RolloutEvaluator,
    centroid_velocity_estimate,
    estimate_velocity,
    fd_gradient,
    identify,
    make_material,
    rollout_loss,
    rollout_loss_components,
)
from gicsim.materials import MaterialSpec
from gicsim.solver import Trajectory
from gicsim.synthetic import (
    camera_ring,
    drop_scene_config,
    generate_observation,
    make_ball_object,
)


def tiny_setup(radius=0.05, drop_height=0.12, n_views=1):
    fill_cfg = FillConfig(dx=0.1, n_u=4)
    gic, smask = make_ball_object([0.0, drop_height, 0.0], radius, fill_cfg)
    cams = camera_ring(n_views, radius=0.7, target=[0.0, 0.08, 0.0], height=0.3,
                       width=72, image_height=72, focal=100.0)
    return gic, smask, cams, drop_scene_config()


# --- Observation validation ----------------------------------------------------

def test_observation_needs_two_frames():
    with pytest.raises(InvalidInputError):
        Observation(np.array([0.0]), [np.zeros((3, 3))])


def test_observation_monotone_times():
    with pytest.raises(InvalidInputError):
        Observation(np.array([0.0, 0.0]), [np.zeros((3, 3))] * 2)


def test_observation_mask_requires_camera():
    with pytest.raises(InvalidInputError):
        Observation(np.array([0.0, 0.1]), [np.zeros((3, 3))] * 2,
                    masks=[[np.zeros((4, 4))]] * 2, cameras=[])


# --- finite differences ----------------------------------------------------------

def test_fd_gradient_constant_zero():
    g = fd_gradient(lambda x: 3.5, np.array([1.0, 2.0]), 0.1)
    assert np.array_equal(g, np.zeros(2))


def test_fd_gradient_quadratic():
    target = np.array([0.3, -1.2, 2.0])

    def loss(x):
        return float(((x - target) ** 2).sum())

    theta = np.array([1.0, 0.0, 1.0])
    g = fd_gradient(loss, theta, 1e-4)
    assert np.max(np.abs(g - 2 * (theta - target))) < 1e-7


def test_fd_gradient_names_diverged_coordinate():
    def loss(x):
        return np.inf if x[1] > 0.55 else 1.0

    with pytest.raises(DivergedProbeError) as err:
        fd_gradient(loss, np.array([0.0, 0.5]), 0.1, names=["a", "b"])
    assert "b" in str(err.value)


def test_adam_converges_on_bowl():
    target = np.array([2.0, -1.0])
    x = np.zeros(2)
    adam = Adam(np.full(2, 0.1))
    for _ in range(400):
        g = 2 * (x - target)
        x = adam.step(x, g)
    assert np.max(np.abs(x - target)) < 1e-3


# --- rollout loss ------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_scene():
    gic, smask, cams, sim_cfg = tiny_setup()
    truth = MaterialSpec(kind="elastic", E=2e5, nu=0.3, v0=np.array([0.1, -0.6, 0.0]))
    obs, traj = generate_observation(gic, smask, truth, sim_cfg, cams, frames=4)
    return gic, smask, cams, sim_cfg, truth, obs, traj


def test_rollout_loss_zero_at_source(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    total, cd, mask = rollout_loss_components(traj, gic, obs)
    assert total == 0.0 and cd == 0.0 and mask == 0.0


def test_rollout_loss_translation_monotone(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    losses = []
    for delta in (0.0, 0.01, 0.02):
        shifted = Trajectory(traj.times, traj.positions + np.array([delta, 0, 0]),
                             traj.surface_mask, traj.frame_dt, traj.dt)
        losses.append(rollout_loss(shifted, gic, obs))
    assert losses[0] < losses[1] < losses[2]


def test_rollout_loss_single_frame_reduction(tiny_scene):
    from gicsim.geometry import GicParticleSet
    from gicsim.metrics import chamfer_distance, mask_l1
    from gicsim.splat import render

    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    short = Observation(obs.times[:2], obs.surfaces[:2], obs.masks[:2], obs.cameras)
    shifted = Trajectory(traj.times, traj.positions + 0.004, traj.surface_mask,
                         traj.frame_dt, traj.dt)
    total = rollout_loss(shifted, gic, short)
    moved = GicParticleSet(shifted.positions[1], gic.scale, gic.opacities, gic.colors)
    expected = (chamfer_distance(shifted.surface(1), short.surfaces[1])
                + mask_l1(render(moved, cams[0]).mask, short.masks[1][0]))
    assert total == pytest.approx(expected, rel=1e-12)


def test_rollout_loss_misaligned_times(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    bad = Observation(obs.times + 0.013, obs.surfaces, obs.masks, obs.cameras)
    with pytest.raises(InvalidInputError):
        rollout_loss(traj, gic, bad)


def test_rollout_loss_without_masks(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    bare = Observation(obs.times, obs.surfaces)
    total, cd, mask = rollout_loss_components(traj, gic, bare)
    assert mask == 0.0
    assert total == cd


# --- velocity estimation --------------------------------------------------------------

def test_centroid_warm_start_formula(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    v = centroid_velocity_estimate(obs)
    expected = (obs.surfaces[1].mean(axis=0) - obs.surfaces[0].mean(axis=0)) / (
        obs.times[1] - obs.times[0])
    assert np.array_equal(v, expected)


def test_estimate_velocity_stationary():
    fill_cfg = FillConfig(dx=0.1, n_u=4)
    gic, smask = make_ball_object([0.0, 0.049, 0.0], 0.05, fill_cfg)
    cams = camera_ring(1, radius=0.7, target=[0.0, 0.05, 0.0], height=0.3,
                       width=72, image_height=72, focal=100.0)
    sim_cfg = drop_scene_config()
    mat = MaterialSpec(kind="elastic", E=2e5, nu=0.3)
    obs, _ = generate_observation(gic, smask, mat, sim_cfg, cams, frames=3)
    cfg = IdentConfig(velocity_iterations=4)
    v0 = estimate_velocity(obs, gic, mat, cfg, sim_cfg, smask)
    assert np.linalg.norm(v0) < 0.02


def test_estimate_velocity_needs_frames(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    short = Observation(obs.times[:2], obs.surfaces[:2], obs.masks[:2], obs.cameras)
    cfg = IdentConfig(velocity_frames=3)
    with pytest.raises(InvalidInputError):
        estimate_velocity(short, gic, truth, cfg, sim_cfg, smask)


# --- identify ---------------------------------------------------------------------------

def test_identify_zero_iterations_returns_init(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    cfg = IdentConfig(adam=AdamParams(iterations=0), velocity_iterations=0)
    res = identify(obs, gic, "elastic", cfg, sim_cfg, surface_mask=smask, truth=truth)
    assert res.theta_hat.E == pytest.approx(316227.77)
    assert res.theta_hat.nu == pytest.approx(0.25)
    assert len(res.loss_history) == 1
    assert np.isfinite(res.loss_history[0])
    assert res.mae_x100 is not None
    assert res.mae_x100["log10_E"] == pytest.approx(
        100 * abs(np.log10(316227.77) - np.log10(2e5)))
    # warm start only: centroid displacement rate
    assert np.array_equal(res.v0_hat,
                          np.clip(centroid_velocity_estimate(obs), -5.0, 5.0))


def test_identify_rejects_unknown_kind(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    with pytest.raises(InvalidInputError):
        identify(obs, gic, "jelly", IdentConfig(), sim_cfg)


def test_evaluator_counts_rollouts(tiny_scene):
    gic, smask, cams, sim_cfg, truth, obs, traj = tiny_scene
    ev = RolloutEvaluator(gic, smask, obs, sim_cfg)
    ev(truth)
    ev(make_material("elastic", {"E": 1e5, "nu": 0.3}, v0=truth.v0))
    assert ev.rollouts == 2
