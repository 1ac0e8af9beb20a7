"""Two-stage physical parameter estimation.

Stage 1 estimates the initial velocity from the first few observed frames
(warm-started at the centroid displacement rate); stage 2 runs Adam on the
material parameters using central finite-difference gradients of the rollout
loss. Stiffness-like parameters are optimized in log10 space; every
parameter is projected to declared bounds after each step; the best-loss
iterate is returned, never the last.

The rollout loss averages, over observed frames, the chamfer distance
between simulated and observed surfaces plus the mean over views of the L1
mask discrepancy, the mask rendered from the advected continuum particles.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DivergedError,
    DivergedProbeError,
    IdentificationFailedError,
    InvalidInputError,
)
from .geometry import GicParticleSet
from .materials import MaterialSpec
from .metrics import chamfer_distance, mask_l1
from .solver import SimConfig, Trajectory, simulate, stable_config
from .splat import render


@dataclass
class Observation:
    """Observed per-frame surfaces and (optionally) per-view masks."""

    times: np.ndarray                # (M,) seconds, ascending, times[0] = start
    surfaces: list                   # M point clouds (Ni, 3)
    masks: list = None               # M lists of per-view float images, or None
    cameras: list = None             # one Camera per view

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if len(self.times) < 2:
            raise InvalidInputError("an observation needs at least two frames")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("observation times must be strictly increasing")
        if len(self.surfaces) != len(self.times):
            raise InvalidInputError("one surface cloud per observed frame required")
        self.surfaces = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in self.surfaces]
        if self.masks is not None:
            if self.cameras is None or len(self.cameras) == 0:
                raise InvalidInputError("masks require at least one camera")
            if len(self.masks) != len(self.times):
                raise InvalidInputError("one mask list per observed frame required")
            for per_view in self.masks:
                if len(per_view) != len(self.cameras):
                    raise InvalidInputError("mask count must match camera count")
                for cam, m in zip(self.cameras, per_view):
                    if m.shape != (cam.height, cam.width):
                        raise InvalidInputError("mask resolution does not match its camera")

    @property
    def num_frames(self):
        return len(self.times)


@dataclass
class AdamParams:
    lr_log: float = 0.05             # log10-domain entries
    lr_linear: float = 0.01          # linear-domain entries (nu, v0)
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 50


@dataclass
class IdentConfig:
    adam: AdamParams = field(default_factory=AdamParams)
    velocity_frames: int = 3
    velocity_iterations: int = 40
    fd_step_v0: float = 0.02         # m/s
    v0_bound: float = 5.0
    mask_weight: float = 1.0         # 0 disables mask supervision in the objective
    seed: int = 0
    fd_overrides: dict = None        # per-parameter fd step overrides

    def __post_init__(self):
        if self.velocity_frames < 1:
            raise InvalidInputError("velocity_frames must be >= 1")
        if self.fd_step_v0 <= 0:
            raise InvalidInputError("fd_step_v0 must be positive")


@dataclass
class ParamSpec:
    name: str
    log: bool
    lo: float                        # bounds in the optimization domain
    hi: float
    fd: float                        # central-difference half step
    lr: float = None                 # None: AdamParams default for the domain

    def encode(self, value: float) -> float:
        return float(np.log10(value)) if self.log else float(value)

    def decode(self, x: float) -> float:
        return float(10.0 ** x) if self.log else float(x)


PARAM_SPECS = {
    "elastic": (
        ParamSpec("E", True, 1.0, 8.0, 0.02),
        ParamSpec("nu", False, 0.05, 0.45, 0.01),
    ),
    "plasticine": (
        ParamSpec("E", True, 1.0, 8.0, 0.02),
        ParamSpec("nu", False, 0.05, 0.45, 0.01),
        ParamSpec("tau_y", True, 0.0, 6.0, 0.02),
    ),
    # 0.01 deg/iter cannot traverse the friction-angle range; use 1 deg
    "granular": (ParamSpec("theta_fric", False, 5.0, 85.0, 0.5, lr=1.0),),
    "newtonian": (
        ParamSpec("mu_fluid", True, -1.0, 4.0, 0.02),
        ParamSpec("kappa", True, 1.0, 8.0, 0.02),
    ),
    "non_newtonian": (
        ParamSpec("mu_shear", True, 1.0, 8.0, 0.02),
        ParamSpec("kappa", True, 1.0, 8.0, 0.02),
        ParamSpec("tau_y", True, 0.0, 6.0, 0.02),
        ParamSpec("eta", True, -2.0, 4.0, 0.02),
    ),
}

INIT_GUESSES = {
    "elastic": {"E": 316227.77, "nu": 0.25},
    "plasticine": {"E": 1.0e4, "nu": 0.25, "tau_y": 1.0e3},
    "granular": {"theta_fric": 10.0},
    "newtonian": {"mu_fluid": 10.0, "kappa": 1.0e4},
    "non_newtonian": {"mu_shear": 100.0, "kappa": 1.0e5, "tau_y": 10.0, "eta": 1.0},
}


@dataclass
class IdentResult:
    theta_hat: MaterialSpec
    v0_hat: np.ndarray
    loss_history: np.ndarray         # per accepted iterate, starting at the init guess
    cd_history: np.ndarray
    mask_history: np.ndarray
    seed: int
    wall_time_s: float
    theta_init: MaterialSpec = None
    mae_x100: dict = None            # per-parameter |estimate - truth| * 100


class Adam:
    """Adam with per-coordinate learning rates."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = np.asarray(lr, dtype=np.float64)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros_like(self.lr)
        self.v = np.zeros_like(self.lr)
        self.t = 0

    def step(self, x, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _frame_indices(traj: Trajectory, obs: Observation):
    """Trajectory frame index for each observed time after the start."""
    pairs = []
    t0 = traj.times[0]
    for i, t in enumerate(obs.times):
        if t <= t0 + traj.dt / 2:
            continue
        k = int(round((t - t0) / traj.frame_dt))
        if k < 0 or k >= traj.num_frames or abs(traj.times[k] - t) > traj.dt / 2:
            raise InvalidInputError(
                f"observation time {t:.6f}s does not align with any trajectory frame")
        pairs.append((i, k))
    if not pairs:
        raise InvalidInputError("no observed frames after the trajectory start")
    return pairs


def rollout_loss_components(traj: Trajectory, gic: GicParticleSet, obs: Observation,
                            mask_weight: float = 1.0):
    """(total, chamfer term, mask term) of the rollout discrepancy."""
    pairs = _frame_indices(traj, obs)
    cd_sum = 0.0
    mask_sum = 0.0
    use_masks = obs.masks is not None
    for i, k in pairs:
        cd_sum += chamfer_distance(traj.surface(k), obs.surfaces[i])
        if use_masks:
            moved = GicParticleSet(traj.positions[k], gic.scale, gic.opacities, gic.colors)
            per_view = 0.0
            for j, cam in enumerate(obs.cameras):
                per_view += mask_l1(render(moved, cam).mask, obs.masks[i][j])
            mask_sum += per_view / len(obs.cameras)
    m = len(pairs)
    cd_term = cd_sum / m
    mask_term = mask_sum / m
    return cd_term + mask_weight * mask_term, cd_term, mask_term


def rollout_loss(traj: Trajectory, gic: GicParticleSet, obs: Observation,
                 mask_weight: float = 1.0) -> float:
    return rollout_loss_components(traj, gic, obs, mask_weight)[0]


class RolloutEvaluator:
    """Loss of a material hypothesis against an observation.

    Runs the simulator from the stored continuum, renders masks along the
    trajectory, and returns the loss components. Diverged rollouts yield an
    infinite loss rather than raising.
    """

    def __init__(self, gic, surface_mask, obs, sim_cfg: SimConfig,
                 mask_weight: float = 1.0, frames: int = None):
        self.gic = gic
        self.surface_mask = surface_mask
        self.obs = obs
        self.sim_cfg = sim_cfg
        self.mask_weight = mask_weight
        span = obs.times[-1] - obs.times[0]
        self.frames = frames if frames is not None else int(round(span / sim_cfg.frame_dt))
        self.rollouts = 0

    def components(self, mat: MaterialSpec):
        self.rollouts += 1
        cfg = stable_config(self.sim_cfg, mat)
        try:
            traj = simulate(self.gic, mat, cfg, self.frames, self.surface_mask)
        except DivergedError:
            return np.inf, np.inf, np.inf
        return rollout_loss_components(traj, self.gic, self.obs, self.mask_weight)

    def __call__(self, mat: MaterialSpec) -> float:
        return self.components(mat)[0]


def fd_gradient(loss_fn, theta: np.ndarray, fd_step, names=None) -> np.ndarray:
    """Central finite differences of loss_fn at theta (optimization domain)."""
    theta = np.asarray(theta, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(fd_step, dtype=np.float64), theta.shape)
    if np.any(steps <= 0):
        raise InvalidInputError("fd_step must be positive")
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        hi = theta.copy()
        hi[i] += steps[i]
        lo = theta.copy()
        lo[i] -= steps[i]
        f_hi = loss_fn(hi)
        f_lo = loss_fn(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            label = names[i] if names else str(i)
            raise DivergedProbeError("finite-difference probe diverged", coordinate=label)
        grad[i] = (f_hi - f_lo) / (2.0 * steps[i])
    return grad


def centroid_velocity_estimate(obs: Observation) -> np.ndarray:
    """Displacement rate of the surface centroid over the first frame gap."""
    c0 = obs.surfaces[0].mean(axis=0)
    c1 = obs.surfaces[1].mean(axis=0)
    return (c1 - c0) / (obs.times[1] - obs.times[0])


def _restrict_frames(obs: Observation, count: int) -> Observation:
    """Observation limited to the start state plus the first `count` frames."""
    n = min(count + 1, obs.num_frames)
    masks = obs.masks[:n] if obs.masks is not None else None
    return Observation(obs.times[:n], obs.surfaces[:n], masks, obs.cameras)


def estimate_velocity(obs: Observation, gic: GicParticleSet, mat_guess: MaterialSpec,
                      cfg: IdentConfig, sim_cfg: SimConfig,
                      surface_mask=None) -> np.ndarray:
    """Initial velocity minimizing the early-frame rollout loss.

    Adam over the three velocity components with the material held at the
    init guess, warm-started at the centroid displacement rate.
    """
    if obs.num_frames - 1 < cfg.velocity_frames:
        raise InvalidInputError(
            f"velocity estimation needs {cfg.velocity_frames} frames, observation has "
            f"{obs.num_frames - 1}")
    early = _restrict_frames(obs, cfg.velocity_frames)
    evaluator = RolloutEvaluator(gic, surface_mask, early, sim_cfg, cfg.mask_weight)
    v = np.clip(centroid_velocity_estimate(obs), -cfg.v0_bound, cfg.v0_bound)
    names = ["v0_x", "v0_y", "v0_z"]

    def loss_at(vel):
        return evaluator(replace(mat_guess, v0=vel))

    best_v = v.copy()
    best_loss = loss_at(v)
    if not np.isfinite(best_loss):
        raise IdentificationFailedError(
            "velocity estimation diverged at the warm-start velocity")
    adam = Adam(np.full(3, cfg.adam.lr_linear), cfg.adam.beta1, cfg.adam.beta2)
    for _ in range(cfg.velocity_iterations):
        base = np.clip(v, -cfg.v0_bound + cfg.fd_step_v0, cfg.v0_bound - cfg.fd_step_v0)
        grad = fd_gradient(loss_at, base, cfg.fd_step_v0, names)
        v = np.clip(adam.step(v, grad), -cfg.v0_bound, cfg.v0_bound)
        loss = loss_at(v)
        if loss < best_loss:
            best_loss = loss
            best_v = v.copy()
    return best_v


def make_material(kind: str, values: dict, v0=(0.0, 0.0, 0.0),
                  density: float = None) -> MaterialSpec:
    """MaterialSpec from a parameter dict, filling defaults for the kind."""
    kwargs = dict(values)
    if density is not None:
        kwargs["density"] = density
    return MaterialSpec(kind=kind, v0=np.asarray(v0, dtype=np.float64), **kwargs)


def _encode(mat: MaterialSpec, specs) -> np.ndarray:
    return np.array([s.encode(getattr(mat, s.name)) for s in specs])


def _decode(x: np.ndarray, specs, template: MaterialSpec) -> MaterialSpec:
    return replace(template, **{s.name: s.decode(xi) for s, xi in zip(specs, x)})


def identify(obs: Observation, gic: GicParticleSet, kind: str, cfg: IdentConfig,
             sim_cfg: SimConfig, surface_mask=None, init_guess: dict = None,
             truth: MaterialSpec = None, density: float = None) -> IdentResult:
    """Stage-1 velocity estimation then stage-2 Adam on the material vector."""
    if kind not in PARAM_SPECS:
        raise InvalidInputError(f"unknown material kind {kind!r}")
    t_start = time.perf_counter()
    specs = PARAM_SPECS[kind]
    values = dict(INIT_GUESSES[kind])
    if init_guess:
        values.update(init_guess)
    template = make_material(kind, values, density=density)
    v0_hat = estimate_velocity(obs, gic, template, cfg, sim_cfg, surface_mask)
    template = replace(template, v0=v0_hat)

    evaluator = RolloutEvaluator(gic, surface_mask, obs, sim_cfg, cfg.mask_weight)
    lo = np.array([s.lo for s in specs])
    hi = np.array([s.hi for s in specs])
    fd = np.array([s.fd for s in specs])
    if cfg.fd_overrides:
        for i, s in enumerate(specs):
            fd[i] = cfg.fd_overrides.get(s.name, fd[i])
    lr = np.array([
        s.lr if s.lr is not None else (cfg.adam.lr_log if s.log else cfg.adam.lr_linear)
        for s in specs
    ])
    names = [s.name for s in specs]

    def loss_components_at(x):
        return evaluator.components(_decode(x, specs, template))

    x = np.clip(_encode(template, specs), lo, hi)
    total, cd, mk = loss_components_at(x)
    if not np.isfinite(total):
        raise IdentificationFailedError(
            "rollout diverged at the init guess; check simulation configuration")
    history = [(total, cd, mk)]
    best_x = x.copy()
    best_loss = total
    adam = Adam(lr, cfg.adam.beta1, cfg.adam.beta2)
    for _ in range(cfg.adam.iterations):
        base = np.clip(x, lo + fd, hi - fd)
        grad = fd_gradient(lambda xv: loss_components_at(xv)[0], base, fd, names)
        x = np.clip(adam.step(x, grad), lo, hi)
        total, cd, mk = loss_components_at(x)
        history.append((total, cd, mk))
        if total < best_loss:
            best_loss = total
            best_x = x.copy()

    theta_hat = _decode(best_x, specs, template)
    hist = np.asarray(history)
    mae = _mae_report(theta_hat, v0_hat, truth, specs) if truth is not None else None
    return IdentResult(
        theta_hat=theta_hat, v0_hat=v0_hat,
        loss_history=hist[:, 0], cd_history=hist[:, 1], mask_history=hist[:, 2],
        seed=cfg.seed, wall_time_s=time.perf_counter() - t_start,
        theta_init=make_material(kind, values, density=density), mae_x100=mae,
    )


def _mae_report(theta_hat: MaterialSpec, v0_hat, truth: MaterialSpec, specs) -> dict:
    """Per-parameter absolute errors scaled by 100.

    Log-domain parameters report |log10 ratio|; the friction angle reports
    radians; velocity reports the mean absolute component error.
    """
    out = {}
    for s in specs:
        est = getattr(theta_hat, s.name)
        ref = getattr(truth, s.name)
        if s.log:
            err = abs(np.log10(est) - np.log10(ref))
            key = f"log10_{s.name}"
        elif s.name == "theta_fric":
            err = abs(np.radians(est) - np.radians(ref))
            key = "theta_fric_rad"
        else:
            err = abs(est - ref)
            key = s.name
        out[key] = float(err * 100.0)
    out["v0"] = float(np.abs(np.asarray(v0_hat) - truth.v0).mean() * 100.0)
    return out
