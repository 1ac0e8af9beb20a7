"""Explicit MLS-MPM time integration over continuum particles.

Quadratic B-spline transfers with APIC affine velocity matrices: particles
scatter mass and momentum (plus a Kirchhoff-stress impulse scaled by
-dt * volume * 4 / h^2) to the grid, grid momenta get gravity and boundary
projections, particles gather velocity and affine state back, advect, and
update their deformation gradient through the material's return mapping.
Fluids evolve the volume ratio J instead of a full gradient.

Particle-to-grid scatter runs over a fixed number of chunks, each with a
private grid buffer merged in chunk order, so results are bit-identical for
a fixed chunk count (GIC_DETERMINISTIC=1 pins a single chunk).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit, prange

from .errors import DivergedError, InvalidInputError
from .geometry import GicParticleSet
from .materials import MaterialSpec, drucker_prager_alpha, lame_from_young_poisson
from .svd3 import svd3
from .util import deterministic_mode, thread_count

MAT_ELASTIC = 0
MAT_PLASTICINE = 1
MAT_GRANULAR = 2
MAT_NEWTONIAN = 3
MAT_NON_NEWTONIAN = 4

_MAT_CODES = {
    "elastic": MAT_ELASTIC,
    "plasticine": MAT_PLASTICINE,
    "granular": MAT_GRANULAR,
    "newtonian": MAT_NEWTONIAN,
    "non_newtonian": MAT_NON_NEWTONIAN,
}


def pack_material(mat: MaterialSpec):
    """Material code plus the flat parameter vector the kernels consume."""
    code = _MAT_CODES[mat.kind]
    params = np.zeros(4)
    if code in (MAT_ELASTIC, MAT_PLASTICINE, MAT_GRANULAR):
        mu, lam = lame_from_young_poisson(mat.E, mat.nu)
        params[0] = mu
        params[1] = lam
        if code == MAT_PLASTICINE:
            params[2] = mat.tau_y
        elif code == MAT_GRANULAR:
            params[2] = drucker_prager_alpha(mat.theta_fric)
    elif code == MAT_NEWTONIAN:
        params[0] = mat.mu_fluid
        params[1] = mat.kappa
    else:
        params[0] = mat.mu_shear
        params[1] = mat.kappa
        params[2] = mat.tau_y
        params[3] = mat.eta
    return code, params


@dataclass
class SimConfig:
    dt: float = 1e-4                       # nominal substep, seconds
    substeps_per_frame: int = 100
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, -9.8, 0.0]))
    ground_height: float | None = 0.0      # None disables the ground plane
    ground_friction: float = 0.4
    grid_spacing: float = 0.025            # h, meters
    grid_origin: np.ndarray | None = None
    grid_dims: np.ndarray | None = None
    cfl: float = 0.5                       # dt <= cfl * h / max speed, per substep
    domain_walls: bool = True
    wall_cells: int = 2

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        if self.substeps_per_frame < 1:
            raise InvalidInputError("substeps_per_frame must be >= 1")
        if self.grid_spacing <= 0:
            raise InvalidInputError("grid spacing must be positive")
        self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        if self.grid_origin is not None:
            self.grid_origin = np.asarray(self.grid_origin, dtype=np.float64).reshape(3)
        if self.grid_dims is not None:
            self.grid_dims = np.asarray(self.grid_dims, dtype=np.int64).reshape(3)

    @property
    def frame_dt(self) -> float:
        return self.dt * self.substeps_per_frame


@dataclass
class SimState:
    x: np.ndarray                          # (N, 3) m
    v: np.ndarray                          # (N, 3) m/s
    F: np.ndarray                          # (N, 3, 3)
    C: np.ndarray                          # (N, 3, 3) 1/s
    mass: np.ndarray                       # (N,) kg
    volume: np.ndarray                     # (N,) rest volume m^3
    grid_origin: np.ndarray
    grid_spacing: float
    grid_dims: np.ndarray
    time: float = 0.0
    substeps_done: int = 0

    @property
    def num_particles(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "SimState":
        return SimState(self.x.copy(), self.v.copy(), self.F.copy(), self.C.copy(),
                        self.mass.copy(), self.volume.copy(), self.grid_origin.copy(),
                        self.grid_spacing, self.grid_dims.copy(), self.time,
                        self.substeps_done)


@dataclass
class Trajectory:
    """Per-frame particle positions plus the frame-0 surface membership."""

    times: np.ndarray                      # (K+1,) seconds, including t = 0
    positions: np.ndarray                  # (K+1, N, 3)
    surface_mask: np.ndarray               # (N,) bool
    frame_dt: float
    dt: float

    @property
    def num_frames(self) -> int:
        return len(self.times)

    def surface(self, frame: int) -> np.ndarray:
        return self.positions[frame][self.surface_mask]


def make_state(gic: GicParticleSet, mat: MaterialSpec, cfg: SimConfig) -> SimState:
    """Initial simulation state from a continuum particle set.

    Each particle represents one fine voxel (side twice the splat scale);
    the grid is taken from the config or fitted around the initial cloud.
    """
    if len(gic) == 0:
        raise InvalidInputError("cannot simulate an empty particle set")
    n = len(gic)
    x = gic.positions.copy()
    cell = 2.0 * gic.scale
    volume = np.full(n, cell ** 3)
    mass = mat.density * volume
    h = cfg.grid_spacing
    if cfg.grid_origin is not None and cfg.grid_dims is not None:
        origin = cfg.grid_origin.copy()
        dims = cfg.grid_dims.copy()
    else:
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        margin = np.maximum(12 * h, 1.5 * (hi - lo))
        origin = lo - margin
        if cfg.ground_height is not None:
            origin[1] = min(origin[1], cfg.ground_height - 3 * h)
        dims = np.ceil((hi + margin - origin) / h).astype(np.int64) + 3
    state = SimState(
        x=x, v=np.tile(mat.v0, (n, 1)), F=np.tile(np.eye(3), (n, 1, 1)),
        C=np.zeros((n, 3, 3)), mass=mass, volume=volume,
        grid_origin=origin, grid_spacing=h, grid_dims=dims,
    )
    _check_in_grid(state)
    return state


def _check_in_grid(state: SimState) -> None:
    rel = (state.x - state.grid_origin) / state.grid_spacing
    base = np.floor(rel - 0.5)
    if base.min() < 0 or np.any(base > state.grid_dims - 3):
        raise InvalidInputError("particles outside the background grid interior")


@njit(cache=True, parallel=True)
def _p2g(x, v, C, F, mass, volume, mat, params, dt, origin, h, dims,
         grid_v, grid_m, chunk_bounds):
    nch = chunk_bounds.shape[0] - 1
    for ch in prange(nch):
        for p in range(chunk_bounds[ch], chunk_bounds[ch + 1]):
            tau = _kirchhoff(mat, params, F[p], C[p])
            scale = -dt * volume[p] * 4.0 / (h * h)
            m = mass[p]
            a00 = scale * tau[0, 0] + m * C[p, 0, 0]
            a01 = scale * tau[0, 1] + m * C[p, 0, 1]
            a02 = scale * tau[0, 2] + m * C[p, 0, 2]
            a10 = scale * tau[1, 0] + m * C[p, 1, 0]
            a11 = scale * tau[1, 1] + m * C[p, 1, 1]
            a12 = scale * tau[1, 2] + m * C[p, 1, 2]
            a20 = scale * tau[2, 0] + m * C[p, 2, 0]
            a21 = scale * tau[2, 1] + m * C[p, 2, 1]
            a22 = scale * tau[2, 2] + m * C[p, 2, 2]
            xg = (x[p, 0] - origin[0]) / h
            yg = (x[p, 1] - origin[1]) / h
            zg = (x[p, 2] - origin[2]) / h
            bi = int(math.floor(xg - 0.5))
            bj = int(math.floor(yg - 0.5))
            bk = int(math.floor(zg - 0.5))
            fx = xg - bi
            fy = yg - bj
            fz = zg - bk
            wx0, wx1, wx2 = 0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2
            wy0, wy1, wy2 = 0.5 * (1.5 - fy) ** 2, 0.75 - (fy - 1.0) ** 2, 0.5 * (fy - 0.5) ** 2
            wz0, wz1, wz2 = 0.5 * (1.5 - fz) ** 2, 0.75 - (fz - 1.0) ** 2, 0.5 * (fz - 0.5) ** 2
            for di in range(3):
                wxi = wx0 if di == 0 else (wx1 if di == 1 else wx2)
                dpx = (di - fx) * h
                for dj in range(3):
                    wyj = wy0 if dj == 0 else (wy1 if dj == 1 else wy2)
                    dpy = (dj - fy) * h
                    wxy = wxi * wyj
                    for dk in range(3):
                        wzk = wz0 if dk == 0 else (wz1 if dk == 1 else wz2)
                        w = wxy * wzk
                        dpz = (dk - fz) * h
                        gi = bi + di
                        gj = bj + dj
                        gk = bk + dk
                        grid_v[ch, gi, gj, gk, 0] += w * (m * v[p, 0] + a00 * dpx + a01 * dpy + a02 * dpz)
                        grid_v[ch, gi, gj, gk, 1] += w * (m * v[p, 1] + a10 * dpx + a11 * dpy + a12 * dpz)
                        grid_v[ch, gi, gj, gk, 2] += w * (m * v[p, 2] + a20 * dpx + a21 * dpy + a22 * dpz)
                        grid_m[ch, gi, gj, gk] += w * m


@njit(cache=True, inline="always")
def _det3(F):
    return (F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
            - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
            + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0]))


@njit(cache=True)
def _kirchhoff(mat, params, Fp, Cp):
    tau = np.zeros((3, 3))
    if mat == MAT_ELASTIC:
        mu = params[0]
        lam = params[1]
        J = _det3(Fp)
        diag = lam * math.log(J) - mu
        for i in range(3):
            for j in range(3):
                tau[i, j] = mu * (Fp[i, 0] * Fp[j, 0] + Fp[i, 1] * Fp[j, 1] + Fp[i, 2] * Fp[j, 2])
            tau[i, i] += diag
    elif mat == MAT_PLASTICINE or mat == MAT_GRANULAR:
        mu = params[0]
        lam = params[1]
        # G = (F^T F - I)/2; tau = F (2 mu G + lam tr(G) I) F^T
        G = 0.5 * (Fp.T @ Fp - np.eye(3))
        trg = G[0, 0] + G[1, 1] + G[2, 2]
        S = 2.0 * mu * G
        for i in range(3):
            S[i, i] += lam * trg
        tau = Fp @ S @ Fp.T
    elif mat == MAT_NEWTONIAN:
        mu = params[0]
        kappa = params[1]
        J = _det3(Fp)
        pressure = kappa * (J - J ** (-6.0))
        for i in range(3):
            for j in range(3):
                tau[i, j] = 0.5 * mu * (Cp[i, j] + Cp[j, i])
            tau[i, i] += pressure
    else:                                   # viscoplastic trial stress
        mu = params[0]
        kappa = params[1]
        U, s, V = svd3(Fp)
        e0 = math.log(max(s[0], 1e-300))
        e1 = math.log(max(s[1], 1e-300))
        e2 = math.log(max(s[2], 1e-300))
        tr = e0 + e1 + e2
        mean = tr / 3.0
        t0 = 2.0 * mu * (e0 - mean) + kappa * tr
        t1 = 2.0 * mu * (e1 - mean) + kappa * tr
        t2 = 2.0 * mu * (e2 - mean) + kappa * tr
        for i in range(3):
            for j in range(3):
                tau[i, j] = t0 * U[i, 0] * U[j, 0] + t1 * U[i, 1] * U[j, 1] + t2 * U[i, 2] * U[j, 2]
    return tau


@njit(cache=True, parallel=True)
def _merge_grids(grid_v, grid_m):
    nch = grid_v.shape[0]
    if nch == 1:
        return
    flat_v = grid_v.reshape(nch, -1)
    flat_m = grid_m.reshape(nch, -1)
    for i in prange(flat_m.shape[1]):
        sv0 = flat_v[0, 3 * i]
        sv1 = flat_v[0, 3 * i + 1]
        sv2 = flat_v[0, 3 * i + 2]
        sm = flat_m[0, i]
        for ch in range(1, nch):
            sv0 += flat_v[ch, 3 * i]
            sv1 += flat_v[ch, 3 * i + 1]
            sv2 += flat_v[ch, 3 * i + 2]
            sm += flat_m[ch, i]
        flat_v[0, 3 * i] = sv0
        flat_v[0, 3 * i + 1] = sv1
        flat_v[0, 3 * i + 2] = sv2
        flat_m[0, i] = sm


@njit(cache=True, parallel=True)
def _grid_update(grid_v, grid_m, dt, gravity, origin, h, dims,
                 has_ground, ground_height, ground_friction, walls, wall_cells):
    nx, ny, nz = dims[0], dims[1], dims[2]
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                m = grid_m[0, i, j, k]
                if m <= 0.0:
                    continue
                vx = grid_v[0, i, j, k, 0] / m + dt * gravity[0]
                vy = grid_v[0, i, j, k, 1] / m + dt * gravity[1]
                vz = grid_v[0, i, j, k, 2] / m + dt * gravity[2]
                if has_ground:
                    node_y = origin[1] + j * h
                    if node_y <= ground_height and vy < 0.0:
                        vt = math.sqrt(vx * vx + vz * vz)
                        if vt > 1e-30:
                            k_f = 1.0 - ground_friction * (-vy) / vt
                            if k_f < 0.0:
                                k_f = 0.0
                            vx *= k_f
                            vz *= k_f
                        vy = 0.0
                if walls:
                    if (i < wall_cells and vx < 0.0) or (i >= nx - wall_cells and vx > 0.0):
                        vx = 0.0
                    if (j < wall_cells and vy < 0.0) or (j >= ny - wall_cells and vy > 0.0):
                        vy = 0.0
                    if (k < wall_cells and vz < 0.0) or (k >= nz - wall_cells and vz > 0.0):
                        vz = 0.0
                grid_v[0, i, j, k, 0] = vx
                grid_v[0, i, j, k, 1] = vy
                grid_v[0, i, j, k, 2] = vz


@njit(cache=True)
def _return_map(mat, params, Fp, dt):
    if mat == MAT_PLASTICINE:
        mu = params[0]
        tau_y = params[2]
        U, s, V = svd3(Fp)
        e0 = math.log(max(s[0], 1e-300))
        e1 = math.log(max(s[1], 1e-300))
        e2 = math.log(max(s[2], 1e-300))
        mean = (e0 + e1 + e2) / 3.0
        d0, d1, d2 = e0 - mean, e1 - mean, e2 - mean
        nrm = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        dg = nrm - tau_y / (2.0 * mu)
        if dg <= 0.0:
            return Fp
        h0 = math.exp(e0 - dg * d0 / nrm)
        h1 = math.exp(e1 - dg * d1 / nrm)
        h2 = math.exp(e2 - dg * d2 / nrm)
        return _recompose(U, h0, h1, h2, V)
    if mat == MAT_GRANULAR:
        mu = params[0]
        lam = params[1]
        alpha = params[2]
        U, s, V = svd3(Fp)
        e0 = math.log(max(s[0], 1e-300))
        e1 = math.log(max(s[1], 1e-300))
        e2 = math.log(max(s[2], 1e-300))
        tr = e0 + e1 + e2
        if tr > 0.0:
            return _recompose(U, 1.0, 1.0, 1.0, V)
        mean = tr / 3.0
        d0, d1, d2 = e0 - mean, e1 - mean, e2 - mean
        nrm = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        dg = nrm + alpha * (3.0 * lam + 2.0 * mu) * tr / (2.0 * mu)
        if dg <= 0.0:
            return Fp
        h0 = math.exp(e0 - dg * d0 / nrm)
        h1 = math.exp(e1 - dg * d1 / nrm)
        h2 = math.exp(e2 - dg * d2 / nrm)
        return _recompose(U, h0, h1, h2, V)
    if mat == MAT_NON_NEWTONIAN:
        mu = params[0]
        tau_y = params[2]
        eta = params[3]
        U, s, V = svd3(Fp)
        e0 = math.log(max(s[0], 1e-300))
        e1 = math.log(max(s[1], 1e-300))
        e2 = math.log(max(s[2], 1e-300))
        mean = (e0 + e1 + e2) / 3.0
        d0, d1, d2 = e0 - mean, e1 - mean, e2 - mean
        nrm = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        s_norm = 2.0 * mu * nrm
        dg = s_norm - tau_y
        if dg <= 0.0:
            return Fp
        mu_hat = mu * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) / 3.0
        s_new = s_norm - dg / (1.0 + eta / (2.0 * mu_hat * dt))
        coef = s_new / (2.0 * mu * nrm)
        h0 = math.exp(coef * d0 + mean)
        h1 = math.exp(coef * d1 + mean)
        h2 = math.exp(coef * d2 + mean)
        return _recompose(U, h0, h1, h2, V)
    return Fp


@njit(cache=True, inline="always")
def _recompose(U, h0, h1, h2, V):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = h0 * U[i, 0] * V[j, 0] + h1 * U[i, 1] * V[j, 1] + h2 * U[i, 2] * V[j, 2]
    return out


@njit(cache=True, parallel=True)
def _g2p(x, v, C, F, mat, params, dt, origin, h, grid_v):
    n = x.shape[0]
    for p in prange(n):
        xg = (x[p, 0] - origin[0]) / h
        yg = (x[p, 1] - origin[1]) / h
        zg = (x[p, 2] - origin[2]) / h
        bi = int(math.floor(xg - 0.5))
        bj = int(math.floor(yg - 0.5))
        bk = int(math.floor(zg - 0.5))
        fx = xg - bi
        fy = yg - bj
        fz = zg - bk
        wx0, wx1, wx2 = 0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2
        wy0, wy1, wy2 = 0.5 * (1.5 - fy) ** 2, 0.75 - (fy - 1.0) ** 2, 0.5 * (fy - 0.5) ** 2
        wz0, wz1, wz2 = 0.5 * (1.5 - fz) ** 2, 0.75 - (fz - 1.0) ** 2, 0.5 * (fz - 0.5) ** 2
        nvx = nvy = nvz = 0.0
        b00 = b01 = b02 = b10 = b11 = b12 = b20 = b21 = b22 = 0.0
        for di in range(3):
            wxi = wx0 if di == 0 else (wx1 if di == 1 else wx2)
            dpx = (di - fx) * h
            for dj in range(3):
                wyj = wy0 if dj == 0 else (wy1 if dj == 1 else wy2)
                dpy = (dj - fy) * h
                wxy = wxi * wyj
                for dk in range(3):
                    wzk = wz0 if dk == 0 else (wz1 if dk == 1 else wz2)
                    w = wxy * wzk
                    dpz = (dk - fz) * h
                    gvx = grid_v[0, bi + di, bj + dj, bk + dk, 0]
                    gvy = grid_v[0, bi + di, bj + dj, bk + dk, 1]
                    gvz = grid_v[0, bi + di, bj + dj, bk + dk, 2]
                    nvx += w * gvx
                    nvy += w * gvy
                    nvz += w * gvz
                    b00 += w * gvx * dpx
                    b01 += w * gvx * dpy
                    b02 += w * gvx * dpz
                    b10 += w * gvy * dpx
                    b11 += w * gvy * dpy
                    b12 += w * gvy * dpz
                    b20 += w * gvz * dpx
                    b21 += w * gvz * dpy
                    b22 += w * gvz * dpz
        inv = 4.0 / (h * h)
        v[p, 0] = nvx
        v[p, 1] = nvy
        v[p, 2] = nvz
        C[p, 0, 0] = inv * b00
        C[p, 0, 1] = inv * b01
        C[p, 0, 2] = inv * b02
        C[p, 1, 0] = inv * b10
        C[p, 1, 1] = inv * b11
        C[p, 1, 2] = inv * b12
        C[p, 2, 0] = inv * b20
        C[p, 2, 1] = inv * b21
        C[p, 2, 2] = inv * b22
        x[p, 0] += dt * nvx
        x[p, 1] += dt * nvy
        x[p, 2] += dt * nvz
        if mat == MAT_NEWTONIAN:
            # track the volume ratio only: J <- J (1 + dt tr C)
            J = _det3(F[p]) * (1.0 + dt * (C[p, 0, 0] + C[p, 1, 1] + C[p, 2, 2]))
            c = J ** (1.0 / 3.0) if J > 0.0 else -1.0
            for i in range(3):
                for j in range(3):
                    F[p, i, j] = 0.0
            if c > 0.0:
                F[p, 0, 0] = c
                F[p, 1, 1] = c
                F[p, 2, 2] = c
            else:
                F[p, 0, 0] = math.nan
        else:
            Fn = np.empty((3, 3))
            for i in range(3):
                for j in range(3):
                    Fn[i, j] = (F[p, i, j] + dt * (C[p, i, 0] * F[p, 0, j]
                                                   + C[p, i, 1] * F[p, 1, j]
                                                   + C[p, i, 2] * F[p, 2, j]))
            Fn = _return_map(mat, params, Fn, dt)
            for i in range(3):
                for j in range(3):
                    F[p, i, j] = Fn[i, j]


class _Workspace:
    """Reusable grid buffers for a fixed grid size and chunk count."""

    def __init__(self, dims, n_chunks, n_particles):
        self.n_chunks = n_chunks
        self.grid_v = np.zeros((n_chunks, dims[0], dims[1], dims[2], 3))
        self.grid_m = np.zeros((n_chunks, dims[0], dims[1], dims[2]))
        bounds = np.linspace(0, n_particles, n_chunks + 1)
        self.chunk_bounds = np.round(bounds).astype(np.int64)


def _substep(state: SimState, code, params, cfg: SimConfig, dt, ws: _Workspace) -> None:
    ws.grid_v.fill(0.0)
    ws.grid_m.fill(0.0)
    dims = state.grid_dims
    _p2g(state.x, state.v, state.C, state.F, state.mass, state.volume, code, params,
         dt, state.grid_origin, state.grid_spacing, dims, ws.grid_v, ws.grid_m,
         ws.chunk_bounds)
    _merge_grids(ws.grid_v, ws.grid_m)
    _grid_update(ws.grid_v, ws.grid_m, dt, cfg.gravity, state.grid_origin,
                 state.grid_spacing, dims, cfg.ground_height is not None,
                 cfg.ground_height if cfg.ground_height is not None else 0.0,
                 cfg.ground_friction, cfg.domain_walls, cfg.wall_cells)
    _g2p(state.x, state.v, state.C, state.F, code, params, dt, state.grid_origin,
         state.grid_spacing, ws.grid_v)
    state.time += dt
    state.substeps_done += 1


def _advance(state: SimState, code, params, cfg: SimConfig, substeps, ws: _Workspace) -> None:
    h = state.grid_spacing
    for _ in range(substeps):
        vmax = float(np.sqrt((state.v ** 2).sum(axis=1).max())) if state.num_particles else 0.0
        dt_limit = cfg.cfl * h / vmax if vmax > 0 else np.inf
        pieces = max(1, int(math.ceil(cfg.dt / dt_limit - 1e-12)))
        if pieces > 10_000:
            raise DivergedError(f"CFL subdivision exploded (max speed {vmax:.3e} m/s)",
                                step=state.substeps_done)
        for _ in range(pieces):
            _substep(state, code, params, cfg, cfg.dt / pieces, ws)
            # per-piece guard: motion per piece is <= cfl*h, so checking here
            # catches escapes before the next scatter can write out of bounds
            if not np.isfinite(state.x).all() or not np.isfinite(state.F).all():
                raise DivergedError("simulation produced non-finite state",
                                    step=state.substeps_done)
            rel = (state.x - state.grid_origin) / h
            base = np.floor(rel - 0.5)
            if base.min() < 0 or np.any(base > state.grid_dims - 3):
                raise DivergedError("particle left the background grid",
                                    step=state.substeps_done)


def acoustic_dt_limit(mat: MaterialSpec, h: float, cfl_acoustic: float = 0.2) -> float:
    """Stable explicit timestep bound from the material's stiffness.

    Uses the P-wave modulus of the stress model (with the J-based fluid
    pressure linearized at rest, slope 7*kappa) and the explicit viscosity
    limit for Newtonian shear.
    """
    rho = mat.density
    if mat.kind in ("elastic", "plasticine", "granular"):
        mu, lam = lame_from_young_poisson(mat.E, mat.nu)
        modulus = lam + 2.0 * mu
    elif mat.kind == "newtonian":
        modulus = 7.0 * mat.kappa
    else:
        modulus = mat.kappa + 4.0 * mat.mu_shear / 3.0
    dt = cfl_acoustic * h / math.sqrt(modulus / rho)
    if mat.kind == "newtonian" and mat.mu_fluid > 0:
        dt = min(dt, rho * h * h / (6.0 * mat.mu_fluid))
    return dt


def stable_config(cfg: SimConfig, mat: MaterialSpec, quantum: int = 25) -> SimConfig:
    """Config with the substep count raised to satisfy the stiffness bound.

    The frame interval is preserved exactly; substep counts are quantized so
    nearby materials share a discretization (keeps finite differences
    smooth). Never lowers the configured substep count.
    """
    frame_dt = cfg.frame_dt
    need = frame_dt / acoustic_dt_limit(mat, cfg.grid_spacing)
    substeps = int(math.ceil(need / quantum)) * quantum
    if substeps <= cfg.substeps_per_frame:
        return cfg
    return replace(cfg, dt=frame_dt / substeps, substeps_per_frame=substeps)


def _n_chunks() -> int:
    return 1 if deterministic_mode() else max(1, thread_count())


def step(state: SimState, mat: MaterialSpec, cfg: SimConfig) -> SimState:
    """One nominal substep (CFL-subdivided as needed); returns a new state."""
    code, params = pack_material(mat)
    out = state.copy()
    ws = _Workspace(out.grid_dims, _n_chunks(), out.num_particles)
    _advance(out, code, params, cfg, 1, ws)
    return out


def simulate(initial: GicParticleSet, mat: MaterialSpec, cfg: SimConfig,
             frames: int, surface_mask=None) -> Trajectory:
    """Roll out ``frames`` frames and record positions at each frame time.

    Surface membership is fixed at frame 0 and advected with the particles.
    Deterministic for fixed inputs and chunk count.
    """
    if frames < 0:
        raise InvalidInputError("frame count must be nonnegative")
    state = make_state(initial, mat, cfg)
    if surface_mask is None:
        surface_mask = np.zeros(state.num_particles, dtype=bool)
    surface_mask = np.asarray(surface_mask, dtype=bool).reshape(state.num_particles)
    code, params = pack_material(mat)
    ws = _Workspace(state.grid_dims, _n_chunks(), state.num_particles)
    times = np.zeros(frames + 1)
    positions = np.zeros((frames + 1, state.num_particles, 3))
    positions[0] = state.x
    for k in range(1, frames + 1):
        _advance(state, code, params, cfg, cfg.substeps_per_frame, ws)
        times[k] = k * cfg.frame_dt
        positions[k] = state.x
    return Trajectory(times, positions, surface_mask, cfg.frame_dt, cfg.dt)
