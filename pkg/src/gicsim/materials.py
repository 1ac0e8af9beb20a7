"""Constitutive models and plastic return mappings.

Five material families: hyperelastic (neo-Hookean), plasticine (StVK with a
von Mises yield projection), granular media (StVK with Drucker-Prager),
Newtonian fluid (volume-ratio pressure plus a viscosity term), and
viscoplastic non-Newtonian fluid. Stress functions return the Kirchhoff
stress J*sigma in Pa; return mappings act on the deformation gradient.

These are the numpy reference implementations; the simulation kernels inline
the same math and are cross-checked against these in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidInputError,
    InvalidStateError,
    InvertedElementError,
    SingularParameterError,
)

KINDS = ("elastic", "plasticine", "granular", "newtonian", "non_newtonian")

# elastic backbone used for granular media when the scene does not pin one;
# declared configuration, not a measured value
GRANULAR_BACKBONE_E = 1e5
GRANULAR_BACKBONE_NU = 0.3

DEFAULT_DENSITY = 1000.0             # kg/m^3


@dataclass
class MaterialSpec:
    """Constitutive model tag plus its parameter vector and initial velocity."""

    kind: str
    E: float = None                  # Pa (elastic, plasticine, granular backbone)
    nu: float = None
    tau_y: float = None              # Pa (plasticine, non-newtonian)
    theta_fric: float = None         # degrees (granular)
    mu_fluid: float = None           # Pa s (newtonian)
    mu_shear: float = None           # Pa (non-newtonian)
    kappa: float = None              # Pa (fluids)
    eta: float = None                # Pa s (non-newtonian)
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    density: float = DEFAULT_DENSITY

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown material kind {self.kind!r}; expected one of {KINDS}")
        self.v0 = np.asarray(self.v0, dtype=np.float64).reshape(3)
        if self.density <= 0:
            raise InvalidInputError("density must be positive")
        if self.kind == "granular":
            if self.E is None:
                self.E = GRANULAR_BACKBONE_E
            if self.nu is None:
                self.nu = GRANULAR_BACKBONE_NU
        need = {
            "elastic": ("E", "nu"),
            "plasticine": ("E", "nu", "tau_y"),
            "granular": ("E", "nu", "theta_fric"),
            "newtonian": ("mu_fluid", "kappa"),
            "non_newtonian": ("mu_shear", "kappa", "tau_y", "eta"),
        }[self.kind]
        for name in need:
            if getattr(self, name) is None:
                raise InvalidInputError(f"{self.kind} material requires parameter {name}")
        if self.E is not None and self.E <= 0:
            raise InvalidInputError("E must be positive")
        if self.nu is not None and not 0 < self.nu < 0.5:
            raise InvalidInputError("nu must lie in (0, 0.5)")
        if self.tau_y is not None and self.tau_y < 0:
            raise InvalidInputError("tau_y must be nonnegative")
        if self.eta is not None and self.eta < 0:
            raise InvalidInputError("eta must be nonnegative")
        if self.kappa is not None and self.kappa <= 0:
            raise InvalidInputError("kappa must be positive")
        if self.mu_fluid is not None and self.mu_fluid < 0:
            raise InvalidInputError("mu_fluid must be nonnegative")
        if self.mu_shear is not None and self.mu_shear <= 0:
            raise InvalidInputError("mu_shear must be positive")
        if self.theta_fric is not None and not 0 < self.theta_fric < 90:
            raise InvalidInputError("theta_fric must lie in (0, 90) degrees")

    def params_dict(self) -> dict:
        out = {}
        for name in ("E", "nu", "tau_y", "theta_fric", "mu_fluid", "mu_shear", "kappa", "eta"):
            val = getattr(self, name)
            if val is not None:
                out[name] = float(val)
        out["density"] = float(self.density)
        out["v0"] = [float(c) for c in self.v0]
        return out


def lame_from_young_poisson(E: float, nu: float):
    """Lame parameters (mu, lambda) from Young's modulus and Poisson ratio."""
    if E <= 0:
        raise InvalidInputError("E must be positive")
    if not 0 <= nu < 0.5:
        if nu == 0.5:
            raise SingularParameterError("nu = 0.5 makes lambda singular")
        raise InvalidInputError("nu must lie in [0, 0.5)")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def young_poisson_from_lame(mu: float, lam: float):
    """Closed-form inverse of lame_from_young_poisson."""
    if mu <= 0:
        raise InvalidInputError("mu must be positive")
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    nu = lam / (2.0 * (lam + mu))
    return E, nu


def _check_gradient(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(F)):
        raise InvalidStateError("deformation gradient contains non-finite entries")
    return F


def neo_hookean_stress(F, mu: float, lam: float) -> np.ndarray:
    """Kirchhoff stress mu*(F F^T) + (lambda*log(J) - mu)*I."""
    F = _check_gradient(F)
    J = np.linalg.det(F)
    if J <= 0:
        raise InvertedElementError(f"det(F) = {J:.3e} <= 0")
    return mu * (F @ F.T) + (lam * math.log(J) - mu) * np.eye(3)


def neo_hookean_energy(F, mu: float, lam: float) -> float:
    """Strain energy density whose stress is neo_hookean_stress."""
    F = _check_gradient(F)
    J = np.linalg.det(F)
    if J <= 0:
        raise InvertedElementError(f"det(F) = {J:.3e} <= 0")
    logj = math.log(J)
    return 0.5 * mu * (np.trace(F @ F.T) - 3.0) - mu * logj + 0.5 * lam * logj * logj


def stvk_stress(F, mu: float, lam: float) -> np.ndarray:
    """Kirchhoff stress F [2 mu G + lambda tr(G) I] F^T, G the Green strain."""
    F = _check_gradient(F)
    if np.linalg.det(F) <= 0:
        raise InvertedElementError("det(F) <= 0")
    G = 0.5 * (F.T @ F - np.eye(3))
    return F @ (2.0 * mu * G + lam * np.trace(G) * np.eye(3)) @ F.T


def hencky_stress(F, mu: float, kappa: float) -> np.ndarray:
    """Kirchhoff stress 2 mu eps_dev + kappa tr(eps) I in log-strain form.

    Elastic trial response for the viscoplastic fluid: deviatoric shear from
    the Hencky strain plus a bulk-modulus volumetric term.
    """
    F = _check_gradient(F)
    if np.linalg.det(F) <= 0:
        raise InvertedElementError("det(F) <= 0")
    U, sig, Vt = np.linalg.svd(F)
    eps = np.log(sig)
    dev = eps - eps.mean()
    tau_diag = 2.0 * mu * dev + kappa * eps.sum()
    return (U * tau_diag) @ U.T


def newtonian_stress(grad_v, J: float, mu_fluid: float, kappa: float) -> np.ndarray:
    """Kirchhoff stress 0.5 mu (grad_v + grad_v^T) + kappa (J - 1/J^6) I."""
    grad_v = np.asarray(grad_v, dtype=np.float64).reshape(3, 3)
    if J <= 0:
        raise InvalidStateError(f"volume ratio J = {J:.3e} <= 0")
    pressure = kappa * (J - J ** -6.0)
    return 0.5 * mu_fluid * (grad_v + grad_v.T) + pressure * np.eye(3)


def _hencky(F):
    U, sig, Vt = np.linalg.svd(F)
    if sig[-1] <= 0:
        raise InvertedElementError("det(F) <= 0")
    eps = np.log(sig)
    dev = eps - eps.mean()
    return U, Vt, eps, dev, float(np.linalg.norm(dev))


def return_map_von_mises(F, mu: float, tau_y: float) -> np.ndarray:
    """Project the Hencky deviator back onto the von Mises yield surface."""
    F = _check_gradient(F)
    U, Vt, eps, dev, nrm = _hencky(F)
    dgamma = nrm - tau_y / (2.0 * mu)
    if dgamma <= 0:
        return F.copy()
    eps_new = eps - dgamma * dev / nrm
    return (U * np.exp(eps_new)) @ Vt


def drucker_prager_alpha(theta_fric_deg: float) -> float:
    s = math.sin(math.radians(theta_fric_deg))
    return math.sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s)


def return_map_drucker_prager(F, mu: float, lam: float, theta_fric_deg: float) -> np.ndarray:
    """Drucker-Prager projection for cohesionless granular media (d = 3)."""
    F = _check_gradient(F)
    U, Vt, eps, dev, nrm = _hencky(F)
    tr = float(eps.sum())
    if tr > 0:
        return U @ Vt
    alpha = drucker_prager_alpha(theta_fric_deg)
    dgamma = nrm + alpha * (3.0 * lam + 2.0 * mu) * tr / (2.0 * mu)
    if dgamma <= 0:
        return F.copy()
    eps_new = eps - dgamma * dev / nrm
    return (U * np.exp(eps_new)) @ Vt


def return_map_viscoplastic(F, mu: float, tau_y: float, eta: float, dt: float) -> np.ndarray:
    """Relax the deviatoric stress toward the yield surface over one step.

    The trial deviatoric stress magnitude |s| = 2 mu |eps_dev| decays by the
    overshoot divided by 1 + eta/(2 mu_hat dt); with eta -> 0 this reduces to
    the von Mises projection, with eta -> inf the state is untouched.
    """
    F = _check_gradient(F)
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    U, sig, Vt = np.linalg.svd(F)
    if sig[-1] <= 0:
        raise InvertedElementError("det(F) <= 0")
    eps = np.log(sig)
    dev = eps - eps.mean()
    nrm = float(np.linalg.norm(dev))
    s_norm = 2.0 * mu * nrm
    dgamma = s_norm - tau_y
    if dgamma <= 0:
        return F.copy()
    mu_hat = mu * float((sig * sig).sum()) / 3.0
    s_new = s_norm - dgamma / (1.0 + eta / (2.0 * mu_hat * dt))
    eps_new = (s_new / (2.0 * mu)) * dev / nrm + eps.mean()
    return (U * np.exp(eps_new)) @ Vt
