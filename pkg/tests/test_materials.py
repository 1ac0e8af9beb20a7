import numpy as np
import pytest

from gicsim.errors import (
    InvalidInputError,
    InvalidStateError,
    InvertedElementError,
    SingularParameterError,
)
from gicsim.materials import (
    MaterialSpec,
    drucker_prager_alpha,
    hencky_stress,
    lame_from_young_poisson,
    neo_hookean_energy,
    neo_hookean_stress,
    newtonian_stress,
    return_map_drucker_prager,
    return_map_viscoplastic,
    return_map_von_mises,
    stvk_stress,
    young_poisson_from_lame,
)


def random_gradient(rng, spread=0.3):
    """Random deformation gradient with positive determinant."""
    while True:
        F = np.eye(3) + rng.uniform(-spread, spread, (3, 3))
        if np.linalg.det(F) > 0.05:
            return F


def hencky_deviator_norm(F):
    sig = np.linalg.svd(F, compute_uv=False)
    eps = np.log(sig)
    return np.linalg.norm(eps - eps.mean())


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# --- Lame parameters --------------------------------------------------------

def test_lame_torus_values():
    # E = 1e6, nu = 0.3: mu = E/2.6, lambda = 0.3e6/0.52
    mu, lam = lame_from_young_poisson(1e6, 0.3)
    assert mu == pytest.approx(1e6 / 2.6)
    assert lam == pytest.approx(3e5 / 0.52)
    assert mu == pytest.approx(3.846e5, rel=1e-3)
    assert lam == pytest.approx(5.769e5, rel=1e-3)


def test_lame_zero_poisson():
    mu, lam = lame_from_young_poisson(2.0, 0.0)
    assert lam == 0.0
    assert mu == 1.0


def test_lame_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        E = 10 ** rng.uniform(2, 7)
        nu = rng.uniform(0.01, 0.49)
        mu, lam = lame_from_young_poisson(E, nu)
        E2, nu2 = young_poisson_from_lame(mu, lam)
        assert abs(E2 - E) / E < 1e-10
        assert abs(nu2 - nu) < 1e-10


def test_lame_singular():
    with pytest.raises(SingularParameterError):
        lame_from_young_poisson(1e5, 0.5)
    with pytest.raises(InvalidInputError):
        lame_from_young_poisson(-1.0, 0.3)


# --- hyperelastic stresses ----------------------------------------------------

def test_neo_hookean_zero_at_identity():
    tau = neo_hookean_stress(np.eye(3), 1e5, 2e5)
    assert np.all(tau == 0.0)


def test_neo_hookean_uniform_stretch():
    mu, lam = 1e4, 2e4
    c = 1.05
    tau = neo_hookean_stress(c * np.eye(3), mu, lam)
    expected = mu * c * c + lam * 3 * np.log(c) - mu
    assert np.allclose(tau, expected * np.eye(3), rtol=1e-12)


def test_neo_hookean_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        F = random_gradient(rng)
        tau = neo_hookean_stress(F, 1e4, 3e4)
        assert np.max(np.abs(tau - tau.T)) < 1e-9 * max(1.0, np.abs(tau).max())


def test_neo_hookean_inverted():
    F = np.diag([1.0, -1.0, 1.0])
    with pytest.raises(InvertedElementError):
        neo_hookean_stress(F, 1e4, 1e4)


def test_neo_hookean_energy_consistent():
    # finite-difference the energy to recover the Kirchhoff stress:
    # tau = (dPsi/dF) F^T
    rng = np.random.default_rng(2)
    mu, lam = 2e3, 5e3
    F = random_gradient(rng, spread=0.2)
    eps = 1e-6
    P = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            dF = np.zeros((3, 3))
            dF[i, j] = eps
            P[i, j] = (neo_hookean_energy(F + dF, mu, lam)
                       - neo_hookean_energy(F - dF, mu, lam)) / (2 * eps)
    tau_fd = P @ F.T
    tau = neo_hookean_stress(F, mu, lam)
    assert np.max(np.abs(tau - tau_fd)) < 1e-3 * np.abs(tau).max()


def test_stvk_zero_at_identity():
    tau = stvk_stress(np.eye(3), 1e5, 1e5)
    assert np.all(tau == 0.0)


def test_stvk_diagonal_case():
    # F = diag(1.1, 1, 1): G = diag(0.105, 0, 0)
    mu, lam = 7e3, 4e3
    F = np.diag([1.1, 1.0, 1.0])
    g = 0.5 * (1.1 ** 2 - 1.0)
    S = np.diag([2 * mu * g + lam * g, lam * g, lam * g])
    expected = F @ S @ F.T
    assert np.allclose(stvk_stress(F, mu, lam), expected, rtol=1e-12)
    assert g == pytest.approx(0.105)


def test_stvk_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(20):
        F = random_gradient(rng)
        tau = stvk_stress(F, 5e3, 2e3)
        assert np.max(np.abs(tau - tau.T)) < 1e-9 * max(1.0, np.abs(tau).max())


@pytest.mark.parametrize("stress_fn", [
    lambda F: neo_hookean_stress(F, 1.3e4, 0.7e4),
    lambda F: stvk_stress(F, 1.3e4, 0.7e4),
])
def test_rotation_equivariance(stress_fn):
    rng = np.random.default_rng(4)
    for _ in range(10):
        F = random_gradient(rng, spread=0.25)
        R = random_rotation(rng)
        lhs = stress_fn(R @ F)
        rhs = R @ stress_fn(F) @ R.T
        assert np.max(np.abs(lhs - rhs)) < 1e-8 * max(1.0, np.abs(rhs).max())


# --- fluid stress ---------------------------------------------------------------

def test_newtonian_rest_state():
    tau = newtonian_stress(np.zeros((3, 3)), 1.0, 10.0, 1e5)
    assert np.all(tau == 0.0)


def test_newtonian_shear():
    grad_v = np.zeros((3, 3))
    grad_v[0, 1] = 2.0
    mu = 5.0
    tau = newtonian_stress(grad_v, 1.0, mu, 1e5)
    assert tau[0, 1] == pytest.approx(0.5 * mu * 2.0)
    assert tau[1, 0] == pytest.approx(0.5 * mu * 2.0)
    assert tau[0, 0] == 0.0


def test_newtonian_compression_value():
    # J = 0.9, kappa = 1e5: kappa (J - J^-6)
    tau = newtonian_stress(np.zeros((3, 3)), 0.9, 0.0, 1e5)
    expected = 1e5 * (0.9 - 0.9 ** -6.0)
    assert tau[0, 0] == pytest.approx(expected)
    assert expected == pytest.approx(-9.8168e4, rel=1e-4)


def test_newtonian_invalid_volume():
    with pytest.raises(InvalidStateError):
        newtonian_stress(np.zeros((3, 3)), -0.1, 1.0, 1e5)


# --- von Mises return map -------------------------------------------------------

def test_von_mises_identity_unchanged():
    F = np.eye(3)
    assert np.array_equal(return_map_von_mises(F, 1e4, 1e3), F)


def test_von_mises_volumetric_unchanged():
    F = 1.2 * np.eye(3)
    assert np.array_equal(return_map_von_mises(F, 1e4, 1e3), F)


def test_von_mises_projects_to_yield_surface():
    rng = np.random.default_rng(5)
    mu, tau_y = 2e4, 4e2
    for _ in range(50):
        F = random_gradient(rng, spread=0.5)
        out = return_map_von_mises(F, mu, tau_y)
        before = hencky_deviator_norm(F)
        after = hencky_deviator_norm(out)
        if before <= tau_y / (2 * mu):
            assert np.array_equal(out, F)
        else:
            assert after == pytest.approx(tau_y / (2 * mu), abs=1e-8)


def test_von_mises_idempotent():
    rng = np.random.default_rng(6)
    for _ in range(50):
        F = random_gradient(rng, spread=0.6)
        once = return_map_von_mises(F, 1.5e4, 3e2)
        twice = return_map_von_mises(once, 1.5e4, 3e2)
        assert np.max(np.abs(twice - once)) < 1e-10


# --- Drucker-Prager return map ---------------------------------------------------

def test_drucker_prager_expansion():
    F = 1.1 * np.eye(3)
    out = return_map_drucker_prager(F, 1e4, 1e4, 30.0)
    assert np.allclose(out, np.eye(3), atol=1e-12)


def test_drucker_prager_identity():
    F = np.eye(3)
    out = return_map_drucker_prager(F, 1e4, 1e4, 30.0)
    assert np.array_equal(out, F)


def dp_delta_gamma(F, mu, lam, theta):
    sig = np.linalg.svd(F, compute_uv=False)
    eps = np.log(sig)
    dev = eps - eps.mean()
    alpha = drucker_prager_alpha(theta)
    return np.linalg.norm(dev) + alpha * (3 * lam + 2 * mu) * eps.sum() / (2 * mu)


def test_drucker_prager_feasible_after_projection():
    rng = np.random.default_rng(7)
    mu, lam, theta = 1e4, 2e4, 35.0
    for _ in range(50):
        F = random_gradient(rng, spread=0.5)
        out = return_map_drucker_prager(F, mu, lam, theta)
        sig = np.linalg.svd(out, compute_uv=False)
        eps = np.log(sig)
        if eps.sum() > 1e-12:
            assert np.allclose(eps, 0.0, atol=1e-10)   # expansion branch gave U V^T
        else:
            assert dp_delta_gamma(out, mu, lam, theta) <= 1e-8


def test_drucker_prager_idempotent():
    rng = np.random.default_rng(8)
    for _ in range(50):
        F = random_gradient(rng, spread=0.6)
        once = return_map_drucker_prager(F, 1e4, 2e4, 40.0)
        twice = return_map_drucker_prager(once, 1e4, 2e4, 40.0)
        assert np.max(np.abs(twice - once)) < 1e-10


# --- viscoplastic return map -------------------------------------------------------

def test_viscoplastic_elastic_regime_unchanged():
    mu, tau_y = 1e4, 1e3
    F = np.eye(3) * 1.02                      # purely volumetric: no deviator
    out = return_map_viscoplastic(F, mu, tau_y, 5.0, 1e-4)
    assert np.array_equal(out, F)


def test_viscoplastic_zero_eta_matches_von_mises():
    rng = np.random.default_rng(9)
    mu, tau_y = 2e4, 5e2
    for _ in range(30):
        F = random_gradient(rng, spread=0.5)
        vm = return_map_von_mises(F, mu, tau_y)
        visco = return_map_viscoplastic(F, mu, tau_y, 0.0, 1e-4)
        assert np.max(np.abs(vm - visco)) < 1e-6


def test_viscoplastic_large_eta_is_identity():
    rng = np.random.default_rng(10)
    mu, tau_y = 2e4, 5e2
    for _ in range(20):
        F = random_gradient(rng, spread=0.5)
        out = return_map_viscoplastic(F, mu, tau_y, 1e12, 1e-4)
        assert abs(hencky_deviator_norm(out) - hencky_deviator_norm(F)) < 1e-6


def test_viscoplastic_partial_relaxation():
    # between the yield surface and the trial state for finite eta
    rng = np.random.default_rng(11)
    mu, tau_y, dt = 2e4, 5e2, 1e-4
    for _ in range(20):
        F = random_gradient(rng, spread=0.6)
        before = hencky_deviator_norm(F)
        if before <= tau_y / (2 * mu):
            continue
        sig = np.linalg.svd(F, compute_uv=False)
        mu_hat = mu * (sig ** 2).sum() / 3
        eta = 2 * mu_hat * dt                  # mid-range viscosity
        after = hencky_deviator_norm(return_map_viscoplastic(F, mu, tau_y, eta, dt))
        assert tau_y / (2 * mu) - 1e-12 < after < before


@pytest.mark.xfail(strict=True, reason=(
    "partial relaxation cannot be idempotent for finite eta on yielding "
    "states: each application moves the deviator closer to yield by the "
    "factor 1/(1 + eta/(2 mu_hat dt)); see the decisions ledger"))
def test_viscoplastic_idempotent_on_yielding_states():
    rng = np.random.default_rng(12)
    mu, tau_y, dt = 2e4, 2e2, 1e-4
    worst = 0.0
    for _ in range(20):
        F = random_gradient(rng, spread=0.6)
        if hencky_deviator_norm(F) <= tau_y / (2 * mu):
            continue
        sig = np.linalg.svd(F, compute_uv=False)
        eta = 2 * mu * (sig ** 2).sum() / 3 * dt
        once = return_map_viscoplastic(F, mu, tau_y, eta, dt)
        twice = return_map_viscoplastic(once, mu, tau_y, eta, dt)
        worst = max(worst, np.max(np.abs(twice - once)))
    assert worst < 1e-10


def test_return_maps_preserve_volume_factor():
    # deviatoric projection leaves det(F) unchanged
    rng = np.random.default_rng(13)
    for _ in range(20):
        F = random_gradient(rng, spread=0.5)
        for out in (return_map_von_mises(F, 1e4, 2e2),
                    return_map_viscoplastic(F, 1e4, 2e2, 3.0, 1e-4)):
            assert np.linalg.det(out) == pytest.approx(np.linalg.det(F), rel=1e-9)


# --- hencky trial stress --------------------------------------------------------

def test_hencky_stress_zero_at_identity():
    assert np.allclose(hencky_stress(np.eye(3), 1e4, 1e5), 0.0, atol=1e-9)


def test_hencky_stress_volumetric():
    kappa = 1e5
    c = 1.1
    tau = hencky_stress(c * np.eye(3), 1e4, kappa)
    assert np.allclose(tau, kappa * 3 * np.log(c) * np.eye(3), rtol=1e-9)


# --- MaterialSpec validation ------------------------------------------------------

def test_material_spec_requires_parameters():
    with pytest.raises(InvalidInputError):
        MaterialSpec(kind="elastic", E=1e5)          # nu missing
    with pytest.raises(InvalidInputError):
        MaterialSpec(kind="newtonian", mu_fluid=1.0)  # kappa missing
    with pytest.raises(InvalidInputError):
        MaterialSpec(kind="bogus")


def test_material_spec_granular_backbone_defaults():
    m = MaterialSpec(kind="granular", theta_fric=40.0)
    assert m.E == 1e5 and m.nu == 0.3


def test_material_spec_invariants():
    with pytest.raises(InvalidInputError):
        MaterialSpec(kind="elastic", E=1e5, nu=0.6)
    with pytest.raises(InvalidInputError):
        MaterialSpec(kind="granular", theta_fric=95.0)
    with pytest.raises(InvalidInputError):
        MaterialSpec(kind="newtonian", mu_fluid=1.0, kappa=-2.0)
