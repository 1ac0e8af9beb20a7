import json

import numpy as np
import pytest

from gicsim.deform import (
    CoefficientFrame,
    MotionBasisFrame,
    SCALE_EPSILON,
    compose_deformation,
    load_deformation_track,
    save_deformation_track,
)
from gicsim.errors import InvalidInputError, ParseError
from gicsim.geometry import GaussianPointSet


def canonical_set(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianPointSet(rng.normal(size=(n, 3)), rng.uniform(0.01, 0.1, n),
                            rng.uniform(0, 1, n), rng.uniform(0, 1, (n, 3)))


def random_frames(n_points, n_m=4, seed=1):
    rng = np.random.default_rng(seed)
    basis = MotionBasisFrame(0.5, rng.normal(size=(n_m, 3)), rng.normal(size=n_m))
    coeff = CoefficientFrame(0.5, rng.normal(size=(n_points, n_m)))
    return basis, coeff


def test_identity_deformation():
    c = canonical_set()
    basis = MotionBasisFrame(0.0, np.zeros((3, 3)), np.zeros(3))
    coeff = CoefficientFrame(0.0, np.random.default_rng(0).normal(size=(len(c), 3)))
    out = compose_deformation(c, basis, coeff)
    assert np.array_equal(out.centers, c.centers)
    assert np.array_equal(out.scales, c.scales)
    assert np.array_equal(out.opacities, c.opacities)
    assert np.array_equal(out.colors, c.colors)


def test_single_basis_translation():
    c = canonical_set()
    basis = MotionBasisFrame(0.1, np.array([[1.0, 0, 0]]), np.array([0.0]))
    coeff = CoefficientFrame(0.1, np.ones((len(c), 1)))
    out = compose_deformation(c, basis, coeff)
    assert np.allclose(out.centers, c.centers + [1.0, 0, 0])
    assert np.array_equal(out.scales, c.scales)


def test_matches_dot_product_oracle():
    c = canonical_set(10)
    basis, coeff = random_frames(10, n_m=5)
    out = compose_deformation(c, basis, coeff)
    for i in range(10):
        mu = c.centers[i].copy()
        s = c.scales[i]
        for m in range(5):
            mu = mu + coeff.weights[i, m] * basis.d_mu[m]
            s = s + coeff.weights[i, m] * basis.d_s[m]
        assert np.max(np.abs(out.centers[i] - mu)) < 1e-12
        assert abs(out.scales[i] - max(s, SCALE_EPSILON)) < 1e-12


def test_position_linearity_in_basis_scale():
    c = canonical_set(8)
    basis, coeff = random_frames(8, n_m=4, seed=3)
    a, b = 0.3, 1.1

    def scaled(k):
        return MotionBasisFrame(basis.time, k * basis.d_mu, k * basis.d_s)

    out_a = compose_deformation(c, scaled(a), coeff).centers - c.centers
    out_b = compose_deformation(c, scaled(b), coeff).centers - c.centers
    out_ab = compose_deformation(c, scaled(a + b), coeff).centers - c.centers
    assert np.max(np.abs(out_a + out_b - out_ab)) < 1e-9


def test_scale_clamped_positive():
    c = canonical_set(4)
    basis = MotionBasisFrame(0.0, np.zeros((1, 3)), np.array([-100.0]))
    coeff = CoefficientFrame(0.0, np.ones((4, 1)))
    out = compose_deformation(c, basis, coeff)
    assert np.all(out.scales == SCALE_EPSILON)


def test_dimension_mismatch():
    c = canonical_set(4)
    basis = MotionBasisFrame(0.0, np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(InvalidInputError):
        compose_deformation(c, basis, CoefficientFrame(0.0, np.ones((4, 3))))
    with pytest.raises(InvalidInputError):
        compose_deformation(c, basis, CoefficientFrame(0.0, np.ones((3, 2))))


def test_track_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    bases = [MotionBasisFrame(t, rng.normal(size=(3, 3)), rng.normal(size=3))
             for t in (0.0, 0.5, 1.0)]
    coeffs = [CoefficientFrame(b.time, rng.normal(size=(7, 3))) for b in bases]
    path = tmp_path / "track.json"
    save_deformation_track(path, bases, coeffs)
    rbases, rcoeffs = load_deformation_track(path)
    assert len(rbases) == 3
    for b, rb in zip(bases, rbases):
        assert rb.time == b.time
        assert np.array_equal(rb.d_mu, b.d_mu)
        assert np.array_equal(rb.d_s, b.d_s)
    for c, rc in zip(coeffs, rcoeffs):
        assert np.array_equal(rc.weights, c.weights)


def test_track_sorted_by_time(tmp_path):
    rng = np.random.default_rng(6)
    bases = [MotionBasisFrame(t, rng.normal(size=(2, 3)), rng.normal(size=2))
             for t in (0.9, 0.1, 0.5)]
    coeffs = [CoefficientFrame(b.time, rng.normal(size=(4, 2))) for b in bases]
    path = tmp_path / "track.json"
    save_deformation_track(path, bases, coeffs)
    rbases, _ = load_deformation_track(path)
    assert [b.time for b in rbases] == [0.1, 0.5, 0.9]


def test_empty_track(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text(json.dumps({"n_m": 8, "frames": []}))
    bases, coeffs = load_deformation_track(path)
    assert bases == [] and coeffs == []


def test_track_nm_mismatch(tmp_path):
    doc = {"n_m": 2, "frames": [
        {"t": 0.0, "bases": [{"dmu": [0, 0, 0], "ds": 0.0}], "weights": [[1.0]]},
    ]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        load_deformation_track(path)


def test_track_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError) as err:
        load_deformation_track(path)
    assert err.value.line is not None
