"""Spectrum construction, canonical reduction, and family classification."""

import json

import numpy as np
import numpy.testing as npt
import pytest

from pfcollapse import (
    ObservationModel,
    Spectrum,
    SpectrumFamily,
    ValidationError,
    canonicalize,
    effective_dimension,
    generate_spectrum,
)
from pfcollapse.spectrum import CASE_DIVERGENT, CASE_SUMMABLE, spectrum_from_json


def test_identity_model_canonicalizes_to_unit_spectrum():
    model = ObservationModel(H=np.eye(3), sigma_x=np.eye(3))
    spec, rotation = canonicalize(model)
    npt.assert_allclose(spec.values, np.ones(3))
    assert spec.d_prime == 3
    npt.assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-12)
    assert effective_dimension(spec) == pytest.approx(3.0)


def test_rank_deficient_model_drops_null_mode():
    model = ObservationModel(H=np.eye(2), sigma_x=np.diag([4.0, 0.0]))
    spec, rotation = canonicalize(model)
    npt.assert_allclose(spec.values, [2.0])
    assert spec.d_prime == 1
    # Full basis is still returned, null mode last.
    assert rotation.shape == (2, 2)
    npt.assert_allclose(rotation.T @ rotation, np.eye(2), atol=1e-12)


def test_power_decay_first_four_squares():
    spec = generate_spectrum(SpectrumFamily("power_decay", {"p": 1.0}), 4)
    npt.assert_allclose(spec.squares, [1.0, 1 / 2, 1 / 3, 1 / 4])


@pytest.mark.parametrize("seed", [71, 72])
def test_canonical_spectrum_matches_svd_of_covariance_factor(seed):
    # Independent oracle: H sigma H^T = (H A)(H A)^T for sigma = A A^T,
    # so the canonical squares are the squared singular values of H A.
    rng = np.random.default_rng(seed)
    d, q = 6, 9
    H = rng.standard_normal((d, q))
    A = rng.standard_normal((q, q))
    model = ObservationModel(H=H, sigma_x=A @ A.T)
    spec, rotation = canonicalize(model)
    sv = np.linalg.svd(H @ A, compute_uv=False)
    npt.assert_allclose(spec.squares, sv[: spec.d_prime] ** 2, rtol=1e-9)
    # The rotation diagonalizes the observed-state covariance.
    cov = H @ (A @ A.T) @ H.T
    diag = rotation.T @ cov @ rotation
    npt.assert_allclose(np.diag(diag)[: spec.d_prime], spec.squares, rtol=1e-9)
    npt.assert_allclose(diag - np.diag(np.diag(diag)), 0.0, atol=1e-8)


@pytest.mark.parametrize("seed", [5, 6])
def test_spectrum_invariant_under_data_space_rotation(seed):
    rng = np.random.default_rng(seed)
    d, q = 5, 5
    H = rng.standard_normal((d, q))
    A = rng.standard_normal((q, q))
    sigma = A @ A.T
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    base, _ = canonicalize(ObservationModel(H=H, sigma_x=sigma))
    rotated, _ = canonicalize(ObservationModel(H=Q @ H, sigma_x=sigma))
    npt.assert_allclose(rotated.values, base.values, rtol=1e-9)


def test_canonicalize_rejects_zero_rank():
    model = ObservationModel(H=np.zeros((2, 2)), sigma_x=np.eye(2))
    with pytest.raises(ValidationError, match="zero-rank"):
        canonicalize(model)


def test_observation_model_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValidationError, match="symmetric"):
        ObservationModel(H=np.eye(2), sigma_x=np.array([[1.0, 0.5], [0.2, 1.0]]))
    with pytest.raises(ValidationError, match="semidefinite"):
        ObservationModel(H=np.eye(2), sigma_x=np.diag([1.0, -0.5]))
    with pytest.raises(ValidationError, match="conform"):
        ObservationModel(H=np.ones((2, 3)), sigma_x=np.eye(2))


def test_spectrum_validation():
    with pytest.raises(ValidationError):
        Spectrum(np.array([1.0, 2.0]))  # increasing
    with pytest.raises(ValidationError):
        Spectrum(np.array([1.0, -1.0]))
    with pytest.raises(ValidationError):
        Spectrum(np.array([]))
    with pytest.raises(ValidationError):
        Spectrum(np.array([np.inf]))
    spec = Spectrum(np.array([2.0, 1.0]))
    with pytest.raises(ValueError):
        spec.values[0] = 5.0  # read-only storage


def test_effective_dimension_values_and_bounds():
    assert effective_dimension(Spectrum(np.full(7, 1.0))) == pytest.approx(7.0)
    const = SpectrumFamily("constant", {"level": 0.5})
    assert effective_dimension(const.spectrum(40)) == pytest.approx(40 * 0.25)
    # Geometric tail is summable: partial sums stay below r / (1 - r).
    geo = SpectrumFamily("geometric", {"r": 0.6})
    sums = [effective_dimension(geo.spectrum(d)) for d in (1, 5, 50, 500)]
    assert all(a < b for a, b in zip(sums, sums[1:]))
    assert sums[-1] < 0.6 / 0.4 + 1e-12
    assert sums[-1] == pytest.approx(0.6 / 0.4, rel=1e-9)


def test_family_case_classification():
    assert SpectrumFamily("geometric", {"r": 0.9}).case == CASE_SUMMABLE
    assert SpectrumFamily("power_decay", {"p": 2.0}).case == CASE_SUMMABLE
    assert SpectrumFamily("power_decay", {"p": 1.0}).case == CASE_DIVERGENT
    assert SpectrumFamily("power_decay", {"p": 0.5}).case == CASE_DIVERGENT
    assert SpectrumFamily("constant", {"level": 1.0}).case == CASE_DIVERGENT
    assert SpectrumFamily("single_dominant", {"big": 3.0, "small": 0.5}).case == CASE_DIVERGENT


def test_single_dominant_shape():
    fam = SpectrumFamily("single_dominant", {"big": 3.0, "small": 0.5})
    spec = fam.spectrum(4)
    npt.assert_allclose(spec.values, [3.0, 0.5, 0.5, 0.5])


def test_family_parameter_validation():
    with pytest.raises(ValidationError):
        SpectrumFamily("constant", {})
    with pytest.raises(ValidationError):
        SpectrumFamily("constant", {"level": -1.0})
    with pytest.raises(ValidationError):
        SpectrumFamily("geometric", {"r": 1.0})
    with pytest.raises(ValidationError):
        SpectrumFamily("power_decay", {"p": 0.0})
    with pytest.raises(ValidationError):
        SpectrumFamily("single_dominant", {"big": 0.5, "small": 1.0})
    with pytest.raises(ValidationError):
        SpectrumFamily("mystery", {})
    with pytest.raises(ValidationError):
        SpectrumFamily("constant", {"level": 1.0}).spectrum(0)


def test_scaled_spectrum_rescales_squares():
    spec = SpectrumFamily("power_decay", {"p": 1.0}).spectrum(5)
    alpha = 0.3
    tempered = spec.scaled(np.sqrt(alpha))
    npt.assert_allclose(tempered.squares, alpha * spec.squares, rtol=1e-12)
    with pytest.raises(ValidationError):
        spec.scaled(0.0)


def test_family_json_round_trip():
    fam = SpectrumFamily("geometric", {"r": 0.25})
    again = SpectrumFamily.from_json(json.loads(json.dumps(fam.to_json())))
    assert again == fam
    spec = spectrum_from_json({"kind": "power_decay", "params": {"p": 1.0}, "d_prime": 3})
    npt.assert_allclose(spec.squares, [1.0, 0.5, 1 / 3])
    direct = spectrum_from_json(json.dumps({"values": [2.0, 1.0]}))
    npt.assert_allclose(direct.values, [2.0, 1.0])
    with pytest.raises(ValidationError):
        spectrum_from_json({"kind": "geometric", "params": {"r": 0.5}})  # missing d_prime
    with pytest.raises(ValidationError):
        spectrum_from_json({})


def test_labels_are_csv_safe():
    fams = [
        SpectrumFamily("constant", {"level": 1.0}),
        SpectrumFamily("power_decay", {"p": 0.5}),
        SpectrumFamily("geometric", {"r": 0.5}),
        SpectrumFamily("single_dominant", {"big": 2.0, "small": 0.5}),
    ]
    labels = [f.label() for f in fams]
    assert len(set(labels)) == len(labels)
    assert all("," not in lab for lab in labels)
