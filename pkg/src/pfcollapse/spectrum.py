"""Eigenvalue spectra of the observed-state covariance.

Everything downstream is a function of the ordered scale parameters
lambda_1 >= ... >= lambda_{d'} of the covariance of the observed part of
the state.  This module constructs spectra directly from parametric
families, or by reducing a general (H, Sigma_X) observation model to
canonical diagonal form, and classifies families by whether the squared
scales are summable (which decides collapse vs no-collapse).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ValidationError

# Families whose squared-scale series converges (no weight collapse).
CASE_SUMMABLE = "i"
# Families whose squared-scale series diverges (weight collapse).
CASE_DIVERGENT = "ii"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Spectrum:
    """Ordered positive scale parameters lambda_j of the canonical model.

    ``values`` holds standard-deviation-scale entries, sorted
    non-increasing; ``values**2`` are the eigenvalues of the observed-state
    covariance.
    """

    values: np.ndarray

    def __post_init__(self):
        values = _readonly(np.atleast_1d(self.values))
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size < 1:
            raise ValidationError("spectrum needs at least one value")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValidationError("spectrum values must be positive and finite")
        if np.any(np.diff(values) > 0.0):
            raise ValidationError("spectrum values must be sorted non-increasing")

    @property
    def d_prime(self) -> int:
        return int(self.values.size)

    @property
    def squares(self) -> np.ndarray:
        return self.values**2

    def scaled(self, factor: float) -> "Spectrum":
        """Spectrum with every value multiplied by ``factor`` (> 0)."""
        if not (factor > 0.0 and np.isfinite(factor)):
            raise ValidationError("scale factor must be positive and finite")
        return Spectrum(self.values * factor)

    def to_json(self) -> dict:
        return {"values": [float(v) for v in self.values]}


def effective_dimension(spectrum: Spectrum) -> float:
    """Sum of the squared scale parameters, the quantity governing collapse."""
    return float(np.sum(spectrum.squares))


@dataclass(frozen=True)
class ObservationModel:
    """Dense linear observation model: a d x q map applied to a Gaussian state.

    ``H`` maps the q-dimensional state to d-dimensional data space;
    ``sigma_x`` is the symmetric positive-semidefinite state covariance.
    Observation noise is identity and the state mean is zero, which any
    linear-Gaussian model can be reduced to by whitening and centring.
    """

    H: np.ndarray
    sigma_x: np.ndarray

    def __post_init__(self):
        H = _readonly(np.atleast_2d(self.H))
        sigma_x = _readonly(np.atleast_2d(self.sigma_x))
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "sigma_x", sigma_x)
        if H.ndim != 2 or sigma_x.ndim != 2:
            raise ValidationError("H and sigma_x must be matrices")
        q = H.shape[1]
        if sigma_x.shape != (q, q):
            raise ValidationError(f"sigma_x must be {q} x {q} to conform with H")
        scale = float(np.max(np.abs(sigma_x))) or 1.0
        if float(np.max(np.abs(sigma_x - sigma_x.T))) > 1e-12 * scale:
            raise ValidationError("sigma_x must be symmetric (1e-12 relative)")
        eigs = np.linalg.eigvalsh(0.5 * (sigma_x + sigma_x.T))
        if eigs[0] < -1e-10 * max(eigs[-1], 0.0):
            raise ValidationError("sigma_x must be positive semidefinite")

    @property
    def d(self) -> int:
        return int(self.H.shape[0])

    @property
    def q(self) -> int:
        return int(self.H.shape[1])


def canonicalize(model: ObservationModel, rank_rtol: float = 1e-10) -> tuple[Spectrum, np.ndarray]:
    """Reduce an observation model to its canonical diagonal form.

    Eigendecomposes the observed-state covariance ``H sigma_x H^T``
    (symmetric PSD, so its eigendecomposition is its singular value
    decomposition), keeps the eigenvalues exceeding
    ``rank_rtol * max(eigenvalue)``, and returns the retained scales
    (square roots, descending) together with the full d x d orthogonal
    eigenvector basis, kept modes first.

    Returns
    -------
    (Spectrum, rotation)
        ``rotation`` columns are orthonormal; the first ``d_prime``
        columns span the retained modes.
    """
    if not (0.0 < rank_rtol < 1.0):
        raise ValidationError("rank_rtol must be in (0, 1)")
    cov = model.H @ model.sigma_x @ model.H.T
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    # eigh returns ascending order; flip to descending.  The flip is a
    # stable reordering, so ties keep the solver's relative order.
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    top = float(eigvals[0])
    if top <= 0.0:
        raise ValidationError("zero-rank model: observed-state covariance has no positive eigenvalue")
    keep = eigvals > rank_rtol * top
    if not np.any(keep):
        raise ValidationError("zero-rank model: all eigenvalues below the rank cutoff")
    kept = eigvals[keep]
    rotation = np.concatenate([eigvecs[:, keep], eigvecs[:, ~keep]], axis=1)
    return Spectrum(np.sqrt(kept)), rotation


_FAMILY_KINDS = ("constant", "power_decay", "geometric", "single_dominant")


@dataclass(frozen=True)
class SpectrumFamily:
    """Parametric infinite family of spectra, truncated on request.

    kind / parameters:
      - ``constant``: level c, lambda_j = c
      - ``power_decay``: exponent p, lambda_j^2 = j**(-p)
      - ``geometric``: ratio r in (0, 1), lambda_j^2 = r**j
      - ``single_dominant``: (big, small), lambda_1 = big then small forever

    ``geometric`` and ``power_decay`` with p > 1 have summable squared
    scales (case "i": no collapse); the rest diverge (case "ii").
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FAMILY_KINDS:
            raise ValidationError(f"unknown family kind {self.kind!r}; expected one of {_FAMILY_KINDS}")
        params = dict(self.params)
        object.__setattr__(self, "params", params)
        if self.kind == "constant":
            c = params.get("level")
            if c is None or not (np.isfinite(c) and c > 0):
                raise ValidationError("constant family needs level > 0")
        elif self.kind == "power_decay":
            p = params.get("p")
            if p is None or not (np.isfinite(p) and p > 0):
                raise ValidationError("power_decay family needs exponent p > 0")
        elif self.kind == "geometric":
            r = params.get("r")
            if r is None or not (0.0 < r < 1.0):
                raise ValidationError("geometric family needs ratio r in (0, 1)")
        else:
            big, small = params.get("big"), params.get("small")
            if big is None or small is None or not (0 < small <= big) or not np.isfinite(big):
                raise ValidationError("single_dominant family needs big >= small > 0")

    @property
    def case(self) -> str:
        """Summability class: CASE_SUMMABLE ("i") or CASE_DIVERGENT ("ii")."""
        if self.kind == "geometric" or (self.kind == "power_decay" and self.params["p"] > 1.0):
            return CASE_SUMMABLE
        return CASE_DIVERGENT

    def spectrum(self, d_prime: int) -> Spectrum:
        if not (isinstance(d_prime, (int, np.integer)) and d_prime >= 1):
            raise ValidationError("d_prime must be an integer >= 1")
        j = np.arange(1, d_prime + 1, dtype=np.float64)
        if self.kind == "constant":
            values = np.full(d_prime, float(self.params["level"]))
        elif self.kind == "power_decay":
            values = j ** (-0.5 * self.params["p"])
        elif self.kind == "geometric":
            values = self.params["r"] ** (0.5 * j)
        else:
            values = np.full(d_prime, float(self.params["small"]))
            values[0] = float(self.params["big"])
        return Spectrum(values)

    def label(self) -> str:
        """Compact comma-free identifier used in CSV output."""
        p = self.params
        if self.kind == "constant":
            return f"constant(level={p['level']:g})"
        if self.kind == "power_decay":
            return f"power_decay(p={p['p']:g})"
        if self.kind == "geometric":
            return f"geometric(r={p['r']:g})"
        return f"single_dominant(big={p['big']:g};small={p['small']:g})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "SpectrumFamily":
        if not isinstance(obj, Mapping) or "kind" not in obj:
            raise ValidationError("family JSON must be an object with a 'kind' key")
        return cls(kind=obj["kind"], params=obj.get("params", {}))


def generate_spectrum(family: SpectrumFamily, d_prime: int) -> Spectrum:
    """First ``d_prime`` terms of the family's infinite sequence."""
    return family.spectrum(d_prime)


def spectrum_from_json(obj) -> Spectrum:
    """Parse either an explicit value list or a family description.

    Accepts ``{"values": [...]}`` or
    ``{"kind": ..., "params": {...}, "d_prime": N}``.
    """
    if isinstance(obj, str):
        obj = json.loads(obj)
    if not isinstance(obj, Mapping):
        raise ValidationError("spectrum JSON must be an object")
    if "values" in obj:
        return Spectrum(np.asarray(obj["values"], dtype=np.float64))
    if "kind" in obj:
        if "d_prime" not in obj:
            raise ValidationError("family-form spectrum JSON needs d_prime")
        return SpectrumFamily.from_json(obj).spectrum(int(obj["d_prime"]))
    raise ValidationError("spectrum JSON needs either 'values' or 'kind'")
