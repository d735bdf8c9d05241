"""Sequential bootstrap filter on linear-Gaussian state-space models.

The filter propagates an ensemble through linear dynamics, reweights by
the Gaussian observation likelihood, and resamples with replacement.  A
Kalman filter provides the exact posterior for the same model and is
recorded alongside the particle diagnostics, so every trace shows both
the estimate under test and the ground truth it should track.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ValidationError
from .harness import write_csv
from .rng import RngStream
from .weights import normalize

RESAMPLE_POLICIES = ("always", "ess_threshold")
RESAMPLERS = ("multinomial", "systematic")


def _readonly(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


def _check_psd(name: str, m: np.ndarray):
    scale = float(np.max(np.abs(m))) or 1.0
    if float(np.max(np.abs(m - m.T))) > 1e-12 * scale:
        raise ValidationError(f"{name} must be symmetric (1e-12 relative)")
    eigs = np.linalg.eigvalsh(0.5 * (m + m.T))
    if eigs[0] < -1e-10 * max(eigs[-1], 0.0):
        raise ValidationError(f"{name} must be positive semidefinite")


def _psd_factor(m: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition; tolerates rank deficiency."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vecs @ (np.sqrt(np.clip(vals, 0.0, None))[:, None] * vecs.T)


@dataclass(frozen=True, eq=False)
class LinearGaussianSSM:
    """X_{t+1} = A X_t + process noise, Y_t = H X_t + observation noise.

    The initial state is N(m0, P0).  Observation noise covariance
    defaults to the identity; m0 defaults to zero and P0 to the
    identity.
    """

    A: np.ndarray
    Q_cov: np.ndarray
    H: np.ndarray
    R_cov: np.ndarray | None = None
    m0: np.ndarray | None = None
    P0: np.ndarray | None = None

    def __post_init__(self):
        A = _readonly(np.atleast_2d(self.A))
        Q = _readonly(np.atleast_2d(self.Q_cov))
        H = _readonly(np.atleast_2d(self.H))
        q = A.shape[0]
        d = H.shape[0]
        if A.shape != (q, q) or Q.shape != (q, q) or H.shape[1] != q:
            raise ValidationError("A, Q_cov must be q x q and H must be d x q")
        R = _readonly(np.eye(d) if self.R_cov is None else np.atleast_2d(self.R_cov))
        m0 = _readonly(np.zeros(q) if self.m0 is None else self.m0)
        P0 = _readonly(np.eye(q) if self.P0 is None else np.atleast_2d(self.P0))
        if R.shape != (d, d) or m0.shape != (q,) or P0.shape != (q, q):
            raise ValidationError("R_cov must be d x d, m0 length q, P0 q x q")
        _check_psd("Q_cov", Q)
        _check_psd("R_cov", R)
        _check_psd("P0", P0)
        for name, value in (("A", A), ("Q_cov", Q), ("H", H), ("R_cov", R), ("m0", m0), ("P0", P0)):
            object.__setattr__(self, name, value)

    @property
    def q(self) -> int:
        return int(self.A.shape[0])

    @property
    def d(self) -> int:
        return int(self.H.shape[0])

    @classmethod
    def from_json(cls, obj) -> "LinearGaussianSSM":
        if not isinstance(obj, dict) or not {"A", "Q_cov", "H"} <= set(obj):
            raise ValidationError("model JSON needs at least A, Q_cov, H arrays")
        unknown = set(obj) - {"A", "Q_cov", "H", "R_cov", "m0", "P0"}
        if unknown:
            raise ValidationError(f"unknown model keys: {sorted(unknown)}")
        get = lambda key: np.asarray(obj[key], dtype=np.float64) if key in obj else None
        return cls(
            A=np.asarray(obj["A"], dtype=np.float64),
            Q_cov=np.asarray(obj["Q_cov"], dtype=np.float64),
            H=np.asarray(obj["H"], dtype=np.float64),
            R_cov=get("R_cov"),
            m0=get("m0"),
            P0=get("P0"),
        )


def simulate_ssm(model: LinearGaussianSSM, steps: int, rng: RngStream):
    """Sample (states, observations) with Y_t observing X_t for t = 0..steps-1."""
    if not (isinstance(steps, (int, np.integer)) and steps >= 1):
        raise ValidationError("steps must be an integer >= 1")
    q, d = model.q, model.d
    init_factor = _psd_factor(model.P0)
    proc_factor = _psd_factor(model.Q_cov)
    obs_factor = _psd_factor(model.R_cov)
    states = np.empty((steps, q))
    observations = np.empty((steps, d))
    x = model.m0 + init_factor @ rng.child("init").normals(q)
    for t in range(steps):
        if t > 0:
            x = model.A @ x + proc_factor @ rng.child("state", t).normals(q)
        states[t] = x
        observations[t] = model.H @ x + obs_factor @ rng.child("obs", t).normals(d)
    return states, observations


def kalman_filter(model: LinearGaussianSSM, observations: np.ndarray):
    """Exact filtered means and covariances after each observation.

    Joseph-form update with symmetrization each step, so the recursion
    stays PSD and serves as a trustworthy oracle.
    """
    y = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if y.ndim != 2 or y.shape[1] != model.d:
        raise ValidationError(f"observations must be steps x {model.d}")
    steps = y.shape[0]
    q = model.q
    means = np.empty((steps, q))
    covs = np.empty((steps, q, q))
    mean = model.m0.copy()
    cov = model.P0.copy()
    eye = np.eye(q)
    for t in range(steps):
        if t > 0:
            mean = model.A @ mean
            cov = model.A @ cov @ model.A.T + model.Q_cov
        s_innov = model.H @ cov @ model.H.T + model.R_cov
        try:
            s_chol = linalg.cho_factor(s_innov)
        except linalg.LinAlgError as exc:
            raise ValidationError(f"innovation covariance numerically singular at step {t}") from exc
        gain = linalg.cho_solve(s_chol, model.H @ cov).T
        mean = mean + gain @ (y[t] - model.H @ mean)
        shrink = eye - gain @ model.H
        cov = shrink @ cov @ shrink.T + gain @ model.R_cov @ gain.T
        cov = 0.5 * (cov + cov.T)
        means[t] = mean
        covs[t] = cov
    return means, covs


def resample_multinomial(weights: np.ndarray, n_out: int, rng: RngStream) -> np.ndarray:
    """n_out categorical draws with replacement; indices returned sorted
    ascending (offspring order carries no information)."""
    w = _check_simplex(weights)
    edges = np.cumsum(w)
    edges[-1] = 1.0
    u = rng.uniforms(int(n_out))
    idx = np.searchsorted(edges, u, side="left")
    return np.sort(np.minimum(idx, w.size - 1))


def resample_systematic(weights: np.ndarray, n_out: int, rng: RngStream) -> np.ndarray:
    """One uniform offset, n_out evenly spaced points; lower-variance
    alternative kept out of the headline experiments."""
    w = _check_simplex(weights)
    edges = np.cumsum(w)
    edges[-1] = 1.0
    u = (rng.uniforms(1)[0] + np.arange(int(n_out))) / float(n_out)
    idx = np.searchsorted(edges, u, side="left")
    return np.minimum(idx, w.size - 1)


def _check_simplex(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1 or np.any(w < 0.0) or abs(float(np.sum(w)) - 1.0) > 1e-9:
        raise ValidationError("weights must be a probability vector")
    return w


@dataclass(frozen=True, eq=False)
class FilterTrace:
    """Per-step diagnostics of one bootstrap-filter run plus the exact oracle."""

    max_weight: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    pf_mean: np.ndarray
    kalman_mean: np.ndarray
    kalman_cov: np.ndarray
    n: int

    def __post_init__(self):
        steps = self.max_weight.shape[0]
        fields = {
            "max_weight": (steps,),
            "ess": (steps,),
            "pf_mean": (steps, self.pf_mean.shape[1]),
            "kalman_mean": (steps, self.pf_mean.shape[1]),
            "kalman_cov": (steps, self.pf_mean.shape[1], self.pf_mean.shape[1]),
        }
        for name, shape in fields.items():
            object.__setattr__(self, name, _readonly(getattr(self, name), shape))
        resampled = np.array(self.resampled, dtype=bool, copy=True)
        resampled.setflags(write=False)
        object.__setattr__(self, "resampled", resampled)
        if resampled.shape != (steps,):
            raise ValidationError("per-step fields must have equal length")
        if np.any(self.ess < 1.0) or np.any(self.ess > self.n):
            raise ValidationError("ess must lie in [1, n] at every step")

    @property
    def steps(self) -> int:
        return int(self.max_weight.shape[0])

    def csv_columns(self) -> list[str]:
        q = self.pf_mean.shape[1]
        return (
            ["t", "max_weight", "ess", "resampled"]
            + [f"pf_mean_{j}" for j in range(q)]
            + [f"kalman_mean_{j}" for j in range(q)]
        )

    def write_csv(self, path: str) -> None:
        rows = []
        for t in range(self.steps):
            rows.append(
                [t, float(self.max_weight[t]), float(self.ess[t]), int(self.resampled[t])]
                + [float(v) for v in self.pf_mean[t]]
                + [float(v) for v in self.kalman_mean[t]]
            )
        write_csv(path, self.csv_columns(), rows)


def bootstrap_filter(
    model: LinearGaussianSSM,
    observations: np.ndarray,
    n: int,
    rng: RngStream,
    resample: str = "ess_threshold",
    threshold: float = 0.5,
    resampler: str = "multinomial",
) -> FilterTrace:
    """Run the bootstrap filter and record per-step collapse diagnostics.

    Each step propagates the ensemble through the dynamics with fresh
    process noise, accumulates Gaussian log-likelihood weights, records
    max weight / ESS / weighted mean, then resamples with replacement
    per the policy (``always``, or when ESS falls below ``threshold * n``)
    and resets the weights to uniform.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 2):
        raise ValidationError("particle count n must be an integer >= 2")
    if resample not in RESAMPLE_POLICIES:
        raise ValidationError(f"resample policy must be one of {RESAMPLE_POLICIES}")
    if resampler not in RESAMPLERS:
        raise ValidationError(f"resampler must be one of {RESAMPLERS}")
    if not (0.0 < threshold <= 1.0):
        raise ValidationError("threshold must lie in (0, 1] as an ESS fraction")
    y = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if y.shape[1] != model.d or not np.all(np.isfinite(y)):
        raise ValidationError(f"observations must be finite with {model.d} columns")
    steps = y.shape[0]
    kalman_mean, kalman_cov = kalman_filter(model, y)

    resample_fn = resample_multinomial if resampler == "multinomial" else resample_systematic
    init_factor = _psd_factor(model.P0)
    proc_factor = _psd_factor(model.Q_cov)
    # Whitening factor for the observation residuals: log-likelihood is
    # -(1/2) |L^{-1} (y - H x)|^2 up to a particle-independent constant.
    try:
        r_chol = linalg.cholesky(model.R_cov, lower=True)
    except linalg.LinAlgError as exc:
        raise ValidationError("R_cov must be positive definite for likelihood evaluation") from exc

    particles = model.m0 + rng.child("init").normals(n * model.q).reshape(n, model.q) @ init_factor.T
    log_carry = np.zeros(n)
    ones = np.ones(model.d)

    max_w = np.empty(steps)
    ess_t = np.empty(steps)
    resampled = np.zeros(steps, dtype=bool)
    pf_mean = np.empty((steps, model.q))
    for t in range(steps):
        if t > 0:
            noise = rng.child("step", t, "propagate").normals(n * model.q).reshape(n, model.q)
            particles = particles @ model.A.T + noise @ proc_factor.T
        residual = y[t] - particles @ model.H.T
        white = linalg.solve_triangular(r_chol, residual.T, lower=True).T
        step_ll = -0.5 * (white**2 @ ones)
        if not np.all(np.isfinite(step_ll)):
            raise ValidationError(f"non-finite log-likelihoods at step {t}")
        log_carry = log_carry + step_ll
        weights, max_w[t], ess_t[t] = normalize(log_carry)
        pf_mean[t] = weights @ particles
        if resample == "always" or ess_t[t] < threshold * n:
            idx = resample_fn(weights, n, rng.child("step", t, "resample"))
            particles = particles[idx]
            log_carry = np.zeros(n)
            resampled[t] = True
    return FilterTrace(
        max_weight=max_w,
        ess=ess_t,
        resampled=resampled,
        pf_mean=pf_mean,
        kalman_mean=kalman_mean,
        kalman_cov=kalman_cov,
        n=int(n),
    )
