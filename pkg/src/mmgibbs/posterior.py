"""Gaussian approximations of the denoising posterior p(x | x_tilde).

Given a model of the noisy density at noise level ``sigma`` the moment-matched
posterior has

    mean        x_tilde + sigma^2 * score(x_tilde)
    covariance  sigma^4 * Hess log q(x_tilde) + sigma^2 I

with three covariance structures (full, Rademacher-estimated diagonal,
x_tilde-independent isotropic) plus a learned diagonal baseline.

``model_sigma`` lets the noise level the model is conditioned on differ from
the Gaussian kernel width ``sigma``; the multi-level sampler needs this
(kernel width is the relative noise between adjacent levels).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ConfigError
from .models import PosteriorNet

EPS_CLAMP = 1e-6
PSD_REL_FLOOR = 1e-8
LOG_2PI = float(np.log(2.0 * np.pi))

KINDS = ("full", "diag", "iso", "learned")
PROVENANCE = {"full": "mm_full", "diag": "mm_diag", "iso": "mm_iso", "learned": "learned"}


@dataclass
class GaussianApprox:
    """N(mean, cov) for one point or a batch.

    ``structure`` is "full" (cov ``(..., d, d)``), "diag" (``(..., d)``) or
    "iso" (``(...)`` scalar variance).
    """

    mean: np.ndarray
    cov: np.ndarray
    structure: str
    provenance: str
    repair: float = 0.0

    @property
    def dim(self):
        return self.mean.shape[-1]

    def variances(self):
        """Marginal variances, shape like ``mean``."""
        if self.structure == "full":
            return np.diagonal(self.cov, axis1=-2, axis2=-1).copy()
        if self.structure == "diag":
            return self.cov
        return np.broadcast_to(np.asarray(self.cov)[..., None], self.mean.shape).copy()

    def logpdf(self, x):
        """Log density at ``x`` (single approximation, batch of points)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = x - self.mean
        d = self.dim
        if self.structure == "full":
            L = np.linalg.cholesky(self.cov)
            z = np.linalg.solve(L, r.T).T
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
        else:
            var = self.variances()
            z = r / np.sqrt(var)
            logdet = np.sum(np.log(var))
        return -0.5 * (np.sum(z * z, axis=1) + logdet + d * LOG_2PI)


@dataclass(frozen=True)
class PosteriorKind:
    """Which approximation a chain uses; ``samples`` is the Rademacher count for "diag"."""

    name: str
    samples: int = 3

    def __post_init__(self):
        if self.name not in KINDS:
            raise ConfigError(f"unknown posterior kind {self.name!r}; expected one of {KINDS}")
        if self.samples < 1:
            raise ConfigError("Rademacher sample count must be >= 1")

    @classmethod
    def parse(cls, text) -> "PosteriorKind":
        if isinstance(text, PosteriorKind):
            return text
        name, _, arg = str(text).partition(":")
        if arg:
            if name != "diag":
                raise ConfigError(f"posterior kind {name!r} takes no argument")
            try:
                return cls(name, int(arg))
            except ValueError as exc:
                raise ConfigError(f"bad Rademacher count in {text!r}") from exc
        return cls(name)

    def __str__(self):
        return f"diag:{self.samples}" if self.name == "diag" else self.name


def _points(model_dim, x_tilde):
    X = np.asarray(x_tilde, dtype=np.float64)
    squeeze = X.ndim == 1
    X = X[None, :] if squeeze else X
    if X.shape[1] != model_dim:
        raise ConfigError(f"x_tilde has dimension {X.shape[1]}, model has {model_dim}")
    return X, squeeze


def _check_sigma(sigma):
    if not sigma > 0:
        raise ConfigError("sigma must be positive")


def mm_mean(model, x_tilde, sigma, model_sigma=None):
    """Posterior mean ``x_tilde + sigma^2 * score(x_tilde)``."""
    _check_sigma(sigma)
    ms = sigma if model_sigma is None else model_sigma
    return np.asarray(x_tilde, dtype=np.float64) + sigma**2 * model.score(x_tilde, ms)


def psd_repair(C, floor):
    """Clamp eigenvalues of symmetric matrices at ``floor``.

    Returns ``(repaired, magnitude)``; magnitude is the largest absolute
    entry change (0 when nothing needed clamping).
    """
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    w, Q = np.linalg.eigh(C)
    if np.all(w >= floor):
        return C, 0.0
    wc = np.maximum(w, floor)
    R = np.einsum("...ij,...j,...kj->...ik", Q, wc, Q)
    R = 0.5 * (R + np.swapaxes(R, -1, -2))
    return R, float(np.max(np.abs(R - C)))


def mm_full_cov(model, x_tilde, sigma, model_sigma=None, return_repair=False):
    """``sigma^4 * Hess log q + sigma^2 I`` with a spectral PSD repair."""
    _check_sigma(sigma)
    if not getattr(model, "has_exact_hessian", False):
        raise CapabilityError(
            "full covariance needs a symmetric Hessian (energy parameterization); use mm_diag_cov instead"
        )
    ms = sigma if model_sigma is None else model_sigma
    X, squeeze = _points(model.dim, x_tilde)
    d = X.shape[1]
    # model.hessian is the Hessian of the energy = -Hess log q
    C = -sigma**4 * model.hessian(X, ms) + sigma**2 * np.eye(d)
    C, repair = psd_repair(C, PSD_REL_FLOOR * sigma**2)
    if squeeze:
        C = C[0]
    return (C, repair) if return_repair else C


def rademacher(rng: np.random.Generator, shape):
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0


def diag_hessian_estimate(model, X, vectors, model_sigma):
    """Average of ``v * (Hess log q) v`` over ``vectors`` of shape (S, B, d)."""
    S, B, d = vectors.shape
    Xt = np.broadcast_to(X, (S, B, d)).reshape(S * B, d)
    V = vectors.reshape(S * B, d)
    Hv = -model.hvp(Xt, V, model_sigma)  # Hess log q = -Hess f
    return np.mean((V * Hv).reshape(S, B, d), axis=0)


def mm_diag_cov(model, x_tilde, sigma, S=3, eps_clamp=EPS_CLAMP, rng=None, model_sigma=None,
                vectors=None, clamp=True):
    """Diagonal covariance from the Rademacher diagonal-Hessian estimator.

    ``vectors`` overrides the random draws: shape (S, d) applied to every
    point, or (S, B, d) per point. Without ``clamp`` the raw (unbiased)
    estimate ``sigma^4 * diag + sigma^2`` is returned.
    """
    _check_sigma(sigma)
    if eps_clamp <= 0:
        raise ConfigError("eps_clamp must be positive")
    ms = sigma if model_sigma is None else model_sigma
    X, squeeze = _points(model.dim, x_tilde)
    B, d = X.shape
    if vectors is None:
        if S < 1:
            raise ConfigError("need at least one Rademacher vector")
        if rng is None:
            raise ConfigError("mm_diag_cov needs an rng or explicit vectors")
        vectors = rademacher(rng, (S, B, d))
    else:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim == 2:
            vectors = np.broadcast_to(vectors[:, None, :], (vectors.shape[0], B, d))
    var = sigma**4 * diag_hessian_estimate(model, X, vectors, ms) + sigma**2
    if clamp:
        var = np.maximum(var, eps_clamp)
    return var[0] if squeeze else var


def iso_variance(model, noisy_samples, sigma, eps_clamp=EPS_CLAMP, model_sigma=None):
    """x_tilde-independent variance ``sigma^2 - sigma^4/d * <||score||^2>``."""
    _check_sigma(sigma)
    X = np.atleast_2d(np.asarray(noisy_samples, dtype=np.float64))
    if X.shape[0] == 0:
        raise ConfigError("need at least one noisy sample")
    ms = sigma if model_sigma is None else model_sigma
    s = model.score(X, ms)
    var = sigma**2 - sigma**4 / X.shape[1] * float(np.mean(np.sum(s * s, axis=1)))
    if var < eps_clamp:
        warnings.warn(f"isotropic variance estimate {var:.3g} clamped to {eps_clamp:g}", RuntimeWarning)
        var = eps_clamp
    return var


def learned_posterior(net: PosteriorNet, x_tilde) -> GaussianApprox:
    mean, log_std = net.predict(x_tilde)
    return GaussianApprox(mean, np.exp(2.0 * log_std), "diag", "learned")


def moment_matched(model, x_tilde, sigma, kind: PosteriorKind, *, iso_var=None, rng=None, vectors=None,
                   model_sigma=None, eps_clamp=EPS_CLAMP) -> GaussianApprox:
    """Build one of the three moment-matching approximations at ``x_tilde``."""
    mean = mm_mean(model, x_tilde, sigma, model_sigma)
    if kind.name == "full":
        cov, repair = mm_full_cov(model, x_tilde, sigma, model_sigma, return_repair=True)
        return GaussianApprox(mean, cov, "full", "mm_full", repair)
    if kind.name == "diag":
        var = mm_diag_cov(model, x_tilde, sigma, kind.samples, eps_clamp, rng, model_sigma, vectors)
        return GaussianApprox(mean, var, "diag", "mm_diag")
    if kind.name == "iso":
        if iso_var is None:
            raise ConfigError("isotropic posterior needs a precomputed variance")
        return GaussianApprox(mean, np.full(mean.shape[:-1], float(iso_var)), "iso", "mm_iso")
    raise ConfigError(f"{kind} is not a moment-matching approximation")


def sample_gaussian(approx: GaussianApprox, rng=None, z=None):
    """Draw ``mean + L z``; pass ``z`` to control the standard-normal input."""
    mean = np.asarray(approx.mean)
    if z is None:
        if rng is None:
            raise ConfigError("sample_gaussian needs an rng or z")
        z = rng.standard_normal(mean.shape)
    if approx.structure == "full":
        try:
            L = np.linalg.cholesky(approx.cov)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("Cholesky failed on a repaired covariance") from exc
        return mean + np.einsum("...ij,...j->...i", L, z)
    return mean + np.sqrt(approx.variances()) * z


def write_posterior_grid(path, grid_points, true_log_density, approx_log_density):
    """CSV dump: x1, x2, true_log_density, approx_log_density per node."""
    rows = np.column_stack([grid_points, true_log_density, approx_log_density])
    header = ",".join([f"x{i + 1}" for i in range(grid_points.shape[1])] + ["true_log_density", "approx_log_density"])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
