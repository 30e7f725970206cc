"""Self-checks of the moment-matching identities and the differentiation
engine, run against closed-form oracles. Used by ``mmgibbs verify-identities``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import GridOracle, grid_posterior_moments
from .models import MixtureModel, gaussian, corner_mog
from .numgrad import MlpParams, forward, grad_input, hvp_input, param_grad_of_dsm_term
from .posterior import iso_variance, mm_diag_cov, mm_full_cov, mm_mean, moment_matched, PosteriorKind


@dataclass
class Check:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} error={self.error:.3e} tol={self.tolerance:.1e}"


def rel_err(a, b):
    """``max|a - b| / max|b|``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def probe_points(mog, sigma, n, rng):
    """Noisy draws from the mixture, the natural place to probe posteriors."""
    return mog.noisy(sigma).sample(n, rng)


def fd_jacobian(fn, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def sign_vectors(d):
    """All 2^d Rademacher vectors, shape (2^d, d)."""
    grid = np.array(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij"))
    return grid.reshape(d, -1).T


def symmetric_design(mean, var, d):
    """2d points mean +- sqrt(d var) e_i; matches the first two moments of N(mean, var I) exactly."""
    r = np.sqrt(d * var)
    eye = np.eye(d)
    return np.vstack([mean + r * eye, mean - r * eye])


def mean_identity(sigma=0.2, n=10, seed=0):
    mog = corner_mog(0.2)
    model = MixtureModel(mog)
    pts = probe_points(mog, sigma, n, np.random.default_rng(seed))
    grid = GridOracle()
    err = max(np.max(np.abs(mm_mean(model, p, sigma) - grid_posterior_moments(mog, sigma, p, grid).mean))
              for p in pts)
    return Check("mean identity vs grid quadrature (Linf)", float(err), 1e-3)


def covariance_identity(sigma=0.2, n=10, seed=0):
    mog = corner_mog(0.2)
    model = MixtureModel(mog)
    pts = probe_points(mog, sigma, n, np.random.default_rng(seed))
    grid = GridOracle()
    e_grid = 0.0
    e_jac = 0.0
    for p in pts:
        C = mm_full_cov(model, p, sigma)
        e_grid = max(e_grid, float(np.max(np.abs(C - grid_posterior_moments(mog, sigma, p, grid).cov))))
        J = fd_jacobian(lambda x: mm_mean(model, x, sigma), p)
        e_jac = max(e_jac, rel_err(C, sigma**2 * J))
    return [Check("covariance identity vs grid quadrature (entrywise)", e_grid, 1e-3),
            Check("covariance identity vs sigma^2 * Jacobian of the mean (relative)", e_jac, 1e-5)]


def gaussian_closed_form(mu=(0.3, -0.5), std=0.7, sigma=0.4, n=10, seed=0):
    mu = np.asarray(mu, dtype=np.float64)
    d = mu.size
    model = MixtureModel(gaussian(mu, std))
    vd, v = std**2, sigma**2
    rng = np.random.default_rng(seed)
    pts = mu + np.sqrt(vd + v) * rng.standard_normal((n, d))
    want_mean = (v * mu + vd * pts) / (v + vd)
    want_var = vd * v / (v + vd)
    iso = iso_variance(model, symmetric_design(mu, vd + v, d), sigma)
    err = 0.0
    for kind in ("full", "diag:1", "iso"):
        a = moment_matched(model, pts, sigma, PosteriorKind.parse(kind), iso_var=iso,
                           vectors=np.ones((1, d)))
        err = max(err, float(np.max(np.abs(a.mean - want_mean))))
        err = max(err, float(np.max(np.abs(a.variances() - want_var))))
        if a.structure == "full":
            off = a.cov - np.eye(d) * want_var
            err = max(err, float(np.max(np.abs(off))))
    return Check("single-Gaussian closed form, all three structures", err, 1e-10)


def isotropic_identity(sigma=0.2, n=100_000, seed=0):
    mog = corner_mog(0.2)
    model = MixtureModel(mog)
    pts = probe_points(mog, sigma, n, np.random.default_rng(seed))
    iso = iso_variance(model, pts, sigma)
    C = mm_full_cov(model, pts, sigma)
    tr = float(np.mean(np.trace(C, axis1=1, axis2=2)) / mog.dim)
    return Check("isotropic variance vs mean trace of full covariance (relative)", abs(iso - tr) / tr, 0.02)


def rademacher_exhaustive(sigma=0.2, n=10, seed=0):
    mog = corner_mog(0.2)
    model = MixtureModel(mog)
    pts = probe_points(mog, sigma, n, np.random.default_rng(seed))
    d = mog.dim
    raw = -sigma**4 * model.hessian(pts, sigma) + sigma**2 * np.eye(d)
    est = mm_diag_cov(model, pts, sigma, vectors=sign_vectors(d), clamp=False)
    err = float(np.max(np.abs(est - np.diagonal(raw, axis1=1, axis2=2))))
    return Check("Rademacher average over all sign vectors vs exact diagonal", err, 1e-12)


def autodiff_checks(n=10, seed=0):
    rng = np.random.default_rng(seed)
    params = MlpParams.init([2, 16, 16, 1], rng)
    h = 1e-4
    worst = 0.0
    for _ in range(n):
        x = rng.standard_normal(2)
        v = rng.standard_normal(2)
        g = grad_input(params, x)
        fd = fd_jacobian(lambda z: np.atleast_1d(_energy(params, z)), x, h)[0]
        worst = max(worst, rel_err(g, fd))
        hv = hvp_input(params, x, v)
        fd = (grad_input(params, x + h * v) - grad_input(params, x - h * v)) / (2 * h)
        worst = max(worst, rel_err(hv, fd))
        xt = x + 0.2 * rng.standard_normal(2)
        _, grads = param_grad_of_dsm_term(params, x, xt, 0.2)
        flat = params.flatten()
        idx = rng.choice(flat.size, 5, replace=False)
        for i in idx:
            e = np.zeros_like(flat)
            e[i] = h
            up = param_grad_of_dsm_term(params.with_flat(flat + e), x, xt, 0.2)[0]
            dn = param_grad_of_dsm_term(params.with_flat(flat - e), x, xt, 0.2)[0]
            num = (up - dn) / (2 * h)
            ana = grads.flatten()[i]
            worst = max(worst, abs(ana - num) / max(abs(num), 1e-6))
    return Check("input gradient, HVP and DSM parameter gradient vs central differences", worst, 1e-4)


def _energy(params, x):
    return forward(params, x)[0]


def run_all(iso_samples=100_000):
    checks = [mean_identity()]
    checks += covariance_identity()
    checks.append(gaussian_closed_form())
    checks.append(isotropic_identity(n=iso_samples))
    checks.append(rademacher_exhaustive())
    checks.append(autodiff_checks())
    return checks
