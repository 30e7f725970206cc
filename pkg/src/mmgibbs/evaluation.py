"""Sample-quality and oracle tools: unbiased MMD, grid-quadrature posterior
moments, mode coverage and effective sample size."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DataIOError, GridTooCoarseError
from .models import GaussianMixture, noisy_mog

DEFAULT_BANDWIDTHS = (0.25, 0.5, 1.0, 2.0, 4.0)
NORMALIZATION_TOL = 1e-2


def _coef(bandwidths):
    h = np.asarray(bandwidths, dtype=np.float64)
    if h.ndim != 1 or h.size == 0 or np.any(~(h > 0)):
        raise ConfigError("bandwidths must be a nonempty list of positive numbers")
    return 1.0 / (2.0 * h * h)


def _points(a, name):
    a = np.asarray(getattr(a, "points", a), dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ConfigError(f"{name} must be an (n, d) array with n >= 2")
    return a


@dataclass
class MmdReport:
    mmd2: float
    per_bandwidth: np.ndarray
    n_a: int
    n_b: int
    bandwidths: tuple

    @property
    def mmd(self):
        """``sqrt(max(mmd2, 0))``."""
        return float(np.sqrt(max(self.mmd2, 0.0)))

    def csv_header(self):
        return ["seed", "n_a", "n_b", "mmd2"] + [f"h={h:g}" for h in self.bandwidths]

    def csv_row(self, seed=""):
        return [seed, self.n_a, self.n_b, repr(self.mmd2)] + [repr(float(v)) for v in self.per_bandwidth]


def write_mmd_csv(path, reports, seeds=None):
    if not reports:
        raise ConfigError("no MMD reports to write")
    seeds = seeds if seeds is not None else [""] * len(reports)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(reports[0].csv_header())
            for s, r in zip(seeds, reports):
                w.writerow(r.csv_row(s))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def self_term(points, bandwidths=DEFAULT_BANDWIDTHS):
    """Per-bandwidth ``sum_{i != j} k(x_i, x_j) / (n (n - 1))``; reusable across mmd calls."""
    X = _points(points, "points")
    n = X.shape[0]
    return _kernels.kernel_sums(X, X, _coef(bandwidths), True) / (n * (n - 1))


def mmd(a, b, bandwidths=DEFAULT_BANDWIDTHS, self_a=None, self_b=None) -> MmdReport:
    """Unbiased MMD^2 with the kernel ``sum_h exp(-||x - y||^2 / (2 h^2))``.

    ``self_a``/``self_b`` accept precomputed :func:`self_term` values. The
    cross term is always accumulated in a canonical argument order, so
    ``mmd(a, b)`` and ``mmd(b, a)`` agree bit for bit.
    """
    A = _points(a, "a")
    B = _points(b, "b")
    if A.shape[1] != B.shape[1]:
        raise ConfigError("sample sets have different dimensions")
    coef = _coef(bandwidths)
    ta = self_term(A, bandwidths) if self_a is None else np.asarray(self_a)
    tb = self_term(B, bandwidths) if self_b is None else np.asarray(self_b)
    P, Q = (A, B) if (A.shape[0], A.tobytes()) <= (B.shape[0], B.tobytes()) else (B, A)
    cross = _kernels.kernel_sums(P, Q, coef, False) / (A.shape[0] * B.shape[0])
    per = ta + tb - 2.0 * cross
    return MmdReport(float(np.sum(per)), per, A.shape[0], B.shape[0], tuple(float(h) for h in bandwidths))


def _kernel_matrix(Z, bandwidths):
    d2 = np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
    K = np.zeros_like(d2)
    for c in _coef(bandwidths):
        K += np.exp(-c * d2)
    return K


def mmd_permutation_test(a, b, n_permutations=200, rng=None, bandwidths=DEFAULT_BANDWIDTHS, max_points=6000):
    """Permutation null for MMD^2. Returns ``(statistic, p_value, null_values)``.

    Builds the pooled kernel matrix once, so the pooled size is capped at
    ``max_points``.
    """
    A = _points(a, "a")
    B = _points(b, "b")
    m, n = A.shape[0], B.shape[0]
    if m + n > max_points:
        raise ConfigError(f"pooled size {m + n} exceeds max_points={max_points}")
    rng = np.random.default_rng() if rng is None else rng
    K = _kernel_matrix(np.vstack([A, B]), bandwidths)
    np.fill_diagonal(K, 0.0)

    def stat(idx):
        ia, ib = idx[:m], idx[m:]
        kaa = K[np.ix_(ia, ia)].sum() / (m * (m - 1))
        kbb = K[np.ix_(ib, ib)].sum() / (n * (n - 1))
        kab = K[np.ix_(ia, ib)].sum() / (m * n)
        return kaa + kbb - 2.0 * kab

    observed = stat(np.arange(m + n))
    null = np.array([stat(rng.permutation(m + n)) for _ in range(n_permutations)])
    p = (1 + np.sum(null >= observed)) / (n_permutations + 1)
    return float(observed), float(p), null


# ---------------------------------------------------------------- grid oracle

@dataclass
class GridOracle:
    """Tensor-product trapezoid grid: ``nodes`` per axis over ``[lo, hi]`` per dimension."""

    lo: tuple = (-2.0, -2.0)
    hi: tuple = (2.0, 2.0)
    nodes: int = 401

    def __post_init__(self):
        self.lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        self.hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(self.lo) != len(self.hi):
            raise ConfigError("lo and hi need the same length")
        if self.nodes < 3:
            raise ConfigError("grid needs at least 3 nodes per dimension")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigError("grid box is empty")
        self._cache = {}

    @classmethod
    def around(cls, center, half_width, nodes=401):
        c = np.atleast_1d(np.asarray(center, dtype=np.float64))
        return cls(tuple(c - half_width), tuple(c + half_width), nodes)

    @property
    def dim(self):
        return len(self.lo)

    def axes(self):
        return [np.linspace(l, h, self.nodes) for l, h in zip(self.lo, self.hi)]

    def points(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def weights(self):
        out = np.ones(1)
        for ax in self.axes():
            w = np.full(self.nodes, ax[1] - ax[0])
            w[0] *= 0.5
            w[-1] *= 0.5
            out = np.multiply.outer(out, w)
        return out.ravel()

    def log_density(self, mog: GaussianMixture):
        """``log p_d`` at the grid nodes, cached per mixture."""
        key = id(mog)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not mog:
            hit = (mog, mog.logpdf(self.points()))
            self._cache[key] = hit
        return hit[1]


@dataclass
class GridMoments:
    mean: np.ndarray
    cov: np.ndarray
    normalization: float


def grid_posterior_moments(mog: GaussianMixture, sigma, x_tilde, grid: GridOracle | None = None) -> GridMoments:
    """Mean and covariance of ``p(x | x_tilde)`` by trapezoid quadrature.

    The integrand is normalized with the exact noisy density, so the
    quadrature of the posterior itself should be 1; a deviation beyond 1e-2
    raises :class:`GridTooCoarseError`.
    """
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    grid = GridOracle() if grid is None else grid
    if grid.dim != mog.dim:
        raise ConfigError("grid and mixture dimensions differ")
    xt = np.asarray(x_tilde, dtype=np.float64).reshape(mog.dim)
    X = grid.points()
    d = mog.dim
    loglik = -0.5 * np.sum((X - xt) ** 2, axis=1) / sigma**2 - 0.5 * d * np.log(2.0 * np.pi * sigma**2)
    logp = loglik + grid.log_density(mog) - float(noisy_mog(mog, sigma).logpdf(xt))
    p = np.exp(logp) * grid.weights()
    Z = float(p.sum())
    if not abs(Z - 1.0) <= NORMALIZATION_TOL:
        raise GridTooCoarseError(f"posterior mass on the grid is {Z:.6g}; enlarge or refine the grid")
    mean = p @ X / Z
    R = X - mean
    cov = (R * p[:, None]).T @ R / Z
    return GridMoments(mean, 0.5 * (cov + cov.T), Z)


# ---------------------------------------------------------------- diagnostics

def mode_coverage(samples, means, radius):
    """Fraction of samples strictly within ``radius`` of each mean."""
    X = np.asarray(getattr(samples, "points", samples), dtype=np.float64)
    M = np.asarray(means, dtype=np.float64)
    if radius < 0:
        raise ConfigError("radius must be nonnegative")
    if len(X) == 0:
        return np.zeros(len(M))
    d2 = np.sum((X[:, None, :] - M[None, :, :]) ** 2, axis=-1)
    return np.mean(d2 < radius * radius, axis=0)


def nearest_mode_fractions(samples, means):
    """Fraction of samples whose nearest mean is each mean (sums to 1)."""
    X = np.asarray(getattr(samples, "points", samples), dtype=np.float64)
    M = np.asarray(means, dtype=np.float64)
    if len(X) == 0:
        return np.zeros(len(M))
    d2 = np.sum((X[:, None, :] - M[None, :, :]) ** 2, axis=-1)
    return np.bincount(np.argmin(d2, axis=1), minlength=len(M)) / len(X)


def autocorrelation(x, max_lag=None):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    if acov[0] == 0:
        return np.ones(1)
    rho = acov / acov[0]
    return rho if max_lag is None else rho[: max_lag + 1]


def effective_sample_size(x):
    """ESS of a 1D chain using Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if rho.size == 1:
        return float(n)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / n)
    return float(min(n / tau, n))


def chain_standard_errors(x):
    """Autocorrelation-adjusted standard errors of the sample mean and variance of a 1D chain."""
    x = np.asarray(x, dtype=np.float64)
    m = x.mean()
    sq = (x - m) ** 2
    se_mean = np.sqrt(x.var(ddof=1) / effective_sample_size(x))
    se_var = np.sqrt(sq.var(ddof=1) / effective_sample_size(sq))
    return float(se_mean), float(se_var)
