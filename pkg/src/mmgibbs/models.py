"""Energy models: analytic Gaussian-mixture oracles and MLP-backed models.

Every model exposes the same batched surface::

    energy(x, sigma)       -> f(x)                 (B,) or scalar
    score(x, sigma)        -> -grad f(x)           (B, d) or (d,)
    hvp(x, v, sigma)       -> (Hessian of f) v     (B, d) or (d,)
    hessian(x, sigma)      -> Hessian of f         (B, d, d) or (d, d)

``sigma`` selects the noise level for noise-conditioned models and for the
analytic mixture (which is convolved with N(0, sigma^2 I) exactly); plain
single-level MLPs ignore it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import _kernels
from .errors import CapabilityError, ChecksumError, ConfigError, DataIOError, ParseError
from .numgrad import (
    MlpParams,
    _as_batch,
    _forward,
    _hvp,
    _input_backward,
    _push_tangent,
    hessian_input,
)

LOG_2PI = float(np.log(2.0 * np.pi))


class EnergyModel(Protocol):
    dim: int
    has_exact_hessian: bool
    sigma_conditioned: bool

    def energy(self, x, sigma=None): ...

    def score(self, x, sigma=None): ...

    def hvp(self, x, v, sigma=None): ...

    def hessian(self, x, sigma=None): ...


def _batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.ndim != 2 or X.shape[1] != d:
        raise ConfigError(f"points have shape {x.shape}, model dimension is {d}")
    return X, squeeze


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture: shared component std, arbitrary weights."""

    weights: np.ndarray
    means: np.ndarray
    component_std: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "component_std", float(self.component_std))
        if w.ndim != 1 or w.shape[0] != m.shape[0]:
            raise ConfigError("need exactly one weight per component mean")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        if not self.component_std > 0:
            raise ConfigError("component_std must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def _eval(self, x, want_hessian):
        X, squeeze = _batch(x, self.dim)
        out = _kernels.mog_eval(X, self.means, self.log_weights, self.component_std**2, want_hessian)
        return out, squeeze

    def logpdf(self, x):
        (logp, _, _), squeeze = self._eval(x, False)
        return float(logp[0]) if squeeze else logp

    def score(self, x):
        (_, s, _), squeeze = self._eval(x, False)
        return s[0] if squeeze else s

    def hessian(self, x):
        (_, _, H), squeeze = self._eval(x, True)
        return H[0] if squeeze else H

    def sample(self, n, rng: np.random.Generator):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + self.component_std * rng.standard_normal((n, self.dim))

    def noisy(self, sigma) -> "GaussianMixture":
        return noisy_mog(self, sigma)

    def shifted(self, c) -> "GaussianMixture":
        return GaussianMixture(self.weights, self.means + np.asarray(c, dtype=np.float64), self.component_std)


def corner_mog(component_std=0.2) -> GaussianMixture:
    """Four equal-weight components at the corners of [-1, 1]^2."""
    means = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [1.0, -1.0]])
    return GaussianMixture(np.full(4, 0.25), means, component_std)


def gaussian(mean, std) -> GaussianMixture:
    """Single isotropic Gaussian as a one-component mixture."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    return GaussianMixture(np.ones(1), mean[None, :], std)


def mog_logpdf(mog: GaussianMixture, x):
    return mog.logpdf(x)


def mog_score(mog: GaussianMixture, x):
    return mog.score(x)


def mog_hessian(mog: GaussianMixture, x):
    return mog.hessian(x)


def noisy_mog(mog: GaussianMixture, sigma) -> GaussianMixture:
    """The mixture convolved with N(0, sigma^2 I)."""
    if sigma < 0:
        raise ConfigError("sigma must be nonnegative")
    return GaussianMixture(mog.weights, mog.means, np.sqrt(mog.component_std**2 + sigma**2))


def true_posterior_logpdf(mog: GaussianMixture, sigma, x_tilde, x):
    """log p(x | x_tilde) by Bayes rule; ``x`` may be a batch of evaluation points."""
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    X, squeeze = _batch(x, mog.dim)
    d = mog.dim
    loglik = -0.5 * np.sum((X - x_tilde) ** 2, axis=1) / sigma**2 - 0.5 * d * (LOG_2PI + 2 * np.log(sigma))
    out = loglik + mog.logpdf(X) - noisy_mog(mog, sigma).logpdf(x_tilde)
    return float(out[0]) if squeeze else out


class MixtureModel:
    """Analytic noisy-density oracle: at noise ``sigma`` the model is the
    clean mixture convolved with N(0, sigma^2 I)."""

    has_exact_hessian = True
    sigma_conditioned = True

    def __init__(self, mog: GaussianMixture, default_sigma=None):
        self.mog = mog
        self.default_sigma = default_sigma

    @property
    def dim(self):
        return self.mog.dim

    def _at(self, sigma):
        if sigma is None:
            sigma = self.default_sigma
        if sigma is None:
            raise ConfigError("analytic mixture model needs a noise level")
        return noisy_mog(self.mog, sigma)

    def energy(self, x, sigma=None):
        lp = self._at(sigma).logpdf(x)
        return -lp

    def score(self, x, sigma=None):
        return self._at(sigma).score(x)

    def hessian(self, x, sigma=None):
        return -self._at(sigma).hessian(x)

    def hvp(self, x, v, sigma=None):
        H = self.hessian(x, sigma)
        return np.einsum("...ij,...j->...i", H, np.asarray(v, dtype=np.float64))


class _MlpBacked:
    sigma_conditioned: bool

    def __init__(self, params: MlpParams, sigma_conditioned=False):
        self.params = params
        self.sigma_conditioned = bool(sigma_conditioned)
        extra = 1 if self.sigma_conditioned else 0
        self.dim = params.in_dim - extra
        if self.dim < 1:
            raise ConfigError("network input too small for its conditioning")

    def net_input(self, x, sigma):
        """Append ``log sigma`` for conditioned models."""
        X, squeeze = _batch(x, self.dim)
        if not self.sigma_conditioned:
            return X, squeeze
        if sigma is None:
            raise ConfigError("noise-conditioned model needs sigma")
        s = np.broadcast_to(np.log(np.asarray(sigma, dtype=np.float64)), (X.shape[0],))
        return np.column_stack([X, s]), squeeze

    def _pad(self, V):
        if not self.sigma_conditioned:
            return V
        return np.column_stack([V, np.zeros(V.shape[0])])


class MlpEnergy(_MlpBacked):
    """Scalar energy network; score and Hessian come from differentiating it."""

    has_exact_hessian = True
    kind = "energy"

    def __init__(self, params: MlpParams, sigma_conditioned=False):
        if params.out_dim != 1:
            raise ConfigError("energy network must have a scalar head")
        super().__init__(params, sigma_conditioned)

    def energy(self, x, sigma=None):
        Xn, squeeze = self.net_input(x, sigma)
        f = _forward(self.params, Xn).output[:, 0]
        return float(f[0]) if squeeze else f

    def score(self, x, sigma=None):
        Xn, squeeze = self.net_input(x, sigma)
        g = -_input_backward(self.params, _forward(self.params, Xn))[:, : self.dim]
        return g[0] if squeeze else g

    def hvp(self, x, v, sigma=None):
        Xn, squeeze = self.net_input(x, sigma)
        V = np.asarray(v, dtype=np.float64)
        V = np.broadcast_to(V[None, :] if V.ndim == 1 else V, (Xn.shape[0], self.dim))
        out = _hvp(self.params, Xn, self._pad(V))[:, : self.dim]
        return out[0] if squeeze else out

    def hessian(self, x, sigma=None, return_asymmetry=False):
        Xn, squeeze = self.net_input(x, sigma)
        H, asym = hessian_input(self.params, Xn, return_asymmetry=True)
        H = H[:, : self.dim, : self.dim]
        if squeeze:
            H, asym = H[0], float(asym[0])
        return (H, asym) if return_asymmetry else H


class ScoreMlp(_MlpBacked):
    """Network that emits the score directly (no energy, Jacobian not symmetric)."""

    has_exact_hessian = False
    kind = "score"

    def __init__(self, params: MlpParams, sigma_conditioned=False):
        super().__init__(params, sigma_conditioned)
        if params.out_dim != self.dim:
            raise ConfigError("score network output must match the data dimension")

    def energy(self, x, sigma=None):
        raise CapabilityError("score-parameterized model has no energy")

    def score(self, x, sigma=None):
        Xn, squeeze = self.net_input(x, sigma)
        s = _forward(self.params, Xn).output
        return s[0] if squeeze else s

    def hvp(self, x, v, sigma=None):
        # negated Jacobian of the score along v
        Xn, squeeze = self.net_input(x, sigma)
        V = np.asarray(v, dtype=np.float64)
        V = np.broadcast_to(V[None, :] if V.ndim == 1 else V, (Xn.shape[0], self.dim))
        trace = _push_tangent(self.params, _forward(self.params, Xn), self._pad(V))
        out = -trace.tangent_pre[-1]
        return out[0] if squeeze else out

    def hessian(self, x, sigma=None):
        raise CapabilityError(
            "score-parameterized model has no symmetric Hessian; use the diagonal (Rademacher) posterior"
        )


class PosteriorNet:
    """Diagonal Gaussian q(x | x_tilde): first d outputs mean, last d log-std."""

    kind = "posterior"
    LOG_STD_RANGE = (-10.0, 5.0)

    def __init__(self, params: MlpParams):
        if params.out_dim != 2 * params.in_dim:
            raise ConfigError("posterior net needs out_dim == 2 * in_dim")
        self.params = params
        self.dim = params.in_dim

    def predict(self, x_tilde):
        """Mean and clamped log-std."""
        X, squeeze = _as_batch(self.params, x_tilde)
        out = _forward(self.params, X).output
        mean = out[:, : self.dim]
        log_std = np.clip(out[:, self.dim:], *self.LOG_STD_RANGE)
        if squeeze:
            return mean[0], log_std[0]
        return mean, log_std


# ---------------------------------------------------------------- checkpoints

CHECKSUM_PREFIX = "# sha256 "


def _dump_params(params: MlpParams):
    return {
        "sizes": params.sizes,
        "activation": params.activation,
        "weights": [[repr(float(v)) for v in w.ravel()] for w in params.weights],
        "biases": [[repr(float(v)) for v in b] for b in params.biases],
    }


def _load_params(obj) -> MlpParams:
    sizes = obj["sizes"]
    ws = [np.array([float(v) for v in w]).reshape(o, i) for w, i, o in zip(obj["weights"], sizes[:-1], sizes[1:])]
    bs = [np.array([float(v) for v in b]) for b in obj["biases"]]
    return MlpParams(ws, bs, obj.get("activation", "swish"))


@dataclass
class Checkpoint:
    model: object
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, model, meta=None):
    """Write a model as JSON text followed by a checksum line.

    Parameter values are stored row-major as decimal strings using Python's
    shortest round-trip repr, so loading is bit-exact.
    """
    body = {
        "format": "mmgibbs-checkpoint/1",
        "kind": model.kind,
        "sigma_conditioned": bool(getattr(model, "sigma_conditioned", False)),
        "params": _dump_params(model.params),
        "meta": meta or {},
    }
    text = json.dumps(body, indent=1, sort_keys=True) + "\n"
    digest = hashlib.sha256(text.encode()).hexdigest()
    try:
        with open(path, "w") as fh:
            fh.write(text + CHECKSUM_PREFIX + digest + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    head, sep, tail = raw.rpartition(CHECKSUM_PREFIX)
    if not sep:
        raise ChecksumError(f"{path}: checksum line missing (truncated file?)")
    if hashlib.sha256(head.encode()).hexdigest() != tail.strip():
        raise ChecksumError(f"{path}: checksum mismatch")
    try:
        body = json.loads(head)
        params = _load_params(body["params"])
        kind = body["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed checkpoint ({exc})") from exc
    cond = bool(body.get("sigma_conditioned", False))
    if kind == "energy":
        model = MlpEnergy(params, cond)
    elif kind == "score":
        model = ScoreMlp(params, cond)
    elif kind == "posterior":
        model = PosteriorNet(params)
    else:
        raise ParseError(f"{path}: unknown model kind {kind!r}")
    return Checkpoint(model, body.get("meta", {}))
