"""Pseudo-Gibbs chains: single noise level and annealed over a noise schedule.

One sweep at kernel width ``sigma``::

    x_tilde ~ N(x, sigma^2 I)
    x       ~ q(x | x_tilde)        (moment-matched or learned Gaussian)

Chains are batched: the state is a ``(C, d)`` array, but every chain draws
from its own generator ``default_rng([seed, chain_id])`` in a fixed order
(noise, Rademacher vectors, Gaussian draw) so a chain's trajectory does not
depend on how many other chains run alongside it.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .datasets import SampleSet
from .errors import ConfigError, NumericAbort, ScheduleError
from .posterior import (
    EPS_CLAMP,
    GaussianApprox,
    PosteriorKind,
    learned_posterior,
    mm_mean,
    moment_matched,
    rademacher,
    sample_gaussian,
)

log = logging.getLogger(__name__)

DEFAULT_INIT_STD = float(np.sqrt(0.1))


@dataclass
class ChainConfig:
    steps: int = 10000
    sigma: float = 0.2
    posterior: str = "full"
    init_std: float = DEFAULT_INIT_STD
    init_mean: float = 0.0
    thinning: int = 1
    burn_in: int = 0
    seed: int = 0
    chains: int = 1
    eps_clamp: float = EPS_CLAMP
    monitor_window: int = 0

    def validate(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.init_std > 0:
            raise ConfigError("init_std must be positive")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.thinning < 1 or self.burn_in < 0 or self.chains < 1:
            raise ConfigError("thinning and chains must be >= 1, burn_in >= 0")
        PosteriorKind.parse(self.posterior)
        return self

    @property
    def kind(self) -> PosteriorKind:
        return PosteriorKind.parse(self.posterior)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NoiseSchedule:
    levels: tuple
    gibbs_steps: int = 3
    rademacher_samples: int = 3

    def __post_init__(self):
        lv = tuple(float(s) for s in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ScheduleError("schedule needs at least one level")
        if any(not s > 0 for s in lv):
            raise ScheduleError("noise levels must be positive")
        if any(b >= a for a, b in zip(lv, lv[1:])):
            raise ScheduleError("noise levels must be strictly decreasing")
        if self.gibbs_steps < 1 or self.rademacher_samples < 1:
            raise ScheduleError("gibbs_steps and rademacher_samples must be >= 1")

    @classmethod
    def geometric(cls, sigma_max, sigma_min, count, **kw) -> "NoiseSchedule":
        if count < 1 or not 0 < sigma_min <= sigma_max:
            raise ScheduleError("need count >= 1 and 0 < sigma_min <= sigma_max")
        if count == 1:
            return cls((sigma_max,), **kw)
        return cls(tuple(np.geomspace(sigma_max, sigma_min, count)), **kw)

    @classmethod
    def parse(cls, text, **kw) -> "NoiseSchedule":
        """``geometric:sigma_max,sigma_min,count`` or ``list:s1,s2,...``."""
        kind, _, args = str(text).partition(":")
        try:
            vals = [float(v) for v in args.split(",") if v.strip()]
        except ValueError as exc:
            raise ScheduleError(f"bad schedule {text!r}") from exc
        if kind == "geometric" and len(vals) == 3:
            return cls.geometric(vals[0], vals[1], int(vals[2]), **kw)
        if kind == "list":
            return cls(tuple(vals), **kw)
        raise ScheduleError(f"bad schedule {text!r}; expected geometric:smax,smin,K or list:s1,s2,...")

    def relative_noise(self):
        """Kernel width at each level: sqrt(sigma_t^2 - sigma_{t-1}^2), with 0 below the last level."""
        lv = np.asarray(self.levels)
        below = np.append(lv[1:], 0.0)
        return np.sqrt(lv**2 - below**2)


class Denoiser:
    """Posterior approximation used inside a chain at one noise level.

    ``sigma`` is the Gaussian kernel width; ``model_sigma`` the noise level the
    model is queried at (defaults to ``sigma``).
    """

    def __init__(self, kind, sigma, model=None, net=None, iso_var=None, model_sigma=None,
                 eps_clamp=EPS_CLAMP):
        self.kind = PosteriorKind.parse(kind)
        self.sigma = float(sigma)
        self.model = model
        self.net = net
        self.iso_var = iso_var
        self.model_sigma = model_sigma
        self.eps_clamp = eps_clamp
        if self.kind.name == "learned":
            if net is None:
                raise ConfigError("learned posterior needs a posterior network")
        elif model is None:
            raise ConfigError(f"{self.kind} posterior needs an energy model")
        if self.kind.name == "iso" and iso_var is None:
            raise ConfigError("isotropic posterior needs a precomputed variance")

    @property
    def n_rademacher(self):
        return self.kind.samples if self.kind.name == "diag" else 0

    def approx(self, x_tilde, vectors=None) -> GaussianApprox:
        if self.kind.name == "learned":
            return learned_posterior(self.net, x_tilde)
        return moment_matched(self.model, x_tilde, self.sigma, self.kind, iso_var=self.iso_var,
                              vectors=vectors, model_sigma=self.model_sigma, eps_clamp=self.eps_clamp)


def chain_rngs(seed, n_chains, first_id=0):
    return [np.random.default_rng([int(seed), int(first_id + c)]) for c in range(n_chains)]


def _sweep(den: Denoiser, X, rngs):
    """One Gibbs sweep for a batch of chains, each consuming its own rng."""
    C, d = X.shape
    S = den.n_rademacher
    eps = np.empty((C, d))
    vec = np.empty((S, C, d)) if S else None
    z = np.empty((C, d))
    for c, r in enumerate(rngs):
        eps[c] = r.standard_normal(d)
        if S:
            vec[:, c, :] = rademacher(r, (S, d))
        z[c] = r.standard_normal(d)
    Xt = X + den.sigma * eps
    approx = den.approx(Xt, vec)
    return sample_gaussian(approx, z=z), Xt


def gibbs_step(model, x, sigma, posterior_kind, rng, *, net=None, iso_var=None, model_sigma=None,
               eps_clamp=EPS_CLAMP):
    """One noise-up/denoise sweep for a single state (or a batch sharing ``rng``)."""
    den = Denoiser(posterior_kind, sigma, model, net, iso_var, model_sigma, eps_clamp)
    X = np.asarray(x, dtype=np.float64)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    C, d = X.shape
    eps = rng.standard_normal((C, d))
    vec = rademacher(rng, (den.n_rademacher, C, d)) if den.n_rademacher else None
    z = rng.standard_normal((C, d))
    out = sample_gaussian(den.approx(X + sigma * eps, vec), z=z)
    return out[0] if squeeze else out


def _initial_state(config: ChainConfig, d, rngs):
    return np.stack([config.init_mean + config.init_std * r.standard_normal(d) for r in rngs])


def run_chain(model, config: ChainConfig, *, net=None, iso_var=None, dim=None,
              monitor_means=None) -> SampleSet:
    """Run ``config.chains`` independent chains for ``config.steps`` sweeps.

    Every post-burn-in state whose 1-based step index is a multiple of
    ``thinning`` is kept. For the learned posterior ``model`` may be omitted
    (pass ``net``).
    """
    config.validate()
    kind = config.kind
    if kind.name == "learned" and net is None:
        if not hasattr(model, "predict"):
            raise ConfigError("learned posterior needs a posterior network")
        net = model
    den = Denoiser(kind, config.sigma, None if kind.name == "learned" else model, net, iso_var,
                   eps_clamp=config.eps_clamp)
    d = dim or (net.dim if kind.name == "learned" else model.dim)
    rngs = chain_rngs(config.seed, config.chains)
    X = _initial_state(config, d, rngs)
    kept, ids, steps = [], [], []
    occupancy = []
    window = []
    chain_index = np.arange(config.chains)
    for step in range(1, config.steps + 1):
        X, _ = _sweep(den, X, rngs)
        if not np.all(np.isfinite(X)):
            raise NumericAbort(f"non-finite chain state at step {step}", index=step)
        if step > config.burn_in and step % config.thinning == 0:
            kept.append(X.copy())
            ids.append(chain_index)
            steps.append(np.full(config.chains, step))
        if monitor_means is not None and config.monitor_window > 0:
            window.append(X.copy())
            if len(window) == config.monitor_window:
                frac = _nearest_fractions(np.concatenate(window), monitor_means)
                occupancy.append({"step": step, "fractions": frac.tolist()})
                log.info("step %d mode occupancy %s", step, np.round(frac, 3))
                window = []
    if kept:
        pts = np.concatenate(kept)
        cid = np.concatenate(ids)
        stp = np.concatenate(steps)
        order = np.lexsort((stp, cid))
        pts, cid, stp = pts[order], cid[order], stp[order]
    else:
        pts, cid, stp = np.empty((0, d)), np.empty(0, np.int64), np.empty(0, np.int64)
    meta = {"seed": config.seed, "posterior": str(kind), "sigma": config.sigma, "chains": config.chains,
            "steps": config.steps}
    if iso_var is not None:
        meta["iso_variance"] = float(iso_var)
    if occupancy:
        meta["mode_occupancy"] = occupancy
    return SampleSet(pts, cid, stp, meta)


def _nearest_fractions(points, means):
    means = np.asarray(means, dtype=np.float64)
    d2 = np.sum((points[:, None, :] - means[None, :, :]) ** 2, axis=-1)
    return np.bincount(np.argmin(d2, axis=1), minlength=len(means)) / len(points)


def multilevel_gibbs(model, schedule: NoiseSchedule, n_chains, seed=0, posterior="diag",
                     eps_clamp=EPS_CLAMP, iso_vars=None, return_history=False):
    """Annealed pseudo-Gibbs over ``schedule.levels`` followed by a final denoising step.

    Level ``t`` uses the model at ``sigma_t`` with kernel width
    ``sqrt(sigma_t^2 - sigma_{t-1}^2)`` (zero below the last level), so its
    chain targets the distribution one level down. Chains start from
    ``N(0, sigma_T^2 I)``. The returned points are the posterior means at the
    final noisy states.
    """
    if n_chains < 1:
        raise ConfigError("n_chains must be >= 1")
    kind = PosteriorKind.parse(posterior)
    if kind.name == "diag":
        kind = PosteriorKind("diag", schedule.rademacher_samples)
    if kind.name == "learned":
        raise ConfigError("multi-level sampling needs a noise-conditioned energy model")
    rel = schedule.relative_noise()
    levels = schedule.levels
    rngs = chain_rngs(seed, n_chains)
    d = model.dim
    X = np.stack([levels[0] * r.standard_normal(d) for r in rngs])
    Xt = X
    history = []
    for t, (sig, width) in enumerate(zip(levels, rel)):
        iso = None if iso_vars is None else iso_vars[t]
        den = Denoiser(kind, width, model, iso_var=iso, model_sigma=sig, eps_clamp=eps_clamp)
        for _ in range(schedule.gibbs_steps):
            X, Xt = _sweep(den, X, rngs)
            if not np.all(np.isfinite(X)):
                raise NumericAbort(f"non-finite chain state at level {t} (sigma={sig:g})", index=t)
        if return_history:
            history.append(X.copy())
    out = mm_mean(model, Xt, levels[-1], model_sigma=levels[-1])
    meta = {"seed": seed, "posterior": str(kind), "levels": list(levels), "gibbs_steps": schedule.gibbs_steps,
            "chains": n_chains}
    result = SampleSet(out, np.arange(n_chains), np.full(n_chains, len(levels) * schedule.gibbs_steps), meta)
    return (result, history) if return_history else result
