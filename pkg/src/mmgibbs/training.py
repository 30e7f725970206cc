"""Minibatch training: denoising score matching for energy (or score) nets and
the joint-KL objective for the Gaussian posterior baseline, both with Adam."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataIOError, DivergenceError, NumericAbort
from .numgrad import MlpParams, dsm_energy_batch, dsm_score_batch, gaussian_nll_batch

log = logging.getLogger(__name__)

OBJECTIVES = ("dsm", "kl")
PARAMETERIZATIONS = ("energy", "score")


@dataclass
class TrainConfig:
    sigma: float = 0.2
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    objective: str = "dsm"
    parameterization: str = "energy"
    hidden: list = field(default_factory=lambda: [400, 400, 400])
    schedule: list | None = None
    kl_floor: float = -1e6

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_adam > 0):
            raise ConfigError("bad Adam hyperparameters")
        if self.schedule is not None:
            if self.objective != "dsm":
                raise ConfigError("a noise schedule only applies to DSM training")
            if not self.schedule or any(not s > 0 for s in self.schedule):
                raise ConfigError("schedule levels must be positive")
        return self

    @property
    def sigma_conditioned(self):
        return self.schedule is not None

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams):
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        p -= (lr / c1) * m / denom
    return params


def _check_batch(batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0 or batch.shape[1] == 0:
        raise ConfigError(f"batch must be a nonempty (B, d) array, got shape {batch.shape}")
    return batch


def dsm_terms(score_values, x, x_tilde, sigma):
    """Per-sample ``0.5 ||(x_tilde - x)/sigma^2 + s||^2`` and its gradient in ``s``."""
    e = (np.asarray(x_tilde) - np.asarray(x)) / sigma**2 + np.asarray(score_values)
    return 0.5 * np.sum(e * e, axis=-1), e


def dsm_minibatch_loss(params: MlpParams, batch, sigma, rng: np.random.Generator,
                       parameterization="energy", sigma_conditioned=False, weight=1.0):
    """Mean DSM loss on fresh noise ``x_tilde = x + sigma * eps`` and its gradient.

    ``weight`` scales both (the multi-level objective uses ``sigma^2``).
    """
    batch = _check_batch(batch)
    B, d = batch.shape
    noisy = batch + sigma * rng.standard_normal(batch.shape)
    target = (noisy - batch) / sigma**2
    X_net = np.column_stack([noisy, np.full(B, np.log(sigma))]) if sigma_conditioned else noisy
    w = np.full(B, weight / B)
    if parameterization == "energy":
        terms, grads = dsm_energy_batch(params, X_net, target, w, n_active=d)
    else:
        terms, grads = dsm_score_batch(params, X_net, target, w)
    return weight * float(np.mean(terms)), grads


def kl_minibatch_loss(params: MlpParams, batch, sigma, rng: np.random.Generator):
    """Mean ``-log q(x | x_tilde)`` of a diagonal Gaussian posterior net."""
    batch = _check_batch(batch)
    B = batch.shape[0]
    noisy = batch + sigma * rng.standard_normal(batch.shape)
    terms, grads = gaussian_nll_batch(params, batch, noisy, np.full(B, 1.0 / B))
    return float(np.mean(terms)), grads


@dataclass
class LossTrace:
    iteration: list = field(default_factory=list)
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)

    def append(self, it, ep, loss):
        self.iteration.append(it)
        self.epoch.append(ep)
        self.loss.append(loss)

    def __len__(self):
        return len(self.loss)

    def epoch_means(self):
        ep = np.asarray(self.epoch)
        ls = np.asarray(self.loss)
        return np.array([ls[ep == e].mean() for e in np.unique(ep)])

    def write_csv(self, path):
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "epoch", "loss"])
                for row in zip(self.iteration, self.epoch, self.loss):
                    w.writerow([row[0], row[1], repr(float(row[2]))])
        except OSError as exc:
            raise DataIOError(f"cannot write {path}: {exc}") from exc


def network_sizes(config: TrainConfig, d: int):
    extra = 1 if config.sigma_conditioned else 0
    if config.objective == "kl":
        out = 2 * d
    elif config.parameterization == "energy":
        out = 1
    else:
        out = d
    return [d + extra] + list(config.hidden) + [out]


def init_params(config: TrainConfig, d: int) -> MlpParams:
    """Fresh network for ``config``; seeded from ``config.seed`` (stream 0)."""
    return MlpParams.init(network_sizes(config, d), np.random.default_rng([config.seed, 0]))


def train(params: MlpParams, dataset, config: TrainConfig, progress=None):
    """Run ``epochs * ceil(N / B)`` Adam steps. Returns ``(params, LossTrace)``.

    Shuffling, noise and (multi-level) noise-level draws all come from
    ``default_rng([seed, 1])`` so runs are reproducible. ``params`` is copied,
    not mutated.
    """
    config.validate()
    data = _check_batch(dataset)
    N = data.shape[0]
    if N < config.batch_size:
        raise ConfigError(f"dataset has {N} points, fewer than batch_size={config.batch_size}")
    params = params.copy()
    rng = np.random.default_rng([config.seed, 1])
    state = AdamState.zeros_like(params)
    trace = LossTrace()
    B = config.batch_size
    it = 0
    levels = None if config.schedule is None else np.asarray(config.schedule, dtype=np.float64)
    for epoch in range(config.epochs):
        perm = rng.permutation(N)
        for start in range(0, N, B):
            batch = data[perm[start:start + B]]
            if config.objective == "kl":
                loss, grads = kl_minibatch_loss(params, batch, config.sigma, rng)
            elif levels is not None:
                s = float(levels[rng.integers(len(levels))])
                loss, grads = dsm_minibatch_loss(params, batch, s, rng, config.parameterization, True, s**2)
            else:
                loss, grads = dsm_minibatch_loss(params, batch, config.sigma, rng, config.parameterization)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.arrays()):
                raise NumericAbort(f"non-finite loss or gradient at iteration {it} (epoch {epoch})",
                                   index=it, params=params, trace=trace)
            if config.objective == "kl" and loss < config.kl_floor:
                trace.append(it, epoch, loss)
                raise DivergenceError(
                    f"joint-KL loss {loss:.4g} fell below {config.kl_floor:g} at iteration {it}",
                    index=it, params=params, trace=trace)
            adam_step(params, grads, state, config.learning_rate, config.beta1, config.beta2, config.eps_adam)
            trace.append(it, epoch, loss)
            it += 1
        if progress is not None:
            progress(epoch, trace)
        log.debug("epoch %d mean loss %.6g", epoch, np.mean(trace.loss[-((N + B - 1) // B):]))
    return params, trace
