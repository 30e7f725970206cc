"""Second-order differentiation for affine+Swish MLPs.

Everything here is written out layer by layer for the one architecture we
need: ``a_l = h_{l-1} W_l^T + b_l``, ``h_l = swish(a_l)`` on hidden layers and
identity on the output layer. Besides plain forward/backward passes we need

* input gradients (the score of an energy model),
* Hessian-vector products w.r.t. the input (forward tangent pushed through
  the reverse pass),
* parameter gradients of losses that already contain an input gradient
  (denoising score matching), which is a reverse pass over the
  tangent-augmented forward graph.

All public functions accept either a single point of shape ``(in_dim,)`` or a
batch ``(B, in_dim)`` and return results of the matching rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

LOG_2PI = float(np.log(2.0 * np.pi))


def sigmoid(a):
    # tanh form avoids overflow warnings for large |a|
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def swish(a):
    return a * sigmoid(a)


def swish_d1(a):
    s = sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


def swish_d2(a):
    s = sigmoid(a)
    return s * (1.0 - s) * (2.0 + a * (1.0 - 2.0 * s))


@dataclass
class MlpParams:
    """Weights ``[out x in]`` and biases ``[out]`` of each affine layer."""

    weights: list
    biases: list
    activation: str = "swish"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self.validate()

    def validate(self):
        if self.activation != "swish":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ConfigError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} "
                    f"emits {self.weights[i - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "MlpParams":
        """Weights ~ N(0, 1/fan_in), zero biases."""
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ConfigError(f"bad layer sizes {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes) -> "MlpParams":
        return cls(
            [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )

    def arrays(self) -> list:
        """Parameters in a fixed order: W_1, b_1, W_2, b_2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays, activation="swish") -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]), activation)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def zeros_like(self) -> "MlpParams":
        return MlpParams.zeros(self.sizes)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ConfigError(f"flat vector has shape {vec.shape}, expected ({self.n_params},)")
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return MlpParams.from_arrays(out, self.activation)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class DualTrace:
    """Cached forward pass.

    ``inputs[l]`` is the input to layer ``l`` (``inputs[0]`` is x) and
    ``pre[l]`` its pre-activation; the network output is ``pre[-1]``.
    ``tangent_inputs``/``tangent_pre`` hold the forward-mode channel when one
    was pushed through.
    """

    inputs: list
    pre: list
    tangent_inputs: list | None = None
    tangent_pre: list | None = None
    squeeze: bool = field(default=False, repr=False)
    _sig: dict = field(default_factory=dict, repr=False)
    _d1: dict = field(default_factory=dict, repr=False)
    _d2: dict = field(default_factory=dict, repr=False)

    @property
    def output(self) -> np.ndarray:
        return self.pre[-1]

    def sig(self, l):
        if l not in self._sig:
            self._sig[l] = sigmoid(self.pre[l])
        return self._sig[l]

    def d1(self, l):
        """Swish'(pre[l]), cached."""
        if l not in self._d1:
            s, a = self.sig(l), self.pre[l]
            self._d1[l] = s * (1.0 + a * (1.0 - s))
        return self._d1[l]

    def d2(self, l):
        """Swish''(pre[l]), cached."""
        if l not in self._d2:
            s, a = self.sig(l), self.pre[l]
            self._d2[l] = s * (1.0 - s) * (2.0 + a * (1.0 - 2.0 * s))
        return self._d2[l]


def _as_batch(params: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x[None, :] if squeeze else x
    if x2.ndim != 2 or x2.shape[1] != params.in_dim:
        raise ConfigError(f"input has shape {x.shape}, network expects in_dim={params.in_dim}")
    return x2, squeeze


def _forward(params: MlpParams, X, V=None) -> DualTrace:
    trace = DualTrace([], [])
    h = X
    last = params.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        trace.inputs.append(h)
        a = h @ W.T
        a += b
        trace.pre.append(a)
        if l < last:
            h = a * trace.sig(l)
    if V is not None:
        _push_tangent(params, trace, V)
    return trace


def _push_tangent(params: MlpParams, trace: DualTrace, V):
    """Fill the forward-mode channel of an existing trace with seed ``V``."""
    t_inputs, t_pre = [], []
    hd = V
    last = params.n_layers - 1
    for l, W in enumerate(params.weights):
        t_inputs.append(hd)
        ad = hd @ W.T
        t_pre.append(ad)
        if l < last:
            hd = trace.d1(l) * ad
    trace.tangent_inputs, trace.tangent_pre = t_inputs, t_pre
    return trace


def forward(params: MlpParams, x):
    """Evaluate the network. Returns ``(value, trace)``."""
    X, squeeze = _as_batch(params, x)
    trace = _forward(params, X)
    trace.squeeze = squeeze
    out = trace.output
    return (out[0] if squeeze else out), trace


def _require_scalar(params: MlpParams):
    if params.out_dim != 1:
        raise ConfigError(f"input derivatives need a scalar head, network has out_dim={params.out_dim}")


def _input_backward(params: MlpParams, trace: DualTrace):
    """Gradient of the (scalar) output w.r.t. the input, batched."""
    B = trace.inputs[0].shape[0]
    delta = np.ones((B, 1))
    gamma = None
    for l in range(params.n_layers - 1, -1, -1):
        gamma = delta @ params.weights[l]
        if l > 0:
            delta = gamma * trace.d1(l - 1)
    return gamma


def grad_input(params: MlpParams, x):
    """Gradient of the scalar network output w.r.t. its input."""
    _require_scalar(params)
    X, squeeze = _as_batch(params, x)
    g = _input_backward(params, _forward(params, X))
    return g[0] if squeeze else g


def _hvp(params: MlpParams, X, V):
    trace = _forward(params, X, V)
    B = X.shape[0]
    delta = np.ones((B, 1))
    ddelta = np.zeros((B, 1))
    dgamma = None
    for l in range(params.n_layers - 1, -1, -1):
        W = params.weights[l]
        gamma = delta @ W
        dgamma = ddelta @ W
        if l > 0:
            sp = trace.d1(l - 1)
            ddelta = dgamma * sp + gamma * trace.d2(l - 1) * trace.tangent_pre[l - 1]
            delta = gamma * sp
    return dgamma


def hvp_input(params: MlpParams, x, v):
    """Exact ``(d^2 f / dx^2) v`` via forward-over-reverse."""
    _require_scalar(params)
    X, squeeze = _as_batch(params, x)
    V = np.asarray(v, dtype=np.float64)
    V = np.broadcast_to(V[None, :] if V.ndim == 1 else V, X.shape)
    out = _hvp(params, X, V)
    return out[0] if squeeze else out


def hessian_input(params: MlpParams, x, return_asymmetry=False):
    """Full input Hessian assembled from one HVP per basis vector.

    The result is symmetrized; with ``return_asymmetry`` the max-abs
    difference between ``H`` and ``H^T`` before symmetrization is returned too.
    """
    _require_scalar(params)
    X, squeeze = _as_batch(params, x)
    B, d = X.shape
    eye = np.eye(d)
    # row (i, j) of the tiled batch is point i pushed along e_j
    cols = _hvp(params, np.repeat(X, d, axis=0), np.tile(eye, (B, 1))).reshape(B, d, d)
    H = np.swapaxes(cols, 1, 2)
    asym = np.max(np.abs(H - np.swapaxes(H, 1, 2)), axis=(1, 2))
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    if squeeze:
        H, asym = H[0], float(asym[0])
    return (H, asym) if return_asymmetry else H


def _backprop_params(params: MlpParams, trace: DualTrace, out_adjoint) -> MlpParams:
    """Plain reverse pass from an output adjoint ``(B, out_dim)`` to parameters."""
    gW, gb = [None] * params.n_layers, [None] * params.n_layers
    abar = out_adjoint
    for l in range(params.n_layers - 1, -1, -1):
        gW[l] = abar.T @ trace.inputs[l]
        gb[l] = abar.sum(axis=0)
        if l > 0:
            abar = (abar @ params.weights[l]) * trace.d1(l - 1)
    return MlpParams(gW, gb, params.activation)


def _grad_of_directional(params: MlpParams, trace: DualTrace, weights) -> MlpParams:
    """Parameter gradient of ``sum_i weights_i * <u_i, grad_x f(x_i)>``.

    ``trace`` must carry the tangent channel seeded with ``u``. The directional
    derivative is the output tangent, so this is a reverse pass through the
    tangent-augmented graph (mixed second derivatives d^2 f / d theta dx).
    """
    L = params.n_layers
    gW, gb = [None] * L, [None] * L
    B = trace.inputs[0].shape[0]
    # rows [:B] hold the primal adjoint, rows [B:] the tangent adjoint
    Z = np.zeros((2 * B, 1))
    Z[B:, 0] = np.asarray(weights, dtype=np.float64).reshape(B)
    for l in range(L - 1, -1, -1):
        stacked = np.concatenate([trace.inputs[l], trace.tangent_inputs[l]], axis=0)
        gW[l] = Z.T @ stacked
        gb[l] = Z[:B].sum(axis=0)
        if l > 0:
            HZ = Z @ params.weights[l]
            sp = trace.d1(l - 1)
            nxt = np.empty_like(HZ)
            np.multiply(HZ[B:], sp, out=nxt[B:])
            np.multiply(HZ[:B], sp, out=nxt[:B])
            nxt[:B] += HZ[B:] * trace.d2(l - 1) * trace.tangent_pre[l - 1]
            Z = nxt
    return MlpParams(gW, gb, params.activation)


def dsm_energy_batch(params: MlpParams, X_net, target, weights, n_active=None):
    """Weighted DSM loss for an energy network and its parameter gradient.

    ``X_net`` is the network input (noisy points, possibly with extra
    conditioning columns), ``target`` is ``(x_tilde - x) / sigma^2`` for the
    first ``n_active`` input columns. Per-sample term is
    ``0.5 * ||target + score||^2`` with ``score = -grad_x f``.
    Returns ``(per_sample_terms, grads)`` where grads are of
    ``sum_i weights_i * term_i``.
    """
    _require_scalar(params)
    X_net = np.asarray(X_net, dtype=np.float64)
    d = target.shape[1] if n_active is None else n_active
    trace = _forward(params, X_net)
    G = _input_backward(params, trace)[:, :d]
    e = target - G
    terms = 0.5 * np.sum(e * e, axis=1)
    U = np.zeros_like(X_net)
    U[:, :d] = -e  # d term / d G
    _push_tangent(params, trace, U)
    return terms, _grad_of_directional(params, trace, weights)


def dsm_score_batch(params: MlpParams, X_net, target, weights):
    """Same objective for a network that emits the score directly."""
    trace = _forward(params, np.asarray(X_net, dtype=np.float64))
    e = target + trace.output
    terms = 0.5 * np.sum(e * e, axis=1)
    return terms, _backprop_params(params, trace, e * np.asarray(weights).reshape(-1, 1))


def gaussian_nll_batch(params: MlpParams, X, Xtilde, weights):
    """Diagonal-Gaussian NLL of clean ``X`` under a (mean, log-std) head."""
    trace = _forward(params, np.asarray(Xtilde, dtype=np.float64))
    d = X.shape[1]
    out = trace.output
    if out.shape[1] != 2 * d:
        raise ConfigError(f"posterior net emits {out.shape[1]} values, need 2*d={2 * d}")
    mean, log_std = out[:, :d], out[:, d:]
    inv_var = np.exp(-2.0 * log_std)
    r = X - mean
    terms = np.sum(log_std + 0.5 * r * r * inv_var, axis=1) + 0.5 * d * LOG_2PI
    adj = np.concatenate([-r * inv_var, 1.0 - r * r * inv_var], axis=1)
    return terms, _backprop_params(params, trace, adj * np.asarray(weights).reshape(-1, 1))


def param_grad_of_dsm_term(params: MlpParams, x, x_tilde, sigma):
    """Single-sample DSM term ``0.5||(x_tilde - x)/sigma^2 + s(x_tilde)||^2`` and its gradient."""
    Xt, _ = _as_batch(params, x_tilde)
    target = (Xt - np.atleast_2d(np.asarray(x, dtype=np.float64))) / sigma**2
    terms, grads = dsm_energy_batch(params, Xt, target, np.ones(1))
    return float(terms[0]), grads


def param_grad_of_gaussian_nll(params: MlpParams, x, x_tilde):
    """Single-sample ``-log q(x | x_tilde)`` for a diagonal Gaussian head."""
    Xt, _ = _as_batch(params, x_tilde)
    terms, grads = gaussian_nll_batch(params, np.atleast_2d(np.asarray(x, dtype=np.float64)), Xt, np.ones(1))
    return float(terms[0]), grads
