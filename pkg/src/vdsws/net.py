"""Dense variational network with hand-derived backprop and grouped Adam.

Parameters are addressed by flat names ``"<group>.<layer>"`` (``theta.0``,
``log_sigma2.1``, ``bias.2``) plus the mixture names ``mu``, ``log_lambda`` and
``log_pi``. The group is the part before the first dot and selects the Adam
learning rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .vb_core import GaussianPosterior, MixturePrior, ObjectiveConfig, regularization_term

# keeps sqrt differentiable where a row of inputs is identically zero
VAR_EPS = 1e-24

MIXTURE_GROUPS = ("mu", "log_lambda", "log_pi")


@dataclass
class VariationalDenseLayer:
    theta: np.ndarray  # (out_dim, in_dim)
    log_sigma2: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.log_sigma2 = np.asarray(self.log_sigma2, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.theta.ndim != 2 or self.theta.shape != self.log_sigma2.shape:
            raise ValueError("theta and log_sigma2 must be matching 2-d arrays")
        if self.bias.shape != (self.theta.shape[0],):
            raise ValueError("bias length must equal out_dim")
        if not np.all(np.isfinite(self.bias)):
            raise ValueError("bias must be finite")

    @property
    def in_dim(self):
        return self.theta.shape[1]

    @property
    def out_dim(self):
        return self.theta.shape[0]

    @property
    def posterior(self):
        return GaussianPosterior(self.theta.ravel(), self.log_sigma2.ravel())

    def copy(self):
        return VariationalDenseLayer(self.theta.copy(), self.log_sigma2.copy(),
                                     self.bias.copy())


@dataclass
class Network:
    layers: list[VariationalDenseLayer]
    activation: str = "relu"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer {i} out_dim {a.out_dim} != layer {i + 1} "
                                 f"in_dim {b.in_dim}")

    @classmethod
    def init(cls, sizes, rng, log_sigma2=-10.0):
        """Glorot-uniform means, zero biases, constant log-variance."""
        layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            theta = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(VariationalDenseLayer(
                theta, np.full((fan_out, fan_in), float(log_sigma2)), np.zeros(fan_out)))
        return cls(layers)

    @property
    def sizes(self):
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    @property
    def num_weights(self):
        return sum(l.theta.size for l in self.layers)

    def copy(self):
        return Network([l.copy() for l in self.layers], self.activation)

    def flat_theta(self):
        return np.concatenate([l.theta.ravel() for l in self.layers])

    def flat_log_sigma2(self):
        return np.concatenate([l.log_sigma2.ravel() for l in self.layers])

    def params(self, groups=("theta", "log_sigma2", "bias")):
        """Name -> array views of the selected parameter groups."""
        out = {}
        for i, layer in enumerate(self.layers):
            for g in groups:
                out[f"{g}.{i}"] = getattr(layer, g)
        return out


def mixture_params(prior: MixturePrior):
    return {"mu": prior.mu, "log_lambda": prior.log_lambda, "log_pi": prior.log_pi}


def _check_input(net, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layers[0].in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with in_dim "
                         f"{net.layers[0].in_dim}")
    return x


def forward_deterministic(net: Network, inputs):
    """Logits computed with the posterior means as weights."""
    h = _check_input(net, inputs)
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        h = h @ layer.theta.T + layer.bias
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def draw_noise(net: Network, batch_size, rng):
    """One standard-normal pre-activation noise matrix per layer."""
    return [rng.standard_normal((batch_size, l.out_dim)) for l in net.layers]


def _forward_train(net, x, noise):
    # returns logits and the per-layer cache needed by backprop
    cache = []
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        sigma2 = np.exp(layer.log_sigma2)
        mean = h @ layer.theta.T + layer.bias
        x2 = h * h
        std = np.sqrt(x2 @ sigma2.T + VAR_EPS)
        pre = mean + std * noise[i]
        cache.append((h, x2, sigma2, std))
        h = np.maximum(pre, 0.0) if i < last else pre
        if i < last:
            cache[-1] = cache[-1] + (pre > 0.0,)
    return h, cache


def forward_stochastic(net: Network, inputs, rng=None, noise=None):
    """Single-sample forward pass with local reparametrisation.

    Pre-activations are drawn from N(x theta^T + b, x^2 sigma2^T). Pass either
    a seeded ``rng`` or explicit per-layer ``noise`` matrices.
    """
    x = _check_input(net, inputs)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = draw_noise(net, x.shape[0], rng)
    out, _ = _forward_train(net, x, noise)
    return out


def cross_entropy(logits, labels):
    """Per-example softmax cross-entropy and d/dlogits."""
    lse = logsumexp(logits, axis=1, keepdims=True)
    logp = logits - lse
    idx = np.arange(len(labels))
    probs = np.exp(logp)
    probs[idx, labels] -= 1.0
    return -logp[idx, labels], probs


def _check_labels(labels, n_classes, batch_size):
    labels = np.asarray(labels)
    if labels.shape != (batch_size,):
        raise ValueError("labels must be a vector matching the batch")
    if not np.issubdtype(labels.dtype, np.integer):
        if np.any(labels != np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def loss_and_grads(net: Network, batch, prior: MixturePrior | None,
                   cfg: ObjectiveConfig, rng=None, noise=None):
    """Negated, scaled ELBO on a minibatch and its gradients.

    loss = (N / B) * sum_batch CE + regularization_term(...). Gradients are
    returned for every layer's ``theta``, ``log_sigma2`` and ``bias`` and, if a
    prior is given, its ``mu``, ``log_lambda`` and ``log_pi``.
    """
    inputs, labels = batch
    x = _check_input(net, inputs)
    B = x.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    labels = _check_labels(labels, net.layers[-1].out_dim, B)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = draw_noise(net, B, rng)

    logits, cache = _forward_train(net, x, noise)
    ce, dlogits = cross_entropy(logits, labels)
    scale = cfg.dataset_size / B
    loss = scale * float(ce.sum())

    grads = {}
    dpre = scale * dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, x2, sigma2, std = cache[i][:4]
        if i < len(net.layers) - 1:
            dpre = dpre * cache[i][4]
        dvar = dpre * noise[i] / (2.0 * std)
        d_sigma2 = dvar.T @ x2
        grads[f"theta.{i}"] = dpre.T @ h
        grads[f"log_sigma2.{i}"] = d_sigma2 * sigma2
        grads[f"bias.{i}"] = dpre.sum(axis=0)
        if i > 0:
            dpre = dpre @ layer.theta + 2.0 * h * (dvar @ sigma2)

    post = GaussianPosterior(net.flat_theta(), net.flat_log_sigma2())
    reg, rgrads = regularization_term(post, prior, cfg)
    loss += reg
    offset = 0
    for i, layer in enumerate(net.layers):
        n = layer.theta.size
        sl = slice(offset, offset + n)
        grads[f"theta.{i}"] += rgrads["theta"][sl].reshape(layer.theta.shape)
        grads[f"log_sigma2.{i}"] += rgrads["log_sigma2"][sl].reshape(layer.theta.shape)
        offset += n
    for g in MIXTURE_GROUPS:
        if g in rgrads:
            grads[g] = rgrads[g]
    return loss, grads


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def param_group(name):
    return name.split(".", 1)[0]


def adam_step(params, grads, state: AdamState, lr_map):
    """Bias-corrected Adam update applied in place to ``params``.

    ``lr_map`` maps a parameter group (``theta``, ``log_sigma2``, ``bias``,
    ``mu``, ``log_lambda``, ``log_pi``) to its learning rate. Returns
    ``(params, state)``.
    """
    for name in params:
        if param_group(name) not in lr_map:
            raise KeyError(f"no learning rate for parameter group {param_group(name)!r}")
        if name not in grads:
            raise KeyError(f"missing gradient for {name!r}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} "
                             f"for {name!r}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr_map[param_group(name)] * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
