"""Training phases: L2 pretraining, VD warm-up and joint VD + soft weight sharing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .net import (
    AdamState,
    Network,
    adam_step,
    cross_entropy,
    forward_deterministic,
    loss_and_grads,
    mixture_params,
)
from .vb_core import MixturePrior, ObjectiveConfig

log = logging.getLogger(__name__)

# Adam learning rates per parameter group for the variational phases.
PAPER_LR_MAP = {
    "theta": 5e-5,
    "log_sigma2": 1e-4,
    "mu": 1e-4,
    "log_lambda": 1e-4,
    "log_pi": 3e-3,
    "bias": 5e-5,
}

LOG_SIGMA2_INIT = -10.0


@dataclass
class TrainSchedule:
    pretrain_epochs: int = 200
    phase1_epochs: int = 200
    phase2_epochs: int = 100
    tau1: float = 1.0
    tau2_phase2: float = 2e-2
    batch_size: int = 100
    seed: int = 0
    lr_map: dict = field(default_factory=lambda: dict(PAPER_LR_MAP))
    # multiplies every lr_map entry; 1.0 reproduces the paper's rates
    lr_scale: float = 1.0
    pretrain_lr: float = 1e-3
    weight_decay: float = 1e-4
    K: int = 17
    pi0: float = 0.999
    gamma_alpha: float = 1e5
    gamma_beta: float = 10.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("pretrain_epochs", "phase1_epochs", "phase2_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError("pi0 must lie in (0, 1)")
        if self.K < 3 or self.K % 2 == 0:
            raise ValueError("K must be odd and >= 3")
        if not (self.lr_scale > 0 and self.pretrain_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.tau1 < 0 or self.tau2_phase2 < 0 or self.weight_decay < 0:
            raise ValueError("tau1, tau2_phase2 and weight_decay must be nonnegative")
        if not (self.gamma_alpha > 0 and self.gamma_beta > 0):
            raise ValueError("gamma_alpha and gamma_beta must be positive")
        missing = set(PAPER_LR_MAP) - set(self.lr_map)
        if missing:
            raise ValueError(f"lr_map lacks groups {sorted(missing)}")
        if any(not v > 0 for v in self.lr_map.values()):
            raise ValueError("lr_map entries must be positive")

    def scaled_lr_map(self):
        return {k: v * self.lr_scale for k, v in self.lr_map.items()}


def desk_schedule(**overrides):
    """20/20/10-epoch schedule sized for a CPU run on a 10k-image subset."""
    kw = dict(pretrain_epochs=20, phase1_epochs=20, phase2_epochs=10,
              lr_scale=30.0)
    kw.update(overrides)
    return TrainSchedule(**kw)


def _rngs(seed, phase):
    # independent, reproducible streams per phase: (shuffling, noise)
    ss = np.random.SeedSequence([int(seed), phase])
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_data(data):
    x, y = data
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("training data must be nonempty with one label per row")
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def pretrain_l2(net: Network, data, weight_decay, schedule: TrainSchedule):
    """Deterministic training of means and biases with an L2 penalty on means.

    Minimises mean cross-entropy + weight_decay * ||theta||^2 with Adam at
    ``schedule.pretrain_lr``. Returns ``(net, w)`` where ``w`` is the flat
    weight vector used to initialise the mixture prior.
    """
    x, y = _check_data(data)
    net = net.copy()
    shuffle_rng, _ = _rngs(schedule.seed, 0)
    params = net.params(("theta", "bias"))
    lr = {"theta": schedule.pretrain_lr, "bias": schedule.pretrain_lr}
    state = AdamState()
    last = len(net.layers) - 1
    for epoch in range(schedule.pretrain_epochs):
        for idx in _batches(len(x), schedule.batch_size, shuffle_rng):
            xb, yb = x[idx], y[idx]
            acts = [xb]
            h = xb
            for i, layer in enumerate(net.layers):
                h = h @ layer.theta.T + layer.bias
                if i < last:
                    h = np.maximum(h, 0.0)
                acts.append(h)
            _, d = cross_entropy(h, yb)
            d = d / len(idx)
            grads = {}
            for i in range(last, -1, -1):
                layer = net.layers[i]
                if i < last:
                    d = d * (acts[i + 1] > 0.0)
                grads[f"theta.{i}"] = d.T @ acts[i] + 2.0 * weight_decay * layer.theta
                grads[f"bias.{i}"] = d.sum(axis=0)
                d = d @ layer.theta
            adam_step(params, grads, state, lr)
        log.debug("pretrain epoch %d: train acc %.4f", epoch, evaluate_accuracy(net, (x, y)))
    return net, net.flat_theta()


def init_mixture_from_weights(w, K, pi0):
    """Symmetric K-component mixture laid out over the weight distribution.

    Means sit at k * dmu for k in [-(K-1)/2, (K-1)/2] with dmu = 2 std(w) / K,
    all precisions are 1 / (0.9 dmu)^2, and the zero spike keeps proportion
    ``pi0`` while the remaining mass is shared evenly.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size < 2:
        raise ValueError("need at least two weights")
    if K < 1 or K % 2 == 0:
        raise ValueError("K must be odd")
    if not 0.0 < pi0 < 1.0:
        raise ValueError("pi0 must lie in (0, 1)")
    std = float(np.std(w))
    if np.ptp(w) == 0.0 or not std > 0.0:
        raise ValueError("degenerate weight distribution: std(w) == 0")
    half = (K - 1) // 2
    dmu = 2.0 * std / K
    ks = np.arange(-half, half + 1)
    mu = ks * dmu
    mu[half] = 0.0
    log_lambda = np.full(K, -2.0 * np.log(0.9 * dmu))
    log_pi = np.where(ks == 0, np.log(pi0), np.log((1.0 - pi0) / K))
    prior = MixturePrior(log_pi, mu, log_lambda, zero_index=half)
    prior.renormalize()
    return prior


def _variational_phase(net, data, prior, cfg, schedule, epochs, phase, lr_map):
    x, y = _check_data(data)
    shuffle_rng, noise_rng = _rngs(schedule.seed, phase)
    params = net.params()
    if prior is not None:
        params.update(mixture_params(prior))
    state = AdamState()
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(x), schedule.batch_size, shuffle_rng):
            loss, grads = loss_and_grads(net, (x[idx], y[idx]), prior, cfg, rng=noise_rng)
            if prior is not None:
                grads["mu"][prior.fixed_mask] = 0.0
                grads["log_pi"][prior.fixed_mask] = 0.0
            adam_step(params, grads, state, lr_map)
            if prior is not None:
                prior.renormalize()
            total += loss
        log.info("phase %d epoch %d: mean loss %.4g", phase, epoch, total / max(1, -(-len(x) // schedule.batch_size)))
    return net


def objective_for(schedule: TrainSchedule, n, tau2=0.0, **kw):
    return ObjectiveConfig(tau1=schedule.tau1, tau2=tau2, gamma_alpha=schedule.gamma_alpha,
                           gamma_beta=schedule.gamma_beta, dataset_size=n, **kw)


def train_phase1_vd(net: Network, data, schedule: TrainSchedule, reset_log_sigma2=True,
                    epochs=None):
    """Sparse-VD warm-up: tau2 = 0, mixture untouched.

    ``log_sigma2`` is reset to -10 on entry unless ``reset_log_sigma2`` is
    False (used when continuing a VD run).
    """
    net = net.copy()
    if reset_log_sigma2:
        for layer in net.layers:
            layer.log_sigma2[...] = LOG_SIGMA2_INIT
    cfg = objective_for(schedule, len(data[0]))
    lr = {k: v for k, v in schedule.scaled_lr_map().items()
          if k in ("theta", "log_sigma2", "bias")}
    epochs = schedule.phase1_epochs if epochs is None else epochs
    phase = 1 if reset_log_sigma2 else 3
    return _variational_phase(net, data, None, cfg, schedule, epochs, phase, lr)


def train_phase2_sws(net: Network, data, prior: MixturePrior, schedule: TrainSchedule,
                     tau2=None):
    """Joint optimisation of the posterior and the free mixture parameters."""
    net = net.copy()
    prior = prior.copy()
    tau2 = schedule.tau2_phase2 if tau2 is None else tau2
    cfg = objective_for(schedule, len(data[0]), tau2=tau2)
    _variational_phase(net, data, prior, cfg, schedule, schedule.phase2_epochs, 2,
                       schedule.scaled_lr_map())
    return net, prior


def evaluate_accuracy(net, data):
    """Fraction of correct argmax predictions; ties go to the lowest class."""
    x, y = data
    if len(x) == 0:
        raise ValueError("cannot evaluate on empty data")
    logits = net.forward(x) if hasattr(net, "forward") else forward_deterministic(net, x)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))
