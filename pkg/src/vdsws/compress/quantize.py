"""Weight clustering: mixture-argmax quantisation and the VD-baseline path."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..vb_core import GaussianPosterior, MixturePrior, gm_responsibilities


@dataclass
class QuantizedLayer:
    symbols: np.ndarray  # (out_dim, in_dim) int indices into the codebook
    bias: np.ndarray  # (out_dim,)

    @property
    def shape(self):
        return self.symbols.shape


@dataclass
class QuantizedNetwork:
    """Dense layers whose weights are indices into one shared codebook.

    The codebook holds float32-representable values and contains 0 at
    ``zero_symbol``; biases are float32-representable too, so the network
    round-trips exactly through the 32-bit container.
    """

    layers: list[QuantizedLayer]
    codebook: np.ndarray
    zero_symbol: int

    def __post_init__(self):
        self.codebook = np.asarray(self.codebook, dtype=np.float64)
        if self.codebook[self.zero_symbol] != 0.0:
            raise ValueError("codebook[zero_symbol] must be 0")
        for layer in self.layers:
            if layer.symbols.min(initial=0) < 0 or layer.symbols.max(initial=0) >= self.K:
                raise ValueError("symbol out of codebook range")

    @property
    def K(self):
        return self.codebook.size

    @property
    def sizes(self):
        return [self.layers[0].shape[1]] + [l.shape[0] for l in self.layers]

    def weights(self, i):
        return self.codebook[self.layers[i].symbols]

    def nonzero_mask(self, i):
        return self.weights(i) != 0.0

    def distinct_nonzero_values(self):
        vals = set()
        for i in range(len(self.layers)):
            w = self.weights(i)
            vals.update(np.unique(w[w != 0.0]).tolist())
        return vals

    def forward(self, inputs):
        """Deterministic logits.

        Products run over the stored nonzeros only, in column order, so two
        networks with the same nonzero pattern produce bit-identical output
        regardless of how many zero rows or columns surround it.
        """
        h = np.asarray(inputs, dtype=np.float64)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            w = sp.csr_matrix(self.weights(i))
            w.sort_indices()
            h = np.asarray((w @ h.T).T) + layer.bias
            if i < last:
                h = np.maximum(h, 0.0)
        return h


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _codebook_with_zero(values, zero_index):
    cb = _f32(values)
    cb[zero_index] = 0.0
    return cb


def quantize_gm(net, prior: MixturePrior):
    """Collapse every weight mean onto the mean of its most responsible component.

    The codebook is the (float32-rounded) component means; weights claimed by
    the zero spike become exactly 0.
    """
    if prior.zero_index is None:
        raise ValueError("quantisation needs a prior with a zero component")
    codebook = _codebook_with_zero(prior.mu, prior.zero_index)
    layers = []
    for layer in net.layers:
        theta = layer.theta
        sym = np.empty(theta.shape, dtype=np.int64)
        flat = theta.ravel()
        out = sym.ravel()
        # chunked to bound the (n, K) responsibility array
        for start in range(0, flat.size, 65536):
            r = gm_responsibilities(flat[start:start + 65536], prior)
            out[start:start + 65536] = np.argmax(r, axis=1)
        # components sharing the float32 value of zero collapse onto the spike
        out[codebook[out] == 0.0] = prior.zero_index
        layers.append(QuantizedLayer(sym, _f32(layer.bias)))
    return QuantizedNetwork(layers, codebook, prior.zero_index)


def quantized_to_network(qnet: QuantizedNetwork, template=None):
    """Dense :class:`~vdsws.net.Network` whose means are the quantised weights."""
    from ..net import Network, VariationalDenseLayer

    layers = []
    for i, ql in enumerate(qnet.layers):
        w = qnet.weights(i)
        ls2 = np.full(w.shape, -10.0) if template is None else template.layers[i].log_sigma2
        layers.append(VariationalDenseLayer(w, ls2, ql.bias.copy()))
    return Network(layers)


def binary_dropout_rate(post: GaussianPosterior):
    s2 = post.sigma2
    return s2 / (post.theta ** 2 + s2)


def vd_threshold(post: GaussianPosterior, t=0.95):
    """Zero the means whose binary dropout rate sigma^2 / (theta^2 + sigma^2) >= t.

    Compared in log space as log sigma^2 - log theta^2 >= logit(t), with a
    1e-12 slack so that exact boundary cases count as dropped.
    """
    if not 0.0 < t < 1.0:
        raise ValueError("threshold t must lie in (0, 1)")
    with np.errstate(divide="ignore"):
        la = post.log_sigma2 - np.log(post.theta ** 2)
    drop = la >= np.log(t) - np.log1p(-t) - 1e-12
    theta = np.where(drop, 0.0, post.theta)
    return GaussianPosterior(theta, post.log_sigma2.copy())


@dataclass
class FixedQuantizer:
    """EM-fitted mixture on the nonzero weights plus a dedicated zero symbol."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    @property
    def codebook(self):
        # symbol 0 is the zero symbol
        return np.concatenate([[0.0], self.means])

    def assign(self, values):
        """Symbol per value: 0 for exact zeros, else 1 + most responsible component."""
        values = np.asarray(values, dtype=np.float64)
        flat = values.ravel()
        out = np.zeros(flat.size, dtype=np.int64)
        nz = np.flatnonzero(flat)
        for start in range(0, nz.size, 65536):
            idx = nz[start:start + 65536]
            out[idx] = 1 + np.argmax(_log_joint(flat[idx], self.means, self.variances,
                                                self.weights), axis=1)
        return out.reshape(values.shape)


def _log_joint(x, means, variances, weights):
    d = x[:, None] - means
    return (np.log(weights) - 0.5 * np.log(2.0 * np.pi * variances)
            - 0.5 * d * d / variances)


def fit_fixed_quantizer(theta, K, max_iter=500, tol=1e-10):
    """Fit a K-component 1-d Gaussian mixture to the nonzero entries by EM.

    Means start at evenly spaced quantiles. K shrinks to the number of
    distinct nonzero values when there are fewer. Returns
    ``(FixedQuantizer, symbols)`` with symbols shaped like ``theta``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    x = theta[theta != 0.0].ravel()
    if x.size == 0:
        raise ValueError("no nonzero values to cluster")
    if K < 1:
        raise ValueError("K must be >= 1")
    distinct = np.unique(x)
    K = min(K, distinct.size)
    if K == distinct.size:
        q = FixedQuantizer(distinct.copy(), np.full(K, 1e-30), np.full(K, 1.0 / K))
        return q, q.assign(theta)

    spread = float(np.var(x))
    floor = max(spread * 1e-12, 1e-300)
    means = np.quantile(x, (np.arange(K) + 0.5) / K)
    variances = np.full(K, spread / K ** 2 + floor)
    weights = np.full(K, 1.0 / K)
    prev = -np.inf
    n = x.size
    for _ in range(max_iter):
        lj = _log_joint(x, means, variances, weights)
        mx = lj.max(axis=1, keepdims=True)
        lse = mx + np.log(np.exp(lj - mx).sum(axis=1, keepdims=True))
        r = np.exp(lj - lse)
        ll = float(lse.sum())
        nk = r.sum(axis=0)
        alive = nk > 1e-12
        nk_safe = np.where(alive, nk, 1.0)
        means = np.where(alive, (r * x[:, None]).sum(axis=0) / nk_safe, means)
        d = x[:, None] - means
        variances = np.where(alive, (r * d * d).sum(axis=0) / nk_safe, variances) + floor
        weights = np.maximum(nk / n, 1e-300)
        if abs(ll - prev) <= tol * max(1.0, abs(ll)):
            break
        prev = ll
    order = np.argsort(means, kind="stable")
    q = FixedQuantizer(means[order], variances[order], weights[order])
    return q, q.assign(theta)


def quantize_vd_baseline(net, t=0.95, K=64):
    """Threshold by binary dropout rate, then cluster the survivors with EM."""
    thetas = []
    for layer in net.layers:
        post = vd_threshold(layer.posterior, t)
        thetas.append(post.theta.reshape(layer.theta.shape))
    flat = np.concatenate([th.ravel() for th in thetas])
    q, _ = fit_fixed_quantizer(flat, K)
    codebook = _f32(q.codebook)
    layers = []
    for th, layer in zip(thetas, net.layers):
        sym = q.assign(th)
        sym[codebook[sym] == 0.0] = 0
        layers.append(QuantizedLayer(sym, _f32(layer.bias)))
    return QuantizedNetwork(layers, codebook, 0)


def dense_identity_quantize(net):
    """Lossless 'quantisation' with one codebook entry per distinct float32 weight."""
    values = np.concatenate([_f32(l.theta).ravel() for l in net.layers])
    codebook = np.unique(np.concatenate([[0.0], values]))
    zero = int(np.searchsorted(codebook, 0.0))
    layers = [QuantizedLayer(np.searchsorted(codebook, _f32(l.theta)), _f32(l.bias))
              for l in net.layers]
    return QuantizedNetwork(layers, codebook, zero)
