"""Closed-form variational terms for the joint VD + soft-weight-sharing objective.

All functions are pure and vectorised over weights. Mixture parameters live in
log space (``log_pi``, ``log_lambda``); the zero-spike component keeps a mean of
exactly 0 and, by default, a frozen mixing proportion.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, logsumexp

# Log-uniform KL approximation constants (Molchanov et al., 2017).
K1 = 0.63576
K2 = 1.87320
K3 = 1.48695

THETA_EPS = 1e-16
LOG_2PI = float(np.log(2.0 * np.pi))


class DomainError(ValueError):
    """Raised for non-finite or out-of-domain inputs."""


def _check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite values")


@dataclass
class GaussianPosterior:
    """Factorised Gaussian posterior: weight means and log-variances."""

    theta: np.ndarray
    log_sigma2: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.log_sigma2 = np.asarray(self.log_sigma2, dtype=np.float64)
        if self.theta.shape != self.log_sigma2.shape or self.theta.size < 1:
            raise ValueError(
                f"theta {self.theta.shape} and log_sigma2 {self.log_sigma2.shape} "
                "must have the same nonzero size")
        _check_finite("theta", self.theta)
        _check_finite("log_sigma2", self.log_sigma2)

    @property
    def sigma2(self):
        return np.exp(self.log_sigma2)

    def __len__(self):
        return self.theta.size


@dataclass
class MixturePrior:
    """Gaussian mixture over weight centres, parametrised in log space.

    ``fixed_mask`` marks components whose mean and mixing proportion are frozen.
    By default only the zero spike is frozen.
    """

    log_pi: np.ndarray
    mu: np.ndarray
    log_lambda: np.ndarray
    zero_index: int | None = None
    fixed_mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.log_pi = np.asarray(self.log_pi, dtype=np.float64).copy()
        self.mu = np.asarray(self.mu, dtype=np.float64).copy()
        self.log_lambda = np.asarray(self.log_lambda, dtype=np.float64).copy()
        k = self.mu.size
        if k < 1 or self.log_pi.shape != (k,) or self.log_lambda.shape != (k,):
            raise ValueError("log_pi, mu and log_lambda must be 1-d of equal length K >= 1")
        for name in ("log_pi", "mu", "log_lambda"):
            _check_finite(name, getattr(self, name))
        if self.fixed_mask is None:
            self.fixed_mask = np.zeros(k, dtype=bool)
            if self.zero_index is not None:
                self.fixed_mask[self.zero_index] = True
        self.fixed_mask = np.asarray(self.fixed_mask, dtype=bool).copy()
        if self.fixed_mask.shape != (k,):
            raise ValueError("fixed_mask must have length K")
        if self.zero_index is not None:
            if not 0 <= self.zero_index < k:
                raise ValueError("zero_index out of range")
            if self.mu[self.zero_index] != 0.0:
                raise ValueError("mu[zero_index] must be exactly 0")

    @property
    def K(self):
        return self.mu.size

    @property
    def pi(self):
        return np.exp(self.log_pi)

    @property
    def precision(self):
        return np.exp(self.log_lambda)

    def copy(self):
        return MixturePrior(self.log_pi, self.mu, self.log_lambda,
                            self.zero_index, self.fixed_mask)

    def normalized_log_pi(self, log_pi=None):
        return normalize_log_pi(self.log_pi if log_pi is None else log_pi,
                                self.fixed_mask)

    def renormalize(self):
        """Project back onto the constraint set after an optimiser step."""
        self.log_pi = self.normalized_log_pi()
        if self.zero_index is not None:
            self.mu[self.zero_index] = 0.0


@dataclass
class ObjectiveConfig:
    """Scales of the two KL terms, gamma hyper-prior on the precisions, and N.

    ``hyperprior=False`` drops the gamma term entirely.
    """

    tau1: float = 1.0
    tau2: float = 0.0
    gamma_alpha: float = 1e5
    gamma_beta: float = 10.0
    dataset_size: int = 60000
    hyperprior: bool = True

    def __post_init__(self):
        for name in ("tau1", "tau2", "gamma_alpha", "gamma_beta"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise DomainError(f"{name} must be finite")
        if self.tau1 < 0 or self.tau2 < 0:
            raise DomainError("tau1 and tau2 must be nonnegative")
        if self.gamma_alpha <= 0 or self.gamma_beta <= 0:
            raise DomainError("gamma_alpha and gamma_beta must be positive")
        if int(self.dataset_size) != self.dataset_size or self.dataset_size < 1:
            raise DomainError("dataset_size must be a positive integer")


def normalize_log_pi(log_pi, fixed_mask=None):
    """Renormalise log proportions, keeping frozen entries untouched.

    Free entries are log-softmaxed and scaled to fill the probability mass left
    by the frozen ones.
    """
    log_pi = np.asarray(log_pi, dtype=np.float64)
    if fixed_mask is None or not np.any(fixed_mask):
        return log_pi - logsumexp(log_pi)
    free = ~np.asarray(fixed_mask, dtype=bool)
    out = log_pi.copy()
    if not np.any(free):
        return out
    fixed_mass = float(np.exp(log_pi[~free]).sum())
    if not fixed_mass < 1.0:
        raise DomainError("frozen mixing proportions leave no mass for free components")
    out[free] = np.log1p(-fixed_mass) + log_pi[free] - logsumexp(log_pi[free])
    return out


def log_alpha(theta, log_sigma2):
    """log(sigma^2 / theta^2) with the theta = 0 singularity guarded."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.asarray(log_sigma2, dtype=np.float64) - np.log(theta * theta + THETA_EPS)


def neg_kl_log_uniform(theta, log_sigma2):
    """Approximate -KL(N(theta, sigma^2) || log-uniform), up to an additive constant.

    Increasing in log alpha; saturates at ``K1`` for vanishing signal.
    """
    theta = np.asarray(theta, dtype=np.float64)
    log_sigma2 = np.asarray(log_sigma2, dtype=np.float64)
    _check_finite("theta", theta)
    _check_finite("log_sigma2", log_sigma2)
    la = log_alpha(theta, log_sigma2)
    # log(1 + theta^2/sigma^2) == softplus(-log alpha)
    return K1 * expit(K2 + K3 * la) - 0.5 * np.logaddexp(0.0, -la)


def neg_kl_log_uniform_grad(theta, log_sigma2):
    """Value and partial derivatives of :func:`neg_kl_log_uniform`.

    Returns ``(value, d_theta, d_log_sigma2)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    log_sigma2 = np.asarray(log_sigma2, dtype=np.float64)
    _check_finite("theta", theta)
    _check_finite("log_sigma2", log_sigma2)
    t2 = theta * theta + THETA_EPS
    la = log_sigma2 - np.log(t2)
    s = expit(K2 + K3 * la)
    value = K1 * s - 0.5 * np.logaddexp(0.0, -la)
    d_la = K1 * K3 * s * (1.0 - s) + 0.5 * expit(-la)
    return value, d_la * (-2.0 * theta / t2), d_la


def _component_log_terms(x, log_pi, mu, log_lambda):
    # (..., K) array of log pi_k + log N(x | mu_k, 1/lambda_k)
    x = np.asarray(x, dtype=np.float64)[..., None]
    lam = np.exp(log_lambda)
    diff = x - mu
    return log_pi + 0.5 * log_lambda - 0.5 * LOG_2PI - 0.5 * lam * diff * diff


def log_gm_density(x, prior: MixturePrior):
    """log sum_k pi_k N(x | mu_k, lambda_k^-1), elementwise over ``x``."""
    _check_finite("x", x)
    terms = _component_log_terms(x, prior.log_pi, prior.mu, prior.log_lambda)
    return logsumexp(terms, axis=-1)


def gm_responsibilities(x, prior: MixturePrior):
    """Posterior component probabilities; last axis has length K."""
    _check_finite("x", x)
    terms = _component_log_terms(x, prior.log_pi, prior.mu, prior.log_lambda)
    return np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))


def gamma_log_prior(log_lambda, alpha, beta):
    """Sum of Gamma(alpha, beta) log-densities evaluated at exp(log_lambda)."""
    if not (alpha > 0 and beta > 0):
        raise DomainError("alpha and beta must be positive")
    log_lambda = np.asarray(log_lambda, dtype=np.float64)
    _check_finite("log_lambda", log_lambda)
    lam = np.exp(log_lambda)
    return float(np.sum(alpha * np.log(beta) - gammaln(alpha)
                        + (alpha - 1.0) * log_lambda - beta * lam))


def gamma_log_prior_grad(log_lambda, alpha, beta):
    """d gamma_log_prior / d log_lambda (chain rule through lambda = exp)."""
    if not (alpha > 0 and beta > 0):
        raise DomainError("alpha and beta must be positive")
    return (alpha - 1.0) - beta * np.exp(np.asarray(log_lambda, dtype=np.float64))


def regularization_term(post: GaussianPosterior, prior: MixturePrior | None,
                        cfg: ObjectiveConfig):
    """Penalty added to the negative log-likelihood, with its gradients.

    value = sum_i [tau1 * -negKL_i - tau2 * log GM(theta_i)] - log Gamma(lambda)

    The mixture term is evaluated with ``log_pi`` renormalised through
    :func:`normalize_log_pi`, so the ``log_pi`` gradient is taken through that
    projection and frozen entries receive exactly zero. ``mu`` of frozen
    components also receives zero gradient. ``prior`` may be None when
    ``tau2 == 0``; the gamma term then also vanishes.

    Returns ``(value, grads)`` with keys ``theta``, ``log_sigma2`` and, when a
    prior is given, ``mu``, ``log_lambda``, ``log_pi``.
    """
    theta, log_sigma2 = post.theta, post.log_sigma2
    grads = {}
    value = 0.0
    d_theta = np.zeros_like(theta)
    d_ls2 = np.zeros_like(log_sigma2)

    if cfg.tau1 != 0.0:
        nkl, g_t, g_s = neg_kl_log_uniform_grad(theta, log_sigma2)
        value -= cfg.tau1 * float(nkl.sum())
        d_theta -= cfg.tau1 * g_t
        d_ls2 -= cfg.tau1 * g_s

    if prior is not None:
        fixed = prior.fixed_mask
        log_pi = prior.normalized_log_pi()
        g_mu = np.zeros(prior.K)
        g_ll = np.zeros(prior.K)
        g_lp = np.zeros(prior.K)
        if cfg.tau2 != 0.0:
            # (K, D) layout keeps reductions over K elementwise across rows
            lam = np.exp(prior.log_lambda)
            flat = theta.ravel()
            diff = flat[None, :] - prior.mu[:, None]
            resp = diff * diff
            resp *= (-0.5 * lam)[:, None]
            resp += (log_pi + 0.5 * prior.log_lambda - 0.5 * LOG_2PI)[:, None]
            top = np.maximum.reduce(resp, axis=0)
            resp -= top
            np.exp(resp, out=resp)
            total = np.add.reduce(resp, axis=0)
            resp /= total
            value -= cfg.tau2 * float(np.sum(top + np.log(total)))
            # gradients of sum_i log GM(theta_i)
            rd = resp * diff
            d_theta += cfg.tau2 * (lam @ rd).reshape(theta.shape)
            r_sum = resp.sum(axis=1)
            g_mu = -cfg.tau2 * lam * rd.sum(axis=1)
            rd *= diff
            g_ll = -cfg.tau2 * (0.5 * r_sum - 0.5 * lam * rd.sum(axis=1))
            free = ~fixed
            if np.any(free):
                if np.any(fixed):
                    share = np.exp(log_pi[free] - logsumexp(log_pi[free]))
                else:
                    share = np.exp(log_pi)
                g_free = r_sum[free] - share * r_sum[free].sum()
                g_lp[free] = -cfg.tau2 * g_free
        if cfg.hyperprior:
            value -= gamma_log_prior(prior.log_lambda, cfg.gamma_alpha, cfg.gamma_beta)
            g_ll = g_ll - gamma_log_prior_grad(prior.log_lambda, cfg.gamma_alpha,
                                               cfg.gamma_beta)
        g_mu[fixed] = 0.0
        grads["mu"] = g_mu
        grads["log_lambda"] = g_ll
        grads["log_pi"] = g_lp

    grads["theta"] = d_theta
    grads["log_sigma2"] = d_ls2
    return value, grads


def sample_weights(post: GaussianPosterior, noise):
    """Reparametrised draw theta + sigma * noise."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != post.theta.shape:
        raise ValueError(f"noise shape {noise.shape} != {post.theta.shape}")
    return post.theta + np.exp(0.5 * post.log_sigma2) * noise
