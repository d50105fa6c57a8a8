"""MixMatch-style semi-supervised objective.

Labeled rows get a refined target ``sharpen(w * given + (1 - w) * p_bar)``
where ``p_bar`` is the model's mean prediction over two jittered copies and
``w`` is the sample's trust weight.  Unlabeled rows get ``sharpen(p_bar)``.
Both copies of every row are mixed up and trained with

    L_SSL = CE(labeled) + lambda_mse * MSE(softmax, target; unlabeled)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ValidationError


@dataclass
class SslConfig:
    lambda_mse: float = 1.0
    temperature: float = 0.5
    alpha: float = 4.0
    sigma: float = 0.1          # jitter, as a fraction of the per-feature std
    rampup_epochs: int = 10
    use_mixup: bool = True
    use_sharpen: bool = True

    def __post_init__(self):
        if self.temperature <= 0 or self.alpha <= 0 or self.lambda_mse < 0 or self.sigma < 0:
            raise ValidationError("need temperature > 0, alpha > 0, lambda_mse >= 0, sigma >= 0")

    def lambda_at(self, epoch):
        """Linearly ramped unlabeled weight for the 0-based SSL epoch."""
        if self.rampup_epochs <= 0:
            return self.lambda_mse
        return self.lambda_mse * min(1.0, (epoch + 1) / self.rampup_epochs)

    @property
    def effective_temperature(self):
        return self.temperature if self.use_sharpen else 1.0


@dataclass(frozen=True, eq=False)
class SslBatch:
    labeled_x: np.ndarray
    labeled_t: np.ndarray       # (nL, C) distributions
    unlabeled_x: np.ndarray
    unlabeled_t: np.ndarray     # (nU, C) distributions
    refine_weights: np.ndarray  # trust weight per labeled source row
    mix_lambda: float
    mix_partner: np.ndarray     # partner row (in the stacked batch) of each mixed row

    def __post_init__(self):
        for t in (self.labeled_t, self.unlabeled_t):
            if len(t) and (np.any(t < -1e-12) or np.any(np.abs(t.sum(axis=1) - 1) > 1e-6)):
                raise ValidationError("targets must be probability distributions")


def augment(x, sigma, rng):
    """Additive Gaussian jitter; ``sigma`` may be a scalar or per-coordinate."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.asarray(sigma) < 0):
        raise ValidationError("sigma must be non-negative")
    return x + np.asarray(sigma) * rng.standard_normal(x.shape)


def sharpen(p, T):
    """``p ** (1/T)`` renormalised, computed in log space."""
    p = np.asarray(p, dtype=np.float64)
    if T == 1:
        return p / p.sum(axis=-1, keepdims=True)
    logp = np.log(np.clip(p, nn.PROB_FLOOR, 1.0)) / T
    return nn.softmax(logp)


def _check_distribution(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=-1) - 1) > 1e-6):
        raise ValidationError("expected probability vectors")
    return p


def mean_prediction(model, x, sigma, rng):
    """Mean softmax over exactly two jittered copies."""
    p1 = model.predict_proba(augment(x, sigma, rng))
    p2 = model.predict_proba(augment(x, sigma, rng))
    return (p1 + p2) / 2


def pseudo_label(model, x, sigma, rng, T=0.5):
    return sharpen(mean_prediction(model, x, sigma, rng), T)


def refine_label(given, predicted, w, T=0.5):
    given, predicted = _check_distribution(given), _check_distribution(predicted)
    w = np.asarray(w, dtype=np.float64)
    if np.any((w < 0) | (w > 1)):
        raise ValidationError("refinement weight must lie in [0, 1]")
    if w.ndim == 1:
        w = w[:, None]
    return sharpen(w * given + (1 - w) * predicted, T)


def mixup(first, second, alpha, rng):
    """Mix two ``(input, distribution)`` pairs with ``lam' = max(lam, 1 - lam)``, lam ~ Beta."""
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    lam = rng.beta(alpha, alpha)
    lam = max(lam, 1 - lam)
    (x1, y1), (x2, y2) = first, second
    x = lam * np.asarray(x1, dtype=np.float64) + (1 - lam) * np.asarray(x2, dtype=np.float64)
    y = lam * np.asarray(y1, dtype=np.float64) + (1 - lam) * np.asarray(y2, dtype=np.float64)
    return x, y, lam


def build_batch(model, x_l, y_l, w_l, x_u, config: SslConfig, sigma, rng):
    """Targets from the current model, then two jittered copies of every row, mixed."""
    C = model.num_classes
    T = config.effective_temperature
    x_l = np.asarray(x_l, dtype=np.float64)
    x_u = np.asarray(x_u, dtype=np.float64).reshape(-1, x_l.shape[1] if x_l.size else model.f.in_dim)
    nl, nu = len(x_l), len(x_u)

    t_l = np.zeros((0, C))
    if nl:
        given = np.eye(C)[np.asarray(y_l)]
        t_l = refine_label(given, mean_prediction(model, x_l, sigma, rng), w_l, T)
    t_u = pseudo_label(model, x_u, sigma, rng, T) if nu else np.zeros((0, C))

    xs = np.concatenate([augment(x_l, sigma, rng), augment(x_l, sigma, rng),
                         augment(x_u, sigma, rng), augment(x_u, sigma, rng)])
    ts = np.concatenate([t_l, t_l, t_u, t_u])
    partner = np.arange(len(xs))
    lam = 1.0
    if config.use_mixup and len(xs) > 1:
        partner = rng.permutation(len(xs))
        xs, ts, lam = mixup((xs, ts), (xs[partner], ts[partner]), config.alpha, rng)
        ts = ts / ts.sum(axis=1, keepdims=True)
    return SslBatch(xs[:2 * nl], ts[:2 * nl], xs[2 * nl:], ts[2 * nl:],
                    np.asarray(w_l, dtype=np.float64).reshape(-1), float(lam), partner)


def ssl_terms(model, batch: SslBatch):
    """``(L_CE, L_MSE)`` without gradients."""
    ce = nn.softmax_cross_entropy(model.logits(batch.labeled_x), batch.labeled_t) \
        if len(batch.labeled_x) else 0.0
    mse = nn.mse_loss(model.predict_proba(batch.unlabeled_x), batch.unlabeled_t) \
        if len(batch.unlabeled_x) else 0.0
    return ce, mse


def ssl_loss(model, batch: SslBatch, lambda_mse):
    """Value of ``L_CE + lambda_mse * L_MSE`` and its gradients for ``f`` and ``g``.

    Targets are treated as constants.  Returns ``(loss, grads_f, grads_g)``.
    """
    nl, nu = len(batch.labeled_x), len(batch.unlabeled_x)
    x = np.concatenate([batch.labeled_x, batch.unlabeled_x])
    logits, tape = nn.classifier_forward(model.f, model.g, x)
    dlogits = np.zeros_like(logits)
    loss = 0.0
    if nl:
        loss += nn.softmax_cross_entropy(logits[:nl], batch.labeled_t)
        dlogits[:nl] = nn.cross_entropy_backward(logits[:nl], batch.labeled_t)
    if nu and lambda_mse:
        p = nn.softmax(logits[nl:])
        loss += lambda_mse * nn.mse_loss(p, batch.unlabeled_t)
        dp = lambda_mse * nn.mse_backward(p, batch.unlabeled_t)
        dlogits[nl:] = nn.softmax_backward(p, dp)
    grads_f, grads_g = nn.classifier_backward(model.f, model.g, tape, dlogits)
    return loss, grads_f, grads_g
