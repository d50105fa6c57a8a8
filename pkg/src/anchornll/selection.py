"""Small-loss easy-sample selection.

Per-sample losses are modelled with a two-component 1-D Gaussian mixture;
the posterior of the smaller-mean component is the easiness score.  The
easy set keeps, per observed class ``j``, the ``M_j`` highest-scoring
samples where ``M_j = min(ceil(N * P / 100 / C), N_j)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateFitError, ValidationError

VAR_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class LossRecord:
    losses: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.losses)) or np.any(self.losses < 0):
            raise ValidationError("losses must be finite and non-negative")


@dataclass(frozen=True, eq=False)
class GmmFit:
    means: np.ndarray        # (2,), component 0 has the smaller mean
    variances: np.ndarray
    weights: np.ndarray
    posterior: np.ndarray    # (N,) responsibility of component 0
    n_iter: int
    log_likelihood: float
    ll_history: np.ndarray
    values: np.ndarray       # the data the mixture was fitted to


@dataclass(frozen=True, eq=False)
class EasySplit:
    scores: np.ndarray
    easy: np.ndarray         # sorted dataset indices
    hard: np.ndarray
    easy_counts: np.ndarray  # M_j
    class_totals: np.ndarray  # N_j
    fraction: float          # P, in percent; nan for a threshold split

    def to_csv(self, path, labels):
        part = np.full(len(self.scores), "hard", dtype=object)
        part[self.easy] = "easy"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "class", "omega", "partition"])
            for i in range(len(self.scores)):
                w.writerow([i, int(labels[i]), repr(float(self.scores[i])), part[i]])
        return Path(path)


def normalize_losses(losses):
    """Min-max scale to [0, 1]."""
    losses = np.asarray(losses, dtype=np.float64)
    lo, hi = losses.min(), losses.max()
    if hi - lo <= 0:
        raise DegenerateFitError("all losses are identical")
    return (losses - lo) / (hi - lo)


def _log_gauss(x, mean, var):
    return -0.5 * (np.log(2 * np.pi * var)[None, :] + (x[:, None] - mean[None, :]) ** 2 / var[None, :])


def fit_gmm2(losses, tol=1e-6, max_iter=200):
    """EM for a two-component 1-D Gaussian mixture.

    Initialised with means at the 10th/90th percentiles, equal weights and
    the pooled variance.  Stops when the total log-likelihood gains less
    than ``tol`` or after ``max_iter`` iterations.
    """
    x = np.asarray(losses.losses if isinstance(losses, LossRecord) else losses, dtype=np.float64)
    if x.ndim != 1 or len(x) < 4:
        raise ValidationError("need at least 4 loss values")
    if np.ptp(x) <= 0:
        raise DegenerateFitError("all losses are identical")

    mean = np.percentile(x, [10, 90]).astype(np.float64)
    var = np.full(2, max(x.var(), VAR_FLOOR))
    weight = np.array([0.5, 0.5])

    history = []
    resp = None
    for it in range(1, max_iter + 1):
        joint = _log_gauss(x, mean, var) + np.log(weight)[None, :]
        total = logsumexp(joint, axis=1)
        history.append(float(total.sum()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
        resp = np.exp(joint - total[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            raise DegenerateFitError("a mixture component lost all its mass")
        weight = nk / len(x)
        mean = (resp * x[:, None]).sum(axis=0) / nk
        var = np.maximum((resp * (x[:, None] - mean[None, :]) ** 2).sum(axis=0) / nk, VAR_FLOOR)

    joint = _log_gauss(x, mean, var) + np.log(weight)[None, :]
    resp = np.exp(joint - logsumexp(joint, axis=1)[:, None])
    order = np.argsort(mean)
    return GmmFit(
        means=mean[order],
        variances=var[order],
        weights=weight[order],
        posterior=resp[:, order[0]],
        n_iter=it,
        log_likelihood=history[-1],
        ll_history=np.array(history),
        values=x,
    )


def component_posterior(fit: GmmFit, values):
    """Posterior of the small-mean component at arbitrary loss values."""
    v = np.asarray(values, dtype=np.float64)
    joint = _log_gauss(v, fit.means, fit.variances) + np.log(fit.weights)[None, :]
    return np.exp(joint[:, 0] - logsumexp(joint, axis=1))


def easiness_scores(fit: GmmFit):
    """Small-mean-component posterior, evaluated on losses clipped to [mu_0, mu_1].

    With unequal variances the raw posterior can turn around in either tail;
    clipping keeps the score non-increasing in the loss.
    """
    return component_posterior(fit, np.clip(fit.values, fit.means[0], fit.means[1]))


def easy_quota(n, num_classes, percent):
    """``ceil(n * P% / C)`` computed exactly."""
    return math.ceil(Fraction(n) * Fraction(str(percent)) / (100 * num_classes))


def _rank_desc(scores, idx):
    # highest score first, lower index on ties
    return idx[np.lexsort((idx, -scores[idx]))]


def class_balanced_split(labels, scores, percent=60, num_classes=None):
    """Top-``M_j`` easiness scores within each observed class become easy."""
    labels = np.asarray(getattr(labels, "noisy_labels", labels))
    C = num_classes or int(labels.max()) + 1
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ValidationError("one score per sample required")
    if not 0 < percent <= 100:
        raise ValidationError("P must lie in (0, 100]")
    totals = np.bincount(labels, minlength=C)
    if np.any(totals == 0):
        raise ValidationError("every class needs at least one sample")
    quota = easy_quota(len(labels), C, percent)
    counts = np.minimum(quota, totals)
    easy = []
    for j in range(C):
        ranked = _rank_desc(scores, np.flatnonzero(labels == j))
        easy.append(ranked[: counts[j]])
    easy = np.sort(np.concatenate(easy))
    hard = np.setdiff1d(np.arange(len(labels)), easy)
    return EasySplit(scores, easy, hard, counts, totals, float(percent))


def threshold_split(labels, scores, threshold=0.5, num_classes=None):
    """Plain posterior threshold with no class balancing (the baseline selector)."""
    labels = np.asarray(getattr(labels, "noisy_labels", labels))
    C = num_classes or int(labels.max()) + 1
    scores = np.asarray(scores, dtype=np.float64)
    mask = scores > threshold
    easy, hard = np.flatnonzero(mask), np.flatnonzero(~mask)
    return EasySplit(
        scores, easy, hard,
        np.bincount(labels[easy], minlength=C), np.bincount(labels, minlength=C), float("nan"),
    )


@dataclass(frozen=True)
class SelectionQuality:
    precision: float
    recall: float


def selection_quality(split: EasySplit, ds):
    clean = ds.noisy_labels == ds.true_labels
    n_easy = len(split.easy)
    precision = float(clean[split.easy].mean()) if n_easy else 0.0
    recall = float(clean[split.easy].sum() / clean.sum()) if clean.any() else 0.0
    return SelectionQuality(precision, recall)
