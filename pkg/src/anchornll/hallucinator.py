"""Anchor hallucination in feature space.

An anchor ``s_a = normalize(h(s_u || s_v))`` is built from two easy features
of different classes and carries the label of ``s_u``.  ``h`` is trained on

    L_hal = -lam_p <s_a, s_u> - (1 - lam_p) <s_a, s_v> + CE(g(s_a), y_u)

with the feature extractor and classifier frozen.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ShapeError, ValidationError


@dataclass(frozen=True, eq=False)
class FeatureSet:
    features: np.ndarray   # (n, d), unit rows
    indices: np.ndarray    # dataset row of each feature
    labels: np.ndarray     # observed label of each source sample
    role: str = "easy"

    def __post_init__(self):
        n = len(self.features)
        if self.indices.shape != (n,) or self.labels.shape != (n,):
            raise ShapeError("indices and labels need one entry per feature row")
        if n and np.any(np.abs(np.linalg.norm(self.features, axis=1) - 1.0) > 1e-6):
            raise ValidationError("feature rows must be unit-normalised")

    def __len__(self):
        return len(self.features)


@dataclass(frozen=True, eq=False)
class AnchorSet:
    anchors: np.ndarray    # (m, d), unit rows
    labels: np.ndarray     # label of the u-source
    pairs: np.ndarray      # (m, 2) rows into the easy FeatureSet
    lam_p: float

    def __len__(self):
        return len(self.anchors)


def features_of(model: nn.ModelBundle, inputs, indices, labels, role):
    return FeatureSet(model.features(inputs), np.asarray(indices), np.asarray(labels), role)


def sample_pairs(easy: FeatureSet, anchors_per_sample=4, rng=None):
    """For each easy row ``u``, draw ``A`` partners uniformly among rows of other classes."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    labels = easy.labels
    if len(np.unique(labels)) < 2:
        raise ValidationError("easy set must contain at least two classes")
    if anchors_per_sample < 1:
        raise ValidationError("anchors_per_sample must be >= 1")
    order = np.argsort(labels, kind="stable")
    classes, starts, counts = np.unique(labels[order], return_index=True, return_counts=True)
    pos = np.searchsorted(classes, labels)
    start, count = starts[pos], counts[pos]

    u = np.repeat(np.arange(len(labels)), anchors_per_sample)
    # draw among the n - n_c eligible slots, then skip over the u's own class block
    r = np.floor(rng.random(len(u)) * (len(labels) - count[u])).astype(np.int64)
    r = np.where(r < start[u], r, r + count[u])
    return np.stack([u, order[r]], axis=1)


def hallucinate(h: nn.MLP, u, v, record=False):
    """Unit-normalised hallucinator output for rows of ``u`` paired with ``v``."""
    u, v = np.atleast_2d(u), np.atleast_2d(v)
    if u.shape != v.shape or 2 * u.shape[1] != h.in_dim:
        raise ShapeError(f"inputs {u.shape}/{v.shape} do not fit hallucinator {h.sizes}")
    x = np.concatenate([u, v], axis=1)
    raw = h.forward(x) if record else h(x)
    s, norms = nn.l2_normalize(raw)
    return (s, norms) if record else s


def _check_lam(lam_p):
    if not 0.5 <= lam_p <= 1.0:
        raise ValidationError(f"lam_p must lie in [0.5, 1.0], got {lam_p}")


def similarity_loss(s_a, s_u, s_v, lam_p):
    """``-lam_p cos(s_a, s_u) - (1 - lam_p) cos(s_a, s_v)``; mean over rows for batches."""
    _check_lam(lam_p)
    val = -lam_p * nn.cosine_similarity(s_a, s_u) - (1 - lam_p) * nn.cosine_similarity(s_a, s_v)
    return float(np.mean(val))


def hallucination_loss(h: nn.MLP, g: nn.MLP, s_u, s_v, y_u, lam_p, grad=False):
    """Batch-mean hallucination loss; with ``grad=True`` also returns grads of ``h``."""
    _check_lam(lam_p)
    s_u, s_v = np.atleast_2d(s_u), np.atleast_2d(s_v)
    y_u = np.atleast_1d(y_u)
    if g.in_dim != s_u.shape[1]:
        raise ShapeError("classifier does not match feature dimension")
    if not grad:
        s_a = hallucinate(h, s_u, s_v)
        return similarity_loss(s_a, s_u, s_v, lam_p) + nn.softmax_cross_entropy(g(s_a), y_u)

    s_a, norms = hallucinate(h, s_u, s_v, record=True)
    n = len(s_a)
    logits = g.forward(s_a)
    value = similarity_loss(s_a, s_u, s_v, lam_p) + nn.softmax_cross_entropy(logits, y_u)
    # d/ds_a of the mean similarity term on unit vectors
    u_hat, v_hat = nn.l2_normalize(s_u)[0], nn.l2_normalize(s_v)[0]
    ds = -(lam_p * u_hat + (1 - lam_p) * v_hat) / n
    _, ds_ce = g.backward(nn.cross_entropy_backward(logits, y_u))
    grads, _ = h.backward(nn.l2_normalize_backward(ds + ds_ce, s_a, norms))
    return value, grads


@dataclass
class HallucinatorConfig:
    epochs: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    lam_p: float = 0.75
    anchors_per_sample: int = 4
    batch_size: int = 64


def train_hallucinator(h: nn.MLP, g: nn.MLP, easy: FeatureSet, config: HallucinatorConfig, rng):
    """SGD on ``h`` over freshly sampled easy pairs; ``g`` and the features stay fixed.

    Returns ``(h, per_epoch_mean_loss)``.
    """
    if len(easy) == 0:
        raise ValidationError("easy set is empty")
    g_digest = g.digest()
    opt = nn.OptimizerState.for_params(h, config.lr, config.momentum)
    pairs = sample_pairs(easy, config.anchors_per_sample, rng)
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        losses, weights = [], []
        for start in range(0, len(order), config.batch_size):
            p = pairs[order[start:start + config.batch_size]]
            loss, grads = hallucination_loss(
                h, g, easy.features[p[:, 0]], easy.features[p[:, 1]], easy.labels[p[:, 0]],
                config.lam_p, grad=True,
            )
            nn.sgd_step(h, grads, opt)
            losses.append(loss)
            weights.append(len(p))
        curve.append(float(np.average(losses, weights=weights)))
    assert g.digest() == g_digest
    return h, curve


def build_anchors(h: nn.MLP, easy: FeatureSet, anchors_per_sample, lam_p, rng):
    pairs = sample_pairs(easy, anchors_per_sample, rng)
    s_a = hallucinate(h, easy.features[pairs[:, 0]], easy.features[pairs[:, 1]])
    return AnchorSet(s_a, easy.labels[pairs[:, 0]], pairs, lam_p)


def save_anchors(path, anchors: AnchorSet, easy: FeatureSet):
    """Dump anchors in the dataset container layout (inputs = anchor vectors)."""
    header = {
        "format": "anchornll-dataset",
        "version": 1,
        "N": len(anchors),
        "input_dim": int(anchors.anchors.shape[1]) if len(anchors) else 0,
        "C": int(max(anchors.labels.max(), easy.labels.max()) + 1) if len(anchors) else 0,
        "split": "anchors",
        "seed": None,
        "noise": None,
        "lam_p": anchors.lam_p,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.array(json.dumps(header, sort_keys=True)),
            inputs=anchors.anchors.astype(np.float32),
            true_labels=anchors.labels.astype(np.int64),
            noisy_labels=anchors.labels.astype(np.int64),
            source_u=easy.indices[anchors.pairs[:, 0]],
            source_v=easy.indices[anchors.pairs[:, 1]],
        )
    return path
