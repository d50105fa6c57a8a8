"""Hard-sample label correction by voting of nearby anchors.

Each anchor is bound to its most similar hard feature.  If that similarity
exceeds ``lam_conf`` the anchor is a valid representative of the hard
sample and casts a vote with its own label.  Every hard sample keeps at
most ``K`` of its representatives (highest similarity first) and takes the
majority label; samples without a strict majority stay uncorrected.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ValidRepresentative:
    anchor: int
    hard: int          # row in the hard FeatureSet
    similarity: float
    label: int


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    corrected: np.ndarray      # rows of the hard set with a voted label
    labels: np.ndarray         # voted label per corrected row
    confidence: np.ndarray     # winning share of the votes
    residual: np.ndarray       # rows of the hard set left uncorrected
    representatives: list      # per hard row, list[ValidRepresentative]

    @property
    def coverage(self):
        n = len(self.corrected) + len(self.residual)
        return len(self.corrected) / n if n else 0.0

    def to_csv(self, path, hard, true_labels=None):
        voted = dict(zip(self.corrected.tolist(), zip(self.labels.tolist(), self.confidence.tolist())))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hard_id", "voted_label", "confidence", "n_reps",
                        "original_noisy_label", "true_label"])
            for r in range(len(hard)):
                label, conf = voted.get(r, ("", ""))
                idx = int(hard.indices[r])
                truth = "" if true_labels is None else int(true_labels[idx])
                w.writerow([idx, label, conf, len(self.representatives[r]), int(hard.labels[r]), truth])
        return Path(path)


def _similarities(anchors, hard_features):
    return np.asarray(anchors, dtype=np.float64) @ np.asarray(hard_features, dtype=np.float64).T


def nearest_hard(anchor, hard):
    """Index and cosine similarity of the hard feature closest to ``anchor`` (lowest index on ties)."""
    feats = getattr(hard, "features", hard)
    if len(feats) == 0:
        raise ValidationError("hard set is empty")
    a = np.asarray(anchor, dtype=np.float64)
    sims = (feats @ a) / (np.linalg.norm(feats, axis=1) * np.linalg.norm(a))
    r = int(np.argmax(sims))
    return r, float(sims[r])


def validate_anchors(anchors, hard, lam_conf):
    """Anchors whose nearest-hard similarity strictly exceeds ``lam_conf``."""
    if not -1.0 <= lam_conf < 1.0:
        raise ValidationError("lam_conf must lie in [-1, 1)")
    if len(anchors) == 0 or len(hard) == 0:
        return []
    sims = _similarities(anchors.anchors, hard.features)
    best = np.argmax(sims, axis=1)
    best_sim = sims[np.arange(len(best)), best]
    keep = np.flatnonzero(best_sim > lam_conf)
    return [
        ValidRepresentative(int(i), int(best[i]), float(best_sim[i]), int(anchors.labels[i]))
        for i in keep
    ]


def attach_representatives(valids, hard, K):
    """Per hard row, the up-to-``K`` most similar valid representatives."""
    if K < 1:
        raise ValidationError("K must be >= 1")
    groups = [[] for _ in range(len(hard))]
    for rep in valids:
        groups[rep.hard].append(rep)
    return [sorted(g, key=lambda rep: (-rep.similarity, rep.anchor))[:K] for g in groups]


def majority_vote(reps):
    """``(label, confidence)`` or ``None`` for no votes.

    Ties go to the label with the larger summed similarity, then to the
    lower class index.
    """
    if not reps:
        return None
    tally = {}
    for rep in reps:
        count, weight = tally.get(rep.label, (0, 0.0))
        tally[rep.label] = (count + 1, weight + rep.similarity)
    label = min(tally, key=lambda c: (-tally[c][0], -tally[c][1], c))
    return label, tally[label][0] / len(reps)


def correct_hard(anchors, hard, lam_conf=0.8, K=10, min_confidence=0.5):
    """Run validation, attachment and voting over the whole hard set.

    A sample is corrected only when its vote share is strictly above
    ``min_confidence``.
    """
    valids = validate_anchors(anchors, hard, lam_conf)
    groups = attach_representatives(valids, hard, K)
    corrected, labels, conf = [], [], []
    for r, reps in enumerate(groups):
        vote = majority_vote(reps)
        if vote is not None and vote[1] > min_confidence:
            corrected.append(r)
            labels.append(vote[0])
            conf.append(vote[1])
    corrected = np.asarray(corrected, dtype=np.int64)
    return CorrectionResult(
        corrected=corrected,
        labels=np.asarray(labels, dtype=np.int64),
        confidence=np.asarray(conf, dtype=np.float64),
        residual=np.setdiff1d(np.arange(len(hard)), corrected),
        representatives=groups,
    )
