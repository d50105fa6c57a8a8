"""Synthetic classification data and label-noise injectors.

Every dataset keeps its ground-truth labels next to the observed ones, so
selection and correction quality can be measured exactly.  Injectors never
touch the inputs and always start from ``true_labels``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import nn
from .errors import ValidationError

SPLITS = ("train", "val", "test")
NOISE_KINDS = ("symmetric", "asymmetric", "feature-dependent", "classification-based")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    rate: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        _check_rate(self.rate)
        cmap = self.params.get("class_map")
        if self.kind == "asymmetric" and cmap is not None:
            if sorted(cmap) != list(range(len(cmap))):
                raise ValidationError("asymmetric class_map must be a permutation")


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray          # (N, D) float32
    true_labels: np.ndarray     # (N,) int64, hidden from training
    noisy_labels: np.ndarray    # (N,) int64, what the learner sees
    num_classes: int
    split: str = "train"
    seed: int = 0
    noise: dict | None = None
    context_mask: np.ndarray | None = None  # samples drawn with another class's context

    def __post_init__(self):
        n = len(self.inputs)
        if self.inputs.ndim != 2:
            raise ValidationError("inputs must be a 2-D matrix")
        if self.true_labels.shape != (n,) or self.noisy_labels.shape != (n,):
            raise ValidationError("label vectors must have one entry per input row")
        for labels in (self.true_labels, self.noisy_labels):
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValidationError("labels must lie in [0, C)")
        if not np.all(np.isfinite(self.inputs)):
            raise ValidationError("inputs must be finite")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}")
        if self.split != "train" and np.any(self.noisy_labels != self.true_labels):
            raise ValidationError("validation and test splits must be clean")

    def __len__(self):
        return len(self.inputs)

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def class_counts(self):
        """Per-class counts of the *noisy* labels (N_j)."""
        return np.bincount(self.noisy_labels, minlength=self.num_classes)

    def with_noisy_labels(self, labels, noise):
        return replace(self, noisy_labels=np.asarray(labels, dtype=np.int64), noise=noise)


def _check_rate(r):
    if not 0.0 <= r < 1.0:
        raise ValidationError(f"noise rate must lie in [0, 1), got {r}")


def _require_train(ds):
    if ds.split != "train":
        raise ValidationError("noise is only injected into the training split")


def _split_stream(split):
    return SPLITS.index(split) + 1


def make_blobs(classes, per_class, input_dim, overlap, seed, *, split="train",
               spread=6.0, context_frac=0.0, context_weight=0.8):
    """Gaussian class clusters with unit within-class std.

    Each class mean is ``obj_j + ctx_j`` where both components are
    orthogonal directions (when ``2C <= input_dim``).  ``obj`` has length
    ``spread * (1 - overlap)`` and ``ctx`` is ``context_weight`` times that.
    A ``context_frac`` share of every class is drawn with another class's
    context instead: the label is still right but the point sits between
    clusters.  Geometry depends only on ``seed``; ``split`` picks an
    independent sample stream over the same geometry.
    """
    if classes < 2 or per_class < 1 or input_dim < 1:
        raise ValidationError("need classes >= 2, per_class >= 1 and input_dim >= 1")
    if not 0.0 <= overlap <= 1.0:
        raise ValidationError("overlap must lie in [0, 1]")
    if not 0.0 <= context_frac < 1.0:
        raise ValidationError("context_frac must lie in [0, 1)")

    geo = np.random.default_rng([seed, 0])
    if 2 * classes <= input_dim:
        q, _ = np.linalg.qr(geo.standard_normal((input_dim, 2 * classes)))
        dirs = q.T
    else:
        dirs = geo.standard_normal((2 * classes, input_dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = spread * (1.0 - overlap)
    obj = scale * dirs[:classes]
    ctx = context_weight * scale * dirs[classes:]

    rng = np.random.default_rng([seed, _split_stream(split)])
    labels = np.repeat(np.arange(classes), per_class)
    ctx_owner = labels.copy()
    mask = np.zeros(len(labels), dtype=bool)
    if context_frac > 0:
        n_swap = int(round(context_frac * per_class))
        for j in range(classes):
            members = np.flatnonzero(labels == j)
            chosen = rng.choice(members, size=n_swap, replace=False)
            others = np.delete(np.arange(classes), j)
            ctx_owner[chosen] = rng.choice(others, size=n_swap)
            mask[chosen] = True
    x = obj[labels] + ctx[ctx_owner] + rng.standard_normal((len(labels), input_dim))
    order = rng.permutation(len(labels))
    return Dataset(
        inputs=x[order].astype(np.float32),
        true_labels=labels[order].astype(np.int64),
        noisy_labels=labels[order].astype(np.int64),
        num_classes=classes,
        split=split,
        seed=seed,
        context_mask=mask[order],
    )


def noise_rate(ds: Dataset):
    if len(ds) == 0:
        return 0.0
    return float(np.mean(ds.noisy_labels != ds.true_labels))


def inject_symmetric(ds: Dataset, r, seed):
    """Flip exactly ``round(r N)`` uniformly chosen samples to a uniformly chosen wrong class."""
    _check_rate(r)
    _require_train(ds)
    rng = np.random.default_rng([seed, 11])
    n, C = len(ds), ds.num_classes
    noisy = ds.true_labels.copy()
    idx = rng.choice(n, size=int(round(r * n)), replace=False)
    # offset in 1..C-1 never lands on the true class
    noisy[idx] = (noisy[idx] + rng.integers(1, C, size=len(idx))) % C
    return ds.with_noisy_labels(noisy, {"kind": "symmetric", "rate": r, "seed": seed})


def inject_asymmetric(ds: Dataset, r, seed, class_map=None):
    """Flip exactly ``round(r N)`` samples along ``class_map`` (default j -> j+1 mod C)."""
    _check_rate(r)
    _require_train(ds)
    C = ds.num_classes
    cmap = np.arange(1, C + 1) % C if class_map is None else np.asarray(class_map)
    if sorted(cmap.tolist()) != list(range(C)) or np.any(cmap == np.arange(C)):
        raise ValidationError("class_map must be a fixed-point-free permutation of the classes")
    rng = np.random.default_rng([seed, 12])
    noisy = ds.true_labels.copy()
    idx = rng.choice(len(ds), size=int(round(r * len(ds))), replace=False)
    noisy[idx] = cmap[noisy[idx]]
    return ds.with_noisy_labels(
        noisy, {"kind": "asymmetric", "rate": r, "seed": seed, "class_map": cmap.tolist()}
    )


def _part_slices(dim, parts):
    if not 1 <= parts <= dim:
        raise ValidationError(f"parts must lie in [1, {dim}]")
    width = dim // parts
    # the trailing part absorbs the remainder
    return [slice(k * width, dim if k == parts - 1 else (k + 1) * width) for k in range(parts)]


def feature_dependent_transitions(ds: Dataset, parts, seed):
    """Per-sample mixed transition rows, shape ``(N, C)``.

    Each input slice is scored by its own seeded projection; the softmax of
    that score is the part's transition row and the rows are averaged.
    """
    proj_rng = np.random.default_rng([seed, 13])
    x = ds.inputs.astype(np.float64)
    rows = np.zeros((len(ds), ds.num_classes))
    slices = _part_slices(ds.input_dim, parts)
    for sl in slices:
        width = sl.stop - sl.start
        proj = proj_rng.standard_normal((ds.num_classes, width, ds.num_classes)) / np.sqrt(width)
        # projection is chosen by the true label, as in per-class part transitions
        scores = np.einsum("nw,nwc->nc", x[:, sl], proj[ds.true_labels])
        rows += nn.softmax(scores)
    return rows / len(slices)


def feature_dependent_flip_probs(ds: Dataset, r, parts, seed):
    """Instance flip probabilities with dataset mean ``r`` plus the wrong-class rows."""
    _check_rate(r)
    rows = feature_dependent_transitions(ds, parts, seed)
    n = len(ds)
    off_true = 1.0 - rows[np.arange(n), ds.true_labels]
    if r == 0 or n == 0:
        return np.zeros(n), rows
    if np.mean(off_true > 0) <= r:
        raise ValidationError("noise rate not reachable with these transition rows")
    scale = brentq(lambda s: np.mean(np.minimum(1.0, s * off_true)) - r, 0.0, 1e6 / off_true.max(),
                   xtol=1e-14)
    return np.minimum(1.0, scale * off_true), rows


def inject_feature_dependent(ds: Dataset, r, parts=4, seed=0):
    """Part-wise projection-mixture instance-dependent noise (PTD-style)."""
    _check_rate(r)
    _require_train(ds)
    probs, rows = feature_dependent_flip_probs(ds, r, parts, seed)
    rng = np.random.default_rng([seed, 14])
    flip = rng.random(len(ds)) < probs
    noisy = ds.true_labels.copy()
    for i in np.flatnonzero(flip):
        wrong = rows[i].copy()
        wrong[ds.true_labels[i]] = 0.0
        noisy[i] = rng.choice(ds.num_classes, p=wrong / wrong.sum())
    return ds.with_noisy_labels(
        noisy, {"kind": "feature-dependent", "rate": r, "seed": seed, "parts": parts}
    )


def probe_confusion(ds: Dataset, probe_epochs=20, seed=0, lr=0.05, batch_size=64):
    """Train an f+g probe on clean labels; return per-sample softmax averaged over epochs."""
    rng = np.random.default_rng([seed, 15])
    f = nn.feature_extractor(ds.input_dim, 16, (32,), rng)
    g = nn.linear_classifier(16, ds.num_classes, rng)
    opt_f = nn.OptimizerState.for_params(f, lr)
    opt_g = nn.OptimizerState.for_params(g, lr)
    x = ds.inputs.astype(np.float64)
    avg = np.zeros((len(ds), ds.num_classes))
    for _ in range(probe_epochs):
        nn.train_ce_epoch(f, g, x, ds.true_labels, opt_f, opt_g, rng, batch_size)
        avg += nn.softmax(g(nn.l2_normalize(f(x))[0]))
    return avg / max(probe_epochs, 1)


def inject_classification_based(ds: Dataset, r, probe_epochs=20, seed=0):
    """Flip the ``round(r N)`` samples a clean-trained probe confuses most.

    Confusion is the largest averaged probability on a wrong class; each
    chosen sample is relabelled to that class.
    """
    _check_rate(r)
    _require_train(ds)
    n = len(ds)
    k = int(round(r * n))
    noisy = ds.true_labels.copy()
    if k > 0:
        avg = probe_confusion(ds, probe_epochs, seed)
        wrong = avg.copy()
        wrong[np.arange(n), ds.true_labels] = -np.inf
        target = wrong.argmax(axis=1)
        confusion = wrong[np.arange(n), target]
        chosen = np.argsort(-confusion, kind="stable")[:k]
        noisy[chosen] = target[chosen]
    return ds.with_noisy_labels(
        noisy,
        {"kind": "classification-based", "rate": r, "seed": seed, "probe_epochs": probe_epochs},
    )


def inject(ds: Dataset, spec: NoiseSpec, seed):
    if spec.kind == "symmetric":
        return inject_symmetric(ds, spec.rate, seed)
    if spec.kind == "asymmetric":
        return inject_asymmetric(ds, spec.rate, seed, spec.params.get("class_map"))
    if spec.kind == "feature-dependent":
        return inject_feature_dependent(ds, spec.rate, spec.params.get("parts", 4), seed)
    return inject_classification_based(ds, spec.rate, spec.params.get("probe_epochs", 20), seed)


# -- file formats -------------------------------------------------------------

DATASET_FORMAT = "anchornll-dataset"


def save_dataset(path, ds: Dataset):
    """Single ``.npz`` container: JSON ``header`` plus inputs/true_labels/noisy_labels."""
    header = {
        "format": DATASET_FORMAT,
        "version": 1,
        "N": len(ds),
        "input_dim": ds.input_dim,
        "C": ds.num_classes,
        "split": ds.split,
        "seed": ds.seed,
        "noise": ds.noise,
    }
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "inputs": np.ascontiguousarray(ds.inputs, dtype=np.float32),
        "true_labels": ds.true_labels.astype(np.int64),
        "noisy_labels": ds.noisy_labels.astype(np.int64),
    }
    if ds.context_mask is not None:
        arrays["context_mask"] = ds.context_mask
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return Path(path)


def load_dataset(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != DATASET_FORMAT:
            raise ValidationError(f"{path} is not a dataset container")
        return Dataset(
            inputs=z["inputs"],
            true_labels=z["true_labels"],
            noisy_labels=z["noisy_labels"],
            num_classes=header["C"],
            split=header["split"],
            seed=header["seed"],
            noise=header["noise"],
            context_mask=z["context_mask"] if "context_mask" in z else None,
        )


def export_csv(path, ds: Dataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label_noisy", "label_true"] + [f"x_{k}" for k in range(ds.input_dim)])
        for i in range(len(ds)):
            w.writerow([i, int(ds.noisy_labels[i]), int(ds.true_labels[i])]
                       + [repr(float(v)) for v in ds.inputs[i]])
    return Path(path)

