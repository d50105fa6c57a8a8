"""
Noisy blobs and small-loss selection
====================================

Build the reference training set, corrupt 40% of its labels with
feature-dependent noise, warm a small network up on the noisy labels and
look at how well the loss mixture separates clean from mislabeled samples.
"""
import numpy as np

from anchornll import data, pipeline, selection
from anchornll.config import RunConfig

cfg = RunConfig(seed=0)
splits = pipeline.make_splits(cfg)
train = splits.train
print(f"train: {len(train)} samples, realised noise {data.noise_rate(train):.3f}")

###############################################################################
# Warm-up: plain cross-entropy on every noisy label.
state = pipeline.init_state(cfg, splits)
record = pipeline.warmup(state)
print(f"warm-up test accuracy {pipeline.evaluate(state.model, splits.test):.3f}")

###############################################################################
# A two-component mixture on the (min-max scaled) losses.  Clean samples
# should sit mostly in the small-mean component.
fit = selection.fit_gmm2(selection.normalize_losses(record.losses))
omega = selection.easiness_scores(fit)
clean = train.noisy_labels == train.true_labels
print(f"component means {fit.means.round(3)}, EM iterations {fit.n_iter}")
print(f"mean easiness: clean {omega[clean].mean():.3f}, mislabeled {omega[~clean].mean():.3f}")

###############################################################################
# Two ways to turn scores into an easy set: a plain posterior threshold, and
# the class-balanced top-P% rule.
for name, split in [
    ("threshold 0.5", selection.threshold_split(train.noisy_labels, omega, 0.5, 4)),
    ("balanced P=60", selection.class_balanced_split(train.noisy_labels, omega, 60, 4)),
]:
    q = selection.selection_quality(split, train)
    print(f"{name:14s} easy {len(split.easy):4d}  per class {split.easy_counts.tolist()}  "
          f"precision {q.precision:.3f}  recall {q.recall:.3f}")
