"""
Hallucinated anchors and hard-sample correction
===============================================

After one classification phase the hallucinator is trained on pairs of easy
features from different classes.  Its anchors then vote on the labels of
the hard samples they land next to.
"""
import numpy as np

from anchornll import correction, hallucinator, pipeline
from anchornll.config import RunConfig

cfg = RunConfig(seed=0)
state = pipeline.init_state(cfg)
pipeline.warmup(state)
state.iteration = 1
pipeline.classification_phase(state)
pipeline.hallucinator_phase(state)
print("hallucinator loss per epoch:", np.round(state.hal_curves[-1], 3))

###############################################################################
# Anchors from fresh pairs.  Each should stay closer to its u-source than to
# its v-source.
easy = pipeline.easy_features(state)
hard = pipeline.hard_features(state)
anchors = hallucinator.build_anchors(state.model.h, easy, 4, cfg.hallucinator.lam_p,
                                     np.random.default_rng(1))
s_u = easy.features[anchors.pairs[:, 0]]
s_v = easy.features[anchors.pairs[:, 1]]
closer = np.mean(np.sum(anchors.anchors * s_u, 1) > np.sum(anchors.anchors * s_v, 1))
print(f"{len(anchors)} anchors, {closer:.3f} closer to u than to v")

###############################################################################
# Voting.  Only anchors whose nearest hard feature is within the similarity
# threshold count, and a hard sample needs a strict majority.
train = state.splits.train
for lam_conf in (0.7, 0.8, 0.9):
    res = correction.correct_hard(anchors, hard, lam_conf=lam_conf, K=10)
    idx = hard.indices[res.corrected]
    acc = np.mean(res.labels == train.true_labels[idx]) if len(idx) else float("nan")
    print(f"lam_conf {lam_conf}: coverage {res.coverage:.3f}, correction accuracy {acc:.3f}")

hard_clean = np.mean(train.noisy_labels[hard.indices] == train.true_labels[hard.indices])
print(f"for reference, clean rate of the hard set as observed: {hard_clean:.3f}")
