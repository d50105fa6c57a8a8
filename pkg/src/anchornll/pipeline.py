"""Warm-up followed by alternating classification and hallucinator phases.

The classification phase runs, with ``h`` frozen: easy-sample selection,
anchor hallucination, hard-sample correction and semi-supervised training
of ``f`` and ``g``.  The hallucinator phase trains ``h`` with ``f`` and
``g`` frozen.  Ablation modes reuse the same code path:

* ``baseline``  - posterior-threshold selection, no class balance, no correction
* ``easy-only`` - class-balanced selection, no correction
* ``full``      - class-balanced selection plus anchor-based correction
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import correction, data, hallucinator, nn, selection, ssl
from .config import RunConfig, dump_config

log = logging.getLogger(__name__)


def rng_for(seed, *stream):
    return np.random.default_rng([seed, *stream])


@dataclass
class EpochMetrics:
    epoch: int
    phase: str
    iteration: int
    train_loss: float
    test_acc: float
    val_acc: float
    easy_precision: float | None = None
    easy_recall: float | None = None
    n_easy: int | None = None
    n_corrected: int | None = None
    correction_acc: float | None = None
    correction_coverage: float | None = None
    hard_clean_rate: float | None = None
    noise_rate: float | None = None
    wall_clock: float = field(default=0.0, compare=False)

    def record(self):
        """Serialisable fields; wall-clock is kept out so streams are replayable byte-for-byte."""
        d = asdict(self)
        d.pop("wall_clock")
        return d


@dataclass
class Splits:
    train: data.Dataset
    val: data.Dataset
    test: data.Dataset


def make_splits(config: RunConfig):
    dc, nc = config.data, config.noise
    common = dict(classes=dc.classes, input_dim=dc.input_dim, overlap=dc.overlap, seed=config.seed,
                  spread=dc.spread, context_frac=dc.context_frac, context_weight=dc.context_weight)
    train = data.make_blobs(per_class=dc.per_class, split="train", **common)
    spec = data.NoiseSpec(nc.kind, nc.rate, {"parts": nc.parts, "probe_epochs": nc.probe_epochs,
                                             "class_map": nc.class_map})
    train = data.inject(train, spec, config.seed)
    return Splits(
        train=train,
        val=data.make_blobs(per_class=dc.val_per_class, split="val", **common),
        test=data.make_blobs(per_class=dc.test_per_class, split="test", **common),
    )


def evaluate(model, ds: data.Dataset):
    """Argmax accuracy on a (clean) split."""
    if len(ds) == 0:
        return 0.0
    pred = np.argmax(model.logits(ds.inputs), axis=1)
    return float(np.mean(pred == ds.true_labels))


def per_sample_losses(model, ds: data.Dataset):
    return nn.per_sample_cross_entropy(model.logits(ds.inputs), ds.noisy_labels)


@dataclass
class TrainState:
    config: RunConfig
    splits: Splits
    model: nn.ModelBundle
    opt_f: nn.OptimizerState
    opt_g: nn.OptimizerState
    sigma: np.ndarray
    iteration: int = 0
    ssl_epoch: int = 0
    split: selection.EasySplit | None = None
    anchors: hallucinator.AnchorSet | None = None
    corrected: correction.CorrectionResult | None = None
    hal_curves: list = field(default_factory=list)


def init_state(config: RunConfig, splits: Splits | None = None):
    splits = splits or make_splits(config)
    mc, tc = config.model, config.train
    model = nn.ModelBundle.init(splits.train.input_dim, splits.train.num_classes, mc.d,
                                tuple(mc.hidden), mc.hal_hidden, rng_for(config.seed, 100))
    sigma = config.ssl.sigma * splits.train.inputs.astype(np.float64).std(axis=0)
    return TrainState(
        config, splits, model,
        nn.OptimizerState.for_params(model.f, tc.lr, tc.momentum),
        nn.OptimizerState.for_params(model.g, tc.lr, tc.momentum),
        sigma,
    )


def warmup(state: TrainState, epochs=None, on_epoch=None):
    """Cross-entropy training on every noisy label.  Returns the last epoch's LossRecord."""
    epochs = state.config.train.warmup_epochs if epochs is None else epochs
    if epochs < 1:
        raise ValueError("warm-up needs at least one epoch")
    ds = state.splits.train
    rng = rng_for(state.config.seed, 200)
    x = ds.inputs.astype(np.float64)
    for epoch in range(epochs):
        loss = nn.train_ce_epoch(state.model.f, state.model.g, x, ds.noisy_labels,
                                 state.opt_f, state.opt_g, rng, state.config.train.batch_size)
        if on_epoch:
            on_epoch("warmup", epoch, loss)
    return selection.LossRecord(per_sample_losses(state.model, ds), epochs - 1)


def select_easy(state: TrainState):
    cfg = state.config
    ds = state.splits.train
    losses = per_sample_losses(state.model, ds)
    fit = selection.fit_gmm2(selection.normalize_losses(losses))
    omega = selection.easiness_scores(fit)
    if cfg.mode == "baseline":
        return selection.threshold_split(ds.noisy_labels, omega, cfg.selection.threshold, ds.num_classes)
    return selection.class_balanced_split(ds.noisy_labels, omega, cfg.selection.percent, ds.num_classes)


def easy_features(state: TrainState):
    ds, idx = state.splits.train, state.split.easy
    return hallucinator.features_of(state.model, ds.inputs[idx], idx, ds.noisy_labels[idx], "easy")


def hard_features(state: TrainState):
    ds, idx = state.splits.train, state.split.hard
    return hallucinator.features_of(state.model, ds.inputs[idx], idx, ds.noisy_labels[idx], "hard")


@dataclass
class PhaseSets:
    labeled: np.ndarray          # dataset indices
    labels: np.ndarray           # label used for each labeled index
    weights: np.ndarray          # refinement trust weight
    unlabeled: np.ndarray


def labeled_sets(state: TrainState):
    """Steps 1-3 of the classification phase: selection, hallucination, correction."""
    cfg = state.config
    ds = state.splits.train
    state.split = select_easy(state)
    easy = state.split.easy
    labels = ds.noisy_labels[easy]
    weights = state.split.scores[easy]
    unlabeled = state.split.hard
    state.anchors = state.corrected = None

    if cfg.mode == "full" and len(easy) and len(state.split.hard):
        efs = easy_features(state)
        if len(np.unique(efs.labels)) >= 2:
            hfs = hard_features(state)
            state.anchors = hallucinator.build_anchors(
                state.model.h, efs, cfg.hallucinator.anchors_per_sample, cfg.hallucinator.lam_p,
                rng_for(cfg.seed, 300, state.iteration, 1),
            )
            cc = cfg.correction
            state.corrected = correction.correct_hard(state.anchors, hfs, cc.lam_conf, cc.K,
                                                      cc.min_confidence)
            fixed = hfs.indices[state.corrected.corrected]
            labels = np.concatenate([labels, state.corrected.labels])
            weights = np.concatenate([weights, state.corrected.confidence])
            easy = np.concatenate([easy, fixed])
            unlabeled = hfs.indices[state.corrected.residual]
    return PhaseSets(easy, labels, weights, np.sort(unlabeled))


def ssl_epoch(state: TrainState, sets: PhaseSets, rng):
    cfg = state.config
    ds = state.splits.train
    x = ds.inputs.astype(np.float64)
    bs = cfg.train.batch_size
    nl, nu = len(sets.labeled), len(sets.unlabeled)
    n_batches = max(1, -(-max(nl, 1 if nu else 0) // bs)) if nl else max(1, -(-nu // bs))
    lab_order = rng.permutation(nl)
    unl_chunks = np.array_split(rng.permutation(nu), n_batches)
    lam = cfg.ssl.lambda_at(state.ssl_epoch)
    losses = []
    for b in range(n_batches):
        li = lab_order[b * bs:(b + 1) * bs]
        ui = sets.unlabeled[unl_chunks[b]]
        batch = ssl.build_batch(state.model, x[sets.labeled[li]], sets.labels[li], sets.weights[li],
                                x[ui], cfg.ssl, state.sigma, rng)
        loss, gf, gg = ssl.ssl_loss(state.model, batch, lam)
        nn.sgd_step(state.model.f, gf, state.opt_f)
        nn.sgd_step(state.model.g, gg, state.opt_g)
        losses.append(loss)
    state.ssl_epoch += 1
    return float(np.mean(losses))


def classification_phase(state: TrainState, on_epoch=None):
    """Selection, hallucination and correction, then SSL epochs on f and g (h frozen)."""
    h_digest = state.model.h.digest()
    sets = labeled_sets(state)
    both = np.concatenate([sets.labeled, sets.unlabeled])
    assert len(np.unique(both)) == len(both) == len(state.splits.train)
    assert len(np.intersect1d(state.split.easy, state.split.hard)) == 0
    rng = rng_for(state.config.seed, 300, state.iteration, 2)
    for epoch in range(state.config.train.cls_epochs):
        loss = ssl_epoch(state, sets, rng)
        if on_epoch:
            on_epoch("classification", epoch, loss)
    assert state.model.h.digest() == h_digest, "hallucinator changed during classification phase"
    return state


def hallucinator_phase(state: TrainState, on_epoch=None):
    """Train h on fresh easy pairs with f and g frozen."""
    if state.split is None:
        raise ValueError("hallucinator phase needs a preceding classification phase")
    f_digest, g_digest = state.model.f.digest(), state.model.g.digest()
    efs = easy_features(state)
    curve = []
    if len(efs) and len(np.unique(efs.labels)) >= 2:
        _, curve = hallucinator.train_hallucinator(
            state.model.h, state.model.g, efs, state.config.hallucinator,
            rng_for(state.config.seed, 400, state.iteration),
        )
    state.hal_curves.append(curve)
    if on_epoch:
        for epoch, loss in enumerate(curve):
            on_epoch("hallucinator", epoch, loss)
    assert state.model.f.digest() == f_digest and state.model.g.digest() == g_digest
    return state


@dataclass
class RunResult:
    metrics: list
    summary: dict
    best_model: nn.ModelBundle
    state: TrainState


class _Recorder:
    def __init__(self, state, out_dir, quiet):
        self.state = state
        self.metrics = []
        self.epoch = 0
        self.best_val = -1.0
        self.best_model = state.model.copy()
        self.out_dir = Path(out_dir) if out_dir else None
        self.quiet = quiet
        self.t0 = time.perf_counter()
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._stream = open(self.out_dir / "metrics.jsonl", "w")
            self._timings = open(self.out_dir / "timings.jsonl", "w")

    def phase_stats(self):
        st = self.state
        ds = st.splits.train
        out = {"noise_rate": data.noise_rate(ds)}
        if st.split is not None:
            q = selection.selection_quality(st.split, ds)
            out.update(easy_precision=q.precision, easy_recall=q.recall, n_easy=int(len(st.split.easy)))
            hard = st.split.hard
            out["hard_clean_rate"] = float(np.mean(ds.noisy_labels[hard] == ds.true_labels[hard])) \
                if len(hard) else None
        if st.corrected is not None:
            idx = st.split.hard[st.corrected.corrected]
            out["n_corrected"] = int(len(idx))
            out["correction_coverage"] = st.corrected.coverage
            out["correction_acc"] = float(np.mean(st.corrected.labels == ds.true_labels[idx])) \
                if len(idx) else None
        return out

    def __call__(self, phase, _epoch_in_phase, loss):
        st = self.state
        val = evaluate(st.model, st.splits.val)
        m = EpochMetrics(
            epoch=self.epoch, phase=phase, iteration=st.iteration, train_loss=float(loss),
            test_acc=evaluate(st.model, st.splits.test), val_acc=val,
            wall_clock=time.perf_counter() - self.t0, **self.phase_stats(),
        )
        if phase != "hallucinator" and val > self.best_val:
            self.best_val = val
            self.best_model = st.model.copy()
        self.emit(m)
        self.epoch += 1

    def emit(self, m: EpochMetrics):
        self.metrics.append(m)
        if self.out_dir:
            self._stream.write(json.dumps(m.record(), sort_keys=True) + "\n")
            self._timings.write(json.dumps({"epoch": m.epoch, "wall_clock": m.wall_clock}) + "\n")
        if not self.quiet:
            log.info("epoch %3d %-14s it=%d loss=%.4f test=%.4f val=%.4f",
                     m.epoch, m.phase, m.iteration, m.train_loss, m.test_acc, m.val_acc)

    def abort(self):
        if self.out_dir:
            self._stream.close()
            self._timings.close()

    def close(self, summary):
        if self.out_dir:
            self._stream.write(json.dumps({"summary": summary}, sort_keys=True) + "\n")
            self._stream.close()
            self._timings.close()


def run_experiment(config: RunConfig, out_dir=None, quiet=True, splits=None):
    """Full training run.  With ``out_dir``, writes metrics.jsonl, config and checkpoint."""
    state = init_state(config, splits)
    rec = _Recorder(state, out_dir, quiet)
    try:
        warmup(state, on_epoch=rec)
        for it in range(config.train.outer_iterations):
            state.iteration = it + 1
            classification_phase(state, on_epoch=rec)
            hallucinator_phase(state, on_epoch=rec)
    except BaseException:
        rec.abort()
        raise
    best_model = rec.best_model
    last = rec.metrics[-1]
    summary = {
        "mode": config.mode,
        "seed": config.seed,
        "config_hash": config.digest(),
        "epochs": rec.epoch,
        "best_val_acc": rec.best_val,
        "best_test_acc": evaluate(best_model, state.splits.test),
        "final_test_acc": evaluate(state.model, state.splits.test),
        "noise_rate": data.noise_rate(state.splits.train),
    }
    for key in ("easy_precision", "correction_acc", "correction_coverage", "hard_clean_rate"):
        summary[key] = getattr(last, key)
    rec.close(summary)
    if out_dir:
        nn.save_checkpoint(Path(out_dir) / "checkpoint.npz", best_model, config.digest(),
                           {"best_val_acc": rec.best_val})
        dump_config(config, Path(out_dir) / "config.yaml")
    return RunResult(rec.metrics, summary, best_model, state)


def read_metrics(path):
    """Replay a metrics stream: ``(epoch_records, summary)``."""
    records, summary = [], None
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            if "summary" in row:
                summary = row["summary"]
            else:
                records.append(row)
    return records, summary
