import numpy as np
import pytest

from anchornll import data, nn, pipeline
from anchornll.config import RunConfig, from_dict, load_config
from anchornll.errors import ConfigError

SMALL = {"data.per_class": 100, "data.val_per_class": 25, "data.test_per_class": 25,
         "train.warmup_epochs": 3, "train.outer_iterations": 2, "train.cls_epochs": 2,
         "hallucinator.epochs": 2}


def small(**kw):
    return RunConfig().replace(**{**SMALL, **kw})


def test_unknown_config_key():
    with pytest.raises(ConfigError):
        from_dict({"train": {"epochs": 3}})
    with pytest.raises(ConfigError):
        from_dict({"mode": "other"})


def test_yaml_roundtrip(tmp_path):
    cfg = small(seed=4)
    from anchornll.config import dump_config
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_evaluate_constant_and_perfect():
    te = data.make_blobs(4, 25, 8, 0.0, seed=0, split="test", spread=20.0)
    m = nn.ModelBundle.init(8, 4, d=4, rng=np.random.default_rng(0))
    m.g.weights[0][:] = 0
    m.g.biases[0][:] = [0, 0, 1, 0]
    assert pipeline.evaluate(m, te) == 0.25
    brute = sum(int(p == t) for p, t in zip(m.logits(te.inputs).argmax(1), te.true_labels)) / len(te)
    assert pipeline.evaluate(m, te) == brute


def test_warmup_clean_blobs_is_accurate():
    for seed in range(3):
        cfg = small(seed=seed, **{"noise.rate": 0.0, "data.overlap": 0.3, "data.context_frac": 0.0,
                                  "train.warmup_epochs": 10})
        st = pipeline.init_state(cfg)
        rec = pipeline.warmup(st)
        assert len(rec.losses) == len(st.splits.train)
        assert pipeline.evaluate(st.model, st.splits.test) > 0.95


def test_phases_freeze_the_right_networks():
    st = pipeline.init_state(small())
    pipeline.warmup(st)
    st.iteration = 1
    h = st.model.h.digest()
    pipeline.classification_phase(st)
    assert st.model.h.digest() == h
    f, g = st.model.f.digest(), st.model.g.digest()
    pipeline.hallucinator_phase(st)
    assert (st.model.f.digest(), st.model.g.digest()) == (f, g)
    assert len(st.hal_curves) == 1 and len(st.hal_curves[0]) == 2


def test_hallucinator_phase_needs_selection():
    st = pipeline.init_state(small())
    with pytest.raises(ValueError):
        pipeline.hallucinator_phase(st)


@pytest.mark.parametrize("mode", ["baseline", "easy-only", "full"])
def test_labeled_sets_by_mode(mode):
    st = pipeline.init_state(small(mode=mode))
    pipeline.warmup(st)
    st.iteration = 1
    sets = pipeline.labeled_sets(st)
    n = len(st.splits.train)
    assert len(np.union1d(sets.labeled, sets.unlabeled)) == n == len(sets.labeled) + len(sets.unlabeled)
    if mode == "full":
        assert len(sets.labeled) == len(st.split.easy) + len(st.corrected.corrected)
        k = len(st.split.easy)
        assert np.array_equal(sets.weights[:k], st.split.scores[st.split.easy])
        assert np.array_equal(sets.weights[k:], st.corrected.confidence)
    else:
        assert np.array_equal(sets.labeled, st.split.easy) and st.corrected is None
    if mode == "baseline":
        assert np.array_equal(st.split.easy, np.flatnonzero(st.split.scores > 0.5))


def test_zero_outer_iterations_is_warmup_only():
    res = pipeline.run_experiment(small(**{"train.outer_iterations": 0}))
    assert {m.phase for m in res.metrics} == {"warmup"}


def test_metrics_stream_and_checkpoint(tmp_path):
    res = pipeline.run_experiment(small(), tmp_path)
    records, summary = pipeline.read_metrics(tmp_path / "metrics.jsonl")
    assert [r["epoch"] for r in records] == list(range(len(records)))
    assert all(0 <= r["test_acc"] <= 1 for r in records)
    assert summary["epochs"] == len(records) == 3 + 2 * (2 + 2)
    model, meta = nn.load_checkpoint(tmp_path / "checkpoint.npz")
    assert meta["config_hash"] == small().digest()
    assert pipeline.evaluate(model, res.state.splits.val) == summary["best_val_acc"]
    assert (tmp_path / "timings.jsonl").exists() and (tmp_path / "config.yaml").exists()


def test_same_seed_same_stream(tmp_path):
    pipeline.run_experiment(small(), tmp_path / "a")
    pipeline.run_experiment(small(), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_hallucinator_loss_decreases():
    for seed in range(3):
        st = pipeline.init_state(small(seed=seed, **{"hallucinator.epochs": 5}))
        pipeline.warmup(st)
        st.iteration = 1
        pipeline.classification_phase(st)
        pipeline.hallucinator_phase(st)
        assert st.hal_curves[0][-1] < st.hal_curves[0][0]
