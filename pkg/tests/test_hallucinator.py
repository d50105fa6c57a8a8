import numpy as np
import pytest

from anchornll import hallucinator as hal
from anchornll import nn
from anchornll.errors import ShapeError, ValidationError


def feature_set(n_per=20, C=3, d=4, seed=0):
    r = np.random.default_rng(seed)
    centers = nn.l2_normalize(r.standard_normal((C, d)))[0]
    labels = np.repeat(np.arange(C), n_per)
    feats = nn.l2_normalize(centers[labels] + 0.1 * r.standard_normal((len(labels), d)))[0]
    return hal.FeatureSet(feats, np.arange(len(labels)) * 2, labels)


def test_pairs_cross_class_and_count():
    fs = feature_set()
    pairs = hal.sample_pairs(fs, 4, np.random.default_rng(0))
    assert pairs.shape == (60 * 4, 2)
    assert np.all(fs.labels[pairs[:, 0]] != fs.labels[pairs[:, 1]])
    assert np.array_equal(np.bincount(pairs[:, 0]), np.full(60, 4))


def test_pairs_partner_uniform_over_other_classes():
    fs = feature_set(n_per=5, C=3)
    pairs = hal.sample_pairs(fs, 3000, np.random.default_rng(1))
    partners = pairs[pairs[:, 0] == 0, 1]
    counts = np.bincount(partners, minlength=15)[5:]
    assert counts.min() > 0.8 * 300 and counts.max() < 1.2 * 300


def test_pairs_need_two_classes():
    fs = feature_set(C=1)
    with pytest.raises(ValidationError):
        hal.sample_pairs(fs, 2, np.random.default_rng(0))


def test_anchor_is_unit_vector():
    h = nn.hallucinator(4, rng=np.random.default_rng(0))
    fs = feature_set()
    s = hal.hallucinate(h, fs.features[:5], fs.features[20:25])
    assert np.allclose(np.linalg.norm(s, axis=1), 1.0)


def test_hallucinate_shape_error():
    h = nn.hallucinator(4, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        hal.hallucinate(h, np.ones((2, 3)), np.ones((2, 3)))


def test_similarity_loss_at_u():
    u, v = np.array([1.0, 0]), np.array([0, 1.0])
    assert np.isclose(hal.similarity_loss(u, u, v, 1.0), -1.0)
    assert np.isclose(hal.similarity_loss(u, u, v, 0.7), -0.7)


def test_similarity_loss_bounds():
    with pytest.raises(ValidationError):
        hal.similarity_loss(np.ones(2), np.ones(2), np.ones(2), 0.3)


def test_similarity_gradient_via_zero_classifier():
    """With a zero classifier the CE part is the constant log C and has no gradient."""
    from oracles import central_difference, grad_agreement
    r = np.random.default_rng(2)
    h = nn.hallucinator(3, 6, r)
    g = nn.MLP([np.zeros((3, 4))], [np.zeros(4)])
    u = nn.l2_normalize(r.standard_normal((5, 3)))[0]
    v = nn.l2_normalize(r.standard_normal((5, 3)))[0]
    y = r.integers(0, 4, 5)
    value, grads = hal.hallucination_loss(h, g, u, v, y, 0.8, grad=True)
    assert np.isclose(value, hal.similarity_loss(hal.hallucinate(h, u, v), u, v, 0.8) + np.log(4))
    num = central_difference(lambda: hal.similarity_loss(hal.hallucinate(h, u, v), u, v, 0.8), h.params())
    assert grad_agreement(grads, num) >= 0.99


def test_training_decreases_loss_and_freezes_classifier():
    fs = feature_set(n_per=30)
    r = np.random.default_rng(3)
    h = nn.hallucinator(4, rng=r)
    g = nn.linear_classifier(4, 3, r)
    before = g.digest()
    _, curve = hal.train_hallucinator(h, g, fs, hal.HallucinatorConfig(epochs=8, lam_p=0.9), r)
    assert curve[-1] < curve[0]
    assert g.digest() == before


def test_build_anchors_labels_from_u():
    fs = feature_set()
    h = nn.hallucinator(4, rng=np.random.default_rng(0))
    a = hal.build_anchors(h, fs, 2, 0.75, np.random.default_rng(1))
    assert len(a) == 120
    assert np.array_equal(a.labels, fs.labels[a.pairs[:, 0]])


def test_save_anchors(tmp_path):
    fs = feature_set()
    h = nn.hallucinator(4, rng=np.random.default_rng(0))
    a = hal.build_anchors(h, fs, 1, 0.75, np.random.default_rng(1))
    hal.save_anchors(tmp_path / "a.npz", a, fs)
    with np.load(tmp_path / "a.npz") as z:
        assert z["inputs"].dtype == np.float32
        assert np.array_equal(z["source_u"], fs.indices[a.pairs[:, 0]])
