import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.mixture import GaussianMixture

from anchornll import selection
from anchornll.errors import DegenerateFitError, ValidationError

from oracles import quota


def planted(n=2000, seed=0):
    r = np.random.default_rng(seed)
    z = r.random(n) < 0.6
    x = np.where(z, r.normal(0.05, 0.02, n), r.normal(2.0, 0.2, n))
    return np.abs(x), z


def test_quota_defaults():
    assert selection.easy_quota(2000, 4, 60) == 300
    assert selection.easy_quota(1001, 4, 60) == 151  # 150.15 rounds up
    assert selection.easy_quota(10, 3, 100) == 4


@given(st.integers(1, 5000), st.integers(1, 20), st.sampled_from([1, 10, 33.3, 50, 60, 75, 99.9, 100]))
@settings(max_examples=200, deadline=None)
def test_quota_matches_integer_oracle(n, c, p):
    assert selection.easy_quota(n, c, p) == quota(n, c, p)


def test_gmm_recovers_planted_mixture():
    x, z = planted()
    fit = selection.fit_gmm2(x)
    assert abs(fit.means[0] - 0.05) < 0.1 and abs(fit.means[1] - 2.0) < 0.1
    assert np.all(np.diff(fit.ll_history) >= -1e-9)
    omega = selection.easiness_scores(fit)
    assert np.mean(omega[z] > 0.9) >= 0.95


def test_gmm_agrees_with_sklearn():
    x, _ = planted(seed=3)
    fit = selection.fit_gmm2(x)
    ref = GaussianMixture(2, tol=1e-8, reg_covar=1e-6, random_state=0).fit(x[:, None])
    order = np.argsort(ref.means_.ravel())
    assert np.allclose(fit.means, ref.means_.ravel()[order], atol=1e-3)
    assert np.allclose(fit.weights, ref.weights_[order], atol=1e-3)


def test_gmm_degenerate_inputs():
    with pytest.raises(DegenerateFitError):
        selection.fit_gmm2(np.ones(10))
    with pytest.raises(ValidationError):
        selection.fit_gmm2(np.array([0.1, 0.2]))


def test_gmm_unimodal_is_finite():
    x = np.abs(np.random.default_rng(0).normal(1.0, 0.1, 500))
    fit = selection.fit_gmm2(x)
    assert np.all(np.isfinite(fit.posterior))


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_easiness_monotone_in_loss(seed):
    r = np.random.default_rng(seed)
    x = np.concatenate([r.gamma(2, 0.05, 300), r.gamma(5, 0.3, 200)])
    fit = selection.fit_gmm2(selection.normalize_losses(x))
    omega = selection.easiness_scores(fit)
    order = np.argsort(fit.values, kind="stable")
    assert np.all(np.diff(omega[order]) <= 1e-12)
    assert np.all((omega >= 0) & (omega <= 1))


def test_class_balanced_counts_and_partition():
    r = np.random.default_rng(0)
    labels = np.repeat([0, 1, 2], [50, 10, 40])
    scores = r.random(100)
    sp = selection.class_balanced_split(labels, scores, 60)
    assert sp.easy_counts.tolist() == [20, 10, 20]
    assert len(np.intersect1d(sp.easy, sp.hard)) == 0
    assert len(sp.easy) + len(sp.hard) == 100
    for j in range(3):
        members = np.flatnonzero(labels == j)
        chosen = np.intersect1d(sp.easy, members)
        rest = np.setdiff1d(members, chosen)
        if len(rest):
            assert scores[chosen].min() >= scores[rest].max()


def test_class_balanced_ties_prefer_lower_index():
    sp = selection.class_balanced_split(np.zeros(6, dtype=int), np.ones(6), 50, num_classes=1)
    assert sp.easy.tolist() == [0, 1, 2]


def test_empty_class_rejected():
    with pytest.raises(ValidationError):
        selection.class_balanced_split(np.array([0, 0, 2]), np.ones(3), 60, num_classes=3)


def test_full_percent_takes_everything():
    labels = np.array([0, 0, 1, 1, 1])
    sp = selection.class_balanced_split(labels, np.arange(5.0), 100)
    assert sp.easy.tolist() == [0, 1, 2, 3, 4]


def test_threshold_split():
    sp = selection.threshold_split(np.array([0, 1, 0, 1]), np.array([0.9, 0.2, 0.51, 0.5]))
    assert sp.easy.tolist() == [0, 2] and sp.hard.tolist() == [1, 3]
    assert sp.easy_counts.tolist() == [2, 0]


def test_split_csv(tmp_path):
    labels = np.array([0, 1, 0, 1])
    sp = selection.class_balanced_split(labels, np.array([0.9, 0.2, 0.5, 0.7]), 50)
    sp.to_csv(tmp_path / "s.csv", labels)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "id,class,omega,partition"
    assert rows[1].endswith("easy") and rows[2].endswith("hard")
