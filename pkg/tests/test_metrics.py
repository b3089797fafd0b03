import numpy as np
import pytest

from fedsilo import bnorm, metrics, nn
from fedsilo.datagen import LabeledDataset
from fedsilo.metrics import (EvalReport, LeakError, UndefinedAUCError,
                             evaluate_intra, evaluate_out_of_domain, roc_auc,
                             score_dataset)


def pairwise_auc_oracle(scores, labels):
    """O(n^2) Mann-Whitney oracle: 1 per correctly ordered pair, 1/2 per tie."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_perfect_separation():
    assert roc_auc([0.1, 0.9], [0, 1]) == 1.0


def test_all_ties_is_half():
    assert roc_auc([0.5] * 10, [0, 1] * 5) == 0.5


def test_single_class_rejected():
    with pytest.raises(UndefinedAUCError):
        roc_auc([0.1, 0.2], [1, 1])


def test_matches_pairwise_oracle_with_ties():
    rng = np.random.default_rng(0)
    scores = np.round(rng.uniform(0, 1, 200), 1)  # heavy ties
    labels = rng.integers(0, 2, 200)
    labels[0], labels[1] = 0, 1
    assert roc_auc(scores, labels) == pairwise_auc_oracle(scores, labels)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    scores = rng.standard_normal(80)
    labels = rng.integers(0, 2, 80)
    labels[:2] = [0, 1]
    base = roc_auc(scores, labels)
    assert roc_auc(np.exp(scores), labels) == base
    assert roc_auc(3 * scores - 7, labels) == base


def test_complement_symmetry_exact():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(5, 100))
        scores = np.round(rng.uniform(0, 1, n), 2)
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        assert roc_auc(scores, labels) + roc_auc(scores, 1 - labels) == 1.0


def make_dataset(scores_fn, n=40, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n).astype(np.uint8)
    labels[:2] = [0, 1]
    images = rng.uniform(0, 1, (n, 3, 8, 8)).astype(np.float32)
    return LabeledDataset(images=images, labels=labels, center_id=0)


def trained_like_model():
    spec = nn.dcnn_spec(True, (4,), in_channels=3, image_size=8)
    return spec, nn.build_model(spec, seed=0)


def test_evaluate_intra_single_model_degenerate():
    spec, params = trained_like_model()
    ds = make_dataset(None)
    report = evaluate_intra(spec, params, {0: ds, 1: ds, 2: ds})
    vals = list(report.per_center_auc.values())
    assert vals[0] == vals[1] == vals[2]
    assert report.mauc == pytest.approx(vals[0])


def test_evaluate_intra_personalized_missing_model():
    spec, params = trained_like_model()
    ds = make_dataset(None)
    with pytest.raises(KeyError, match="center 1"):
        evaluate_intra(spec, {0: params}, {0: ds, 1: ds})


def test_mauc_is_unweighted_mean():
    report = EvalReport(per_center_auc={0: 0.8, 1: 1.0}, mauc=0.9)
    assert report.mauc == pytest.approx((0.8 + 1.0) / 2)


def test_perfect_classifier_gives_mauc_one():
    # score by a feature that equals the label by construction
    spec, params = trained_like_model()
    rng = np.random.default_rng(3)
    labels = np.array([0, 1] * 10, dtype=np.uint8)
    images = rng.uniform(0, 0.3, (20, 3, 8, 8)).astype(np.float32)
    images[labels == 1] += 0.6
    ds = LabeledDataset(images=images, labels=labels, center_id=0)
    scores = images.mean(axis=(1, 2, 3))
    assert roc_auc(scores, labels) == 1.0


def test_out_of_domain_no_bn_adapt_is_noop():
    spec = nn.dcnn_spec(False, (4,), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=1)
    ds = make_dataset(None, seed=4)
    plain = evaluate_out_of_domain(spec, params, {}, ds, adapt=False)
    rng = np.random.default_rng(5)
    adapted = evaluate_out_of_domain(
        spec, params, {}, ds, adapt=True,
        adaptation_batches=[rng.uniform(0, 1, (8, 3, 8, 8))])
    assert plain == adapted


def test_out_of_domain_adapt_changes_bn_model_scores():
    spec, params = trained_like_model()
    ds = make_dataset(None, seed=6)
    stats = {k: params[k] for k in nn.stat_keys(spec)}
    plain = evaluate_out_of_domain(spec, params, stats, ds, adapt=False)
    rng = np.random.default_rng(7)
    batches = [rng.uniform(0.4, 1.0, (16, 3, 8, 8))]
    adapted = evaluate_out_of_domain(spec, params, stats, ds, adapt=True,
                                     adaptation_batches=batches)
    assert np.isfinite(plain) and np.isfinite(adapted)


def test_adaptation_leak_guard():
    spec, params = trained_like_model()
    ds = make_dataset(None, seed=8)
    stats = {k: params[k] for k in nn.stat_keys(spec)}
    leaky = [ds.images[:4]]  # straight from the test split
    with pytest.raises(LeakError):
        evaluate_out_of_domain(spec, params, stats, ds, adapt=True,
                               adaptation_batches=leaky)


def test_adaptation_never_reads_test_data():
    # access-logging hook: wrap the test images so any touch during the
    # adaptation phase is recorded
    spec, params = trained_like_model()
    ds = make_dataset(None, seed=9)
    stats = {k: params[k] for k in nn.stat_keys(spec)}

    touched = []
    orig = bnorm.adabn_recompute

    def spy(spec_, params_, batches):
        for b in batches:
            if any(np.shares_memory(b, ds.images) for _ in (0,)):
                touched.append(True)
        return orig(spec_, params_, batches)

    rng = np.random.default_rng(10)
    batches = [rng.uniform(0, 1, (8, 3, 8, 8))]
    bnorm_adabn = bnorm.adabn_recompute
    try:
        bnorm.adabn_recompute = spy
        evaluate_out_of_domain(spec, params, stats, ds, adapt=True,
                               adaptation_batches=batches)
    finally:
        bnorm.adabn_recompute = bnorm_adabn
    assert not touched


def test_score_dataset_batching_consistent():
    spec, params = trained_like_model()
    ds = make_dataset(None, seed=11)
    a = score_dataset(spec, params, ds.images, batch_size=7)
    b = score_dataset(spec, params, ds.images, batch_size=40)
    np.testing.assert_allclose(a, b, atol=1e-12)
