from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

import oracles
from trgan_privacy.metrics import (auc, dice_score, privacy_protection, roc_curve,
                                   utility_augmentation, utility_synthetic, welch_t_test)
from trgan_privacy.volume import Mask, PhantomConfig, Sample, Volume, generate_phantom


def labelled_scores(min_size=2, max_size=40):
    # small integer pool so ties are common
    return st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=min_size,
                    max_size=max_size).filter(lambda xs: 0 < sum(y for _, y in xs) < len(xs))


def split(pairs):
    return np.array([float(s) for s, _ in pairs]), np.array([y for _, y in pairs])


def test_auc_examples():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    assert auc([0.5, 0.5], [1, 0]) == 0.5


def test_roc_examples():
    c = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (0.0, 1.0) in c.points()
    c = roc_curve([0.3] * 5, [1, 0, 1, 0, 0])
    assert c.points() == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_six_mixed_scores_match_enumeration():
    scores = [0.7, 0.1, 0.7, 0.4, 0.9, 0.4]
    labels = [1, 0, 0, 1, 1, 0]
    assert roc_curve(scores, labels).points() == oracles.roc_by_thresholds(scores, labels)


@given(labelled_scores())
def test_roc_matches_threshold_enumeration(pairs):
    s, y = split(pairs)
    assert roc_curve(s, y).points() == pytest.approx(oracles.roc_by_thresholds(s.tolist(), y.tolist()),
                                                     abs=1e-15)


@given(labelled_scores())
def test_auc_equals_pairwise_statistic(pairs):
    s, y = split(pairs)
    assert abs(auc(s, y) - oracles.pairwise_auc(s.tolist(), y.tolist())) <= 1e-12


@given(labelled_scores())
def test_auc_label_flip(pairs):
    s, y = split(pairs)
    assert abs(auc(s, y) + auc(s, ~y) - 1.0) <= 1e-12


@given(labelled_scores())
def test_auc_invariant_under_increasing_transform(pairs):
    s, y = split(pairs)
    assert auc(np.exp(s) * 3 + 1, y) == auc(s, y)


def test_auc_needs_both_classes():
    with pytest.raises(ValueError):
        auc([1, 2], [1, 1])


def test_welch_examples():
    t, p = welch_t_test([1.0, 3.0, 5.0], [5.0, 1.0, 3.0])
    assert t == 0.0 and p == 1.0
    a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
    t, p = welch_t_test(a, b)
    t0, p0 = oracles.welch(a, b)
    assert abs(t - t0) <= 1e-6 and abs(p - p0) <= 1e-6
    rng = np.random.default_rng(0)
    _, p = welch_t_test(rng.normal(0, 1, 10), rng.normal(100, 1, 10))
    assert p < 1e-4


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=20),
       st.lists(st.floats(-50, 50), min_size=2, max_size=20))
def test_welch_antisymmetry_and_oracle(a, b):
    assume(np.var(a) > 1e-6 and np.var(b) > 1e-6)
    t, p = welch_t_test(a, b)
    t2, p2 = welch_t_test(b, a)
    assert t == -t2 and p == p2
    t0, p0 = oracles.welch(a, b)
    assert t == pytest.approx(t0, rel=1e-6, abs=1e-9)
    assert p == pytest.approx(p0, abs=1e-6)


def test_welch_rejects_degenerate_groups():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        welch_t_test([1.0, 1.0], [1.0, 2.0])


def test_privacy_protection_values():
    assert privacy_protection(0.5) == 1.0
    assert privacy_protection(0.51) == 0.98
    assert privacy_protection(0.999) == pytest.approx(0.002, rel=1e-15, abs=0)
    assert privacy_protection(0.25) == 1.5  # below-chance attacker is visible, not clamped
    with pytest.raises(ValueError):
        privacy_protection(1.5)


@given(st.floats(0.0, 1.0))
def test_privacy_protection_exact_rounding(a):
    # correctly rounded 2(1 - a) for the binary input a
    assert privacy_protection(a) == float(2 * (1 - Fraction(a)))


def test_dice_examples():
    a = np.zeros((1, 2, 4), np.uint8)
    a[0, 0, :] = 1
    assert dice_score(Mask(a), Mask(a)) == 1.0
    b = np.zeros_like(a)
    b[0, 0, :2] = 1
    b[0, 1, :2] = 1
    assert dice_score(Mask(a), Mask(b)) == 0.5
    c = 1 - a
    assert dice_score(Mask(a), Mask(c)) == 0.0
    empty = np.zeros_like(a)
    assert dice_score(Mask(empty), Mask(empty)) == 1.0
    assert dice_score(Mask(empty), Mask(a)) == 0.0


masks = st.lists(st.integers(0, 1), min_size=12, max_size=12).map(
    lambda v: Mask(np.array(v, dtype=np.uint8).reshape(1, 3, 4)))


@given(masks, masks)
def test_dice_properties(a, b):
    d = dice_score(a, b)
    assert d == dice_score(b, a)
    assert 0.0 <= d <= 1.0
    assert abs(d - oracles.dice(a.data, b.data)) <= 1e-12


class MaskDouble:
    def __init__(self, fn):
        self.fn = fn

    def segment(self, volume, threshold=0.5):
        return self.fn(volume)


@pytest.fixture(scope="module")
def samples():
    return [generate_phantom(PhantomConfig(), i) for i in range(6)]


def test_utility_synthetic_with_doubles(samples):
    truth = {id(s.volume): s.mask for s in samples}
    oracle = MaskDouble(lambda v: truth[id(v)])
    empty = MaskDouble(lambda v: Mask(np.zeros(v.data.shape, np.uint8)))
    assert utility_synthetic(oracle, samples) == 1.0
    assert utility_synthetic(empty, samples) == 0.0


def test_utility_augmentation(samples):
    truth = {id(s.volume): s.mask for s in samples}
    oracle = MaskDouble(lambda v: truth[id(v)])
    empty = MaskDouble(lambda v: Mask(np.zeros(v.data.shape, np.uint8)))
    assert utility_augmentation(oracle, oracle, samples) == 0.0
    assert utility_augmentation(oracle, empty, samples) == 1.0
    assert utility_augmentation(empty, oracle, samples) == -1.0


def test_utility_augmentation_arithmetic():
    # 100-voxel grid, truth = first 50 voxels; predictions of 50 voxels overlapping
    # 32 and 29 of them give DSC 0.64 and 0.58
    flat = np.zeros(100, np.uint8)
    flat[:50] = 1
    truth = Mask(flat.reshape(1, 10, 10))

    def prediction(overlap):
        p = np.zeros(100, np.uint8)
        p[:overlap] = 1
        p[50:50 + 50 - overlap] = 1
        return MaskDouble(lambda v: Mask(p.reshape(1, 10, 10)))

    sample = Sample("s", Volume(np.zeros((1, 10, 10))), truth)
    aug, base = prediction(32), prediction(29)
    assert utility_synthetic(aug, [sample]) == 0.64
    assert utility_synthetic(base, [sample]) == 0.58
    assert utility_augmentation(aug, base, [sample]) == pytest.approx(0.06, abs=1e-12)


@given(masks, masks)
def test_utility_augmentation_range(a, b):
    sample = Sample("s", Volume(np.zeros((1, 3, 4))), a)
    u = utility_augmentation(MaskDouble(lambda v: b), MaskDouble(lambda v: a), [sample])
    assert -1.0 <= u <= 1.0
