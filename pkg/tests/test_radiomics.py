import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from trgan_privacy.radiomics import (FEATURES, DegenerateFeatureError, FeatureUndefinedError,
                                     RadiomicVector, correlation_accuracy, correlation_mse,
                                     feature_correlations, glcm, glcm_texture, radiomic_features,
                                     read_feature_table, unit_offsets, write_feature_table)
from trgan_privacy.volume import Mask, PhantomConfig, Volume, generate_phantom


def test_unit_offsets():
    off = unit_offsets()
    assert off.shape == (13, 3)
    both = {tuple(o) for o in off} | {tuple(-o) for o in off}
    assert len(both) == 26 and (0, 0, 0) not in both


def test_uniform_region_texture():
    data = np.zeros((2, 3, 3), np.float32)
    mask = np.zeros_like(data, dtype=np.uint8)
    mask[:, 1:, 1:] = 1
    data[mask == 1] = 0.4
    energy, entropy, homog = glcm_texture(glcm(Volume(data), Mask(mask)))
    assert (energy, entropy, homog) == (1.0, 0.0, 1.0)


def test_single_pair_glcm():
    data = np.array([[[0.0, 1.0]]], np.float32)
    mask = np.ones((1, 1, 2), np.uint8)
    p = glcm(Volume(data), Mask(mask), levels=8, offsets=[(1, 0, 0)])
    expected = np.zeros((8, 8))
    expected[0, 7] = expected[7, 0] = 0.5
    np.testing.assert_array_equal(p, expected)
    # two-level quantisation puts the pair in bins (0, 1)
    p2 = glcm(Volume(data), Mask(mask), levels=2, offsets=[(1, 0, 0)])
    np.testing.assert_array_equal(p2, [[0.0, 0.5], [0.5, 0.0]])


def test_isolated_voxel_has_point_mass():
    mask = np.zeros((3, 3, 3), np.uint8)
    mask[1, 1, 1] = 1
    p = glcm(Volume(np.random.default_rng(0).random((3, 3, 3))), Mask(mask))
    assert p[0, 0] == 1.0 and p.sum() == 1.0


@given(seed=st.integers(0, 10_000), fill=st.floats(0.05, 1.0))
def test_glcm_contract(seed, fill):
    rng = np.random.default_rng(seed)
    data = rng.uniform(-1, 1, (3, 4, 5)).astype(np.float32)
    mask = (rng.random((3, 4, 5)) < fill).astype(np.uint8)
    if not mask.any():
        mask[0, 0, 0] = 1
    p = glcm(Volume(data), Mask(mask))
    np.testing.assert_array_equal(p, p.T)
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(p, oracles.glcm_matrix(data, mask), rtol=0, atol=1e-12)


def test_constant_region_features():
    data = np.zeros((2, 2, 3), np.float32)
    mask = np.zeros((2, 2, 3), np.uint8)
    mask.flat[[0, 1, 2, 3, 4]] = 1
    data[mask == 1] = 2.0
    f = radiomic_features(Volume(data, (2.0, 2.0, 2.0)), Mask(mask, (2.0, 2.0, 2.0)))
    assert f.mtv == 40.0
    assert f.suv_max == f.suv_mean == 2.0
    assert f.tlg == 80.0
    assert (f.glcm_energy, f.glcm_entropy, f.glcm_homogeneity) == (1.0, 0.0, 1.0)


def test_constant_region_peak_in_uniform_volume():
    data = np.full((3, 3, 3), 2.0, np.float32)
    mask = np.zeros((3, 3, 3), np.uint8)
    mask[1, 1, 1:] = 1
    assert radiomic_features(Volume(data), Mask(mask)).suv_peak == 2.0


def test_corner_voxel_peak_is_clipped():
    data = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    mask = np.zeros((3, 3, 3), np.uint8)
    mask[0, 0, 0] = 1
    f = radiomic_features(Volume(data), Mask(mask))
    assert f.suv_peak == pytest.approx(data[:2, :2, :2].mean(), rel=1e-12)


def test_empty_mask_is_undefined():
    with pytest.raises(FeatureUndefinedError):
        radiomic_features(Volume(np.zeros((1, 2, 2))), Mask(np.zeros((1, 2, 2))))


def test_features_match_oracle_on_phantoms():
    cfg = PhantomConfig(seed=99)
    for i in range(10):
        s = generate_phantom(cfg, i)
        got = radiomic_features(s.volume, s.mask).as_array()
        want = oracles.features(s.volume.data, s.mask.data, 3.7 ** 3)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=0)


def test_feature_extraction_is_pure():
    s = generate_phantom(PhantomConfig(), 3)
    a = radiomic_features(s.volume, s.mask).as_array()
    b = radiomic_features(s.volume, s.mask).as_array()
    assert a.tobytes() == b.tobytes()


def _vectors(rng, n):
    return [RadiomicVector(*rng.normal(size=8)) for _ in range(n)]


def test_perfect_linear_dependence():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(6, 8))
    rows[:, 3] = 2 * rows[:, 1]
    corr = feature_correlations([RadiomicVector(*r) for r in rows])
    assert corr[1, 3] == 1.0 and corr[3, 1] == 1.0
    assert (np.diag(corr) == 1.0).all()


def test_correlations_match_two_pass_oracle():
    rng = np.random.default_rng(2)
    vecs = _vectors(rng, 10)
    corr = feature_correlations(vecs)
    want = oracles.correlation_matrix([v.as_array() for v in vecs])
    np.testing.assert_allclose(corr, want, rtol=0, atol=1e-12)


def test_correlation_errors():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        feature_correlations(_vectors(rng, 2))
    rows = rng.normal(size=(5, 8))
    rows[:, 4] = 1.0
    with pytest.raises(DegenerateFeatureError) as err:
        feature_correlations([RadiomicVector(*r) for r in rows])
    assert err.value.feature == FEATURES[4]


def _filled(value):
    m = np.full((8, 8), value)
    np.fill_diagonal(m, 1.0)
    return m


def test_correlation_score_examples():
    rng = np.random.default_rng(4)
    m = feature_correlations(_vectors(rng, 12))
    assert correlation_mse(m, m) == 0.0
    assert correlation_accuracy(m, m) == 1.0
    assert correlation_mse(_filled(0.3), _filled(0.4)) == pytest.approx(0.01, abs=1e-15)
    assert correlation_accuracy(_filled(0.9), _filled(-0.9)) == 0.0


def test_correlation_accuracy_bin_edges():
    real, syn = _filled(0.0), _filled(0.0)
    real[0, 1] = real[1, 0] = 0.55
    real[0, 2] = real[2, 0] = 0.65
    syn[0, 1] = syn[1, 0] = 0.58
    syn[0, 2] = syn[2, 0] = 0.58
    assert correlation_accuracy(real, syn) == 27 / 28
    # right-closed bins: 0.6 belongs with 0.55, -0.6 with -1
    real[0, 1], syn[0, 1] = 0.6, 0.21
    real[0, 2], syn[0, 2] = -0.6, -1.0
    assert correlation_accuracy(real, syn) == 1.0


sym = st.lists(st.floats(-1, 1), min_size=28, max_size=28).map(
    lambda v: _from_upper(np.array(v)))


def _from_upper(v):
    m = np.eye(8)
    m[np.triu_indices(8, 1)] = v
    return np.triu(m) + np.triu(m, 1).T


@given(sym, sym)
def test_correlation_scores_match_loops(a, b):
    assert abs(correlation_mse(a, b) - oracles.corr_mse(a, b)) <= 1e-12
    assert correlation_accuracy(a, b) == oracles.corr_accuracy(a, b)
    assert correlation_mse(a, a) == 0.0 and correlation_accuracy(a, a) == 1.0


def test_feature_table_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    vecs = _vectors(rng, 4)
    ids = [f"s{i}" for i in range(4)]
    write_feature_table(vecs, tmp_path / "f.csv", ids)
    got_ids, got = read_feature_table(tmp_path / "f.csv")
    assert got_ids == ids and got == vecs
