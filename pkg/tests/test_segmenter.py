import dataclasses

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from micro import gradient_check, micro_batch, micro_segmenter, n_params
from trgan_privacy.segmenter import (SegConfig, SegmenterNet, load_segmenter, mean_training_dice,
                                     parameter_digest, predict_probabilities, save_segmenter,
                                     segment, soft_dice_loss, train_segmenter)
from trgan_privacy.volume import PhantomConfig, Volume, generate_phantom

SMALL = SegConfig(epochs=25)


@pytest.fixture(scope="module")
def separable():
    cfg = PhantomConfig(noise=0.0, seed=21)
    return [generate_phantom(cfg, i) for i in range(20)]


@pytest.fixture(scope="module")
def untrained():
    torch.manual_seed(0)
    net = SegmenterNet(SegConfig()).eval()
    net.grid = (8, 16, 16)
    return net


def test_learns_separable_phantoms(separable):
    net = train_segmenter([s.volume for s in separable], [s.mask for s in separable], SMALL)
    assert mean_training_dice(net, [s.volume for s in separable], [s.mask for s in separable]) >= 0.9


def test_overfits_single_pair():
    s = generate_phantom(PhantomConfig(seed=5), 0)
    net = train_segmenter([s.volume], [s.mask], dataclasses.replace(SMALL, epochs=60))
    assert mean_training_dice(net, [s.volume], [s.mask]) >= 0.95


def test_training_is_deterministic(separable):
    imgs, masks = [s.volume for s in separable[:4]], [s.mask for s in separable[:4]]
    cfg = dataclasses.replace(SMALL, epochs=2)
    a = train_segmenter(imgs, masks, cfg)
    b = train_segmenter(imgs, masks, cfg)
    assert parameter_digest(a) == parameter_digest(b)


def test_training_input_validation(separable):
    other = generate_phantom(PhantomConfig(dims=(16, 16, 4)), 0)
    with pytest.raises(ValueError):
        train_segmenter([separable[0].volume, other.volume], [separable[0].mask, other.mask], SMALL)
    odd = generate_phantom(PhantomConfig(dims=(16, 16, 7), head_axes_min=(5, 5.5, 2.5),
                                         head_axes_max=(7, 7.5, 3.0)), 0)
    with pytest.raises(ValueError):
        train_segmenter([odd.volume], [odd.mask], SMALL)
    with pytest.raises(ValueError):
        train_segmenter([], [], SMALL)


def test_segment_contract(untrained):
    vol = generate_phantom(PhantomConfig(), 1).volume
    m = segment(untrained, vol, 0.5)
    assert m.data.shape == vol.data.shape
    assert set(np.unique(m.data)) <= {0, 1}
    probs = predict_probabilities(untrained, vol)
    assert probs.max() < 1.0
    assert segment(untrained, vol, float(np.nextafter(np.float32(1.0), 0))).count() == 0
    with pytest.raises(ValueError):
        segment(untrained, Volume(np.zeros((4, 16, 16))), 0.5)


@given(seed=st.integers(0, 1000), t1=st.floats(0.01, 0.99), t2=st.floats(0.01, 0.99))
def test_threshold_monotonicity(untrained, seed, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    vol = Volume(np.random.default_rng(seed).uniform(-1, 1, (8, 16, 16)))
    loose, strict = segment(untrained, vol, lo).data, segment(untrained, vol, hi).data
    assert np.all(strict <= loose)


def test_soft_dice_loss_values():
    t = torch.tensor([[1.0, 0.0, 1.0, 0.0]])
    assert soft_dice_loss(t, t).item() == pytest.approx(0.0, abs=1e-12)
    p = torch.tensor([[0.0, 1.0, 0.0, 1.0]])
    assert soft_dice_loss(p, t).item() == pytest.approx(1 - 1 / 5, abs=1e-7)


def test_soft_dice_gradient():
    net = micro_segmenter(seed=3)
    assert n_params(net) <= 500
    x, m = micro_batch(seed=4)
    assert gradient_check(lambda: soft_dice_loss(net(x), m), net.parameters()) <= 1e-3


def test_save_load_round_trip(tmp_path, separable):
    net = train_segmenter([s.volume for s in separable[:2]], [s.mask for s in separable[:2]],
                          dataclasses.replace(SMALL, epochs=1))
    save_segmenter(net, tmp_path / "seg")
    back = load_segmenter(tmp_path / "seg.json")
    assert parameter_digest(back) == parameter_digest(net)
    assert back.grid == net.grid
    vol = separable[3].volume
    np.testing.assert_array_equal(predict_probabilities(back, vol), predict_probabilities(net, vol))


def test_config_validation():
    for bad in ({"levels": 1}, {"threshold": 1.0}, {"epochs": 0}):
        with pytest.raises(ValueError):
            SegmenterNet(dataclasses.replace(SegConfig(), **bad))
