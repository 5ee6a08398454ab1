import numpy as np
import pytest
import torch.nn as nn

from srdefense import imaging
from srdefense.data import load_dataset
from srdefense.errors import ConfigError, ShapeError
from srdefense.sr import SRNet, SRNetSpec, SRTrainConfig, TinyEDSR, evaluate_psnr, make_sr_pairs, super_resolve, train_sr


def test_pair_shapes_and_count(synthetic_test):
    lr, hr = make_sr_pairs(synthetic_test.images[:50], 2)
    assert lr.shape == (50, 16, 16, 3) and hr.shape == (50, 32, 32, 3)
    np.testing.assert_array_equal(hr, synthetic_test.images[:50])


def test_bicubic_round_trip_is_reasonable(synthetic_test):
    lr, hr = make_sr_pairs(synthetic_test.images[:50], 2)
    value = evaluate_psnr("bicubic", lr, hr)
    assert np.isfinite(value) and value > 20


def test_pairs_reject_small_images():
    with pytest.raises(ShapeError):
        make_sr_pairs(np.zeros((2, 8, 8, 3)), 2)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SRNetSpec(scale=5)
    with pytest.raises(ConfigError):
        SRNetSpec(blocks=-1)


def test_blocks_have_no_normalization():
    module = TinyEDSR(SRNetSpec())
    assert not any(isinstance(m, nn.modules.batchnorm._NormBase) for m in module.modules())
    assert not any(isinstance(m, (nn.LayerNorm, nn.GroupNorm)) for m in module.modules())


def tiny_corpus(synthetic_test, n=64):
    return make_sr_pairs(synthetic_test.images[:n], 2)


def test_zero_block_network_trains(synthetic_test):
    lr, hr = tiny_corpus(synthetic_test)
    net = train_sr(SRNetSpec(blocks=0, features=8), lr, hr, SRTrainConfig(epochs=1))
    assert net(lr[:2]).shape == (2, 32, 32, 3)


def test_training_is_seed_deterministic(synthetic_test):
    lr, hr = tiny_corpus(synthetic_test)
    spec, cfg = SRNetSpec(blocks=1, features=8), SRTrainConfig(epochs=1, seed=3)
    a = train_sr(spec, lr, hr, cfg, val=(lr, hr))
    b = train_sr(spec, lr, hr, cfg, val=(lr, hr))
    assert abs(a.metadata["val_psnr"] - b.metadata["val_psnr"]) <= 1e-6


def test_corpus_scale_mismatch(synthetic_test):
    lr, hr = tiny_corpus(synthetic_test)
    with pytest.raises(ConfigError):
        train_sr(SRNetSpec(scale=4), lr, hr)
    with pytest.raises(ConfigError):
        train_sr(SRNetSpec(), lr[:0], hr[:0])


@pytest.mark.parametrize("method", ["tiny-edsr", "nearest", "bilinear", "bicubic"])
def test_scale_one_passes_through(method, trained_sr, rng):
    x = rng.uniform(0, 1, (2, 12, 12, 3))
    net_or_method = trained_sr if method == "tiny-edsr" else method
    np.testing.assert_array_equal(super_resolve(net_or_method, x, 1), x)


def test_network_doubles_32_to_64(trained_sr, synthetic_test):
    out = super_resolve(trained_sr, synthetic_test.images[:3], 2)
    assert out.shape == (3, 64, 64, 3)
    assert out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("hw", [(8, 8), (9, 13), (20, 11)])
def test_shape_law(trained_sr, rng, hw):
    assert trained_sr(rng.uniform(0, 1, hw + (3,))).shape == (2 * hw[0], 2 * hw[1], 3)


def test_too_small_input(trained_sr):
    with pytest.raises(ShapeError):
        trained_sr(np.zeros((7, 8, 3)))


def test_unsupported_scales(trained_sr, rng):
    x = rng.uniform(0, 1, (16, 16, 3))
    with pytest.raises(ConfigError):
        super_resolve(trained_sr, x, 3)
    with pytest.raises(ConfigError):
        super_resolve("bicubic", x, 5)
    with pytest.raises(ConfigError):
        super_resolve("lanczos", x, 2)


def test_inference_is_bitwise_stable(trained_sr, synthetic_test):
    x = synthetic_test.images[:4]
    np.testing.assert_array_equal(trained_sr(x), trained_sr(x))


def test_checkpoint_round_trip(trained_sr, synthetic_test, tmp_path):
    trained_sr.save(tmp_path / "sr.ckpt")
    back = SRNet.load(tmp_path / "sr.ckpt")
    x = synthetic_test.images[:2]
    np.testing.assert_array_equal(back(x), trained_sr(x))


def test_trained_network_beats_bicubic_on_its_objective(trained_sr, synthetic_test):
    lr, hr = make_sr_pairs(synthetic_test.images[200:400], 2)
    l1 = lambda out: np.abs(out - hr).mean()
    assert l1(trained_sr(lr)) < l1(super_resolve("bicubic", lr, 2))


@pytest.mark.slow
def test_cifar_network_beats_bicubic_psnr():
    try:
        train_set = load_dataset("cifar10", "train", download=False)
    except FileNotFoundError:
        pytest.skip("cifar10 not in the local cache")
    lr, hr = make_sr_pairs(train_set.images[:-500], 2)
    val = make_sr_pairs(train_set.images[-500:], 2)
    net = train_sr(SRNetSpec(), lr, hr, SRTrainConfig(), val=val)
    assert net.metadata["val_psnr"] >= net.metadata["val_psnr_bicubic"] + 0.3


def test_network_adds_high_frequency_energy(trained_sr, synthetic_test):
    x = synthetic_test.images[:32]
    sr = super_resolve(trained_sr, x, 2)
    bicubic = super_resolve("bicubic", x, 2)
    energy = lambda batch: np.mean([imaging.high_band_energy(imaging.rgb_to_ycbcr(img)[..., 0]) for img in batch])
    assert energy(sr) > energy(bicubic)
