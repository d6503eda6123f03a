import numpy as np
import pytest

from protoadapt.backbone import Backbone, BackboneConfig, Modality
from protoadapt.optim import SGD
from protoadapt.prototypes import AdapterBank
from protoadapt.tensor import DimensionError


def _inputs(n=2, h=16, w=24, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(n, h, w, 3)).astype(np.float32)
    mask = (rng.uniform(size=(n, h, w)) < 0.1).astype(np.float32)
    z = (rng.uniform(0.5, 4.0, size=(n, h, w)) * mask).astype(np.float32)
    return img, z, mask


@pytest.fixture(scope="module")
def net():
    return Backbone()


def test_taps(net):
    taps = net.taps
    assert [t.tap_id for t in taps] == ["img_s1", "img_s2", "img_s3", "dep_s1", "dep_s2", "dep_s3", "bottleneck"]
    assert taps[-1].modality == Modality.FUSED and taps[-1].channels == 64
    assert [t.channels for t in taps[:3]] == [16, 32, 64]


def test_parameter_count_exact(net):
    c1, c2, c3 = 16, 32, 64
    convs = [(3, c1), (c1, c1), (c1, c2), (c2, c2), (c2, c3), (c3, c3)]
    convs += [(2, c1), (c1, c1), (c1, c2), (c2, c2), (c2, c3), (c3, c3)]
    convs += [(2 * c3, 64), (64 + 2 * c3, 96), (96, c3), (c3 + 2 * c2, c2), (c2, c2), (c2 + 2 * c1, c1), (c1, c1), (c1, 1)]
    expect = sum(9 * a * b + b for a, b in convs)
    counts = net.parameter_count()
    assert counts["total"] == expect == 496993
    assert counts["trainable"] + counts["frozen"] == counts["total"]


def test_output_range_and_shapes(net):
    img, z, m = _inputs()
    depth, bott = net(img, z, m)
    assert depth.shape == (2, 16, 24) and bott.shape == (2, 2, 3, 64)
    cfg = net.config
    assert (depth.data > cfg.d_min).all() and (depth.data < cfg.d_max).all()
    single, _ = net(img[0], z[0], m[0])
    # batched BLAS may round differently from a batch of one, hence per-sample evaluation in the harness
    np.testing.assert_allclose(single.data, depth.data[0], rtol=1e-6)


def test_extent_errors(net):
    img, z, m = _inputs(h=12)
    with pytest.raises(DimensionError):
        net(img, z, m)
    img, z, m = _inputs()
    with pytest.raises(DimensionError):
        net(img, z[:, :-8], m)


def test_identity_adapters_bitwise(net):
    img, z, m = _inputs()
    bank = AdapterBank()
    sets = bank.new_domain(2, net.taps, 10, 5, np.random.default_rng(0))
    base, b0 = net(img, z, m)
    adapted, b1 = net(img, z, m, sets)
    np.testing.assert_array_equal(base.data, adapted.data)
    np.testing.assert_array_equal(b0.data, b1.data)


def test_deterministic_construction_and_forward():
    img, z, m = _inputs()
    a, b = Backbone(BackboneConfig(seed=3)), Backbone(BackboneConfig(seed=3))
    np.testing.assert_array_equal(a(img, z, m)[0].data, b(img, z, m)[0].data)
    c = Backbone(BackboneConfig(seed=4))
    assert not np.array_equal(a(img, z, m)[0].data, c(img, z, m)[0].data)


def test_frozen_backbone_unchanged_by_adapt_step():
    net = Backbone()
    net.freeze()
    assert net.trainable() == [] and net.parameter_count()["trainable"] == 0
    before = {k: v.data.copy() for k, v in net.params.items()}
    bank = AdapterBank()
    sets = bank.new_domain(2, net.taps, 2, 2, np.random.default_rng(0))
    opt = SGD(bank.trainable(2), 0.1)
    img, z, m = _inputs()
    depth, _ = net(img, z, m, sets)
    ((depth - 1.0) * (depth - 1.0)).sum().backward()
    opt.step()
    for k, v in net.params.items():
        assert v.grad is None
        np.testing.assert_array_equal(v.data, before[k])
    assert any(p.data.any() for s in sets.values() for p in [s.P])


def test_encoder_features_ignore_adapters(net):
    img, z, m = _inputs()
    bank = AdapterBank()
    sets = bank.new_domain(2, net.taps, 3, 3, np.random.default_rng(0))
    for s in sets.values():
        s.P.data[:] = np.random.default_rng(1).normal(size=s.P.shape)
    _, b0 = net(img, z, m)
    d1, b1 = net(img, z, m, sets)
    np.testing.assert_array_equal(b0.data, b1.data)
    assert not np.array_equal(net(img, z, m)[0].data, d1.data)


def test_checkpoint_round_trip(tmp_path, net):
    net.save(tmp_path)
    manifest = (tmp_path / "backbone.json").read_text()
    assert "config_hash" in manifest and "seed" in manifest
    other = Backbone.load(tmp_path)
    img, z, m = _inputs()
    np.testing.assert_array_equal(other(img, z, m)[0].data, net(img, z, m)[0].data)
    assert other.config_hash() == net.config_hash()
