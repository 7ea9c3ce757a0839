import numpy as np
import pytest

from rstan import functional as F
from rstan import tensor as T
from rstan.errors import ConfigError, DimensionError
from rstan.gradcheck import grad_check
from rstan.losses import cross_entropy, neg_pearson_loss
from rstan.networks import CNN1D, RSTAN, STAN, BackboneConfig, DeepRPPG, get_preset, paper_preset, toy_preset
from rstan.optim import Adam
from rstan.tensor import Tensor, backward


@pytest.fixture(scope="module")
def clip():
    return np.random.default_rng(0).uniform(0, 1, size=(1, 16, 28, 28))


def test_toy_shapes(clip):
    model = RSTAN(toy_preset(clip_length=16), seed=0)
    out = model(clip)
    assert out.z_v.shape == (1, 32, 4, 4, 4)
    assert out.x_r.shape == out.z_v.shape
    assert out.logits.shape == (1, 2)
    assert out.rppg_pred.shape == (1, 16)
    assert out.m.shape == out.z_v.shape
    assert np.all(out.m.data == out.m.data[:, :1])
    assert out.f_e.shape == out.z_v.shape


def test_paper_preset_shapes_by_inference():
    cfg = paper_preset()
    stan = STAN(cfg, seed=0)
    shapes = dict(stan.encoder.layer_shapes((3, 64, 224, 224)))
    assert stan.encoder.out_shape((3, 64, 224, 224)) == (1024, 16, 7, 7)
    assert shapes["stage1.conv1"][1:] == (32, 112, 112)
    rppg = DeepRPPG(cfg, seed=0)
    assert rppg.decoded_length(16) == 64
    assert get_preset("paper").to_dict() == cfg.to_dict()


def test_preset_round_trip():
    cfg = toy_preset()
    assert BackboneConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        get_preset("huge")


def test_zero_head_gives_zero_logits(clip):
    model = STAN(toy_preset(clip_length=16), seed=1)
    model.head.weight.data[...] = 0
    model.head.bias.data[...] = 0
    logits, _ = model(clip)
    assert np.array_equal(logits.data, np.zeros((1, 2)))


def test_constant_video_interior_is_periodic():
    # temporal zero padding perturbs the ends, and the stride-2 deconvs leave a
    # period-4 pattern, so only the interior is checked and only for periodicity
    model = DeepRPPG(toy_preset(), seed=3).eval()
    for value in (0.2, 0.7):
        y = model(np.full((1, 64, 28, 28), value))[0].data[0]
        inner = y[24:40]
        assert np.array_equal(inner[:-4], inner[4:])
        assert np.all(np.isfinite(y))


def test_uniform_map_reduces_to_scaled_stan(clip):
    model = RSTAN(toy_preset(clip_length=16), seed=2).eval()
    model.vfe.f1.weight.data[...] = 0
    model.vfe.f_st.weight.data[...] = 0
    out = model(clip)
    np.testing.assert_allclose(out.m.data, 1 / 4, atol=1e-15)
    head = model.stan.head
    pooled = F.global_avg_pool(out.z_v).data * (1 + 1 / 4)
    np.testing.assert_allclose(out.logits.data, pooled @ head.weight.data.T + head.bias.data, atol=1e-12)


def test_zeroed_rppg_branch_gives_uniform_map(clip):
    model = RSTAN(toy_preset(clip_length=16), seed=2).eval()
    for name, p in model.rppg.encoder.named_parameters():
        p.data[...] = 0
    out = model(clip)
    assert np.all(out.x_r.data == 0)
    np.testing.assert_allclose(out.m.data, 1 / 4, atol=1e-15)
    np.testing.assert_allclose(out.f_e.data, out.z_v.data * 1.25, atol=1e-12)


def test_rstan_gradcheck_on_example_shape():
    rng = np.random.default_rng(7)
    model = RSTAN(toy_preset(frame_size=(14, 14), clip_length=16), seed=7)
    video = Tensor(rng.uniform(0, 1, size=(1, 1, 16, 14, 14)), requires_grad=True)
    target = rng.normal(size=(1, 16))
    params = [model.stan.head.weight, model.vfe.f1.weight, model.rppg.proj.weight]

    def f(video, *_):
        out = model(video)
        return cross_entropy(out.logits, [1]) + 0.5 * neg_pearson_loss(out.rppg_pred, target)

    assert grad_check(f, [video] + params, max_checks=4, rng=np.random.default_rng(0)) < 1e-4


@pytest.mark.parametrize("fusion", ["early-flatten", "early-concat"])
def test_early_fusion_shapes_and_shared_init(fusion, clip):
    base = RSTAN(toy_preset(clip_length=16), seed=4)
    model = RSTAN(toy_preset(clip_length=16), seed=4, fusion=fusion)
    a, b = base.state_dict(), model.state_dict()
    shared = [k for k in a if k.startswith(("stan.", "rppg."))]
    assert shared and all(np.array_equal(a[k], b[k]) for k in shared)
    assert model(clip).logits.shape == (1, 2)


def test_config_errors(clip):
    model = RSTAN(toy_preset(clip_length=16), seed=0)
    with pytest.raises(ConfigError):
        model(np.zeros((1, 18, 28, 28)))
    with pytest.raises(ConfigError):
        model(np.zeros((3, 16, 28, 28)))
    with pytest.raises(DimensionError):
        model(np.zeros((16, 28, 28)))
    bad = toy_preset()
    bad.decoder = [[16, 4, 2, 1]]
    with pytest.raises(ConfigError):
        DeepRPPG(bad)
    wrong = toy_preset()
    wrong.decoder = [[16, 4, 2, 1], [8, 3, 1, 1]]
    with pytest.raises(ConfigError):
        DeepRPPG(wrong)(np.zeros((1, 16, 28, 28)))


def test_toy_is_small_and_finite(clip):
    model = RSTAN(toy_preset(), seed=0)
    assert model.num_parameters() < 5e5
    out = model(np.random.default_rng(1).uniform(0, 1, size=(2, 1, 64, 28, 28)))
    assert all(np.all(np.isfinite(t.data)) for t in (out.logits, out.rppg_pred, out.f_e))


def test_same_seed_same_weights():
    a, b = RSTAN(toy_preset(), seed=5).state_dict(), RSTAN(toy_preset(), seed=5).state_dict()
    c = RSTAN(toy_preset(), seed=6).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_descent_step_lowers_loss():
    rng = np.random.default_rng(3)
    model = RSTAN(toy_preset(clip_length=16), seed=3)
    video = rng.uniform(0, 1, size=(2, 1, 16, 28, 28))
    target = rng.normal(size=(2, 16))
    labels = [0, 1]

    def loss():
        out = model(video)
        return cross_entropy(out.logits, labels) + 0.5 * neg_pearson_loss(out.rppg_pred, target)

    model.eval()
    before = loss().item()
    opt = Adam(model.named_parameters(), lr=1e-3)
    model.zero_grad()
    backward(loss())
    opt.step()
    assert loss().item() < before


# ---------------------------------------------------------------- 1D-CNN

def test_cnn1d_flatten_sizes():
    assert CNN1D(length=64).flat_dim == 512
    assert CNN1D(length=8).flat_dim == 64
    net = CNN1D(num_classes=5, length=64, seed=0).eval()
    assert net(np.zeros((3, 64))).shape == (3, 5)
    assert net(np.zeros(64)).shape == (1, 5)


def test_cnn1d_errors():
    with pytest.raises(ConfigError):
        CNN1D(length=60)
    net = CNN1D(length=64)
    with pytest.raises(ConfigError):
        net(np.zeros((1, 60)))
    with pytest.raises(DimensionError):
        net(np.zeros((1, 128)))


def test_cnn1d_eval_is_deterministic_and_dropout_is_train_only():
    x = np.random.default_rng(0).normal(size=(4, 64))
    net = CNN1D(seed=2).eval()
    assert net(x).data.tobytes() == net(x).data.tobytes()
    net.train()
    assert not np.array_equal(net(x).data, net(x).data)


def test_cnn1d_gradients_reach_first_layer():
    net = CNN1D(seed=1, dropout=0.0)
    x = np.random.default_rng(1).normal(size=(4, 64))
    backward(cross_entropy(net(x), [0, 1, 0, 1]))
    assert np.any(net.conv1.conv.weight.grad != 0)
    assert T.sum_(Tensor(net.fc2.weight.grad)).item() == pytest.approx(0, abs=1e-12)
