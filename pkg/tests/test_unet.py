import numpy as np
import pytest

from oracles import network_gradient_errors
from sdmseg.errors import ConfigurationError, DomainError, VolumeIOError
from sdmseg.nn import NetworkConfig, Tensor, UNet, build_unet, count_parameters, load_parameters, save_parameters

# layer-by-layer count for levels=2, init channels 4, one input and one output channel
DESK_PARAMS = 30357


def test_shapes_and_tanh_range():
    forward, params = build_unet(NetworkConfig())
    x = np.random.default_rng(0).standard_normal((1, 1, 16, 16, 16)).astype(np.float32)
    out = forward(Tensor(x))
    assert out.shape == (1, 1, 16, 16, 16)
    assert np.all(np.abs(out.data) < 1)


def test_sigmoid_head_range():
    forward, _ = build_unet(NetworkConfig(head="seg-sigmoid", num_classes=2))
    out = forward(np.zeros((1, 1, 8, 8, 8), np.float32))
    assert out.shape == (1, 2, 8, 8, 8)
    assert np.all((out.data > 0) & (out.data < 1))


def test_parameter_count():
    _, params = build_unet(NetworkConfig())
    assert count_parameters(params) == DESK_PARAMS


def test_parameter_order_and_names():
    net = UNet(NetworkConfig())
    names = list(net.params)
    assert names[0] == "enc0.conv1.weight"
    assert names[-1] == "head.conv.bias"
    assert "down2.conv.weight" in names and "dec0.gn2.shift" in names


def test_channel_widths_and_groups():
    cfg = NetworkConfig(levels=6, init_channels=24, channel_cap=384)
    assert [cfg.channels(l) for l in range(7)] == [24, 48, 96, 192, 384, 384, 384]
    assert cfg.groups(24) == 8 and cfg.groups(4) == 4 and cfg.groups(12) == 1
    assert cfg.downsampling_factor == 64
    assert cfg.bottleneck_shape((64, 64, 64)) == (1, 1, 1)


def test_indivisible_input():
    forward, _ = build_unet(NetworkConfig())
    with pytest.raises(ConfigurationError):
        forward(np.zeros((1, 1, 10, 8, 8), np.float32))


def test_invalid_config():
    with pytest.raises((ConfigurationError, DomainError)):
        NetworkConfig(levels=0)
    with pytest.raises((ConfigurationError, DomainError)):
        NetworkConfig(head="softmax")


def test_deterministic_init_and_forward():
    a, b = UNet(NetworkConfig(seed=3)), UNet(NetworkConfig(seed=3))
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    x = np.random.default_rng(1).standard_normal((1, 1, 8, 8, 8)).astype(np.float32)
    assert np.array_equal(a(x).data, b(x).data)
    c = UNet(NetworkConfig(seed=4))
    assert not np.array_equal(a.params["enc0.conv1.weight"].data, c.params["enc0.conv1.weight"].data)


def test_shape_trace_round_trips():
    net = UNet(NetworkConfig())
    trace = dict(net.shape_trace((16, 8, 16)))
    assert trace["enc2"] == (16, 4, 2, 4)
    assert trace["head"] == (1, 16, 8, 16)


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradient(seed):
    net = UNet(NetworkConfig(dtype="float64", seed=seed))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 1, 8, 8, 8))
    w = rng.standard_normal((1, 1, 8, 8, 8))
    directional, elementwise = network_gradient_errors(net, x, w, per_tensor=2, seed=seed)
    assert directional < 1e-3
    assert elementwise < 1e-3


def test_checkpoint_round_trip(tmp_path):
    cfg = NetworkConfig(seed=7)
    net = UNet(cfg)
    save_parameters(tmp_path / "ck", net.params, cfg.to_dict())
    arrays, config = load_parameters(tmp_path / "ck")
    assert list(arrays) == list(net.params)
    assert NetworkConfig(**config) == cfg
    other = UNet(NetworkConfig(seed=8))
    other.load(arrays)
    x = np.ones((1, 1, 8, 8, 8), np.float32)
    assert np.array_equal(other(x).data, net(x).data)


def test_checkpoint_truncated(tmp_path):
    net = UNet(NetworkConfig())
    save_parameters(tmp_path / "ck", net.params)
    bin_path = tmp_path / "ck.bin"
    bin_path.write_bytes(bin_path.read_bytes()[:100])
    with pytest.raises(VolumeIOError):
        load_parameters(tmp_path / "ck")


def test_load_rejects_mismatch():
    net = UNet(NetworkConfig())
    with pytest.raises(ConfigurationError):
        net.load({"enc0.conv1.weight": np.zeros(3)})
