import numpy as np
import pytest
import torch
from torch import nn

from sonarsynth.stylebank import (
    StyleBankNet,
    config_hash,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture(scope="module")
def net():
    return init_params(3, seed=0)


@pytest.mark.parametrize("h,w", [(16, 16), (32, 32), (64, 64), (16, 48)])
def test_shape_chain(net, h, w):
    x = torch.rand(3, h, w)
    f = net.encode(x)
    assert f.shape == (256, h // 2, w // 2)
    assert net.apply_style(f, 1).shape == f.shape
    out = net.decode(f)
    assert out.shape == (3, h, w)
    assert out.min() >= 0 and out.max() <= 1
    assert net(x).shape == net(x, 2).shape == (3, h, w)


@pytest.mark.parametrize("h,w", [(15, 16), (16, 17), (14, 14)])
def test_bad_dims(net, h, w):
    with pytest.raises(ValueError):
        net.encode(torch.rand(3, h, w))


def test_grayscale_input(net):
    assert net(torch.rand(1, 1, 16, 16)).shape == (1, 3, 16, 16)


def test_style_index_errors(net):
    f = net.encode(torch.rand(3, 16, 16))
    with pytest.raises(IndexError):
        net.apply_style(f, 3)
    with pytest.raises(ValueError):
        net.decode(torch.rand(128, 8, 8))
    with pytest.raises(ValueError):
        net.apply_style(torch.rand(2, 256, 8, 8), [0])


def test_mixed_batch_matches_per_sample(net):
    x = torch.rand(4, 3, 16, 16)
    ids = [2, 0, 2, 1]
    mixed = net(x, ids)
    for i, s in enumerate(ids):
        torch.testing.assert_close(mixed[i], net(x[i], s), rtol=1e-5, atol=1e-6)


def test_numpy_integer_style_id(net):
    x = torch.rand(3, 16, 16)
    assert torch.equal(net(x, np.int64(1)), net(x, 1))


def test_init_determinism():
    a, b, c = init_params(2, 5), init_params(2, 5), init_params(2, 6)
    assert len(a.bank) == 2
    for (n, p), q, r in zip(a.named_parameters(), b.parameters(), c.parameters()):
        assert torch.equal(p, q), n
    assert not torch.equal(a.encoder[0].weight, c.encoder[0].weight)
    with pytest.raises(ValueError):
        init_params(0)


def test_init_identity_affine_and_bounds():
    n = init_params(1, 0)
    for m in n.modules():
        if isinstance(m, nn.InstanceNorm2d):
            assert torch.all(m.weight == 1) and torch.all(m.bias == 0)
    w = n.encoder[0].weight
    assert w.abs().max() <= 1 / np.sqrt(3 * 81)


def test_architecture():
    n = StyleBankNet(2)
    convs = [m for m in n.encoder if isinstance(m, nn.Conv2d)]
    assert [(c.out_channels, c.kernel_size[0], c.stride[0]) for c in convs] == [
        (32, 9, 2), (64, 3, 1), (128, 3, 1), (256, 3, 1)]
    assert convs[0].padding_mode == "zeros" and convs[1].padding_mode == "reflect"
    dec = [m for m in n.decoder if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d))]
    assert [c.out_channels for c in dec] == [128, 64, 32, 3]
    assert isinstance(dec[-1], nn.ConvTranspose2d) and dec[-1].stride[0] == 2
    assert isinstance(n.decoder[-1], nn.Sigmoid)
    names = dict(n.named_parameters())
    assert "encoder.0.weight" in names and "bank.1.3.bias" in names


def test_instance_norm_statistics(net):
    captured = []

    def hook(mod, inp, out):
        pre = (out - mod.bias.view(1, -1, 1, 1)) / mod.weight.view(1, -1, 1, 1)
        captured.append(pre.detach().double())

    handles = [m.register_forward_hook(hook) for m in net.modules() if isinstance(m, nn.InstanceNorm2d)]
    try:
        net(torch.rand(2, 3, 32, 32), [0, 1])
    finally:
        for h in handles:
            h.remove()
    assert captured
    for y in captured:
        mean = y.mean(dim=(2, 3))
        var = y.var(dim=(2, 3), unbiased=False)
        live = var > 1e-3  # channels whose input was constant normalize to 0
        assert mean.abs().max() < 1e-4
        assert (var[live] - 1).abs().max() < 1e-3


def _grads(net, loss):
    net.zero_grad(set_to_none=True)
    loss.backward()
    return {n: p.grad for n, p in net.named_parameters()}


def test_branch_isolation_gradients():
    net = init_params(3, 1)
    x = torch.rand(2, 3, 16, 16)
    g = _grads(net, net(x).mean())
    assert all(v is None for n, v in g.items() if n.startswith("bank."))
    assert g["encoder.0.weight"] is not None and g["decoder.0.weight"] is not None

    g = _grads(net, net(x, [1, 1]).mean())
    for n, v in g.items():
        if n.startswith("bank.1."):
            assert v is not None
        elif n.startswith("bank."):
            assert v is None


def test_checkpoint_round_trip(tmp_path, net):
    extra = {"optim.encoder.0.weight.step": torch.tensor(3.0)}
    save_checkpoint(tmp_path / "ckpt_7.bin", net, {"a": 1}, extra, {"iteration": "7"})
    assert not list(tmp_path.glob("*.tmp"))
    back, tensors, meta = load_checkpoint(tmp_path / "ckpt_7.bin")
    assert meta["n_styles"] == "3" and meta["iteration"] == "7"
    assert meta["config_hash"] == config_hash({"a": 1})
    assert torch.equal(tensors["optim.encoder.0.weight.step"], torch.tensor(3.0))
    for (n, p), q in zip(net.state_dict().items(), back.state_dict().values()):
        assert torch.equal(p, q), n


def test_checkpoint_errors(tmp_path, net):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.bin")
    with pytest.raises(KeyError):
        save_checkpoint(tmp_path / "x.bin", net, extra_tensors={"encoder.0.weight": torch.zeros(1)})
    from safetensors.torch import save_file

    save_file({"a": torch.zeros(1)}, str(tmp_path / "foreign.bin"))
    with pytest.raises(ValueError, match="not a stylebank"):
        load_checkpoint(tmp_path / "foreign.bin")


def test_config_hash_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
