import math

import numpy as np
import pytest
import torch

from ctdg.denoiser import (
    Denoiser,
    DenoiserConfig,
    DenoiserOutput,
    collate,
    forward,
    gradient,
    init_params,
    load_checkpoint,
    probs,
    save_checkpoint,
)
from ctdg.encoding import rrwp
from ctdg.graphs import Permutation, apply_permutation
from ctdg.training import cross_entropy_loss

from .strategies import random_graph

SMALL = DenoiserConfig(a=2, b=3, hidden_dim=16, n_layers=2, n_heads=4, rrwp_K=5, global_dim=8, edge_dim=8, mlp_dim=16)


def test_config_validation():
    with pytest.raises(ValueError):
        DenoiserConfig(hidden_dim=10, n_heads=4)
    with pytest.raises(ValueError):
        DenoiserConfig(n_layers=0)
    with pytest.raises(ValueError):
        DenoiserConfig(precision="float16")
    assert DenoiserConfig(hidden_dim=64, n_heads=8).head_dim == 8


def test_init_is_seeded_and_structured():
    a, b = init_params(SMALL), init_params(SMALL)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    c = init_params(DenoiserConfig(**{**SMALL.__dict__, "seed": 1}))
    assert not torch.equal(a.mlp_in_x[0].weight, c.mlp_in_x[0].weight)
    for mod in a.modules():
        if isinstance(mod, torch.nn.LayerNorm):
            assert torch.all(mod.weight == 1) and torch.all(mod.bias == 0)
    assert a.null_embedding is None
    cond = init_params(DenoiserConfig(**{**SMALL.__dict__, "conditioner_dim": 2}))
    assert torch.all(cond.null_embedding == 0)


def test_init_weight_scale():
    cfg = DenoiserConfig(hidden_dim=64, n_heads=8)
    for seed in range(10):
        m = init_params(DenoiserConfig(**{**cfg.__dict__, "seed": seed}))
        w = m.layers[0].attn.q.weight
        target = 1 / math.sqrt(3 * w.shape[1])  # std of U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        assert abs(w.std().item() / target - 1) <= 0.2


def test_output_structure():
    rng = np.random.default_rng(0)
    m = init_params(SMALL)
    g = random_graph(rng, 5, a=2, b=3)
    out = forward(m, g, rrwp(g, 5), t=0.3)
    assert out.node_logits.shape == (5, 2) and out.edge_logits.shape == (5, 5, 3)
    assert torch.equal(out.edge_logits, out.edge_logits.transpose(0, 1))
    assert torch.all(torch.isfinite(out.node_logits)) and torch.all(torch.isfinite(out.edge_logits))
    px, pe = probs(out)
    assert torch.allclose(px.sum(-1), torch.ones(5, dtype=px.dtype), atol=1e-12)
    assert torch.equal(pe, pe.transpose(0, 1))
    again = forward(m, g, rrwp(g, 5), t=0.3)
    assert torch.equal(out.node_logits, again.node_logits)


def test_forward_rejects_wrong_encoding():
    m = init_params(SMALL)
    g = random_graph(np.random.default_rng(0), 4, a=2, b=3)
    with pytest.raises(ValueError):
        forward(m, g, rrwp(g, 3))


def test_probs_examples():
    out = DenoiserOutput(torch.zeros(3, 4, dtype=torch.float64), torch.zeros(3, 3, 2, dtype=torch.float64))
    px, _ = probs(out)
    assert torch.all(px == 0.25)
    out = DenoiserOutput(torch.tensor([[math.log(2), 0.0]], dtype=torch.float64), torch.zeros(1, 1, 2))
    px, _ = probs(out)
    assert torch.allclose(px, torch.tensor([[2 / 3, 1 / 3]], dtype=torch.float64), atol=1e-15)


def test_equivariance():
    rng = np.random.default_rng(1)
    cfg = DenoiserConfig(a=2, b=3, hidden_dim=32, n_layers=3, rrwp_K=6, conditioner_dim=1)
    m = init_params(cfg)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        g = random_graph(rng, n, a=2, b=3)
        p = Permutation.random(n, rng)
        gp = apply_permutation(g, p)
        t, y = float(rng.random()), float(rng.normal())
        out = forward(m, g, rrwp(g, 6), t=t, y=y)
        outp = forward(m, gp, rrwp(gp, 6), t=t, y=y)
        pi = torch.tensor(p.perm)
        assert torch.allclose(outp.node_logits[pi], out.node_logits, atol=1e-10, rtol=0)
        assert torch.allclose(outp.edge_logits[pi][:, pi], out.edge_logits, atol=1e-10, rtol=0)


def test_padding_does_not_leak():
    rng = np.random.default_rng(2)
    m = init_params(SMALL)
    g1, g2 = random_graph(rng, 4, a=2, b=3), random_graph(rng, 7, a=2, b=3)
    alone = m(collate([g1]), 0.4)
    padded = m(collate([g1, g2]), 0.4)
    assert torch.allclose(padded.node_logits[0, :4], alone.node_logits[0], atol=1e-12)
    assert torch.allclose(padded.edge_logits[0, :4, :4], alone.edge_logits[0], atol=1e-12)


def _loss(model, batch):
    graphs, t = batch
    return cross_entropy_loss(model(collate(graphs), t), collate(graphs), 5.0)


def test_gradient_linearity_and_unused_parameter():
    rng = np.random.default_rng(3)
    cfg = DenoiserConfig(**{**SMALL.__dict__, "conditioner_dim": 1})
    m = init_params(cfg)
    graphs = [random_graph(rng, 5, a=2, b=3) for _ in range(2)]
    batch = collate(graphs)
    y = torch.ones(2, 1, dtype=torch.float64)

    def loss(model, b):
        return cross_entropy_loss(model(b, 0.5, y=y), b, 5.0)

    g1 = gradient(m, batch, loss)
    g2 = gradient(m, batch, lambda model, b: 2 * loss(model, b))
    assert torch.all(g1["null_embedding"] == 0)
    for k in g1:
        assert torch.equal(2 * g1[k], g2[k])


def test_gradient_reports_non_finite():
    m = init_params(SMALL)
    batch = collate([random_graph(np.random.default_rng(0), 4, a=2, b=3)])
    with pytest.raises(FloatingPointError):
        gradient(m, batch, lambda model, b: torch.tensor(float("nan"), requires_grad=True))


def test_finite_differences_small_model():
    rng = np.random.default_rng(4)
    m = init_params(SMALL)
    graphs = [random_graph(rng, int(rng.integers(3, 7)), a=2, b=3) for _ in range(3)]
    batch = (graphs, torch.tensor([0.2, 0.5, 0.8], dtype=torch.float64))
    grads = gradient(m, batch, _loss)
    params = dict(m.named_parameters())
    names = sorted(params)
    h = 1e-4
    for _ in range(20):
        name = names[rng.integers(len(names))]
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        with torch.no_grad():
            old = p[idx].item()
            p[idx] = old + h
            up = _loss(m, batch).item()
            p[idx] = old - h
            down = _loss(m, batch).item()
            p[idx] = old
        fd = (up - down) / (2 * h)
        an = grads[name][idx].item()
        assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an)) + 1e-8


def test_checkpoint_round_trip(tmp_path):
    cfg = DenoiserConfig(**{**SMALL.__dict__, "conditioner_dim": 3})
    m = init_params(cfg)
    arrays = {"extra/a": np.arange(6.0).reshape(2, 3)}
    save_checkpoint(tmp_path / "m.ckpt", m, {"step": 7}, arrays)
    back, extra, arrs = load_checkpoint(tmp_path / "m.ckpt")
    assert back.cfg == cfg and extra == {"step": 7}
    np.testing.assert_array_equal(arrs["extra/a"], arrays["extra/a"])
    for (k, v), (k2, v2) in zip(m.state_dict().items(), back.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    save_checkpoint(tmp_path / "m2.ckpt", back, {"step": 7}, arrays)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x")


def test_float32_precision_round_trip(tmp_path):
    cfg = DenoiserConfig(**{**SMALL.__dict__, "precision": "float32"})
    m = init_params(cfg)
    assert m.mlp_in_x[0].weight.dtype == torch.float32
    out = m(collate([random_graph(np.random.default_rng(0), 5, a=2, b=3)]), 0.5)
    assert out.node_logits.dtype == torch.float32
    save_checkpoint(tmp_path / "m.ckpt", m)
    back, _, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert isinstance(back, Denoiser)
    for v, v2 in zip(m.state_dict().values(), back.state_dict().values()):
        assert v2.dtype == torch.float32 and torch.equal(v, v2)
