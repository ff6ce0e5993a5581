import math

import numpy as np
import pytest
import torch
from scipy.special import erf

from deepoint.errors import EmptyWindow
from deepoint.model import (
    DeePointNet,
    Head,
    JointEncoder,
    ModelConfig,
    TemporalEncoder,
    count_parameters,
    encoder_parameter_formula,
    normalize_direction,
    parse_ablation,
)
from deepoint.selftest import perturb_hidden, random_batch
from deepoint.skeleton import JOINT_INDEX, NUM_JOINTS
from deepoint.tokenizer import FrameTokens
from deepoint.trainer import loss

torch.set_default_dtype(torch.float32)


def np_(t):
    return t.detach().numpy().astype(np.float64)


# ---------------------------------------------------------------- independent oracle


def ln(x, w, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * w + b


def gelu(x):
    return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def oracle_encoder(enc, x, key_mask):
    """Single-head pre-norm encoder unrolled by hand from the module weights."""
    for layer in enc.layers:
        h = ln(x, np_(layer.norm1.weight), np_(layer.norm1.bias))
        Wqkv, bqkv = np_(layer.attn.qkv.weight), np_(layer.attn.qkv.bias)
        d = x.shape[-1]
        q = h @ Wqkv[:d].T + bqkv[:d]
        k = h @ Wqkv[d:2 * d].T + bqkv[d:2 * d]
        v = h @ Wqkv[2 * d:].T + bqkv[2 * d:]
        out = np.zeros_like(x)
        for i in range(x.shape[0]):
            s = np.array([q[i] @ k[j] / math.sqrt(d) if key_mask[j] else -np.inf for j in range(x.shape[0])])
            w = np.exp(s - s.max())
            w /= w.sum()
            out[i] = sum(w[j] * v[j] for j in range(x.shape[0]))
        x = x + out @ np_(layer.attn.out.weight).T + np_(layer.attn.out.bias)
        h = ln(x, np_(layer.norm2.weight), np_(layer.norm2.bias))
        f1, f2 = layer.ffn[0], layer.ffn[2]
        x = x + gelu(h @ np_(f1.weight).T + np_(f1.bias)) @ np_(f2.weight).T + np_(f2.bias)
    return ln(x, np_(enc.norm.weight), np_(enc.norm.bias))


ORACLE_CFG = ModelConfig(embed_dim=8, joint_layers=1, temporal_layers=1, heads=1, window=4)


def test_joint_encoder_matches_hand_unrolled_oracle():
    torch.manual_seed(0)
    je = JointEncoder(ORACLE_CFG).double()
    rng = np.random.default_rng(0)
    tok = rng.normal(size=(NUM_JOINTS, 8))
    mask = rng.uniform(size=NUM_JOINTS) > 0.3
    tok[~mask] = 0
    extras = rng.normal(size=8)
    ft = FrameTokens(torch.as_tensor(tok)[None], torch.as_tensor(mask)[None], torch.as_tensor(extras)[None],
                     torch.zeros(1, NUM_JOINTS, 2, dtype=torch.float64))
    got = np_(je(ft)[0])
    x = np.vstack([np_(je.class_token) + extras, tok])
    km = np.concatenate([[True], mask])
    exp = oracle_encoder(je.encoder, x, km)[0]
    np.testing.assert_allclose(got, exp, atol=1e-6)


def test_temporal_encoder_matches_hand_unrolled_oracle():
    torch.manual_seed(1)
    te = TemporalEncoder(ORACLE_CFG).double()
    rng = np.random.default_rng(1)
    seq = rng.normal(size=(4, 8))
    valid = np.array([False, True, True, True])
    got = np_(te(torch.as_tensor(seq)[None], torch.as_tensor(valid)[None])[0])
    x = seq + np_(te.position)
    x[~valid] = 0
    exp = oracle_encoder(te.encoder, x, valid)[-1]
    np.testing.assert_allclose(got, exp, atol=1e-6)


# ---------------------------------------------------------------- invariances


@pytest.mark.parametrize("variant", ["DP", "DP-B", "DP-BI"])
def test_masked_and_padded_inputs_do_not_matter(variant):
    rng = np.random.default_rng(2)
    cfg = ModelConfig.toy(variant=variant)
    torch.manual_seed(2)
    net = DeePointNet(cfg).double().eval()
    with torch.no_grad():
        for _ in range(5):
            b = random_batch(cfg, 3, rng)
            o1, o2 = net(b), net(perturb_hidden(b, rng, scale=1e3))
            assert (o1.p - o2.p).abs().max() < 1e-12
            assert (o1.nu - o2.nu).abs().max() < 1e-12


def test_joint_permutation_invariance():
    torch.manual_seed(3)
    je = JointEncoder(ModelConfig.toy()).double()
    rng = np.random.default_rng(3)
    tok = torch.as_tensor(rng.normal(size=(2, NUM_JOINTS, 32)))
    mask = torch.ones(2, NUM_JOINTS, dtype=torch.bool)
    mask[:, 4] = False
    tok[:, 4] = 0
    ft = FrameTokens(tok, mask, torch.zeros(2, 32, dtype=torch.float64), torch.zeros(2, NUM_JOINTS, 2))
    perm = list(range(NUM_JOINTS))
    perm[1], perm[9] = perm[9], perm[1]
    ft2 = FrameTokens(tok[:, perm], mask[:, perm], ft.class_extras, ft.relpos[:, perm])
    torch.testing.assert_close(je(ft), je(ft2), atol=1e-12, rtol=0)


def test_all_joints_masked_still_finite():
    torch.manual_seed(4)
    je = JointEncoder(ModelConfig.toy()).double()
    ft = FrameTokens(torch.zeros(1, NUM_JOINTS, 32, dtype=torch.float64), torch.zeros(1, NUM_JOINTS, dtype=torch.bool),
                     torch.zeros(1, 32, dtype=torch.float64), torch.zeros(1, NUM_JOINTS, 2))
    assert torch.isfinite(je(ft)).all()


def test_window_of_one_is_per_frame_transform():
    cfg = ModelConfig.toy(window=1)
    torch.manual_seed(5)
    te = TemporalEncoder(cfg).double()
    x = torch.randn(3, 1, 32, dtype=torch.float64)
    out = te(x)
    assert out.shape == (3, 32)
    torch.testing.assert_close(te(x[1:2]), out[1:2])
    with pytest.raises(EmptyWindow):
        te(torch.zeros(1, 0, 32, dtype=torch.float64))


# ---------------------------------------------------------------- head


def test_head_saturation_and_normalization():
    h = Head(4).double()
    with torch.no_grad():
        for m in (h.cls[2], h.dir[2]):
            m.weight.zero_()
        h.cls[2].bias.copy_(torch.tensor([10.0, -10.0]))
        h.dir[2].bias.copy_(torch.tensor([0.0, 0.0, 5.0]))
    out = h(torch.zeros(1, 4, dtype=torch.float64))
    assert out.p.item() > 0.9999
    torch.testing.assert_close(out.nu[0], torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64))
    assert not out.zero_direction.any()


def test_zero_direction_uses_fallback_axis():
    nu, flag = normalize_direction(torch.zeros(2, 3, dtype=torch.float64))
    assert flag.all()
    torch.testing.assert_close(nu, torch.tensor([[0.0, 0.0, 1.0]] * 2, dtype=torch.float64))


def test_output_contract():
    rng = np.random.default_rng(6)
    cfg = ModelConfig.toy()
    net = DeePointNet(cfg).double()
    with torch.no_grad():
        out = net(random_batch(cfg, 64, rng))
    assert ((out.p >= 0) & (out.p <= 1)).all()
    torch.testing.assert_close(out.nu.norm(dim=1), torch.ones(64, dtype=torch.float64), atol=1e-9, rtol=0)
    q = out.logits.softmax(-1)
    torch.testing.assert_close(q[:, 0] + q[:, 1], torch.ones(64, dtype=torch.float64), atol=1e-15, rtol=0)


# ---------------------------------------------------------------- ablations


def test_body_part_masks():
    assert parse_ablation("body_part_mask:hand")[1] == (JOINT_INDEX["left_wrist"], JOINT_INDEX["right_wrist"])
    hh = set(parse_ablation("body_part_mask:hand_head")[1])
    names = {"nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_wrist", "right_wrist"}
    assert hh == {JOINT_INDEX[n] for n in names}
    assert parse_ablation("body_part_mask:{left_hand,right_hand}") == parse_ablation("body_part_mask:hand")
    with pytest.raises(ValueError):
        parse_ablation("bogus")


def test_hand_mask_ignores_other_joints():
    rng = np.random.default_rng(7)
    cfg = ModelConfig.toy(ablation="body_part_mask:hand")
    net = DeePointNet(cfg).double().eval()
    b = random_batch(cfg, 2, rng, p_mask=0.0, p_pad=0.0)
    b2 = dict(b)
    desc = b["desc"].clone()
    keep = [JOINT_INDEX["left_wrist"], JOINT_INDEX["right_wrist"]]
    others = [j for j in range(NUM_JOINTS) if j not in keep]
    desc[:, :, others] = torch.as_tensor(rng.normal(size=desc[:, :, others].shape))
    b2["desc"] = desc
    with torch.no_grad():
        torch.testing.assert_close(net(b).nu, net(b2).nu, atol=1e-12, rtol=0)


def test_ablation_mlp_full_scale_widths():
    net = DeePointNet(ModelConfig.full_scale(ablation="no_temporal_encoder"))
    assert net.temporal.sizes == (2880, 960, 960, 192)


def test_exclusive_past_window():
    cfg = ModelConfig.toy(window=5, exclusive_past=True)
    assert cfg.tokens_per_window == 6
    assert ModelConfig.toy(window=5).tokens_per_window == 5


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(window=0)
    with pytest.raises(ValueError):
        ModelConfig(variant="DP-X")
    cfg = ModelConfig.toy(window=7)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- parameter counts


def _encoder_count_oracle(d, f):
    # per layer: norm1, qkv, out, norm2, ffn in, ffn out; then the final norm
    return (2 * d) + (3 * d * d + 3 * d) + (d * d + d) + (2 * d) + (d * f + f) + (f * d + d) + 2 * d


@pytest.mark.parametrize("d", [8, 16, 32])
def test_encoder_count_closed_form(d):
    cfg = ModelConfig(embed_dim=d, joint_layers=1, temporal_layers=1, heads=1, window=3)
    got = count_parameters(cfg)["temporal"]
    assert got == _encoder_count_oracle(d, cfg.ffn_dim) + 3 * d
    assert encoder_parameter_formula(d, 1, cfg.ffn_dim) == _encoder_count_oracle(d, cfg.ffn_dim)


def test_full_scale_anchors():
    te = count_parameters(ModelConfig.full_scale())["temporal"]
    mlp = count_parameters(ModelConfig.full_scale(ablation="no_temporal_encoder"))["temporal"]
    assert abs(te / 3.1e6 - 1) <= 0.10
    assert abs(mlp / 3.8e6 - 1) <= 0.05


# ---------------------------------------------------------------- gradients and baseline


def test_untrained_direction_error_near_ninety():
    rng = np.random.default_rng(8)
    cfg = ModelConfig.toy()
    torch.manual_seed(8)
    net = DeePointNet(cfg).double().eval()
    n = 10_000
    nus = []
    with torch.no_grad():
        for _ in range(n // 1000):
            nus.append(net(random_batch(cfg, 1000, rng)).nu.numpy())
    nu = np.concatenate(nus)
    g = rng.normal(size=(n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    err = np.degrees(np.arccos(np.clip((nu * g).sum(1), -1, 1))).mean()
    assert abs(err - 90) < 3


def test_gradients_match_central_differences():
    rng = np.random.default_rng(9)
    cfg = ModelConfig(embed_dim=8, joint_layers=1, temporal_layers=1, heads=2, window=3, variant="DP-BI")
    torch.manual_seed(9)
    net = DeePointNet(cfg).double()
    b = random_batch(cfg, 6, rng)
    y_point = torch.tensor([True, False, True, True, False, True])
    y_dir = torch.as_tensor(rng.normal(size=(6, 3)))
    y_dir /= y_dir.norm(dim=1, keepdim=True)
    has = torch.tensor([True, True, True, False, True, True])

    def f():
        return loss(net(b), y_point, y_dir, has)[0]

    f().backward()
    params = [(n, p) for n, p in net.named_parameters() if p.grad is not None]
    sizes = np.array([p.numel() for _, p in params], dtype=float)
    h = 1e-4
    worst = 0.0
    with torch.no_grad():
        for _ in range(100):
            _, p = params[rng.choice(len(params), p=sizes / sizes.sum())]
            i = int(rng.integers(p.numel()))
            flat = p.view(-1)
            old = flat[i].item()
            flat[i] = old + h
            up = f().item()
            flat[i] = old - h
            dn = f().item()
            flat[i] = old
            fd = (up - dn) / (2 * h)
            an = p.grad.view(-1)[i].item()
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    assert worst < 1e-4
