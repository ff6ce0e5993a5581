"""Fast oracle and invariant checks run by ``deepoint selftest``.

Each check returns ``(name, passed, detail)``. Sizes are reduced relative
to the test suite so the whole run takes a few seconds.
"""

from __future__ import annotations

import numpy as np
import torch

from .geometry3d import CameraModel, Observation2D, mollweide, project, triangulate
from .model import DeePointNet, ModelConfig, count_parameters
from .skeleton import NUM_JOINTS
from .tokenizer import BODY_CONTEXT_DIM, DESCRIPTOR_DIM, IMAGE_CONTEXT_DIM
from .trainer import loss


def random_batch(cfg: ModelConfig, B: int, rng, dtype=torch.float64, p_mask=0.3, p_pad=0.3) -> dict:
    """Random model input with masked joints and padded slots (current slot valid)."""
    W = cfg.tokens_per_window
    valid = rng.uniform(size=(B, W)) > p_pad
    valid[:, -1] = True
    mask = (rng.uniform(size=(B, W, NUM_JOINTS)) > p_mask) & valid[..., None]
    t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
    return {
        "desc": t(rng.normal(size=(B, W, NUM_JOINTS, DESCRIPTOR_DIM))),
        "relpos": t(rng.normal(size=(B, W, NUM_JOINTS, 2))),
        "mask": torch.as_tensor(mask),
        "body": t(rng.normal(size=(B, W, BODY_CONTEXT_DIM))),
        "image": t(rng.uniform(size=(B, W, IMAGE_CONTEXT_DIM))),
        "valid": torch.as_tensor(valid),
    }


def perturb_hidden(batch: dict, rng, scale=100.0) -> dict:
    """Overwrite every masked joint feature and every padded slot with noise."""
    out = dict(batch)
    hidden_j = (~batch["mask"]).numpy()
    hidden_f = (~batch["valid"]).numpy()
    for k in ("desc", "relpos"):
        x = batch[k].clone()
        noise = torch.as_tensor(rng.normal(scale=scale, size=x.shape), dtype=x.dtype)
        sel = torch.as_tensor(hidden_j | hidden_f[..., None])[..., None]
        out[k] = torch.where(sel, noise, x)
    for k in ("body", "image"):
        x = batch[k].clone()
        noise = torch.as_tensor(rng.normal(scale=scale, size=x.shape), dtype=x.dtype)
        out[k] = torch.where(torch.as_tensor(hidden_f)[..., None], noise, x)
    return out


def random_cameras(rng, n):
    cams = []
    for i in range(n):
        az = rng.uniform(0, 2 * np.pi)
        pos = np.array([4 * np.cos(az), 4 * np.sin(az), rng.uniform(1.5, 3.0)])
        tgt = rng.uniform(-0.5, 0.5, size=3) + np.array([0, 0, 1.2])
        f = rng.uniform(500, 1200)
        cams.append(CameraModel.look_at(f"c{i}", pos, tgt, f, f, (1280, 720)))
    return cams


def check_triangulation(rng, trials=200):
    worst = 0.0
    for _ in range(trials):
        cams = random_cameras(rng, int(rng.integers(2, 7)))
        X = rng.uniform(-1, 1, size=3) + np.array([0, 0, 1.2])
        obs = [Observation2D(c.camera_id, project(c, X), 1.0) for c in cams]
        worst = max(worst, float(np.linalg.norm(triangulate(obs, cams).point - X)))
    return "triangulation round trip", worst < 1e-6, f"max error {worst:.2e} m over {trials} configs"


def check_masked_invariance(rng, trials=10):
    cfg = ModelConfig.toy(variant="DP-BI")
    net = DeePointNet(cfg).double().eval()
    worst = 0.0
    with torch.no_grad():
        for _ in range(trials):
            b = random_batch(cfg, 4, rng)
            o1, o2 = net(b), net(perturb_hidden(b, rng))
            worst = max(worst, float((o1.p - o2.p).abs().max()), float((o1.nu - o2.nu).abs().max()))
    return "masked attention invariance", worst < 1e-12, f"max change {worst:.2e}"


def check_gradients(rng, coords=10, step=1e-4):
    cfg = ModelConfig.toy(embed_dim=8, heads=2, joint_layers=1, temporal_layers=1, window=3)
    torch.manual_seed(int(rng.integers(2**31)))
    net = DeePointNet(cfg).double()
    b = random_batch(cfg, 4, rng)
    y_point = torch.tensor([True, False, True, True])
    y_dir = torch.as_tensor(rng.normal(size=(4, 3)))
    y_dir = y_dir / y_dir.norm(dim=1, keepdim=True)
    has = torch.ones(4, dtype=torch.bool)

    def f():
        return loss(net(b), y_point, y_dir, has)[0]

    net.zero_grad()
    f().backward()
    params = [p for p in net.parameters() if p.grad is not None]
    worst = 0.0
    with torch.no_grad():
        for _ in range(coords):
            p = params[int(rng.integers(len(params)))]
            i = int(rng.integers(p.numel()))
            flat = p.view(-1)
            old = float(flat[i])
            flat[i] = old + step
            up = float(f())
            flat[i] = old - step
            dn = float(f())
            flat[i] = old
            fd = (up - dn) / (2 * step)
            an = float(p.grad.view(-1)[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
    return "loss gradient vs finite differences", worst < 1e-4, f"max relative error {worst:.2e}"


def check_untrained_error(rng, n=2000):
    cfg = ModelConfig.toy()
    torch.manual_seed(int(rng.integers(2**31)))
    net = DeePointNet(cfg).double().eval()
    with torch.no_grad():
        nu = net(random_batch(cfg, n, rng)).nu.numpy()
    g = rng.normal(size=(n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    err = float(np.degrees(np.arccos(np.clip((nu * g).sum(1), -1, 1))).mean())
    return "untrained direction error", abs(err - 90) < 3 * np.sqrt(2000 / n), f"{err:.2f} deg over {n} windows"


def check_parameter_anchors():
    te = count_parameters(ModelConfig.full_scale())["temporal"]
    mlp = count_parameters(ModelConfig.full_scale(ablation="no_temporal_encoder"))["temporal"]
    ok = abs(te / 3.1e6 - 1) <= 0.10 and abs(mlp / 3.8e6 - 1) <= 0.05
    return "parameter anchors", ok, f"temporal encoder {te:,}; window MLP {mlp:,}"


def check_mollweide():
    x, y = mollweide(0.0, np.pi / 2)
    ok = abs(x) < 1e-12 and abs(y - np.sqrt(2)) < 1e-9
    return "mollweide pole", ok, f"(x, y) = ({x:.3g}, {y:.12f})"


def run_selftest(seed: int = 0):
    rng = np.random.default_rng(seed)
    return [check_triangulation(rng), check_masked_invariance(rng), check_gradients(rng),
            check_untrained_error(rng), check_parameter_anchors(), check_mollweide()]
