import math

import numpy as np
import pytest
import torch

from gestsynth.errors import ConfigError, ShapeError, TrainingError
from gestsynth.motion import FRAME_WIDTH
from gestsynth.semantic import (AlignConfig, AlignData, LatentCode,
                                SemanticAligner, nt_xent_loss, retrieval_top1,
                                train_alignment)


def test_uniform_similarity_gives_log_k():
    # all pairs identical -> every logit equal -> softmax uniform -> log K
    for k in (2, 8, 64):
        z = torch.ones(k, 16)
        loss = float(nt_xent_loss(z, z.clone()))
        assert loss == pytest.approx(math.log(k), abs=1e-6), k


def test_orthonormal_pairs_oracle():
    # diagonal cosine 1, off-diagonal 0: closed form log(1 + (K-1) e^{-1/tau})
    k, tau = 8, 0.07
    z = torch.eye(k, 16, dtype=torch.float64)
    loss = float(nt_xent_loss(z, z.clone(), tau=tau))
    want = math.log(1.0 + (k - 1) * math.exp(-1.0 / tau))
    assert loss == pytest.approx(want, rel=1e-9)
    # float32 keeps the same value to within additive rounding noise
    loss32 = float(nt_xent_loss(z.float(), z.float(), tau=tau))
    assert loss32 == pytest.approx(want, abs=5e-7)


def test_loss_decreases_monotonically_in_positive_logit():
    # rotate pair 0's gesture code toward its text code; everything else fixed
    k = 6
    g = torch.Generator().manual_seed(0)
    z_text = torch.randn(k, 12, generator=g)
    base = torch.randn(k, 12, generator=g)
    losses = []
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        z_g = base.clone()
        z_g[0] = (1 - lam) * base[0] + lam * z_text[0] * base[0].norm() / z_text[0].norm()
        losses.append(float(nt_xent_loss(z_text, z_g)))
    assert all(a > b for a, b in zip(losses, losses[1:])), losses


def test_loss_is_scale_invariant():
    g = torch.Generator().manual_seed(1)
    zt = torch.randn(5, 8, generator=g)
    zg = torch.randn(5, 8, generator=g)
    a = float(nt_xent_loss(zt, zg))
    b = float(nt_xent_loss(3.7 * zt, 0.2 * zg))
    assert a == pytest.approx(b, abs=1e-6)


def test_loss_input_validation():
    z = torch.randn(4, 8)
    with pytest.raises(ConfigError):
        nt_xent_loss(z, z, tau=0.0)
    with pytest.raises(ConfigError):
        nt_xent_loss(z[:1], z[:1])
    with pytest.raises(ShapeError):
        nt_xent_loss(z, z[:, :4])


def test_latent_code_modality_check():
    LatentCode(np.zeros(4), "text")
    with pytest.raises(ConfigError):
        LatentCode(np.zeros(4), "audio")


def test_align_config_validation_and_round_trip():
    cfg = AlignConfig(latent_dim=16)
    assert AlignConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        AlignConfig(tau=-1.0)
    with pytest.raises(ConfigError):
        AlignConfig(holdout_frac=0.5)


def _tiny_aligner(vocab=12, **kw):
    torch.manual_seed(0)
    cfg = AlignConfig(latent_dim=16, hidden=32, text_width=16, text_heads=2,
                      vae_steps=40, joint_steps=120, batch_size=16, lr=2e-3,
                      holdout_frac=0.25, **kw)
    return SemanticAligner(cfg, vocab_size=vocab)


def test_gesture_pooling_respects_mask():
    aligner = _tiny_aligner().eval()
    g = torch.Generator().manual_seed(2)
    frames = torch.randn(1, 10, FRAME_WIDTH, generator=g)
    mask = torch.ones(1, 10)
    mask[0, 6:] = 0.0
    with torch.no_grad():
        pooled = aligner.encode_gesture(frames, mask)
        junk = frames.clone()
        junk[0, 6:] = 99.0  # garbage beyond the valid region
        pooled_junk = aligner.encode_gesture(junk, mask)
        truncated = aligner.encode_gesture(frames[:, :6], torch.ones(1, 6))
    torch.testing.assert_close(pooled, pooled_junk)
    torch.testing.assert_close(pooled, truncated, rtol=1e-5, atol=1e-6)
    with pytest.raises(ShapeError):
        aligner.encode_gesture(frames[0])


def test_text_encoder_ignores_padding():
    aligner = _tiny_aligner().eval()
    with torch.no_grad():
        short = aligner.encode_text(torch.tensor([[3, 5]]))
        padded = aligner.encode_text(torch.tensor([[3, 5, 0, 0, 0]]))
    torch.testing.assert_close(short, padded, rtol=1e-5, atol=1e-6)


def test_vae_losses_are_finite_and_mask_aware():
    aligner = _tiny_aligner()
    g = torch.Generator().manual_seed(3)
    frames = torch.randn(4, 8, FRAME_WIDTH, generator=g)
    mask = torch.ones(4, 8)
    with torch.no_grad():
        rec, kl = aligner.vae_losses(frames, mask, torch.Generator().manual_seed(0))
    assert torch.isfinite(rec) and torch.isfinite(kl)
    assert float(rec) > 0 and float(kl) >= 0


def _decodable_data(m=48, n=6, vocab=12, seed=4):
    # clip content is a per-word bump pattern, so text<->gesture is learnable
    g = torch.Generator().manual_seed(seed)
    words = torch.randint(2, vocab, (m,), generator=g)
    clips = 0.05 * torch.randn(m, n, FRAME_WIDTH, generator=g)
    for i, w in enumerate(words):
        lo = int(w) * 60
        clips[i, :, lo:lo + 60] += 1.0
    tokens = torch.zeros(m, 3, dtype=torch.long)
    tokens[:, 0] = words
    return AlignData(clips=clips, masks=torch.ones(m, n), tokens=tokens)


def test_train_alignment_reaches_gate_and_freezes():
    aligner = _tiny_aligner()
    report = train_alignment(aligner, _decodable_data(), seed=6)
    n_hold = report["holdout_size"]
    assert report["holdout_top1"] >= 2.0 / n_hold
    assert len(report["history"]["joint"]) == aligner.config.joint_steps
    aligner.freeze()
    assert not any(p.requires_grad for p in aligner.parameters())


def test_train_alignment_gate_rejects_shuffled_pairs():
    aligner = _tiny_aligner()
    data = _decodable_data(m=32)
    data.tokens = data.tokens[torch.randperm(32, generator=torch.Generator().manual_seed(9))]
    with pytest.raises(TrainingError):
        train_alignment(aligner, data, seed=6)


def test_train_alignment_needs_enough_clips():
    aligner = _tiny_aligner()
    with pytest.raises(ConfigError):
        train_alignment(aligner, _decodable_data(m=3), seed=0)


def test_retrieval_top1_oracle():
    z = torch.eye(4, 8)
    assert retrieval_top1(z, z) == 1.0
    rolled = torch.roll(z, 1, dims=0)
    assert retrieval_top1(z, rolled) == 0.0
