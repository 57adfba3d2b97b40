"""Latent alignment between transcripts and gesture clips.

A small per-frame VAE embeds motion; pooling the posterior means over
unmasked frames gives one code per clip. A transcript encoder maps token
ids into the same space. Training runs two phases: reconstruction-only
warmup for the VAE, then joint contrastive alignment (NT-Xent with
in-batch gesture negatives) with the reconstruction term kept on as a
regularizer. The frozen pair later serves two customers: the denoiser's
semantic conditioning stream and the alignment score used in evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError, TrainingError
from .motion import FRAME_WIDTH


def nt_xent_loss(z_text: torch.Tensor, z_gesture: torch.Tensor,
                 tau: float = 0.07) -> torch.Tensor:
    """Contrastive loss over a batch of aligned (text, gesture) code pairs.

    Row i of each matrix describes the same clip. Codes are L2-normalized,
    similarities scaled by 1/tau, and each text code must pick out its own
    gesture among the batch (gesture-side negatives only).
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if z_text.shape != z_gesture.shape:
        raise ShapeError(
            f"code shapes differ: {tuple(z_text.shape)} vs {tuple(z_gesture.shape)}")
    k = z_text.shape[0]
    if k < 2:
        raise ConfigError("contrastive loss needs at least 2 pairs")
    zt = F.normalize(z_text, dim=-1)
    zg = F.normalize(z_gesture, dim=-1)
    logits = zt @ zg.t() / tau
    return F.cross_entropy(logits, torch.arange(k, device=logits.device))


@dataclass(frozen=True)
class LatentCode:
    vector: np.ndarray
    modality: str  # "text" | "gesture"

    def __post_init__(self):
        if self.modality not in ("text", "gesture"):
            raise ConfigError(f"unknown modality {self.modality!r}")


@dataclass
class AlignConfig:
    latent_dim: int = 256
    hidden: int = 256
    text_width: int = 128
    text_heads: int = 2
    vae_steps: int = 300
    joint_steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    tau: float = 0.07
    kl_weight: float = 1e-4
    recon_weight: float = 1.0
    holdout_frac: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0.0 < self.holdout_frac < 0.5:
            raise ConfigError("holdout_frac must lie in (0, 0.5)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "AlignConfig":
        return cls(**d)


class SemanticAligner(nn.Module):
    """Gesture VAE + transcript encoder sharing one latent space."""

    def __init__(self, config: AlignConfig, vocab_size: int):
        super().__init__()
        self.config = config
        d, h = config.latent_dim, config.hidden
        self.enc = nn.Sequential(nn.Linear(FRAME_WIDTH, h), nn.GELU())
        self.enc_mu = nn.Linear(h, d)
        self.enc_logvar = nn.Linear(h, d)
        self.dec = nn.Sequential(nn.Linear(d, h), nn.GELU(),
                                 nn.Linear(h, FRAME_WIDTH))
        tw = config.text_width
        self.text_embedding = nn.Embedding(vocab_size, tw, padding_idx=0)
        layer = nn.TransformerEncoderLayer(
            d_model=tw, nhead=config.text_heads, dim_feedforward=2 * tw,
            dropout=0.0, activation="gelu", batch_first=True, norm_first=True)
        self.text_trunk = nn.TransformerEncoder(layer, 1, norm=nn.LayerNorm(tw),
                                                enable_nested_tensor=False)
        self.text_out = nn.Linear(tw, d)
        self.vocab_size = vocab_size

    def frame_posterior(self, frames: torch.Tensor):
        h = self.enc(frames)
        return self.enc_mu(h), self.enc_logvar(h)

    def encode_gesture(self, frames: torch.Tensor,
                       mask: torch.Tensor | None = None) -> torch.Tensor:
        """(B, N, 994)[, (B, N)] -> (B, D) pooled posterior mean."""
        if frames.ndim != 3 or frames.shape[-1] != FRAME_WIDTH:
            raise ShapeError(f"expected (B, N, {FRAME_WIDTH}), got {tuple(frames.shape)}")
        mu, _ = self.frame_posterior(frames)
        if mask is None:
            return mu.mean(dim=1)
        m = mask.float().unsqueeze(-1)
        return (mu * m).sum(1) / m.sum(1).clamp(min=1.0)

    def encode_text(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, L) token ids, 0 = pad -> (B, D)."""
        emb = self.text_embedding(tokens)
        pad = tokens == 0
        h = self.text_trunk(emb, src_key_padding_mask=pad)
        valid = (~pad).float().unsqueeze(-1)
        pooled = (h * valid).sum(1) / valid.sum(1).clamp(min=1.0)
        return self.text_out(pooled)

    def vae_losses(self, frames: torch.Tensor, mask: torch.Tensor,
                   gen: torch.Generator):
        mu, logvar = self.frame_posterior(frames)
        eps = torch.randn(mu.shape, generator=gen, device=mu.device)
        z = mu + torch.exp(0.5 * logvar) * eps
        recon = self.dec(z)
        m = mask.float().unsqueeze(-1)
        denom = m.sum() * FRAME_WIDTH
        rec = (((recon - frames) ** 2) * m).sum() / denom
        kl = (-0.5 * (1 + logvar - mu ** 2 - logvar.exp()) * m).sum() / denom
        return rec, kl

    def freeze(self) -> "SemanticAligner":
        self.requires_grad_(False)
        self.eval()
        return self


@dataclass
class AlignData:
    clips: torch.Tensor   # (M, N, 994) standardized
    masks: torch.Tensor   # (M, N)
    tokens: torch.Tensor  # (M, L) long

    def __len__(self) -> int:
        return self.clips.shape[0]


def retrieval_top1(z_text: torch.Tensor, z_gesture: torch.Tensor) -> float:
    """Fraction of text codes whose nearest gesture code (cosine) is their own."""
    zt = F.normalize(z_text, dim=-1)
    zg = F.normalize(z_gesture, dim=-1)
    hits = (zt @ zg.t()).argmax(dim=1) == torch.arange(zt.shape[0])
    return float(hits.float().mean())


def train_alignment(aligner: SemanticAligner, data: AlignData,
                    seed: int = 0) -> dict:
    """Two-phase training; returns history plus held-out retrieval accuracy.

    Raises TrainingError when held-out top-1 retrieval ends below twice
    chance level: an encoder that weak would poison both the denoiser's
    semantic stream and the evaluation metrics built on top of it.
    """
    cfg = aligner.config
    m = len(data)
    if m < 4:
        raise ConfigError("alignment needs at least 4 clips")
    n_hold = max(2, int(round(m * cfg.holdout_frac)))
    order = np.random.default_rng(seed).permutation(m)
    hold, train = order[:n_hold], order[n_hold:]
    gen = torch.Generator().manual_seed(seed)
    batch_rng = np.random.default_rng(seed ^ 0x5DEECE66D)
    opt = torch.optim.AdamW(aligner.parameters(), lr=cfg.lr)
    history = {"vae": [], "joint": []}

    def batch_idx():
        take = min(cfg.batch_size, len(train))
        return torch.from_numpy(batch_rng.choice(train, size=take, replace=False))

    aligner.train()
    for _ in range(cfg.vae_steps):
        idx = batch_idx()
        rec, kl = aligner.vae_losses(data.clips[idx], data.masks[idx], gen)
        loss = rec + cfg.kl_weight * kl
        opt.zero_grad(); loss.backward(); opt.step()
        history["vae"].append(float(loss.detach()))

    for _ in range(cfg.joint_steps):
        idx = batch_idx()
        rec, kl = aligner.vae_losses(data.clips[idx], data.masks[idx], gen)
        zg = aligner.encode_gesture(data.clips[idx], data.masks[idx])
        zt = aligner.encode_text(data.tokens[idx])
        con = nt_xent_loss(zt, zg, cfg.tau)
        loss = con + cfg.recon_weight * (rec + cfg.kl_weight * kl)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite alignment loss: {float(loss)!r}")
        opt.zero_grad(); loss.backward(); opt.step()
        history["joint"].append(float(loss.detach()))

    aligner.eval()
    hold_t = torch.from_numpy(hold)
    with torch.no_grad():
        zg = aligner.encode_gesture(data.clips[hold_t], data.masks[hold_t])
        zt = aligner.encode_text(data.tokens[hold_t])
        top1 = retrieval_top1(zt, zg)
    chance = 1.0 / n_hold
    if top1 < 2.0 * chance:
        raise TrainingError(
            f"held-out retrieval top-1 {top1:.3f} below twice chance "
            f"({2.0 * chance:.3f}); alignment did not converge")
    return {"history": history, "holdout_top1": top1, "holdout_size": n_hold}
