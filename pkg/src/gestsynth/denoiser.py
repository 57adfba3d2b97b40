"""The gesture denoiser: condition encoders, transformer trunk, training loop.

Condition routing. Two per-frame streams are built from the bundle:

    semantic stream  S = pooled text embedding + projected transcript latent
    melody stream    M = projected per-frame audio features

Absent modalities contribute a learned null vector instead (never zeros).
The trunk sees frame tokens with the streams injected at partition-averaged
gains, plus one prepended token carrying timestep + seed posture; each
output head re-injects the streams at its own partition's gains
(w_sem_fingers/w_mel_fingers for finger channels, w_sem_limbs/w_mel_limbs
for limb channels + contacts). Consequence used by the ablation tests:
with w_sem_fingers = w_sem_limbs = 0 and a null semantic latent, the
transcript cannot reach the output at all, so predictions are exactly
transcript-invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .diffusion import NoiseSchedule, huber_loss
from .errors import ConditionError, ConfigError, ShapeError, TrainingError
from .motion import FRAME_WIDTH, partition_channel_indices
from .skeleton import canonical_partition


def sinusoidal_embedding(positions: torch.Tensor, dim: int,
                         max_period: float = 10_000.0) -> torch.Tensor:
    """(...,) -> (..., dim) fixed sin/cos features."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) *
                      torch.arange(half, dtype=torch.float32, device=positions.device) / half)
    args = positions.float().unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


@dataclass
class DenoiserConfig:
    layers: int = 12
    width: int = 512
    heads: int = 8
    ff_mult: int = 2
    seed_frames: int = 20
    w_sem_fingers: float = 1.0
    w_mel_fingers: float = 0.3
    w_sem_limbs: float = 0.3
    w_mel_limbs: float = 1.0
    audio_dim: int = 80
    semantic_dim: int = 256
    vocab_size: int = 64
    max_text_len: int = 20
    n_frames: int = 180
    dropout_modality: float = 0.1
    dropout_seed: float = 0.5

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"need at least 1 layer, got {self.layers}")
        for name in ("w_sem_fingers", "w_mel_fingers", "w_sem_limbs", "w_mel_limbs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.seed_frames >= self.n_frames:
            raise ConfigError("seed_frames must be shorter than the window")

    @classmethod
    def desk(cls, **overrides) -> "DenoiserConfig":
        base = {"layers": 4, "width": 256, "heads": 4}
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper(cls, **overrides) -> "DenoiserConfig":
        return cls(**overrides)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


@dataclass
class ConditionBundle:
    """Batched conditions; None entries must be fully covered by null flags.

    Flags are per item: a True flag makes the model substitute its learned
    null embedding for that item's modality, which is also the dropout path.
    """

    t: torch.Tensor                          # (B,) long, 1-based
    seed_pose: torch.Tensor | None = None    # (B, S, 994)
    text_tokens: torch.Tensor | None = None  # (B, L) long, 0 = pad
    audio_feat: torch.Tensor | None = None   # (B, N, A), time-aligned
    semantic_latent: torch.Tensor | None = None  # (B, D)
    null_seed: torch.Tensor = None           # (B,) bool
    null_text: torch.Tensor = None
    null_audio: torch.Tensor = None
    null_semantic: torch.Tensor = None

    @property
    def batch(self) -> int:
        return self.t.shape[0]


def _flags(override, present: bool, b: int) -> torch.Tensor:
    if override is not None:
        return override.bool()
    return torch.zeros(b, dtype=torch.bool) if present else torch.ones(b, dtype=torch.bool)


def encode_conditions(
    t: torch.Tensor,
    seed_pose: torch.Tensor | None = None,
    text_tokens: torch.Tensor | None = None,
    audio_feat: torch.Tensor | None = None,
    semantic_latent: torch.Tensor | None = None,
    *,
    n_frames: int = 180,
    max_text_len: int = 20,
    null_seed: torch.Tensor | None = None,
    null_text: torch.Tensor | None = None,
    null_audio: torch.Tensor | None = None,
    null_semantic: torch.Tensor | None = None,
    require_modality: bool = True,
) -> ConditionBundle:
    """Normalize raw conditions into a ConditionBundle.

    Text is truncated to max_text_len tokens; audio features are linearly
    interpolated along time to exactly n_frames rows (endpoints preserved).
    With require_modality, items whose text and audio are both null are
    rejected: some modality has to drive generation at inference.
    """
    b = t.shape[0]
    if text_tokens is not None and text_tokens.shape[1] > max_text_len:
        text_tokens = text_tokens[:, :max_text_len]
    if audio_feat is not None and audio_feat.shape[1] != n_frames:
        audio_feat = torch.nn.functional.interpolate(
            audio_feat.transpose(1, 2), size=n_frames,
            mode="linear", align_corners=True,
        ).transpose(1, 2)
    bundle = ConditionBundle(
        t=t,
        seed_pose=seed_pose,
        text_tokens=text_tokens,
        audio_feat=audio_feat,
        semantic_latent=semantic_latent,
        null_seed=_flags(null_seed, seed_pose is not None, b),
        null_text=_flags(null_text, text_tokens is not None, b),
        null_audio=_flags(null_audio, audio_feat is not None, b),
        null_semantic=_flags(null_semantic, semantic_latent is not None, b),
    )
    if require_modality and bool((bundle.null_text & bundle.null_audio).any()):
        raise ConditionError("each item needs text or audio conditioning")
    return bundle


class GestureDenoiser(nn.Module):
    """Predicts x0 from (x_t, t, conditions); output shape equals input shape."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.t_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
        self.seed_proj = nn.Linear(FRAME_WIDTH, w)
        self.text_embedding = nn.Embedding(config.vocab_size, w, padding_idx=0)
        self.text_proj = nn.Linear(w, w)
        self.sem_proj = nn.Linear(config.semantic_dim, w)
        self.audio_proj = nn.Linear(config.audio_dim, w)
        self.x_proj = nn.Linear(FRAME_WIDTH, w)
        self.null_seed = nn.Parameter(torch.zeros(w))
        self.null_text = nn.Parameter(torch.zeros(w))
        self.null_audio = nn.Parameter(torch.zeros(w))
        self.null_semantic = nn.Parameter(torch.zeros(w))
        layer = nn.TransformerEncoderLayer(
            d_model=w, nhead=config.heads, dim_feedforward=config.ff_mult * w,
            dropout=0.0, activation="gelu", batch_first=True, norm_first=True,
        )
        self.trunk = nn.TransformerEncoder(layer, config.layers,
                                           norm=nn.LayerNorm(w),
                                           enable_nested_tensor=False)
        fingers, limbs = partition_channel_indices(canonical_partition())
        self.register_buffer("finger_cols", torch.as_tensor(fingers), persistent=False)
        self.register_buffer("limb_cols", torch.as_tensor(limbs), persistent=False)
        self.head_fingers = nn.Sequential(
            nn.Linear(w, w), nn.GELU(), nn.Linear(w, len(fingers)))
        self.head_limbs = nn.Sequential(
            nn.Linear(w, w), nn.GELU(), nn.Linear(w, len(limbs)))

    def _semantic_stream(self, cond: ConditionBundle) -> torch.Tensor:
        b = cond.batch
        if cond.text_tokens is not None:
            emb = self.text_embedding(cond.text_tokens)          # (B, L, W)
            valid = (cond.text_tokens != 0).float().unsqueeze(-1)
            pooled = (emb * valid).sum(1) / valid.sum(1).clamp(min=1.0)
            text_vec = self.text_proj(pooled)
        else:
            text_vec = torch.zeros(b, self.config.width)
        text_vec = torch.where(cond.null_text.unsqueeze(-1),
                               self.null_text.expand(b, -1), text_vec)
        if cond.semantic_latent is not None:
            sem_vec = self.sem_proj(cond.semantic_latent)
        else:
            sem_vec = torch.zeros(b, self.config.width)
        sem_vec = torch.where(cond.null_semantic.unsqueeze(-1),
                              self.null_semantic.expand(b, -1), sem_vec)
        return text_vec + sem_vec

    def _melody_stream(self, cond: ConditionBundle, n: int) -> torch.Tensor:
        b = cond.batch
        if cond.audio_feat is not None:
            if cond.audio_feat.shape[1] != n:
                raise ShapeError(
                    f"audio features cover {cond.audio_feat.shape[1]} frames, "
                    f"clip has {n}")
            mel = self.audio_proj(cond.audio_feat)
        else:
            mel = torch.zeros(b, n, self.config.width)
        null = cond.null_audio.view(b, 1, 1)
        return torch.where(null, self.null_audio.expand(b, n, -1), mel)

    def _condition_token(self, t: torch.Tensor, cond: ConditionBundle) -> torch.Tensor:
        b = cond.batch
        temb = self.t_mlp(sinusoidal_embedding(t, self.config.width))
        if cond.seed_pose is not None:
            seed_vec = self.seed_proj(cond.seed_pose).mean(dim=1)
        else:
            seed_vec = torch.zeros(b, self.config.width)
        seed_vec = torch.where(cond.null_seed.unsqueeze(-1),
                               self.null_seed.expand(b, -1), seed_vec)
        return temb + seed_vec

    def forward(self, x_t: torch.Tensor, t: torch.Tensor,
                cond: ConditionBundle) -> torch.Tensor:
        if x_t.ndim != 3 or x_t.shape[-1] != FRAME_WIDTH:
            raise ShapeError(f"expected (B, N, {FRAME_WIDTH}), got {tuple(x_t.shape)}")
        b, n, _ = x_t.shape
        cfg = self.config
        sem = self._semantic_stream(cond).unsqueeze(1)       # (B, 1, W)
        mel = self._melody_stream(cond, n)                   # (B, N, W)
        ctok = self._condition_token(t, cond).unsqueeze(1)   # (B, 1, W)

        pos = sinusoidal_embedding(
            torch.arange(n, dtype=torch.float32, device=x_t.device), cfg.width)
        w_sem_bar = 0.5 * (cfg.w_sem_fingers + cfg.w_sem_limbs)
        w_mel_bar = 0.5 * (cfg.w_mel_fingers + cfg.w_mel_limbs)
        frames = self.x_proj(x_t) + pos + w_sem_bar * sem + w_mel_bar * mel
        h = self.trunk(torch.cat([ctok, frames], dim=1))[:, 1:]

        f_out = self.head_fingers(h + cfg.w_sem_fingers * sem + cfg.w_mel_fingers * mel)
        l_out = self.head_limbs(h + cfg.w_sem_limbs * sem + cfg.w_mel_limbs * mel)
        out = x_t.new_zeros(b, n, FRAME_WIDTH)
        out[..., self.finger_cols] = f_out
        out[..., self.limb_cols] = l_out
        return out


@dataclass
class GDMTrainData:
    """The full training set as dense tensors (desk corpora fit in memory).

    The *_absent flags mark items genuinely missing a modality (e.g. mocap
    with no audio track); the trainer ORs them with its dropout draws so
    absent data is never mistaken for real conditioning.
    """

    clips: torch.Tensor       # (M, N, 994) standardized
    masks: torch.Tensor       # (M, N) float
    audio: torch.Tensor       # (M, N, A)
    tokens: torch.Tensor      # (M, L) long
    semantic: torch.Tensor    # (M, D)
    text_absent: torch.Tensor | None = None   # (M,) bool
    audio_absent: torch.Tensor | None = None

    def __post_init__(self):
        m = self.clips.shape[0]
        if self.text_absent is None:
            self.text_absent = torch.zeros(m, dtype=torch.bool)
        if self.audio_absent is None:
            self.audio_absent = torch.zeros(m, dtype=torch.bool)

    def __len__(self) -> int:
        return self.clips.shape[0]


@dataclass
class GDMTrainParams:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 1e-2
    huber_delta: float = 1.0
    log_every: int = 50


class GDMTrainer:
    """Deterministic x0-prediction trainer.

    All randomness (timesteps, noise, modality dropout, batch order) flows
    from two seeded generators whose states live in the checkpoint, so a
    resumed run replays the interrupted one exactly.
    """

    def __init__(self, model: GestureDenoiser, schedule: NoiseSchedule,
                 data: GDMTrainData, params: GDMTrainParams | None = None,
                 seed: int = 0):
        self.model = model
        self.schedule = schedule
        self.data = data
        self.params = params or GDMTrainParams()
        self.opt = torch.optim.AdamW(model.parameters(), lr=self.params.lr,
                                     weight_decay=self.params.weight_decay)
        self.torch_gen = torch.Generator().manual_seed(seed)
        self.order_rng = np.random.default_rng(seed ^ 0x9E3779B9)
        self.step_idx = 0
        self.history: list[tuple[int, float]] = []
        self._sqrt_ab = torch.from_numpy(np.sqrt(schedule.alpha_bar)).float()
        self._sqrt_1mab = torch.from_numpy(np.sqrt(1.0 - schedule.alpha_bar)).float()

    def _make_batch(self):
        p = self.params
        m = len(self.data)
        idx = self.order_rng.choice(m, size=min(p.batch_size, m), replace=False)
        idx = torch.from_numpy(np.ascontiguousarray(idx))
        x0 = self.data.clips[idx]
        mask = self.data.masks[idx]
        b = x0.shape[0]
        t = torch.randint(1, self.schedule.T + 1, (b,), generator=self.torch_gen)
        eps = torch.randn(x0.shape, generator=self.torch_gen)
        # batched form of q_sample
        x_t = (self._sqrt_ab[t - 1].view(b, 1, 1) * x0 +
               self._sqrt_1mab[t - 1].view(b, 1, 1) * eps)
        cfg = self.model.config
        drop = torch.rand((b, 3), generator=self.torch_gen) < cfg.dropout_modality
        drop_seed = torch.rand((b,), generator=self.torch_gen) < cfg.dropout_seed
        cond = encode_conditions(
            t,
            seed_pose=x0[:, :cfg.seed_frames],
            text_tokens=self.data.tokens[idx],
            audio_feat=self.data.audio[idx],
            semantic_latent=self.data.semantic[idx],
            n_frames=x0.shape[1],
            max_text_len=cfg.max_text_len,
            null_text=drop[:, 0] | self.data.text_absent[idx],
            null_audio=drop[:, 1] | self.data.audio_absent[idx],
            null_semantic=drop[:, 2] | self.data.text_absent[idx],
            null_seed=drop_seed,
            require_modality=False,
        )
        return x0, x_t, t, mask, cond

    def train_step(self) -> float:
        self.model.train()
        x0, x_t, t, mask, cond = self._make_batch()
        pred = self.model(x_t, t, cond)
        loss = huber_loss(pred, x0, mask=mask, delta=self.params.huber_delta)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {self.step_idx}: "
                f"{float(loss.detach())!r}; "
                f"t range [{int(t.min())}, {int(t.max())}]")
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.step_idx += 1
        value = float(loss.detach())
        if self.step_idx % self.params.log_every == 0 or self.step_idx == 1:
            self.history.append((self.step_idx, value))
        return value

    def run(self, steps: int | None = None) -> list[tuple[int, float]]:
        for _ in range(steps if steps is not None else self.params.steps):
            self.train_step()
        return self.history

    def state_dict(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "optimizer": self.opt.state_dict(),
            "step_idx": self.step_idx,
            "torch_gen": self.torch_gen.get_state(),
            "order_rng": self.order_rng.bit_generator.state,
            "history": self.history,
        }

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        self.opt.load_state_dict(state["optimizer"])
        self.step_idx = int(state["step_idx"])
        self.torch_gen.set_state(state["torch_gen"])
        self.order_rng.bit_generator.state = state["order_rng"]
        self.history = [tuple(h) for h in state["history"]]


def windowed_generate(sample_window, total_frames: int, seed_frames: int = 20,
                      window: int = 180) -> np.ndarray:
    """Chain fixed-size windows into an arbitrary-length sequence.

    sample_window(start_frame, seed_pose_or_None) -> (window, 994) array.
    Each window after the first is seeded with the last seed_frames frames
    generated so far; the overlap is linearly cross-faded.
    """
    if seed_frames >= window:
        raise ConfigError("seed length must be shorter than the window")
    if total_frames < 1:
        raise ConfigError("total_frames must be positive")
    acc = np.asarray(sample_window(0, None), dtype=np.float32)
    if acc.shape[0] != window:
        raise ShapeError(f"sample_window returned {acc.shape[0]} frames, expected {window}")
    while acc.shape[0] < total_frames:
        start = acc.shape[0] - seed_frames
        seed = acc[start:]
        nxt = np.asarray(sample_window(start, seed), dtype=np.float32)
        w = (np.arange(1, seed_frames + 1, dtype=np.float32) /
             (seed_frames + 1))[:, None]
        blended = (1.0 - w) * seed + w * nxt[:seed_frames]
        acc = np.concatenate([acc[:start], blended, nxt[seed_frames:]], axis=0)
    return acc[:total_frames]
