"""Emotion classification over motion and classifier-gradient guidance.

Two classifier variants share one architecture: a noisy-input model
conditioned on the diffusion timestep (drives guidance during sampling)
and a clean-input model with no timestep (scores final outputs for the
accuracy/control metrics). Guidance nudges each intermediate sample up
the classifier's log-probability for a target emotion; it runs only
inside a configured timestep band and degrades to a no-op on non-finite
gradients rather than corrupting the chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import NoiseSchedule
from .errors import ConfigError, ShapeError, TrainingError
from .labels import EMOTIONS
from .motion import FRAME_WIDTH

log = logging.getLogger(__name__)


@dataclass
class EmotionClassifierConfig:
    width: int = 128
    layers: int = 2
    heads: int = 4
    ff_mult: int = 2
    n_classes: int = len(EMOTIONS)
    timestep_conditioned: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "EmotionClassifierConfig":
        return cls(**d)


class EmotionClassifier(nn.Module):
    """(B, N, 994) frames [-> timestep] -> (B, n_classes) logits.

    The output head is zero-initialized so an untrained model is exactly
    uniform: initial cross-entropy equals ln(n_classes), a fixed point the
    tests pin down.
    """

    def __init__(self, config: EmotionClassifierConfig):
        super().__init__()
        from .denoiser import sinusoidal_embedding  # shared positional code

        self._sinusoidal = sinusoidal_embedding
        self.config = config
        w = config.width
        self.x_proj = nn.Linear(FRAME_WIDTH, w)
        if config.timestep_conditioned:
            self.t_mlp = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
        layer = nn.TransformerEncoderLayer(
            d_model=w, nhead=config.heads, dim_feedforward=config.ff_mult * w,
            dropout=0.0, activation="gelu", batch_first=True, norm_first=True)
        self.trunk = nn.TransformerEncoder(layer, config.layers,
                                           norm=nn.LayerNorm(w),
                                           enable_nested_tensor=False)
        self.head = nn.Linear(w, config.n_classes)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor | None = None,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != FRAME_WIDTH:
            raise ShapeError(f"expected (B, N, {FRAME_WIDTH}), got {tuple(x.shape)}")
        if self.config.timestep_conditioned and t is None:
            raise ConfigError("this classifier needs a timestep")
        if not self.config.timestep_conditioned and t is not None:
            raise ConfigError("clean-input classifier takes no timestep")
        b, n, _ = x.shape
        pos = self._sinusoidal(
            torch.arange(n, dtype=torch.float32, device=x.device), self.config.width)
        tokens = self.x_proj(x) + pos.to(x.dtype)
        if t is not None:
            temb = self.t_mlp(self._sinusoidal(t, self.config.width).to(x.dtype))
            tokens = torch.cat([temb.unsqueeze(1), tokens], dim=1)
            h = self.trunk(tokens)[:, 1:]
        else:
            h = self.trunk(tokens)
        if mask is not None:
            m = mask.to(x.dtype).unsqueeze(-1)
            pooled = (h * m).sum(1) / m.sum(1).clamp(min=1.0)
        else:
            pooled = h.mean(dim=1)
        return self.head(pooled)


@dataclass
class EmotionTrainData:
    clips: torch.Tensor   # (M, N, 994) standardized
    masks: torch.Tensor   # (M, N)
    labels: torch.Tensor  # (M,) long

    def __len__(self) -> int:
        return self.clips.shape[0]


@dataclass
class EmotionTrainParams:
    steps: int = 600
    batch_size: int = 32
    lr: float = 1e-3
    holdout_frac: float = 0.15
    min_accuracy_factor: float = 2.0  # multiple of chance the model must beat


def train_emotion_classifier(
    model: EmotionClassifier,
    data: EmotionTrainData,
    schedule: NoiseSchedule | None = None,
    params: EmotionTrainParams | None = None,
    seed: int = 0,
) -> dict:
    """Train on clean clips or on q-sampled noisy clips (timestep variant).

    Held-out accuracy is evaluated per timestep decile for the noisy model
    (one fixed draw of t per decile per clip); any decile below
    min_accuracy_factor x chance raises TrainingError, since guidance built
    on a classifier blind at some noise levels silently does nothing there.
    """
    params = params or EmotionTrainParams()
    noisy = model.config.timestep_conditioned
    if noisy and schedule is None:
        raise ConfigError("noisy classifier training needs a noise schedule")
    m = len(data)
    n_hold = max(8, int(round(m * params.holdout_frac)))
    if n_hold >= m:
        raise ConfigError(f"{m} clips is too few to split off {n_hold} for holdout")
    order = np.random.default_rng(seed).permutation(m)
    hold, train = order[:n_hold], order[n_hold:]
    gen = torch.Generator().manual_seed(seed)
    batch_rng = np.random.default_rng(seed ^ 0x2545F491)
    opt = torch.optim.AdamW(model.parameters(), lr=params.lr)
    if noisy:
        sqrt_ab = torch.from_numpy(np.sqrt(schedule.alpha_bar)).float()
        sqrt_1mab = torch.from_numpy(np.sqrt(1.0 - schedule.alpha_bar)).float()

    def corrupt(x0: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        eps = torch.randn(x0.shape, generator=gen)
        c = t - 1
        return sqrt_ab[c].view(-1, 1, 1) * x0 + sqrt_1mab[c].view(-1, 1, 1) * eps

    model.train()
    history = []
    for step in range(params.steps):
        idx = torch.from_numpy(batch_rng.choice(
            train, size=min(params.batch_size, len(train)), replace=False))
        x0 = data.clips[idx]
        y = data.labels[idx]
        mask = data.masks[idx]
        if noisy:
            t = torch.randint(1, schedule.T + 1, (x0.shape[0],), generator=gen)
            logits = model(corrupt(x0, t), t, mask)
        else:
            logits = model(x0, None, mask)
        loss = F.cross_entropy(logits, y)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite classifier loss at step {step}")
        opt.zero_grad(); loss.backward(); opt.step()
        history.append(float(loss.detach()))

    model.eval()
    hold_t = torch.from_numpy(hold)
    x0 = data.clips[hold_t]
    y = data.labels[hold_t]
    mask = data.masks[hold_t]
    chance = 1.0 / model.config.n_classes
    floor = params.min_accuracy_factor * chance
    report = {"history_tail": history[-5:], "holdout_size": int(n_hold)}
    with torch.no_grad():
        if noisy:
            per_decile = []
            edges = np.linspace(1, schedule.T + 1, 11).astype(int)
            eval_gen = torch.Generator().manual_seed(seed + 1)
            for d in range(10):
                lo, hi = int(edges[d]), int(edges[d + 1])
                t = torch.randint(lo, max(hi, lo + 1), (x0.shape[0],), generator=eval_gen)
                acc = float((model(corrupt(x0, t), t, mask).argmax(1) == y).float().mean())
                per_decile.append(acc)
            report["per_decile_accuracy"] = per_decile
            worst = min(per_decile)
            if worst < floor:
                raise TrainingError(
                    f"noisy classifier accuracy {worst:.3f} in its weakest "
                    f"timestep decile, below {floor:.3f}")
        else:
            acc = float((model(x0, None, mask).argmax(1) == y).float().mean())
            report["holdout_accuracy"] = acc
            if acc < floor:
                raise TrainingError(
                    f"clean classifier held-out accuracy {acc:.3f} below {floor:.3f}")
    return report


@dataclass(frozen=True)
class GuidanceConfig:
    alpha: float = 50.0
    t_lo: int = 1
    t_hi: int = 80

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("guidance strength must be >= 0")
        if not 1 <= self.t_lo <= self.t_hi:
            raise ConfigError(
                f"need 1 <= t_lo <= t_hi, got [{self.t_lo}, {self.t_hi}]")

    @classmethod
    def for_schedule(cls, schedule: NoiseSchedule, alpha: float = 50.0,
                     band: float = 0.8) -> "GuidanceConfig":
        """Active over [1, band * T]: late steps steer, the final ones are left
        alone so guidance never touches the clean end of the chain."""
        return cls(alpha=alpha, t_lo=1, t_hi=max(1, int(round(band * schedule.T))))


def emotion_grad(classifier: EmotionClassifier, x: np.ndarray, t: int,
                 target) -> np.ndarray:
    """d/dx of summed log p(target | x[, t]); dtype follows the classifier."""
    dtype = next(classifier.parameters()).dtype
    xt = torch.as_tensor(x, dtype=dtype).requires_grad_(True)
    b = xt.shape[0]
    tgt = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    if tgt.numel() == 1 and b > 1:
        tgt = tgt.expand(b)
    if classifier.config.timestep_conditioned:
        tt = torch.full((b,), int(t), dtype=torch.long)
        logits = classifier(xt, tt)
    else:
        logits = classifier(xt, None)
    logp = F.log_softmax(logits, dim=-1)
    sel = logp[torch.arange(b), tgt].sum()
    (grad,) = torch.autograd.grad(sel, xt)
    return grad.detach().numpy()


def guidance_step(x: torch.Tensor, t: int, target, classifier: EmotionClassifier,
                  config: GuidanceConfig) -> torch.Tensor:
    """One ascent step on log p(target | x, t); identity outside the band."""
    if config.alpha == 0.0 or not config.t_lo <= t <= config.t_hi:
        return x
    grad = emotion_grad(classifier, x.detach().numpy(), t, target)
    if not np.isfinite(grad).all():
        log.warning("non-finite guidance gradient at t=%d; step skipped", t)
        return x
    return x + config.alpha * torch.as_tensor(grad, dtype=x.dtype)


def make_guidance_hook(classifier: EmotionClassifier, target,
                       config: GuidanceConfig):
    """Numpy (x, t) -> x hook for the sampling loop.

    Accepts a single clip (N, 994) or a batch (B, N, 994); target is one
    label index or a per-item vector. The addition happens in the caller's
    dtype so a float64 sampling chain keeps its precision.
    """
    def hook(x: np.ndarray, t: int) -> np.ndarray:
        if config.alpha == 0.0 or not config.t_lo <= t <= config.t_hi:
            return x
        single = x.ndim == 2
        xb = x[None] if single else x
        grad = emotion_grad(classifier, xb, t, target)
        if not np.isfinite(grad).all():
            log.warning("non-finite guidance gradient at t=%d; step skipped", t)
            return x
        out = xb + config.alpha * grad.astype(np.float64)
        out = out.astype(x.dtype, copy=False)
        return out[0] if single else out

    return hook
