"""Evaluation: Frechet gesture distance, alignment score, emotion rates.

All metrics consume standardized clips so real and generated sides share
one scale. FGD comes in two spaces: raw (clip-mean pooled frames) and
feature (bottleneck codes from a small reconstruction autoencoder trained
on the real corpus). The Frechet term uses a symmetric eigendecomposition
square root, which keeps the computation stable for the near-singular
covariances small corpora produce.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError, NumericalError, ShapeError, TrainingError
from .motion import FRAME_WIDTH, MotionClip

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, eps: float = 1e-6) -> "GaussianStats":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise DataError(f"need a (M>=2, D) matrix, got {x.shape}")
        mean = x.mean(axis=0)
        cov = np.cov(x, rowvar=False)
        if eps > 0:
            cov = cov + eps * np.eye(x.shape[1])
        return cls(mean=mean, cov=cov)


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2)."""
    if a.mean.shape != b.mean.shape:
        raise ShapeError(
            f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    root_a = _sym_sqrt(a.cov)
    cross = _sym_sqrt(root_a @ b.cov @ root_a)
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov)
                  - 2.0 * np.trace(cross))
    if not np.isfinite(value):
        raise NumericalError(f"Frechet distance is not finite: {value!r}")
    return max(value, 0.0)


def pool_clips(clips: list[MotionClip]) -> np.ndarray:
    """Temporal mean over unmasked frames -> (M, 994)."""
    rows = []
    for clip in clips:
        m = clip.mask.astype(bool)
        if not m.any():
            raise DataError("clip with no unmasked frames")
        rows.append(clip.frames[m].mean(axis=0))
    return np.stack(rows).astype(np.float64)


class FGDExtractor(nn.Module):
    """Frame MLP -> masked mean pool -> bottleneck code -> per-frame decoder."""

    def __init__(self, code_dim: int = 128, hidden: int = 256):
        super().__init__()
        from .denoiser import sinusoidal_embedding

        self._sinusoidal = sinusoidal_embedding
        self.code_dim = code_dim
        self.enc = nn.Sequential(nn.Linear(FRAME_WIDTH, hidden), nn.GELU(),
                                 nn.Linear(hidden, hidden), nn.GELU())
        self.bottleneck = nn.Linear(hidden, code_dim)
        self.dec = nn.Sequential(nn.Linear(code_dim + hidden, hidden), nn.GELU(),
                                 nn.Linear(hidden, FRAME_WIDTH))
        self.hidden = hidden

    def encode(self, frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.enc(frames)
        m = mask.to(frames.dtype).unsqueeze(-1)
        pooled = (h * m).sum(1) / m.sum(1).clamp(min=1.0)
        return self.bottleneck(pooled)

    def forward(self, frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        code = self.encode(frames, mask)
        n = frames.shape[1]
        pos = self._sinusoidal(
            torch.arange(n, dtype=torch.float32, device=frames.device), self.hidden)
        pos = pos.unsqueeze(0).expand(frames.shape[0], -1, -1)
        z = code.unsqueeze(1).expand(-1, n, -1)
        return self.dec(torch.cat([z, pos], dim=-1))

    @torch.no_grad()
    def codes(self, frames: torch.Tensor, mask: torch.Tensor,
              batch: int = 64) -> np.ndarray:
        self.eval()
        out = [self.encode(frames[i:i + batch], mask[i:i + batch])
               for i in range(0, frames.shape[0], batch)]
        return torch.cat(out).numpy().astype(np.float64)


@dataclass
class FGDTrainParams:
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3


def train_fgd_extractor(extractor: FGDExtractor, clips: torch.Tensor,
                        masks: torch.Tensor, params: FGDTrainParams | None = None,
                        seed: int = 0) -> list[float]:
    """Reconstruction training on the real corpus; returns the loss history."""
    params = params or FGDTrainParams()
    m = clips.shape[0]
    rng = np.random.default_rng(seed)
    opt = torch.optim.AdamW(extractor.parameters(), lr=params.lr)
    history = []
    extractor.train()
    for step in range(params.steps):
        idx = torch.from_numpy(rng.choice(m, size=min(params.batch_size, m),
                                          replace=False))
        x = clips[idx]
        mk = masks[idx]
        recon = extractor(x, mk)
        w = mk.float().unsqueeze(-1)
        loss = (((recon - x) ** 2) * w).sum() / (w.sum() * FRAME_WIDTH)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite extractor loss at step {step}")
        opt.zero_grad(); loss.backward(); opt.step()
        history.append(float(loss.detach()))
    extractor.eval()
    return history


def fgd(real: list[MotionClip], generated: list[MotionClip],
        space: str = "raw", extractor: FGDExtractor | None = None,
        eps: float = 1e-6) -> float:
    """Frechet distance between clip populations.

    space="raw" pools standardized frames per clip; space="feature" runs
    both sides through a trained extractor's bottleneck.
    """
    if space not in ("raw", "feature"):
        raise ConfigError(f"unknown FGD space {space!r}")
    if len(real) < 2 or len(generated) < 2:
        raise DataError("FGD needs at least 2 clips on each side")
    if space == "raw":
        xr, xg = pool_clips(real), pool_clips(generated)
    else:
        if extractor is None:
            raise ConfigError("feature-space FGD needs a trained extractor")
        def stack(clips):
            f = torch.stack([torch.from_numpy(c.frames) for c in clips])
            m = torch.stack([torch.from_numpy(c.mask.astype(np.float32)) for c in clips])
            return extractor.codes(f, m)
        xr, xg = stack(real), stack(generated)
    log.debug("FGD(%s): fitting Gaussians with %.0e * I regularization", space, eps)
    return frechet_distance(GaussianStats.fit(xr, eps), GaussianStats.fit(xg, eps))


def semantic_alignment_score(z_text: np.ndarray, z_gesture: np.ndarray) -> float:
    """Cosine similarity of one text code and one gesture code."""
    zt = np.asarray(z_text, dtype=np.float64).ravel()
    zg = np.asarray(z_gesture, dtype=np.float64).ravel()
    if zt.shape != zg.shape:
        raise ShapeError(f"code shapes differ: {zt.shape} vs {zg.shape}")
    na, nb = np.linalg.norm(zt), np.linalg.norm(zg)
    if na == 0.0 or nb == 0.0:
        raise NumericalError("zero-norm latent code in alignment score")
    # round-off on a self-pair can spill a hair past 1; the cosine is not
    return float(np.clip(zt @ zg / (na * nb), -1.0, 1.0))


def mean_alignment(z_text: np.ndarray, z_gesture: np.ndarray) -> float:
    """Row-paired mean of semantic_alignment_score over (M, D) code matrices."""
    zt, zg = np.atleast_2d(z_text), np.atleast_2d(z_gesture)
    if zt.shape != zg.shape:
        raise ShapeError(f"code shapes differ: {zt.shape} vs {zg.shape}")
    return float(np.mean([semantic_alignment_score(a, b) for a, b in zip(zt, zg)]))


@torch.no_grad()
def classify_emotions(classifier, clips: torch.Tensor, masks: torch.Tensor,
                      batch: int = 32) -> np.ndarray:
    """Clean-classifier argmax labels -> (M,) int array."""
    classifier.eval()
    preds = []
    for i in range(0, clips.shape[0], batch):
        logits = classifier(clips[i:i + batch], None, masks[i:i + batch])
        preds.append(logits.argmax(dim=1))
    return torch.cat(preds).numpy()


def match_rate(predicted: np.ndarray, reference: np.ndarray) -> float:
    """Exact fraction of agreements; the EA/EC primitive."""
    predicted = np.asarray(predicted)
    reference = np.asarray(reference)
    if predicted.shape != reference.shape:
        raise ShapeError(f"label shapes differ: {predicted.shape} vs {reference.shape}")
    if predicted.size == 0:
        raise DataError("cannot score an empty label set")
    return float(np.mean(predicted == reference))


REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "n_real", "n_generated", "metrics"],
    "properties": {
        "version": {"type": "string"},
        "n_real": {"type": "integer", "minimum": 0},
        "n_generated": {"type": "integer", "minimum": 0},
        "metrics": {
            "type": "object",
            "properties": {
                "fgd_raw": {"type": "number"},
                "fgd_feature": {"type": "number"},
                "sa": {"type": "number"},
                "ea": {"type": "number"},
                "ec": {"type": "number"},
            },
            "additionalProperties": {"type": "number"},
        },
        "notes": {"type": "object"},
    },
    "additionalProperties": False,
}


@dataclass
class MetricReport:
    version: str
    n_real: int
    n_generated: int
    metrics: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"version": self.version, "n_real": self.n_real,
               "n_generated": self.n_generated,
               "metrics": {k: float(v) for k, v in self.metrics.items()}}
        if self.notes:
            doc["notes"] = self.notes
        return doc

    def to_json(self) -> str:
        import jsonschema

        doc = self.to_dict()
        bad = [k for k, v in doc["metrics"].items() if not np.isfinite(v)]
        if bad:
            raise NumericalError(f"non-finite metric values: {', '.join(bad)}")
        jsonschema.validate(doc, REPORT_SCHEMA)
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "value"])
        for k in sorted(self.metrics):
            writer.writerow([k, repr(float(self.metrics[k]))])
        return buf.getvalue()

    def table(self) -> str:
        width = max([len(k) for k in self.metrics] + [6])
        lines = [f"{'metric':<{width}}  value",
                 f"{'-' * width}  -----"]
        for k in sorted(self.metrics):
            lines.append(f"{k:<{width}}  {self.metrics[k]:.6f}")
        return "\n".join(lines)
