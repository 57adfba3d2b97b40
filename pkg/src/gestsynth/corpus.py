"""Corpus storage: clip binaries, JSON sidecars, WAV audio, standardization.

Layout of a prepared corpus directory:

    manifest.json          generation manifest + format version + stats hash
    stats.json             per-channel mean/std fitted on this (or a donor) corpus
    clips/<id>.bin         little-endian: int32 N, int32 width, then N*width f32
    clips/<id>.json        sidecar: fps, source, mask, skeleton_id, transcript,
                           emotion, audio_path, optional emotion_target
    audio/<id>.wav         PCM-16 mono, 16 kHz

Stored frames are standardized; padding frames (mask 0) stay exactly zero.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .audio import SAMPLE_RATE, load_wav, save_wav
from .errors import DataError, ShapeError
from .labels import EmotionLabel
from .motion import FRAME_WIDTH, MotionClip

SKELETON_ID = "canonical-55"
FORMAT_VERSION = 1
STD_FLOOR = 1e-6


@dataclass
class FeatureStats:
    """Per-channel standardization; constant channels get a floored std."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, clips: list[MotionClip]) -> "FeatureStats":
        rows = [c.frames[c.mask.astype(bool)] for c in clips]
        stacked = np.concatenate(rows, axis=0).astype(np.float64)
        if stacked.shape[0] < 2:
            raise DataError("need at least 2 valid frames to fit stats")
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), STD_FLOOR)
        return cls(mean, std)

    def apply(self, frames: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        out = (frames.astype(np.float64) - self.mean) / self.std
        if mask is not None:
            out[~mask.astype(bool)] = 0.0
        return out.astype(frames.dtype if frames.dtype == np.float32 else np.float64)

    def unapply(self, frames: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        out = frames.astype(np.float64) * self.std + self.mean
        if mask is not None:
            out[~mask.astype(bool)] = 0.0
        return out

    def standardize_clip(self, clip: MotionClip) -> MotionClip:
        frames = self.apply(clip.frames, clip.mask).astype(np.float32)
        return MotionClip(frames, clip.mask.copy(), clip.fps, clip.source)

    def unstandardize_clip(self, clip: MotionClip) -> MotionClip:
        frames = self.unapply(clip.frames, clip.mask).astype(np.float32)
        return MotionClip(frames, clip.mask.copy(), clip.fps, clip.source)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mean, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.std, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "hash": self.content_hash()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64))

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: Path) -> "FeatureStats":
        return cls.from_dict(json.loads(path.read_text()))


class StatsAccumulator:
    """Streaming counterpart of FeatureStats.fit for one-pass corpus builds."""

    def __init__(self, width: int = FRAME_WIDTH):
        self.count = 0
        self._s1 = np.zeros(width)
        self._s2 = np.zeros(width)

    def add(self, clip: MotionClip) -> None:
        rows = clip.frames[clip.mask.astype(bool)].astype(np.float64)
        self.count += rows.shape[0]
        self._s1 += rows.sum(axis=0)
        self._s2 += np.square(rows).sum(axis=0)

    def finalize(self) -> FeatureStats:
        if self.count < 2:
            raise DataError("need at least 2 valid frames to fit stats")
        mean = self._s1 / self.count
        var = np.maximum(self._s2 / self.count - mean * mean, 0.0)
        return FeatureStats(mean, np.maximum(np.sqrt(var), STD_FLOOR))


def write_clip_bin(path: Path, frames: np.ndarray) -> None:
    if frames.ndim != 2:
        raise ShapeError(f"expected 2-D frames, got {frames.shape}")
    with open(path, "wb") as f:
        np.array(frames.shape, dtype="<i4").tofile(f)
        np.ascontiguousarray(frames, dtype="<f4").tofile(f)


def read_clip_bin(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = np.fromfile(f, dtype="<i4", count=2)
        if header.size != 2:
            raise DataError(f"{path}: truncated clip header")
        n, width = int(header[0]), int(header[1])
        data = np.fromfile(f, dtype="<f4", count=n * width)
    if data.size != n * width:
        raise DataError(f"{path}: expected {n * width} values, found {data.size}")
    return data.reshape(n, width)


@dataclass
class CorpusItem:
    clip_id: str
    clip: MotionClip
    sidecar: dict

    @property
    def transcript(self) -> str:
        return self.sidecar.get("transcript", "")

    @property
    def emotion(self) -> EmotionLabel | None:
        idx = self.sidecar.get("emotion")
        return None if idx is None else EmotionLabel(int(idx))


class Corpus:
    """Read access to a prepared corpus directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"{self.root}: not a corpus (missing manifest.json)")
        self.manifest = json.loads(manifest_path.read_text())
        self.stats = FeatureStats.load(self.root / "stats.json")
        self.ids = sorted(p.stem for p in (self.root / "clips").glob("*.bin"))
        if not self.ids:
            raise DataError(f"{self.root}: corpus has no clips")

    def __len__(self) -> int:
        return len(self.ids)

    def item(self, i: int) -> CorpusItem:
        cid = self.ids[i]
        sidecar = json.loads((self.root / "clips" / f"{cid}.json").read_text())
        frames = read_clip_bin(self.root / "clips" / f"{cid}.bin")
        mask = np.asarray(sidecar["mask"], dtype=np.uint8)
        clip = MotionClip(frames, mask, fps=int(sidecar["fps"]),
                          source=sidecar["source"])
        return CorpusItem(cid, clip, sidecar)

    def items(self) -> list[CorpusItem]:
        return [self.item(i) for i in range(len(self))]

    def wave(self, item: CorpusItem) -> tuple[np.ndarray, int]:
        rel = item.sidecar.get("audio_path")
        if rel is None:
            raise DataError(f"{item.clip_id}: no audio recorded")
        return load_wav(self.root / rel)


def write_corpus(
    out_dir: Path,
    entries: "Iterable[tuple[MotionClip, dict, np.ndarray | None]]",
    manifest: dict,
    stats: FeatureStats | None = None,
) -> Corpus:
    """Standardize and write clips, sidecars and audio.

    entries: (windowed raw-space clip, sidecar fields, waveform or None);
    with stats supplied any iterable works and is consumed once, so large
    corpora can stream. Without stats the entries are materialized and
    fitted here (eval corpora pass the training corpus stats so both
    sides share one standardization).
    """
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    if stats is None:
        entries = list(entries)
        stats = FeatureStats.fit([clip for clip, _, _ in entries])
    stats.save(out_dir / "stats.json")
    for i, (clip, sidecar, wave) in enumerate(entries):
        cid = f"clip_{i:05d}"
        std_clip = stats.standardize_clip(clip)
        write_clip_bin(out_dir / "clips" / f"{cid}.bin", std_clip.frames)
        side = dict(sidecar)
        side.update({
            "fps": clip.fps,
            "source": clip.source,
            "mask": clip.mask.astype(int).tolist(),
            "skeleton_id": SKELETON_ID,
            "stats_hash": stats.content_hash(),
        })
        if wave is not None:
            rel = f"audio/{cid}.wav"
            save_wav(out_dir / rel, wave, SAMPLE_RATE)
            side["audio_path"] = rel
        (out_dir / "clips" / f"{cid}.json").write_text(json.dumps(side))
    doc = dict(manifest)
    doc["format_version"] = FORMAT_VERSION
    doc["stats_hash"] = stats.content_hash()
    (out_dir / "manifest.json").write_text(json.dumps(doc))
    return Corpus(out_dir)


def corpus_content_hash(root: Path) -> str:
    """Order-independent digest of every clip binary and sidecar."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted((root / "clips").iterdir()):
        h.update(path.name.encode())
        h.update(hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()
