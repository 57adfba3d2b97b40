"""End-to-end orchestration: prepare corpora, train phases, sample, eval.

Checkpoint layout in one directory:

    align.pt    gesture/text aligner + tokenizer vocab
    emocls.pt   noisy (guidance) and clean (scoring) emotion classifiers
    gdm.pt      denoiser + full trainer state (resume replays exactly)
    fgd.pt      feature extractor for feature-space FGD

Every checkpoint records the standardization hash of its training corpus;
anything loaded against a corpus with different stats is refused rather
than silently producing garbage numbers.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .audio import SAMPLE_RATE, LogMelProvider, load_wav
from .bvh import parse_bvh, serialize_bvh
from .config import RunConfig
from .corpus import Corpus, FeatureStats, StatsAccumulator, write_corpus
from .denoiser import (ConditionBundle, DenoiserConfig, GDMTrainData,
                       GDMTrainParams, GDMTrainer, GestureDenoiser,
                       encode_conditions, windowed_generate)
from .diffusion import NoiseSchedule, ddim_step, make_schedule
from .emotion import (EmotionClassifier, EmotionClassifierConfig,
                      EmotionTrainData, EmotionTrainParams, GuidanceConfig,
                      make_guidance_hook, train_emotion_classifier)
from .errors import ConditionError, ConfigError, DataError, DependencyError
from .labels import EmotionLabel
from .metrics import (FGDExtractor, FGDTrainParams, MetricReport,
                      classify_emotions, fgd, match_rate, mean_alignment,
                      train_fgd_extractor)
from .motion import FRAME_WIDTH, MotionClip, assemble_unified, clip_to_raw, clip_window, retarget_and_scale
from .semantic import AlignConfig, AlignData, SemanticAligner, train_alignment
from .skeleton import canonical_skeleton
from .synthetic import draw_manifest, sample_from_item
from .text import Tokenizer

log = logging.getLogger(__name__)

SAMPLES_PER_FRAME = SAMPLE_RATE // 20  # 16 kHz at 20 fps

PHASES = ("align", "emocls", "fgd", "gdm")


# ---------------------------------------------------------------- prepare

def _window_entry(sample, n_frames: int, rng: np.random.Generator):
    """Window motion and audio to the same time span."""
    clip = sample.clip
    start = None
    if clip.length > n_frames:
        start = int(rng.integers(0, clip.length - n_frames + 1))
    win = clip_window(clip, n_frames, rng=rng, start=start)
    wave = sample.wave
    if wave is not None:
        if start is not None:
            wave = wave[start * SAMPLES_PER_FRAME:
                        (start + n_frames) * SAMPLES_PER_FRAME]
        target = n_frames * SAMPLES_PER_FRAME
        if wave.shape[0] < target:
            wave = np.concatenate([wave, np.zeros(target - wave.shape[0])])
    sidecar = {
        "transcript": sample.transcript,
        "emotion": sample.emotion.index,
        "emotion_target": sample.emotion.index,
        "kind": sample.manifest_entry.get("kind", clip.source),
    }
    return win, sidecar, wave


def prepare_synthetic(out_dir: Path, n: int, seed: int,
                      mix_ratio: tuple[float, float] = (0.6, 0.4),
                      n_frames: int = 180, stats_from: Path | None = None,
                      replay_manifest: Path | None = None) -> Corpus:
    """Generate, window and standardize a synthetic corpus on disk.

    Samples stream one at a time so memory stays flat in n; without donor
    stats the corpus is generated twice, first to accumulate the
    standardization moments and again to write.
    """
    if replay_manifest is not None:
        manifest = json.loads(Path(replay_manifest).read_text())
        seed = int(manifest.get("seed", seed))
    else:
        manifest = draw_manifest(n, mix_ratio, seed=seed)

    def entry_stream():
        win_rng = np.random.default_rng([seed, 0xA11CE])
        for item in manifest["items"]:
            yield _window_entry(sample_from_item(item), n_frames, win_rng)

    if stats_from is not None:
        stats = Corpus(stats_from).stats
    else:
        acc = StatsAccumulator()
        for clip, _, _ in entry_stream():
            acc.add(clip)
        stats = acc.finalize()
    return write_corpus(out_dir, entry_stream(), manifest, stats=stats)


def prepare_bvh(out_dir: Path, bvh_dir: Path, name_map: dict | None = None,
                n_frames: int = 180, seed: int = 0,
                stats_from: Path | None = None) -> Corpus:
    """Retarget external BVH files onto the canonical skeleton.

    Files that fail to parse or retarget are collected and reported in one
    DataError; a corpus with silently dropped inputs is worse than no
    corpus.
    """
    paths = sorted(Path(bvh_dir).glob("*.bvh"))
    if not paths:
        raise DataError(f"no .bvh files under {bvh_dir}")
    win_rng = np.random.default_rng([seed, 0xB11])
    entries, rejected = [], []
    for p in paths:
        try:
            raw = parse_bvh(p.read_text())
            canon = retarget_and_scale(raw, name_map=name_map)
            clip = assemble_unified(canon, source="bvh")
            win = clip_window(clip, n_frames, rng=win_rng)
            entries.append((win, {"origin": p.name}, None))
        except Exception as e:  # per-file triage, re-raised in aggregate
            rejected.append(f"{p.name}: {e}")
    if rejected:
        raise DataError("rejected {} of {} files:\n  {}".format(
            len(rejected), len(paths), "\n  ".join(rejected)))
    manifest = {"version": 1, "count": len(entries), "seed": seed,
                "kind": "bvh", "files": [p.name for p in paths]}
    stats = Corpus(stats_from).stats if stats_from is not None else None
    return write_corpus(out_dir, entries, manifest, stats=stats)


# ------------------------------------------------------- corpus -> tensors

@dataclass
class CorpusTensors:
    clips: torch.Tensor
    masks: torch.Tensor
    tokens: torch.Tensor
    audio: torch.Tensor
    labels: torch.Tensor          # -1 where the sidecar has no emotion
    text_absent: torch.Tensor
    audio_absent: torch.Tensor
    transcripts: list[str]


def corpus_tensors(corpus: Corpus, tokenizer: Tokenizer,
                   n_frames: int = 180, max_text_len: int = 20) -> CorpusTensors:
    items = corpus.items()
    mel = LogMelProvider()
    clips, masks, rows, audio = [], [], [], []
    labels, text_absent, audio_absent, transcripts = [], [], [], []
    for it in items:
        clips.append(torch.from_numpy(it.clip.frames))
        masks.append(torch.from_numpy(it.clip.mask.astype(np.float32)))
        text = it.transcript
        transcripts.append(text)
        if text:
            ids = tokenizer.encode(text, max_text_len)
            rows.append(ids + [0] * (max_text_len - len(ids)))
            text_absent.append(False)
        else:
            rows.append([0] * max_text_len)
            text_absent.append(True)
        if it.sidecar.get("audio_path"):
            wave, sr = corpus.wave(it)
            feat = torch.from_numpy(mel(wave, sr).astype(np.float32))
            feat = torch.nn.functional.interpolate(
                feat.t().unsqueeze(0), size=n_frames,
                mode="linear", align_corners=True)[0].t()
            audio.append(feat)
            audio_absent.append(False)
        else:
            audio.append(torch.zeros(n_frames, mel.feature_dim))
            audio_absent.append(True)
        labels.append(int(it.sidecar.get("emotion", -1)))
    return CorpusTensors(
        clips=torch.stack(clips), masks=torch.stack(masks),
        tokens=torch.tensor(rows, dtype=torch.long),
        audio=torch.stack(audio),
        labels=torch.tensor(labels, dtype=torch.long),
        text_absent=torch.tensor(text_absent),
        audio_absent=torch.tensor(audio_absent),
        transcripts=transcripts,
    )


# ----------------------------------------------------------- checkpoints

def _ckpt_path(ckpt_dir: Path, name: str) -> Path:
    return Path(ckpt_dir) / f"{name}.pt"


def _require_ckpt(ckpt_dir: Path, name: str) -> Path:
    p = _ckpt_path(ckpt_dir, name)
    if not p.exists():
        raise DependencyError(
            f"missing checkpoint {p}; run `gestsynth train {name}` first")
    return p


def _check_stats(payload: dict, corpus: Corpus, what: str) -> None:
    if payload["stats_hash"] != corpus.stats.content_hash():
        raise DataError(
            f"{what} was trained with standardization {payload['stats_hash']}, "
            f"corpus uses {corpus.stats.content_hash()}")


def _write_run_manifest(ckpt_dir: Path, phase: str, cfg: RunConfig,
                        corpus: Corpus, metrics: dict) -> None:
    files = {f"{n}.pt": hashlib.sha256(_ckpt_path(ckpt_dir, n).read_bytes()).hexdigest()[:16]
             for n in PHASES if _ckpt_path(ckpt_dir, n).exists()}
    doc = {"phase": phase, "version": __version__,
           "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
           "corpus_stats_hash": corpus.stats.content_hash(),
           "checkpoints": files, "metrics": metrics}
    (Path(ckpt_dir) / f"run_{phase}.json").write_text(json.dumps(doc, indent=2))


def train_phase(phase: str, corpus_dir: Path, ckpt_dir: Path, cfg: RunConfig,
                resume: bool = False) -> dict:
    """Train one phase (or 'all' for every phase in dependency order)."""
    if phase == "all":
        out = {}
        for p in PHASES:
            out[p] = train_phase(p, corpus_dir, ckpt_dir, cfg, resume)
        return out
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}; pick from {PHASES + ('all',)}")
    corpus = Corpus(corpus_dir)
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    fn = {"align": _train_align, "emocls": _train_emocls,
          "fgd": _train_fgd, "gdm": _train_gdm}[phase]
    metrics = fn(corpus, ckpt_dir, cfg, resume)
    _write_run_manifest(ckpt_dir, phase, cfg, corpus, metrics)
    return metrics


def _train_align(corpus: Corpus, ckpt_dir: Path, cfg: RunConfig, resume: bool) -> dict:
    texts = [it.transcript for it in corpus.items() if it.transcript]
    if not texts:
        raise DataError("alignment needs transcripts; corpus has none")
    tokenizer = Tokenizer.from_texts(texts)
    tens = corpus_tensors(corpus, tokenizer, cfg.n_frames)
    keep = ~tens.text_absent
    if int(keep.sum()) < 4:
        raise DataError("fewer than 4 transcribed clips")
    align_cfg = AlignConfig(**cfg.align)
    aligner = SemanticAligner(align_cfg, len(tokenizer.vocab))
    report = train_alignment(
        aligner,
        AlignData(tens.clips[keep], tens.masks[keep], tens.tokens[keep]),
        seed=cfg.seed)
    torch.save({
        "model": aligner.state_dict(), "config": align_cfg.to_dict(),
        "vocab": tokenizer.to_dict(), "metrics": report,
        "stats_hash": corpus.stats.content_hash(), "version": __version__,
    }, _ckpt_path(ckpt_dir, "align"))
    return {"holdout_top1": report["holdout_top1"]}


def load_aligner(ckpt_dir: Path, corpus: Corpus | None = None):
    payload = torch.load(_require_ckpt(ckpt_dir, "align"), weights_only=False)
    if corpus is not None:
        _check_stats(payload, corpus, "aligner")
    tokenizer = Tokenizer.from_dict(payload["vocab"])
    aligner = SemanticAligner(AlignConfig.from_dict(payload["config"]),
                              len(tokenizer.vocab))
    aligner.load_state_dict(payload["model"])
    return aligner.freeze(), tokenizer, payload


def _train_emocls(corpus: Corpus, ckpt_dir: Path, cfg: RunConfig, resume: bool) -> dict:
    tokenizer = Tokenizer.from_texts(["x"])  # labels only; no text needed
    tens = corpus_tensors(corpus, tokenizer, cfg.n_frames)
    if (tens.labels < 0).any():
        raise DataError("emotion training needs an emotion label on every clip")
    schedule = make_schedule(**cfg.schedule)
    params = EmotionTrainParams(**{k: v for k, v in cfg.emotion.items()
                                   if k in EmotionTrainParams.__dataclass_fields__})
    data = EmotionTrainData(tens.clips, tens.masks, tens.labels)
    out = {}
    models = {}
    for variant, conditioned in (("noisy", True), ("clean", False)):
        model = EmotionClassifier(EmotionClassifierConfig(timestep_conditioned=conditioned))
        out[variant] = train_emotion_classifier(
            model, data, schedule=schedule if conditioned else None,
            params=params, seed=cfg.seed)
        models[variant] = model
    torch.save({
        "noisy": models["noisy"].state_dict(),
        "clean": models["clean"].state_dict(),
        "config": models["noisy"].config.to_dict(),
        "schedule": schedule.manifest(), "metrics": out,
        "stats_hash": corpus.stats.content_hash(), "version": __version__,
    }, _ckpt_path(ckpt_dir, "emocls"))
    return {k: v.get("holdout_accuracy", v.get("per_decile_accuracy"))
            for k, v in out.items()}


def load_emotion_classifiers(ckpt_dir: Path, corpus: Corpus | None = None):
    payload = torch.load(_require_ckpt(ckpt_dir, "emocls"), weights_only=False)
    if corpus is not None:
        _check_stats(payload, corpus, "emotion classifier")
    base = EmotionClassifierConfig.from_dict(payload["config"])
    out = {}
    for variant, conditioned in (("noisy", True), ("clean", False)):
        c = EmotionClassifierConfig.from_dict({**base.to_dict(),
                                               "timestep_conditioned": conditioned})
        model = EmotionClassifier(c)
        model.load_state_dict(payload[variant])
        model.eval()
        out[variant] = model
    return out["noisy"], out["clean"], payload


def _train_fgd(corpus: Corpus, ckpt_dir: Path, cfg: RunConfig, resume: bool) -> dict:
    tokenizer = Tokenizer.from_texts(["x"])
    tens = corpus_tensors(corpus, tokenizer, cfg.n_frames)
    extractor = FGDExtractor()
    params = FGDTrainParams(**{k: v for k, v in cfg.fgd.items()
                               if k in FGDTrainParams.__dataclass_fields__})
    history = train_fgd_extractor(extractor, tens.clips, tens.masks, params,
                                  seed=cfg.seed)
    torch.save({
        "model": extractor.state_dict(), "history_tail": history[-5:],
        "stats_hash": corpus.stats.content_hash(), "version": __version__,
    }, _ckpt_path(ckpt_dir, "fgd"))
    return {"final_loss": history[-1]}


def load_fgd_extractor(ckpt_dir: Path, corpus: Corpus | None = None) -> FGDExtractor:
    payload = torch.load(_require_ckpt(ckpt_dir, "fgd"), weights_only=False)
    if corpus is not None:
        _check_stats(payload, corpus, "FGD extractor")
    extractor = FGDExtractor()
    extractor.load_state_dict(payload["model"])
    extractor.eval()
    return extractor


def _train_gdm(corpus: Corpus, ckpt_dir: Path, cfg: RunConfig, resume: bool) -> dict:
    aligner, tokenizer, align_payload = load_aligner(ckpt_dir, corpus)
    tens = corpus_tensors(corpus, tokenizer, cfg.n_frames)
    with torch.no_grad():
        semantic = aligner.encode_text(tens.tokens)
    schedule = make_schedule(**cfg.schedule)
    den_cfg = DenoiserConfig(**{**cfg.denoiser,
                                "vocab_size": len(tokenizer.vocab),
                                "n_frames": cfg.n_frames,
                                "seed_frames": cfg.seed_frames})
    params = GDMTrainParams(**{k: v for k, v in cfg.gdm.items()
                               if k in GDMTrainParams.__dataclass_fields__})
    model = GestureDenoiser(den_cfg)
    data = GDMTrainData(tens.clips, tens.masks, tens.audio, tens.tokens,
                        semantic, tens.text_absent, tens.audio_absent)
    trainer = GDMTrainer(model, schedule, data, params, seed=cfg.seed)
    path = _ckpt_path(ckpt_dir, "gdm")
    if resume:
        if not path.exists():
            raise DependencyError(f"--resume given but {path} does not exist")
        payload = torch.load(path, weights_only=False)
        _check_stats(payload, corpus, "denoiser")
        trainer.load_state_dict(payload["trainer"])
        log.info("resuming at step %d", trainer.step_idx)
    remaining = params.steps - trainer.step_idx
    for _ in range(max(0, remaining)):
        trainer.train_step()
    torch.save({
        "trainer": trainer.state_dict(),
        "denoiser_config": den_cfg.to_dict(),
        "schedule": schedule.manifest(),
        "vocab": tokenizer.to_dict(),
        "stats": corpus.stats.to_dict(),
        "stats_hash": corpus.stats.content_hash(),
        "version": __version__,
    }, path)
    tail = [v for _, v in trainer.history[-3:]]
    return {"steps": trainer.step_idx, "loss_tail": tail}


def load_denoiser(ckpt_dir: Path):
    payload = torch.load(_require_ckpt(ckpt_dir, "gdm"), weights_only=False)
    cfg = DenoiserConfig.from_dict(payload["denoiser_config"])
    model = GestureDenoiser(cfg)
    model.load_state_dict(payload["trainer"]["model"])
    model.eval()
    schedule = NoiseSchedule.from_manifest(payload["schedule"])
    tokenizer = Tokenizer.from_dict(payload["vocab"])
    return model, schedule, tokenizer, payload


# -------------------------------------------------------------- sampling

@dataclass
class SampleRequest:
    seed: int
    text: str | None = None
    wave: np.ndarray | None = None       # 16 kHz mono
    emotion_target: int | None = None
    n_frames: int = 180

    def __post_init__(self):
        if self.text is None and self.wave is None:
            raise ConditionError("a sample request needs text or audio")
        if self.emotion_target is not None:
            EmotionLabel(self.emotion_target)  # range check
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")


def batched_reverse(model: GestureDenoiser, schedule: NoiseSchedule,
                    cond: ConditionBundle, n_frames: int, seeds: list[int],
                    guidance=None) -> np.ndarray:
    """Reverse chain over a whole batch; float64 outside the network.

    Per-item numpy generators draw x_T and any stochastic-step noise, so
    each item's randomness depends only on its own seed, never on batch
    composition.
    """
    rngs = [np.random.default_rng(s) for s in seeds]
    x = np.stack([r.standard_normal((n_frames, FRAME_WIDTH)) for r in rngs])
    for t in range(schedule.T, 0, -1):
        with torch.no_grad():
            tt = torch.full((x.shape[0],), t, dtype=torch.long)
            x0 = model(torch.as_tensor(x, dtype=torch.float32), tt, cond)
        x0 = x0.double().numpy()
        z = None
        if schedule.sigma_at(t) > 0:
            z = np.stack([r.standard_normal((n_frames, FRAME_WIDTH)) for r in rngs])
        x = ddim_step(x, x0, t, schedule, z=z)
        if guidance is not None:
            x = guidance(x, t - 1)
    return x.astype(np.float32)


class Sampler:
    """Binds checkpoints into a ready-to-call generator."""

    def __init__(self, ckpt_dir: Path, alpha: float | None = None):
        self.ckpt_dir = Path(ckpt_dir)
        self.model, self.schedule, self.tokenizer, self.payload = load_denoiser(ckpt_dir)
        self.aligner, align_tok, _ = load_aligner(ckpt_dir)
        if align_tok.vocab != self.tokenizer.vocab:
            raise DataError("aligner and denoiser were trained with different vocabularies")
        self.stats_hash = self.payload["stats_hash"]
        self.mel = LogMelProvider()
        self.noisy_cls = None
        self.guide_cfg = None
        if alpha is None:
            alpha = 0.0
        if alpha > 0:
            noisy, _, emo_payload = load_emotion_classifiers(ckpt_dir)
            if emo_payload["stats_hash"] != self.stats_hash:
                raise DataError("emotion classifier and denoiser use different standardization")
            self.noisy_cls = noisy
            self.guide_cfg = GuidanceConfig.for_schedule(self.schedule, alpha=alpha)
        self.alpha = alpha

    def _features(self, req: SampleRequest):
        cfg = self.model.config
        if req.text is not None:
            ids = self.tokenizer.encode(req.text, cfg.max_text_len)
            tokens = torch.tensor([ids + [0] * (cfg.max_text_len - len(ids))])
            with torch.no_grad():
                semantic = self.aligner.encode_text(tokens)
        else:
            tokens, semantic = None, None
        feat = None
        if req.wave is not None:
            feat = torch.from_numpy(self.mel(req.wave, SAMPLE_RATE).astype(np.float32))
        return tokens, semantic, feat

    @staticmethod
    def _slice_feat(feat: torch.Tensor, start: int, n: int) -> torch.Tensor:
        idx = np.clip(np.arange(start, start + n), 0, feat.shape[0] - 1)
        return feat[torch.as_tensor(idx)]

    def _window(self, reqs: list[SampleRequest], feats, start: int,
                seed_poses: np.ndarray | None, window: int) -> np.ndarray:
        cfg = self.model.config
        tok_rows, sem_rows, audio_rows = [], [], []
        null_text, null_audio = [], []
        for tokens, semantic, feat in feats:
            if tokens is not None:
                tok_rows.append(tokens[0])
                sem_rows.append(semantic[0])
                null_text.append(False)
            else:
                tok_rows.append(torch.zeros(cfg.max_text_len, dtype=torch.long))
                sem_rows.append(torch.zeros(cfg.semantic_dim))
                null_text.append(True)
            if feat is not None:
                audio_rows.append(self._slice_feat(feat, start, window))
                null_audio.append(False)
            else:
                audio_rows.append(torch.zeros(window, cfg.audio_dim))
                null_audio.append(True)
        b = len(reqs)
        seed_t = None
        if seed_poses is not None:
            seed_t = torch.as_tensor(seed_poses, dtype=torch.float32)
        cond = encode_conditions(
            torch.ones(b, dtype=torch.long),  # batch-size carrier; the loop passes t
            seed_pose=seed_t,
            text_tokens=torch.stack(tok_rows),
            audio_feat=torch.stack(audio_rows),
            semantic_latent=torch.stack(sem_rows),
            n_frames=window, max_text_len=cfg.max_text_len,
            null_text=torch.tensor(null_text),
            null_semantic=torch.tensor(null_text),
            null_audio=torch.tensor(null_audio))
        guidance = None
        targets = np.array([-1 if r.emotion_target is None else r.emotion_target
                            for r in reqs])
        if self.alpha > 0 and (targets >= 0).any():
            base = make_guidance_hook(self.noisy_cls, np.maximum(targets, 0),
                                      self.guide_cfg)

            def guidance(x, t, _base=base, _inactive=targets < 0):
                y = _base(x, t)
                if y is not x and _inactive.any():
                    y[_inactive] = x[_inactive]
                return y

        seeds = [int(np.random.default_rng([r.seed, start]).integers(1 << 31))
                 for r in reqs]
        return batched_reverse(self.model, self.schedule, cond, window,
                               seeds, guidance)

    def generate(self, reqs: list[SampleRequest], batch_size: int = 16) -> list[MotionClip]:
        """Standardized-space clips, one per request.

        Uniform-length batches run through the reverse chain together;
        anything longer than the training window falls back to per-item
        windowed generation with seed-pose continuation.
        """
        if not reqs:
            return []
        window = self.model.config.n_frames
        out: list[MotionClip | None] = [None] * len(reqs)
        simple = [i for i, r in enumerate(reqs) if r.n_frames <= window]
        for lo in range(0, len(simple), batch_size):
            chunk = [reqs[i] for i in simple[lo:lo + batch_size]]
            feats = [self._features(r) for r in chunk]
            frames = self._window(chunk, feats, 0, None, window)
            for j, i in enumerate(simple[lo:lo + batch_size]):
                n = reqs[i].n_frames
                out[i] = MotionClip(frames[j, :n], np.ones(n, dtype=np.uint8),
                                    source="generated")
        for i, r in enumerate(reqs):
            if r.n_frames <= window:
                continue
            feats = [self._features(r)]
            s = self.model.config.seed_frames

            def one_window(start, seed_pose):
                sp = seed_pose[None] if seed_pose is not None else None
                return self._window([r], feats, start, sp, window)[0]

            frames = windowed_generate(one_window, r.n_frames, s, window)
            out[i] = MotionClip(frames, np.ones(r.n_frames, dtype=np.uint8),
                                source="generated")
        return out  # type: ignore[return-value]


def write_generated_corpus(out_dir: Path, clips: list[MotionClip],
                           reqs: list[SampleRequest], sampler: Sampler,
                           record_targets: bool = True) -> Corpus:
    """Persist generated clips in the shared corpus format.

    Clips arrive standardized; they are mapped back to raw space and
    re-standardized on write with the training statistics, keeping one
    on-disk convention for real and generated data alike.
    """
    corpus_stats = _stats_for(sampler)
    entries = []
    for clip, req in zip(clips, reqs):
        raw = corpus_stats.unstandardize_clip(clip)
        side = {"transcript": req.text or "", "sample_seed": req.seed}
        if record_targets and req.emotion_target is not None:
            side["emotion_target"] = req.emotion_target
        entries.append((raw, side, None))
    manifest = {"version": 1, "count": len(entries), "kind": "generated",
                "seed": reqs[0].seed if reqs else 0,
                "guidance_alpha": sampler.alpha,
                "gdm_stats_hash": sampler.stats_hash}
    return write_corpus(out_dir, entries, manifest, stats=corpus_stats)


def _stats_for(sampler: Sampler) -> FeatureStats:
    stats_doc = sampler.payload.get("stats")
    if stats_doc is not None:
        return FeatureStats.from_dict(stats_doc)
    raise DataError("gdm checkpoint does not embed its training statistics")


def export_bvh(clip: MotionClip, stats: FeatureStats | None, path: Path) -> None:
    """Write a clip as BVH on the canonical skeleton.

    stats: pass the standardization that produced the clip, or None for a
    clip already in raw feature space.
    """
    raw_clip = stats.unstandardize_clip(clip) if stats is not None else clip
    raw = clip_to_raw(raw_clip, canonical_skeleton())
    Path(path).write_text(serialize_bvh(raw))


# ------------------------------------------------------------------ eval

EVAL_METRICS = ("fgd_raw", "fgd_feature", "sa", "ea", "ec")


def evaluate(real_dir: Path, gen_dir: Path, ckpt_dir: Path,
             metrics: tuple[str, ...] = ("fgd_raw", "sa")) -> MetricReport:
    """Score a generated corpus against a real one."""
    for m in metrics:
        if m not in EVAL_METRICS:
            raise ConfigError(f"unknown metric {m!r}; pick from {EVAL_METRICS}")
    real = Corpus(real_dir)
    gen = Corpus(gen_dir)
    if real.stats.content_hash() != gen.stats.content_hash():
        raise DataError("real and generated corpora use different standardization")
    real_items = real.items()
    gen_items = gen.items()
    report = MetricReport(version=__version__, n_real=len(real_items),
                          n_generated=len(gen_items), metrics={}, notes={})
    real_clips = [it.clip for it in real_items]
    gen_clips = [it.clip for it in gen_items]
    if "fgd_raw" in metrics:
        report.metrics["fgd_raw"] = fgd(real_clips, gen_clips, space="raw")
    if "fgd_feature" in metrics:
        extractor = load_fgd_extractor(ckpt_dir, real)
        report.metrics["fgd_feature"] = fgd(real_clips, gen_clips,
                                            space="feature", extractor=extractor)
    if "sa" in metrics:
        aligner, tokenizer, _ = load_aligner(ckpt_dir, real)
        report.metrics["sa"] = _corpus_alignment(gen, aligner, tokenizer)
        report.metrics["sa_real"] = _corpus_alignment(real, aligner, tokenizer)
    if "ea" in metrics or "ec" in metrics:
        _, clean, _ = load_emotion_classifiers(ckpt_dir, real)
        if "ea" in metrics:
            report.metrics["ea"] = _emotion_rate(gen, clean, "emotion")
        if "ec" in metrics:
            report.metrics["ec"] = _emotion_rate(gen, clean, "emotion_target")
    return report


def _corpus_alignment(corpus: Corpus, aligner: SemanticAligner,
                      tokenizer: Tokenizer) -> float:
    items = [it for it in corpus.items() if it.transcript]
    if not items:
        raise DataError("alignment score needs transcripts in sidecars")
    rows = []
    for it in items:
        ids = tokenizer.encode(it.transcript, 20)
        rows.append(ids + [0] * (20 - len(ids)))
    with torch.no_grad():
        zt = aligner.encode_text(torch.tensor(rows, dtype=torch.long)).numpy()
        frames = torch.stack([torch.from_numpy(it.clip.frames) for it in items])
        masks = torch.stack([torch.from_numpy(it.clip.mask.astype(np.float32))
                             for it in items])
        zg = aligner.encode_gesture(frames, masks).numpy()
    return mean_alignment(zt, zg)


def _emotion_rate(corpus: Corpus, clean_cls, key: str) -> float:
    items = [it for it in corpus.items() if key in it.sidecar]
    if not items:
        raise DataError(f"no sidecar carries {key!r}; cannot score")
    frames = torch.stack([torch.from_numpy(it.clip.frames) for it in items])
    masks = torch.stack([torch.from_numpy(it.clip.mask.astype(np.float32))
                         for it in items])
    preds = classify_emotions(clean_cls, frames, masks)
    refs = np.array([int(it.sidecar[key]) for it in items])
    return match_rate(preds, refs)
