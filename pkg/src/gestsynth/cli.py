"""Command line entry points.

Exit codes: 0 success, 1 usage/configuration, 2 missing dependency
(checkpoint not trained yet), 3 data problems, 4 numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import GestsynthError, UsageError

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this project reserves 2 for missing
    dependencies, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="gestsynth",
                description="Co-speech gesture diffusion: corpora, training, "
                            "sampling and evaluation.")
    p.add_argument("--version", action="version", version=f"gestsynth {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pp = sub.add_parser("prepare", help="build a standardized corpus on disk")
    pp.add_argument("--out", required=True, help="corpus output directory")
    pp.add_argument("--synth", type=int, metavar="N",
                    help="generate N synthetic clips")
    pp.add_argument("--replay", metavar="MANIFEST",
                    help="regenerate exactly from a corpus manifest")
    pp.add_argument("--bvh-dir", metavar="DIR",
                    help="ingest every .bvh file in DIR")
    pp.add_argument("--name-map", metavar="JSON",
                    help="joint name mapping for BVH retargeting")
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--gesture-frac", type=float, default=0.6,
                    help="fraction of pure gesture clips (rest are hybrids)")
    pp.add_argument("--frames", type=int, default=180)
    pp.add_argument("--stats-from", metavar="DIR",
                    help="reuse standardization from an existing corpus")

    tp = sub.add_parser("train", help="train one phase or all of them")
    tp.add_argument("phase", choices=["align", "emocls", "fgd", "gdm", "all"])
    tp.add_argument("--corpus", required=True)
    tp.add_argument("--ckpt", required=True, help="checkpoint directory")
    tp.add_argument("--config", help="JSON run configuration")
    tp.add_argument("--seed", type=int)
    tp.add_argument("--preset", choices=["desk", "paper"])
    tp.add_argument("--steps", type=int, help="override denoiser train steps")
    tp.add_argument("--resume", action="store_true",
                    help="continue denoiser training from its checkpoint")

    sp = sub.add_parser("sample", help="generate gesture clips")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True, help="generated corpus directory")
    sp.add_argument("--text", help="transcript to condition on")
    sp.add_argument("--audio", help="16 kHz mono wav to condition on")
    sp.add_argument("--emotion-target",
                    help="emotion name or index for guidance")
    sp.add_argument("--alpha", type=float,
                    help="guidance strength (default 50 with a target, else 0)")
    sp.add_argument("--frames", type=int, default=180)
    sp.add_argument("--seconds", type=float,
                    help="clip length in seconds (overrides --frames)")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--export-bvh", action="store_true",
                    help="also write each clip as BVH")

    ep = sub.add_parser("eval", help="score a generated corpus against a real one")
    ep.add_argument("--real", required=True)
    ep.add_argument("--generated", required=True)
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--metrics", default="fgd_raw,sa",
                    help="comma list from fgd_raw,fgd_feature,sa,ea,ec")
    ep.add_argument("--report", help="write the validated JSON report here")
    ep.add_argument("--csv", help="write a CSV of the metrics here")
    return p


def cmd_prepare(args) -> int:
    from . import pipeline

    modes = [m for m in (args.synth, args.replay, args.bvh_dir) if m is not None]
    if len(modes) != 1:
        raise UsageError("pick exactly one of --synth, --replay, --bvh-dir")
    if args.bvh_dir is not None:
        name_map = None
        if args.name_map:
            name_map = json.loads(Path(args.name_map).read_text())
        corpus = pipeline.prepare_bvh(args.out, args.bvh_dir, name_map,
                                      n_frames=args.frames, seed=args.seed,
                                      stats_from=args.stats_from)
    else:
        frac = args.gesture_frac
        if not 0.0 <= frac <= 1.0:
            raise UsageError("--gesture-frac must lie in [0, 1]")
        corpus = pipeline.prepare_synthetic(
            args.out, args.synth or 0, args.seed, (frac, 1.0 - frac),
            n_frames=args.frames, stats_from=args.stats_from,
            replay_manifest=args.replay)
    print(f"wrote {len(corpus)} clips to {args.out} "
          f"(stats {corpus.stats.content_hash()})")
    return 0


def cmd_train(args) -> int:
    import torch

    from . import pipeline
    from .config import load_config

    torch.set_num_threads(1)
    overrides: dict = {}
    if args.preset:
        overrides["preset"] = args.preset
    if args.steps is not None:
        overrides["gdm"] = {"steps": args.steps}
    cfg = load_config(args.config, seed=args.seed, overrides=overrides)
    metrics = pipeline.train_phase(args.phase, args.corpus, args.ckpt, cfg,
                                   resume=args.resume)
    print(json.dumps({"phase": args.phase, "config_hash": cfg.config_hash(),
                      "metrics": metrics}, indent=2, default=repr))
    return 0


def _parse_emotion(value: str) -> int:
    from .labels import EmotionLabel

    try:
        return EmotionLabel(int(value)).index
    except ValueError:
        return EmotionLabel.from_name(value).index


def cmd_sample(args) -> int:
    import numpy as np
    import torch

    from . import pipeline
    from .audio import SAMPLE_RATE, load_wav, resample_linear

    torch.set_num_threads(1)
    if args.text is None and args.audio is None:
        raise UsageError("need --text and/or --audio to condition on")
    if args.count < 1:
        raise UsageError("--count must be positive")
    wave = None
    if args.audio is not None:
        wave, sr = load_wav(args.audio)
        if sr != SAMPLE_RATE:
            wave = resample_linear(wave, sr, SAMPLE_RATE)
    target = None
    alpha = args.alpha
    if args.emotion_target is not None:
        target = _parse_emotion(args.emotion_target)
        pipeline._require_ckpt(args.ckpt, "emocls")
        if alpha is None:
            alpha = 50.0
    n_frames = args.frames
    if args.seconds is not None:
        n_frames = max(2, int(round(args.seconds * 20)))
    reqs = [pipeline.SampleRequest(seed=args.seed + i, text=args.text,
                                   wave=wave, emotion_target=target,
                                   n_frames=n_frames)
            for i in range(args.count)]
    sampler = pipeline.Sampler(args.ckpt, alpha=alpha)
    clips = sampler.generate(reqs, batch_size=args.batch_size)
    corpus = pipeline.write_generated_corpus(args.out, clips, reqs, sampler)
    if args.export_bvh:
        bvh_dir = Path(args.out) / "bvh"
        bvh_dir.mkdir(exist_ok=True)
        for item in corpus.items():
            pipeline.export_bvh(item.clip, corpus.stats,
                                bvh_dir / f"{item.clip_id}.bvh")
    guided = f", guidance alpha={alpha} target={args.emotion_target}" if target is not None else ""
    print(f"wrote {len(clips)} clips x {n_frames} frames to {args.out}{guided}")
    return 0


def cmd_eval(args) -> int:
    import torch

    from . import pipeline

    torch.set_num_threads(1)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    if not metrics:
        raise UsageError("--metrics is empty")
    report = pipeline.evaluate(args.real, args.generated, args.ckpt, metrics)
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json())
        print(f"report: {args.report}")
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        print(f"csv: {args.csv}")
    return 0


_COMMANDS = {"prepare": cmd_prepare, "train": cmd_train,
             "sample": cmd_sample, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except GestsynthError as e:
        print(f"gestsynth: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
