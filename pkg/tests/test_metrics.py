import csv
import io
import json
import math

import numpy as np
import pytest
import torch

from gestsynth.emotion import EmotionClassifier, EmotionClassifierConfig
from gestsynth.errors import (ConfigError, DataError, NumericalError,
                              ShapeError)
from gestsynth.metrics import (FGDExtractor, FGDTrainParams, GaussianStats,
                               MetricReport, classify_emotions, fgd,
                               frechet_distance, match_rate, mean_alignment,
                               pool_clips, semantic_alignment_score,
                               train_fgd_extractor)
from gestsynth.motion import FRAME_WIDTH, MotionClip


def _clips(rng, m=8, n=20, shift=0.0, pad=0):
    out = []
    for _ in range(m):
        frames = (rng.standard_normal((n, FRAME_WIDTH)) + shift).astype(np.float32)
        mask = np.ones(n, dtype=np.uint8)
        if pad:
            frames[-pad:] = 0.0
            mask[-pad:] = 0
        out.append(MotionClip(frames, mask, source="synthetic"))
    return out


def test_one_dimensional_frechet_closed_form():
    # d^2 = (m1 - m2)^2 + s1^2 + s2^2 - 2 s1 s2 for 1-D Gaussians
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.2, 2.0, 2)
        a = GaussianStats(np.array([m1]), np.array([[s1 ** 2]]))
        b = GaussianStats(np.array([m2]), np.array([[s2 ** 2]]))
        got = frechet_distance(a, b)
        want = (m1 - m2) ** 2 + s1 ** 2 + s2 ** 2 - 2 * s1 * s2
        worst = max(worst, abs(got - max(want, 0.0)))
    assert worst < 1e-8, worst


def test_frechet_commutes_and_zero_on_self():
    rng = np.random.default_rng(1)
    a = GaussianStats.fit(rng.standard_normal((40, 6)))
    b = GaussianStats.fit(rng.standard_normal((40, 6)) + 0.5)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-10)
    assert frechet_distance(a, a) < 1e-10
    with pytest.raises(ShapeError):
        frechet_distance(a, GaussianStats.fit(rng.standard_normal((40, 3))))


def test_gaussian_stats_validation():
    with pytest.raises(DataError):
        GaussianStats.fit(np.zeros((1, 4)))
    with pytest.raises(DataError):
        GaussianStats.fit(np.zeros(4))


def test_fgd_self_distance_is_tiny():
    rng = np.random.default_rng(2)
    clips = _clips(rng, m=10)
    assert fgd(clips, clips) < 1e-6


def test_fgd_separates_shifted_population():
    rng = np.random.default_rng(3)
    real = _clips(rng, m=12)
    near = _clips(rng, m=12)
    far = _clips(rng, m=12, shift=1.5)
    assert fgd(real, far) > fgd(real, near)


def test_fgd_validation():
    rng = np.random.default_rng(4)
    clips = _clips(rng, m=4)
    with pytest.raises(ConfigError):
        fgd(clips, clips, space="latent")
    with pytest.raises(DataError):
        fgd(clips[:1], clips)
    with pytest.raises(ConfigError):
        fgd(clips, clips, space="feature")  # extractor missing


def test_pool_clips_masked_mean():
    rng = np.random.default_rng(5)
    clips = _clips(rng, m=3, n=10, pad=4)
    pooled = pool_clips(clips)
    assert pooled.shape == (3, FRAME_WIDTH)
    want = clips[0].frames[:6].mean(axis=0)
    np.testing.assert_allclose(pooled[0], want, rtol=1e-6)
    bad = MotionClip(np.zeros((3, FRAME_WIDTH), dtype=np.float32),
                     np.zeros(3, dtype=np.uint8), source="synthetic")
    with pytest.raises(DataError):
        pool_clips([bad])


def test_fgd_extractor_feature_space():
    torch.manual_seed(0)
    rng = np.random.default_rng(6)
    clips = _clips(rng, m=16, n=12)
    frames = torch.stack([torch.from_numpy(c.frames) for c in clips])
    masks = torch.ones(16, 12)
    ex = FGDExtractor(code_dim=8, hidden=32)
    history = train_fgd_extractor(ex, frames, masks,
                                  FGDTrainParams(steps=60, batch_size=8), seed=0)
    assert history[-1] < history[0]
    codes = ex.codes(frames, masks)
    assert codes.shape == (16, 8)
    assert fgd(clips, clips, space="feature", extractor=ex) < 1e-6


def test_alignment_scores():
    a = np.array([1.0, 0.0])
    assert semantic_alignment_score(a, a) == pytest.approx(1.0)
    assert semantic_alignment_score(a, -a) == pytest.approx(-1.0)
    assert semantic_alignment_score(a, np.array([0.0, 2.0])) == pytest.approx(0.0)
    rng = np.random.default_rng(7)
    for _ in range(25):
        s = semantic_alignment_score(rng.standard_normal(8), rng.standard_normal(8))
        assert -1.0 <= s <= 1.0
    with pytest.raises(NumericalError):
        semantic_alignment_score(a, np.zeros(2))
    with pytest.raises(ShapeError):
        semantic_alignment_score(a, np.zeros(3))
    zt = rng.standard_normal((5, 4))
    zg = rng.standard_normal((5, 4))
    want = np.mean([semantic_alignment_score(zt[i], zg[i]) for i in range(5)])
    assert mean_alignment(zt, zg) == pytest.approx(want, abs=1e-12)


def test_match_rate_is_exact_recount():
    rng = np.random.default_rng(8)
    pred = rng.integers(0, 8, 200)
    ref = rng.integers(0, 8, 200)
    manual = sum(int(p == r) for p, r in zip(pred, ref)) / 200
    assert match_rate(pred, ref) == manual
    assert match_rate(pred, pred) == 1.0
    with pytest.raises(ShapeError):
        match_rate(pred, ref[:10])
    with pytest.raises(DataError):
        match_rate(np.array([]), np.array([]))


def test_classify_emotions_batching_matches_single_pass():
    torch.manual_seed(1)
    model = EmotionClassifier(EmotionClassifierConfig(
        width=32, layers=1, heads=2, timestep_conditioned=False))
    with torch.no_grad():
        model.head.weight.add_(torch.randn(model.head.weight.shape))
    clips = torch.randn(9, 6, FRAME_WIDTH)
    masks = torch.ones(9, 6)
    batched = classify_emotions(model, clips, masks, batch=4)
    whole = classify_emotions(model, clips, masks, batch=64)
    np.testing.assert_array_equal(batched, whole)
    assert batched.shape == (9,)


def test_metric_report_json_schema_and_csv():
    rep = MetricReport("0.1.0", n_real=10, n_generated=20,
                       metrics={"fgd_raw": 1.25, "sa": 0.5, "ea": 0.75, "ec": 0.5},
                       notes={"preset": "desk"})
    doc = json.loads(rep.to_json())
    assert doc["metrics"]["fgd_raw"] == 1.25
    assert doc["n_real"] == 10 and doc["notes"]["preset"] == "desk"
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["metric", "value"]
    values = {k: float(v) for k, v in rows[1:]}
    assert values["sa"] == 0.5 and len(values) == 4
    assert "fgd_raw" in rep.table()
    # serialization rejects junk: NaN is not valid JSON, counts are bounded
    bad = MetricReport("0.1.0", n_real=10, n_generated=20,
                       metrics={"fgd_raw": float("nan")})
    with pytest.raises(NumericalError):
        bad.to_json()
    bad2 = MetricReport("0.1.0", n_real=-1, n_generated=0, metrics={})
    with pytest.raises(Exception):
        bad2.to_json()
