"""Shared test utilities: an independent linear probe and corpus builders."""

from __future__ import annotations

import numpy as np

from gestsynth.corpus import Corpus, write_corpus
from gestsynth.motion import clip_window
from gestsynth.synthetic import gen_dataset


def softmax_probe_accuracy(features: np.ndarray, labels: np.ndarray,
                           n_classes: int, train_frac: float = 0.7,
                           steps: int = 300, lr: float = 0.5,
                           l2: float = 1e-3, seed: int = 0) -> float:
    """Held-out accuracy of a from-scratch softmax regression.

    Deliberately independent of torch: gradient descent on numpy arrays,
    standardized by training-split statistics. Used to certify that a
    factor (e.g. emotion) is linearly decodable from clip features.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    cut = int(round(train_frac * len(x)))
    tr, te = order[:cut], order[cut:]
    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0) + 1e-8
    xtr, xte = (x[tr] - mu) / sd, (x[te] - mu) / sd
    onehot = np.eye(n_classes)[y[tr]]
    w = np.zeros((x.shape[1], n_classes))
    b = np.zeros(n_classes)
    for _ in range(steps):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        d = (p - onehot) / len(tr)
        w -= lr * (xtr.T @ d + l2 * w)
        b -= lr * d.sum(axis=0)
    pred = (xte @ w + b).argmax(axis=1)
    return float(np.mean(pred == y[te]))


def clip_mean_features(clips) -> np.ndarray:
    """Per-clip temporal mean over unmasked frames."""
    rows = []
    for c in clips:
        m = c.mask.astype(bool)
        rows.append(c.frames[m].mean(axis=0))
    return np.stack(rows)


def build_corpus(out_dir, n: int = 12, seed: int = 7, n_frames: int = 180,
                 stats=None) -> Corpus:
    """Small standardized corpus on disk for integration tests."""
    samples, manifest = gen_dataset(n, seed=seed)
    rng = np.random.default_rng([seed, 1])
    entries = []
    for s in samples:
        win = clip_window(s.clip, n_frames, rng=rng)
        side = {"transcript": s.transcript, "emotion": s.emotion.index,
                "emotion_target": s.emotion.index}
        entries.append((win, side, s.wave))
    return write_corpus(out_dir, entries, manifest, stats=stats)
