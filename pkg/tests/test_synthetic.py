import numpy as np
import pytest

from gestsynth.errors import ConfigError
from gestsynth.labels import EMOTIONS, N_EMOTIONS, EmotionLabel
from gestsynth.motion import CONTACTS, FRAME_WIDTH
from gestsynth.synthetic import (EMOTION_JOINTS, FPS, MOTIF_JOINTS,
                                 MOTIF_WORDS, SAMPLE_RATE, LocomotionSpec,
                                 MelodySpec, SynthSpec, gen_dataset,
                                 gen_from_manifest, gen_sample, random_spec,
                                 synth_audio)
from helpers import clip_mean_features, softmax_probe_accuracy


def _spec(**kw):
    base = dict(emotion=2, motif_tokens=(0, 3), melody=MelodySpec(),
                duration=120, seed=9)
    base.update(kw)
    return SynthSpec(**base)


def _rot_cols(joints):
    return np.concatenate([np.arange(6 * j, 6 * j + 6) for j in joints])


def test_gen_sample_deterministic():
    a = gen_sample(_spec())
    b = gen_sample(_spec())
    np.testing.assert_array_equal(a.clip.frames, b.clip.frames)
    np.testing.assert_array_equal(a.wave, b.wave)
    assert a.transcript == b.transcript
    assert a.clip.frames.shape == (120, FRAME_WIDTH)
    assert a.emotion == EmotionLabel(2)


def test_transcript_names_the_motif_tokens():
    s = gen_sample(_spec(motif_tokens=(1, 4)))
    assert s.transcript == f"{MOTIF_WORDS[1]} {MOTIF_WORDS[4]}"


def test_factor_streams_are_orthogonal_on_rotation_channels():
    # disabling one factor must leave the other factors' joint rotations
    # bit-identical; the per-factor RNG streams may not interact
    spec = _spec()
    full = gen_sample(spec).clip.frames.astype(np.float64)
    cases = {
        "melody": (_rot_cols(EMOTION_JOINTS + MOTIF_JOINTS)),
        "emotion": (_rot_cols(MOTIF_JOINTS)),
        "motif": (_rot_cols(EMOTION_JOINTS)),
    }
    for factor, untouched in cases.items():
        partial = gen_sample(spec, disable=frozenset((factor,)))
        diff = np.abs(full - partial.clip.frames.astype(np.float64))
        assert diff[:, untouched].max() == 0.0
        assert diff.max() > 0.0  # the disabled factor did write something


def test_disable_unknown_factor_rejected():
    with pytest.raises(ConfigError):
        gen_sample(_spec(), disable=frozenset(("tempo",)))


def test_contacts_follow_locomotion_kind():
    grounded = {"none", "sit", "stand"}
    for kind, speed in [("none", 0.0), ("walk", 0.025), ("run", 0.06),
                        ("jump", 0.0), ("sit", 0.0), ("stand", 0.0)]:
        s = _spec(locomotion=LocomotionSpec(kind, speed))
        c = gen_sample(s).clip.frames[:, CONTACTS]
        per_frame = c.sum(axis=1)
        if kind in grounded:
            assert (per_frame > 0).all(), kind
        else:
            assert (per_frame == 0).any(), kind
    # a jump cycle alternates between stance and flight
    jump = gen_sample(_spec(locomotion=LocomotionSpec("jump", 0.0)))
    per_frame = jump.clip.frames[:, CONTACTS].sum(axis=1)
    assert (per_frame > 0).any() and (per_frame == 0).any()


def test_synth_audio_shape_and_pitch_separation():
    s0 = _spec(emotion=0)
    s1 = _spec(emotion=3)
    w0, w1 = synth_audio(s0), synth_audio(s1)
    assert w0.shape == (120 * SAMPLE_RATE // FPS,)
    assert np.abs(w0).max() <= 0.7 + 1e-12
    # different emotions use different carrier frequencies
    spec0 = np.abs(np.fft.rfft(w0))
    spec1 = np.abs(np.fft.rfft(w1))
    assert spec0.argmax() != spec1.argmax()


def test_spec_validation():
    with pytest.raises(ConfigError):
        gen_sample(_spec(emotion=8))
    with pytest.raises(ConfigError):
        gen_sample(_spec(motif_tokens=tuple(range(21)) if len(MOTIF_WORDS) > 20
                         else (0,) * 21))
    with pytest.raises(ConfigError):
        gen_sample(_spec(motif_tokens=(len(MOTIF_WORDS),)))
    with pytest.raises(ConfigError):
        gen_sample(_spec(locomotion=LocomotionSpec("crawl", 0.0)))
    with pytest.raises(ConfigError):
        gen_sample(_spec(duration=3))
    with pytest.raises(ConfigError):
        gen_sample(_spec(melody=MelodySpec(envelope=(0.5,))))


def test_dataset_mix_counts_and_validation():
    samples, manifest = gen_dataset(10, seed=1)
    kinds = [it["kind"] for it in manifest["items"]]
    assert kinds.count("hybrid") == 4
    assert sum(k != "hybrid" for k in kinds) == 6
    assert manifest["count"] == 10 and manifest["seed"] == 1
    with pytest.raises(ConfigError):
        gen_dataset(0)
    with pytest.raises(ConfigError):
        gen_dataset(10, mix_ratio=(0.7, 0.4))


def test_manifest_replay_is_bit_exact():
    samples, manifest = gen_dataset(8, seed=3)
    replayed = gen_from_manifest(manifest)
    assert len(replayed) == len(samples)
    for a, b in zip(samples, replayed):
        np.testing.assert_array_equal(a.clip.frames, b.clip.frames)
        np.testing.assert_array_equal(a.wave, b.wave)
        assert a.transcript == b.transcript
        assert a.emotion == b.emotion


def test_random_spec_fields_in_range():
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = random_spec(rng)
        s.validate()
        assert s.locomotion.kind == "none"


def test_emotion_is_linearly_decodable_from_head_channels():
    # the emotion factor writes constant offsets into neck/head/jaw joints,
    # so a from-scratch linear probe on those rotation channels must nail it
    samples, _ = gen_dataset(96, seed=11)
    feats = clip_mean_features([s.clip for s in samples])
    labels = np.array([s.emotion.index for s in samples])
    acc = softmax_probe_accuracy(feats[:, _rot_cols(EMOTION_JOINTS)], labels,
                                 N_EMOTIONS)
    assert acc >= 0.95, f"probe accuracy {acc:.3f}"


def test_emotion_label_helpers():
    lab = EmotionLabel.from_name("Anger")
    assert lab.index == EMOTIONS.index("anger")
    assert lab.one_hot().argmax() == lab.index
    with pytest.raises(ConfigError):
        EmotionLabel.from_name("melancholy")
    with pytest.raises(ConfigError):
        EmotionLabel(9)
