"""Deterministic synthetic corpus with orthogonal, recoverable factors.

Each factor owns a disjoint set of joints, so zeroing one factor cannot
disturb the rotation channels the others write:

    emotion     neck, head, jaw posture offset + nod oscillation; also the
                audio carrier pitch, so emotion is recoverable from audio
    melody      collar/shoulder/elbow/wrist swing whose amplitude follows
                the audio envelope frame for frame
    motifs      per-token finger pose templates + sinusoids over successive
                sub-windows; the transcript lists the token words
    locomotion  hip/knee/ankle gait plus the root trajectory

Joint positions couple through the kinematic chain, so orthogonality holds
on rotation features (rot6d, ang_vel), not on locations.

Every sample is a pure function of its SynthSpec; the per-factor RNG
streams are spawned from the spec seed so factors never share draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvh import RawMotion
from .errors import ConfigError
from .labels import N_EMOTIONS, EmotionLabel
from .motion import MotionClip, assemble_unified, splice_hybrid
from .skeleton import canonical_partition, canonical_skeleton

SAMPLE_RATE = 16_000
FPS = 20
MIN_DURATION, MAX_DURATION = 60, 180
MAX_TOKENS = 20

MOTIF_WORDS = (
    "beckon", "chop", "circle", "clap", "claw", "count", "cradle", "curl",
    "cut", "dab", "dial", "flick", "fold", "grab", "grip", "hook",
    "knock", "pinch", "point", "poke", "press", "pull", "punch", "push",
    "salute", "scoop", "snap", "spread", "squeeze", "tap", "twist", "wave",
)
MOTIF_VOCAB_SIZE = len(MOTIF_WORDS)

LOCOMOTION_KINDS = ("none", "walk", "run", "jump", "sit", "stand")
DEFAULT_SPEED = {"none": 0.0, "walk": 0.025, "run": 0.06, "jump": 0.0,
                 "sit": 0.0, "stand": 0.0}

# Per-emotion signature: a 4-channel posture offset code on neck/head (deg,
# rows pairwise well separated), a nod oscillation with class-specific
# amplitude and rate, a jaw amplitude, and the audio carrier pitch.
_EMO_HEAD_PITCH = (0.0, -16.0, 22.0, -30.0, 14.0, 28.0, -24.0, 8.0)
_EMO_HEAD_ROLL = (0.0, -10.0, 8.0, 14.0, -18.0, -6.0, 16.0, 4.0)
_EMO_NECK_TILT = (0.0, 12.0, -10.0, 18.0, -16.0, 6.0, -6.0, -14.0)
_EMO_NECK_YAW = (0.0, 8.0, -14.0, -6.0, 10.0, 16.0, -10.0, -18.0)
_EMO_NOD_AMP = (2.0, 12.0, 4.0, 18.0, 14.0, 6.0, 16.0, 8.0)
_EMO_NOD_HZ = (0.5, 1.4, 0.3, 1.9, 1.1, 0.7, 1.6, 0.9)
_EMO_JAW_AMP = (1.0, 6.0, 2.0, 10.0, 4.0, 8.0, 12.0, 3.0)
EMOTION_F0 = tuple(110.0 * 2.0 ** (e / 4.0) for e in range(N_EMOTIONS))

# melody swing amplitudes, deg, about the Z axis
_SWING_AMP = {"collar": 4.0, "shoulder": 22.0, "elbow": 18.0, "wrist": 10.0}

_NECK, _HEAD, _JAW = 12, 15, 22
_COLLARS, _SHOULDERS, _ELBOWS, _WRISTS = (13, 14), (16, 17), (18, 19), (20, 21)
_HIPS, _KNEES, _ANKLES = (1, 2), (4, 5), (7, 8)
_FINGER_START = 25

FACTORS = ("emotion", "melody", "motif", "locomotion")

EMOTION_JOINTS = (_NECK, _HEAD, _JAW)
MELODY_JOINTS = _COLLARS + _SHOULDERS + _ELBOWS + _WRISTS
MOTIF_JOINTS = tuple(range(_FINGER_START, _FINGER_START + 30))
LOCOMOTION_JOINTS = (0,) + _HIPS + _KNEES + _ANKLES

_SKELETON = canonical_skeleton()
_PARTITION = canonical_partition()


@dataclass(frozen=True)
class MelodySpec:
    """Swing rate in Hz plus amplitude-envelope breakpoints in [0, 1]."""

    base_freq: float = 1.0
    envelope: tuple[float, ...] = (0.6, 0.6)

    def to_dict(self) -> dict:
        return {"base_freq": self.base_freq, "envelope": list(self.envelope)}

    @classmethod
    def from_dict(cls, d: dict) -> "MelodySpec":
        return cls(float(d["base_freq"]), tuple(float(v) for v in d["envelope"]))


@dataclass(frozen=True)
class LocomotionSpec:
    kind: str = "none"
    speed: float = 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "speed": self.speed}

    @classmethod
    def from_dict(cls, d: dict) -> "LocomotionSpec":
        return cls(str(d["kind"]), float(d["speed"]))


@dataclass(frozen=True)
class SynthSpec:
    emotion: int
    motif_tokens: tuple[int, ...]
    melody: MelodySpec
    locomotion: LocomotionSpec = LocomotionSpec()
    duration: int = 180
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.emotion < N_EMOTIONS:
            raise ConfigError(f"emotion index {self.emotion} outside [0, {N_EMOTIONS})")
        if len(self.motif_tokens) > MAX_TOKENS:
            raise ConfigError(
                f"at most {MAX_TOKENS} motif tokens, got {len(self.motif_tokens)}"
            )
        for tok in self.motif_tokens:
            if not 0 <= tok < MOTIF_VOCAB_SIZE:
                raise ConfigError(f"unknown motif token {tok}")
        if self.locomotion.kind not in LOCOMOTION_KINDS:
            raise ConfigError(f"unknown locomotion kind {self.locomotion.kind!r}")
        if not MIN_DURATION <= self.duration <= MAX_DURATION:
            raise ConfigError(
                f"duration {self.duration} outside [{MIN_DURATION}, {MAX_DURATION}]"
            )
        if len(self.melody.envelope) < 2:
            raise ConfigError("melody envelope needs at least 2 breakpoints")

    def to_dict(self) -> dict:
        return {
            "emotion": self.emotion,
            "motif_tokens": list(self.motif_tokens),
            "melody": self.melody.to_dict(),
            "locomotion": self.locomotion.to_dict(),
            "duration": self.duration,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(
            emotion=int(d["emotion"]),
            motif_tokens=tuple(int(t) for t in d["motif_tokens"]),
            melody=MelodySpec.from_dict(d["melody"]),
            locomotion=LocomotionSpec.from_dict(d["locomotion"]),
            duration=int(d["duration"]),
            seed=int(d["seed"]),
        )


@dataclass
class SynthSample:
    clip: MotionClip
    wave: np.ndarray
    transcript: str
    emotion: EmotionLabel
    manifest_entry: dict = field(default_factory=dict)


def _col(joint: int, axis: str) -> int:
    """Column of a rotation channel in the canonical flat channel vector."""
    zxy = "ZXY".index(axis)
    if joint == 0:
        return 3 + zxy
    return 6 + 3 * (joint - 1) + zxy


def _envelope(breakpoints: tuple[float, ...], u: np.ndarray) -> np.ndarray:
    """Piecewise-linear envelope over u in [0, 1]."""
    knots = np.linspace(0.0, 1.0, len(breakpoints))
    return np.interp(u, knots, np.asarray(breakpoints, dtype=np.float64))


def _motif_template(token: int) -> tuple[np.ndarray, np.ndarray, float]:
    """(pose offsets, sinusoid amps) over 30 finger joints + motif rate in Hz."""
    rng = np.random.default_rng(7_000 + token)
    pose = rng.uniform(-45.0, 45.0, 30)
    amp = rng.uniform(5.0, 20.0, 30)
    freq = 0.6 + 0.09 * token
    return pose, amp, freq


def _write_emotion(data, t, e: int, rng) -> None:
    phase = rng.uniform(0.0, 2.0 * np.pi)
    nod = _EMO_NOD_AMP[e] * np.sin(2.0 * np.pi * _EMO_NOD_HZ[e] * t + phase)
    data[:, _col(_NECK, "X")] += 0.5 * _EMO_HEAD_PITCH[e] + 0.4 * nod
    data[:, _col(_NECK, "Z")] += _EMO_NECK_TILT[e]
    data[:, _col(_NECK, "Y")] += _EMO_NECK_YAW[e]
    data[:, _col(_HEAD, "X")] += _EMO_HEAD_PITCH[e] + 0.6 * nod
    data[:, _col(_HEAD, "Z")] += _EMO_HEAD_ROLL[e]
    data[:, _col(_JAW, "X")] += _EMO_JAW_AMP[e] * (
        0.5 + 0.5 * np.sin(2.0 * np.pi * _EMO_NOD_HZ[e] * 1.7 * t + phase)
    )


def _write_melody(data, t, melody: MelodySpec, rng) -> None:
    u = t / t[-1] if t.size > 1 else np.zeros_like(t)
    env = _envelope(melody.envelope, u)
    for group, joints in (("collar", _COLLARS), ("shoulder", _SHOULDERS),
                          ("elbow", _ELBOWS), ("wrist", _WRISTS)):
        amp = _SWING_AMP[group]
        for side, j in enumerate(joints):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            sign = 1.0 if side == 0 else -1.0
            swing = amp * env * np.sin(2.0 * np.pi * melody.base_freq * t + phase)
            data[:, _col(j, "Z")] += sign * swing


def _write_motifs(data, t, tokens: tuple[int, ...], rng) -> None:
    if not tokens:
        return
    n = t.size
    bounds = np.linspace(0, n, len(tokens) + 1).astype(int)
    for k, tok in enumerate(tokens):
        lo, hi = bounds[k], bounds[k + 1]
        if hi <= lo:
            continue
        pose, amp, freq = _motif_template(tok)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tt = t[lo:hi] - t[lo]
        osc = np.sin(2.0 * np.pi * freq * tt + phase)
        cols = [_col(_FINGER_START + f, "Z") for f in range(30)]
        data[np.ix_(np.arange(lo, hi), cols)] += pose[None, :] + amp[None, :] * osc[:, None]


def _write_locomotion(data, t, loco: LocomotionSpec, rng) -> None:
    kind = loco.kind
    if kind in ("none",):
        return
    n = t.size
    if kind == "stand":
        data[:, _col(0, "Y")] += 4.0 * np.sin(2.0 * np.pi * 0.3 * t)
        return
    if kind == "sit":
        for j in _HIPS:
            data[:, _col(j, "X")] += -80.0
        for j in _KNEES:
            data[:, _col(j, "X")] += 80.0
        data[:, 1] += -0.43  # root Y
        return
    if kind == "jump":
        rate = 0.9
        lift = np.maximum(0.0, np.sin(2.0 * np.pi * rate * t))
        data[:, 1] += 0.12 * lift
        for j in _KNEES:
            data[:, _col(j, "X")] += 50.0 * lift
        for j in _HIPS:
            data[:, _col(j, "X")] += -25.0 * lift
        return
    # walk / run gaits
    gait_hz = 1.0 if kind == "walk" else 1.6
    hip_amp = 25.0 if kind == "walk" else 40.0
    knee_amp = 20.0 if kind == "walk" else 35.0
    phase = rng.uniform(0.0, 2.0 * np.pi)
    for side, (hip, knee, ankle) in enumerate(zip(_HIPS, _KNEES, _ANKLES)):
        leg_phase = phase + (0.0 if side == 0 else np.pi)
        sw = np.sin(2.0 * np.pi * gait_hz * t + leg_phase)
        data[:, _col(hip, "X")] += hip_amp * sw
        data[:, _col(knee, "X")] += knee_amp * np.maximum(0.0, -sw)
        data[:, _col(ankle, "X")] += 8.0 * sw
    data[:, 2] += loco.speed * np.arange(n)          # root Z advance
    data[:, 1] += 0.015 * np.sin(4.0 * np.pi * gait_hz * t)  # gait bob


def gen_sample(spec: SynthSpec, disable: frozenset = frozenset()) -> SynthSample:
    """Generate one (clip, waveform, transcript, emotion) sample.

    disable is a test hook: factor names listed there write nothing into
    the motion channels, everything else is untouched (per-factor RNG
    streams are independent).
    """
    spec.validate()
    unknown = set(disable) - set(FACTORS)
    if unknown:
        raise ConfigError(f"unknown factors to disable: {sorted(unknown)}")
    n = spec.duration
    t = np.arange(n, dtype=np.float64) / FPS
    streams = np.random.SeedSequence(spec.seed).spawn(len(FACTORS))
    rngs = {name: np.random.default_rng(s) for name, s in zip(FACTORS, streams)}

    data = np.zeros((n, _SKELETON.channel_count()), dtype=np.float64)
    if "emotion" not in disable:
        _write_emotion(data, t, spec.emotion, rngs["emotion"])
    if "melody" not in disable:
        _write_melody(data, t, spec.melody, rngs["melody"])
    if "motif" not in disable:
        _write_motifs(data, t, spec.motif_tokens, rngs["motif"])
    if "locomotion" not in disable:
        _write_locomotion(data, t, spec.locomotion, rngs["locomotion"])

    raw = RawMotion(_SKELETON, data, 1.0 / FPS)
    source = "gesture" if spec.locomotion.kind == "none" else "locomotion"
    clip = assemble_unified(raw, source=source)

    wave = synth_audio(spec)
    transcript = " ".join(MOTIF_WORDS[tok] for tok in spec.motif_tokens)
    return SynthSample(clip, wave, transcript, EmotionLabel(spec.emotion),
                       manifest_entry={"kind": source, "spec": spec.to_dict()})


def synth_audio(spec: SynthSpec) -> np.ndarray:
    """Mono waveform: emotion-pitched carrier under the melody envelope."""
    n_samples = spec.duration * SAMPLE_RATE // FPS
    ts = np.arange(n_samples, dtype=np.float64) / SAMPLE_RATE
    u = ts / ts[-1] if n_samples > 1 else np.zeros_like(ts)
    env = _envelope(spec.melody.envelope, u)
    f0 = EMOTION_F0[spec.emotion]
    return 0.7 * env * np.sin(2.0 * np.pi * f0 * ts)


def random_spec(rng: np.random.Generator, locomotion: LocomotionSpec | None = None,
                duration: int | None = None) -> SynthSpec:
    """Draw a spec; locomotion defaults to none (a pure gesture clip)."""
    n_tokens = int(rng.integers(1, 4))
    tokens = tuple(int(v) for v in rng.choice(MOTIF_VOCAB_SIZE, size=n_tokens,
                                              replace=False))
    melody = MelodySpec(
        base_freq=float(rng.uniform(0.8, 1.6)),
        envelope=tuple(float(v) for v in rng.uniform(0.15, 1.0, 4)),
    )
    return SynthSpec(
        emotion=int(rng.integers(0, N_EMOTIONS)),
        motif_tokens=tokens,
        melody=melody,
        locomotion=locomotion or LocomotionSpec(),
        duration=int(duration if duration is not None else rng.integers(100, MAX_DURATION + 1)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def _hybrid_sample(spec_g: SynthSpec, spec_l: SynthSpec) -> SynthSample:
    gesture = gen_sample(spec_g)
    loco = gen_sample(spec_l, disable=frozenset(("emotion", "melody", "motif")))
    clip = splice_hybrid(loco.clip, gesture.clip, _PARTITION, _SKELETON)
    entry = {"kind": "hybrid", "gesture": spec_g.to_dict(),
             "locomotion": spec_l.to_dict()}
    return SynthSample(clip, gesture.wave, gesture.transcript, gesture.emotion,
                       manifest_entry=entry)


def draw_manifest(n: int, mix_ratio: tuple[float, float] = (0.6, 0.4),
                  seed: int = 0) -> dict:
    """The corpus recipe alone: n item specs, no motion generated yet.

    Each item fully determines its sample, so big corpora can be built
    one sample_from_item at a time instead of holding everything live.
    """
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    if abs(sum(mix_ratio) - 1.0) > 1e-9:
        raise ConfigError(f"mix ratio must sum to 1, got {mix_ratio}")
    rng = np.random.default_rng(seed)
    n_gesture = round(n * mix_ratio[0])
    items = []
    moving = [k for k in LOCOMOTION_KINDS if k != "none"]
    for i in range(n):
        spec = random_spec(rng)
        if i < n_gesture:
            kind = "gesture" if spec.locomotion.kind == "none" else "locomotion"
            items.append({"kind": kind, "spec": spec.to_dict()})
        else:
            kind = moving[int(rng.integers(0, len(moving)))]
            speed = DEFAULT_SPEED[kind] * float(rng.uniform(0.8, 1.2))
            spec_l = SynthSpec(
                emotion=spec.emotion, motif_tokens=(), melody=MelodySpec(),
                locomotion=LocomotionSpec(kind, speed), duration=spec.duration,
                seed=int(rng.integers(0, 2**31 - 1)),
            )
            items.append({"kind": "hybrid", "gesture": spec.to_dict(),
                          "locomotion": spec_l.to_dict()})
    return {
        "version": 1,
        "count": n,
        "mix_ratio": list(mix_ratio),
        "seed": seed,
        "items": items,
    }


def sample_from_item(item: dict) -> SynthSample:
    """Regenerate one manifest item bit-exactly."""
    if item["kind"] == "hybrid":
        return _hybrid_sample(SynthSpec.from_dict(item["gesture"]),
                              SynthSpec.from_dict(item["locomotion"]))
    return gen_sample(SynthSpec.from_dict(item["spec"]))


def gen_dataset(n: int, mix_ratio: tuple[float, float] = (0.6, 0.4),
                seed: int = 0) -> tuple[list[SynthSample], dict]:
    """n samples split into gesture-only and spliced hybrid clips.

    Returns (samples, manifest); regenerating from the manifest alone
    reproduces the corpus bit for bit.
    """
    manifest = draw_manifest(n, mix_ratio, seed=seed)
    return [sample_from_item(it) for it in manifest["items"]], manifest


def gen_from_manifest(manifest: dict) -> list[SynthSample]:
    """Replay a corpus exactly from its manifest."""
    return [sample_from_item(item) for item in manifest["items"]]
