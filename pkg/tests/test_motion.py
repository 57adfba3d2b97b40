import numpy as np
import pytest

from gestsynth.bvh import parse_bvh, serialize_bvh
from gestsynth.errors import (ClipTooShortError, RetargetError, ShapeError,
                              SpliceError, StructuralError)
from gestsynth.motion import (ANG_VEL, CONTACTS, FRAME_WIDTH, LIN_VEL, LOC,
                              ROT6D, ContactConfig, MotionClip,
                              assemble_unified, clip_to_raw, clip_window,
                              detect_contacts, pack_frames,
                              partition_channel_indices, splice_hybrid,
                              unpack_frames)
from gestsynth.rotations import rot6d_to_matrix
from gestsynth.skeleton import (CANONICAL_GROUND_Y, HEEL_JOINTS, JOINT_COUNT,
                                TOE_JOINTS, canonical_partition,
                                canonical_skeleton, forward_kinematics)
from gestsynth.synthetic import SynthSpec, gen_sample, random_spec


def sample_clip(seed=0, locomotion=None):
    spec = random_spec(np.random.default_rng(seed), locomotion=locomotion)
    return gen_sample(spec).clip


def test_layout_slices_cover_exactly_994():
    spans = [ROT6D, LOC, LIN_VEL, ANG_VEL, CONTACTS]
    assert spans[0].start == 0 and spans[-1].stop == FRAME_WIDTH == 994
    for a, b in zip(spans, spans[1:]):
        assert a.stop == b.start
    widths = [s.stop - s.start for s in spans]
    assert widths == [330, 165, 165, 330, 4]


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(7, FRAME_WIDTH)).astype(np.float32)
    fields = unpack_frames(frames)
    assert fields.rot6d.shape == (7, JOINT_COUNT, 6)
    assert fields.loc.shape == (7, JOINT_COUNT, 3)
    assert fields.contacts.shape == (7, 4)
    np.testing.assert_array_equal(pack_frames(*fields), frames)


def test_partition_channels_are_disjoint_and_complete():
    fingers, limbs = partition_channel_indices(canonical_partition())
    assert len(fingers) == 540 and len(limbs) == 454
    both = np.concatenate([fingers, limbs])
    assert len(np.unique(both)) == FRAME_WIDTH


def test_motion_clip_validation():
    good = np.zeros((5, FRAME_WIDTH), dtype=np.float32)
    clip = MotionClip(good, np.ones(5, dtype=np.uint8))
    assert clip.length == 5 and clip.fps == 20
    with pytest.raises(ShapeError):
        MotionClip(np.zeros((5, 10), dtype=np.float32), np.ones(5, dtype=np.uint8))
    with pytest.raises(ShapeError):
        MotionClip(good, np.ones(4, dtype=np.uint8))
    with pytest.raises(StructuralError):
        MotionClip(good, np.ones(5, dtype=np.uint8), source="weird")


def test_assemble_unified_shapes_and_velocities():
    clip = sample_clip(seed=3)
    assert clip.frames.shape[1] == FRAME_WIDTH
    assert clip.frames.dtype == np.float32
    f = clip.fields()
    # frame 0 velocities are defined as zero
    assert np.abs(f.lin_vel[0]).max() == 0.0
    assert np.abs(f.ang_vel[0]).max() == 0.0
    # velocities are per-frame first differences
    np.testing.assert_allclose(f.lin_vel[1], f.loc[1] - f.loc[0], atol=1e-4)


def test_positions_match_forward_kinematics():
    clip = sample_clip(seed=4)
    f = clip.fields()
    sk = canonical_skeleton()
    rot = rot6d_to_matrix(f.rot6d[10].astype(np.float64))
    pos, _ = forward_kinematics(sk, rot[None], f.loc[10, 0][None].astype(np.float64))
    np.testing.assert_allclose(pos[0], f.loc[10], atol=1e-4)


def test_contact_detection_standing_and_walking():
    still = sample_clip(seed=5, locomotion=None)
    f = still.fields()
    # gesture clips keep both feet planted
    assert f.contacts.min() == 1.0
    from gestsynth.synthetic import LocomotionSpec
    walk = sample_clip(seed=6, locomotion=LocomotionSpec("walk"))
    wf = walk.fields()
    assert wf.contacts.mean() < 0.9  # swing phases lift feet


def test_detect_contacts_thresholds():
    n = 10
    loc = np.full((n, JOINT_COUNT, 3), 0.5)
    cfg = ContactConfig()
    heel = HEEL_JOINTS[0]
    loc[:, heel, 1] = CANONICAL_GROUND_Y + cfg.h_thresh - 1e-4
    contacts = detect_contacts(loc, cfg)
    assert contacts[:, 0].min() == 1.0
    # fast-moving foot never counts as planted
    moving = loc.copy()
    moving[:, heel, 0] = np.linspace(0, 5, n)
    contacts2 = detect_contacts(moving, cfg)
    assert contacts2[1:, 0].max() == 0.0
    # just above the height threshold breaks contact
    high = loc.copy()
    high[:, heel, 1] = CANONICAL_GROUND_Y + cfg.h_thresh + 1e-4
    assert detect_contacts(high, cfg)[:, 0].max() == 0.0


def test_splice_hybrid_decomposes_to_sources():
    from gestsynth.synthetic import LocomotionSpec
    rng = np.random.default_rng(12)
    g_spec = random_spec(rng, duration=120)
    l_spec = random_spec(rng, locomotion=LocomotionSpec("walk"), duration=120)
    gesture = gen_sample(g_spec).clip
    locomotion = gen_sample(l_spec, disable=frozenset({"emotion", "melody", "motif"})).clip
    part = canonical_partition()
    hybrid = splice_hybrid(locomotion, gesture, part)
    assert hybrid.source == "hybrid"
    hf = hybrid.fields()
    gf = gesture.fields()
    lf = locomotion.fields()
    # upper-body rotations come from the gesture clip, exactly
    lower = sorted(part.spine3_cut)
    upper = [j for j in range(JOINT_COUNT) if j not in part.spine3_cut]
    np.testing.assert_array_equal(hf.rot6d[:, upper], gf.rot6d[:, upper])
    np.testing.assert_array_equal(hf.rot6d[:, lower], lf.rot6d[:, lower])
    np.testing.assert_array_equal(hf.ang_vel[:, lower], lf.ang_vel[:, lower])
    np.testing.assert_array_equal(hf.contacts, lf.contacts)


def test_splice_hybrid_rejects_mismatched_lengths():
    a = sample_clip(seed=13)
    b = sample_clip(seed=14)
    if a.length == b.length:
        b = MotionClip(b.frames[:-5], b.mask[:-5], b.fps, b.source)
    with pytest.raises(SpliceError):
        splice_hybrid(a, b, canonical_partition())


def test_clip_window_crop_pad_reject():
    clip = sample_clip(seed=15)
    win = clip_window(clip, 64, rng=0)
    assert win.length == 64 and win.mask.all()
    padded = clip_window(clip, clip.length + 40, min_len=10, rng=0)
    assert padded.length == clip.length + 40
    assert padded.mask[-40:].max() == 0
    assert np.abs(padded.frames[-40:]).max() == 0.0
    with pytest.raises(ClipTooShortError):
        clip_window(clip, 180, min_len=clip.length + 1, rng=0)
    # explicit start slices deterministically
    w2 = clip_window(clip, 64, rng=None, start=5)
    np.testing.assert_array_equal(w2.frames, clip.frames[5:69])


def test_clip_to_raw_and_back_preserves_rotations():
    from gestsynth.motion import retarget_and_scale

    clip = sample_clip(seed=16)
    raw = clip_to_raw(clip)
    # serializing writes subtrees depth-first, so joints come back permuted;
    # retargeting restores canonical order by name
    again = retarget_and_scale(parse_bvh(serialize_bvh(raw)))
    rebuilt = assemble_unified(again, source=clip.source)
    f0, f1 = clip.fields(), rebuilt.fields()
    np.testing.assert_allclose(f1.rot6d, f0.rot6d, atol=1e-5)
    np.testing.assert_allclose(f1.loc, f0.loc, atol=1e-4)


def test_retarget_requires_mandatory_joints():
    from gestsynth.motion import retarget_and_scale

    bad = parse_bvh((__import__("pathlib").Path(__file__).parent /
                     "fixtures" / "golden_arm.bvh").read_text())
    with pytest.raises(RetargetError, match="pelvis"):
        retarget_and_scale(bad)
