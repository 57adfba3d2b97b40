"""Unified 994-dim motion representation and clip-level operations.

Per-frame layout, field-major over the 55 canonical joints:

    [0, 330)    rot6d     J x 6   local rotation features
    [330, 495)  loc       J x 3   global joint positions, meters
    [495, 660)  lin_vel   J x 3   loc first difference, meters/frame
    [660, 990)  ang_vel   J x 6   rot6d first difference, per frame
    [990, 994)  contacts  4       left heel, right heel, left toe, right toe

Clips are float32; assembly math runs in float64 and is cast once at pack
time so the in-memory clip equals its on-disk form bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bvh import RawMotion
from .errors import (ClipTooShortError, ConfigError, RetargetError, ShapeError,
                     SpliceError, StructuralError)
from .rotations import matrix_to_euler, matrix_to_rot6d, rot6d_to_matrix
from .skeleton import (
    CANONICAL_GROUND_Y,
    HEEL_JOINTS,
    JOINT_COUNT,
    MANDATORY_JOINTS,
    TOE_JOINTS,
    BodyPartition,
    SkeletonHierarchy,
    canonical_skeleton,
    forward_kinematics,
    leg_length,
)

J = JOINT_COUNT
ROT6D = slice(0, 6 * J)                     # 0:330
LOC = slice(6 * J, 9 * J)                   # 330:495
LIN_VEL = slice(9 * J, 12 * J)              # 495:660
ANG_VEL = slice(12 * J, 18 * J)             # 660:990
CONTACTS = slice(18 * J, 18 * J + 4)        # 990:994
FRAME_WIDTH = 18 * J + 4                    # 994

SOURCES = ("gesture", "locomotion", "hybrid", "synthetic", "bvh", "generated")

TARGET_FPS = 20
TARGET_LEN = 180
MIN_LEN = 60


class FrameFields(NamedTuple):
    rot6d: np.ndarray     # (N, J, 6)
    loc: np.ndarray       # (N, J, 3)
    lin_vel: np.ndarray   # (N, J, 3)
    ang_vel: np.ndarray   # (N, J, 6)
    contacts: np.ndarray  # (N, 4)


def unpack_frames(frames: np.ndarray) -> FrameFields:
    """Views into a (N, 994) array, reshaped per field."""
    if frames.shape[-1] != FRAME_WIDTH:
        raise ShapeError(f"expected frame width {FRAME_WIDTH}, got {frames.shape}")
    n = frames.shape[0]
    return FrameFields(
        rot6d=frames[:, ROT6D].reshape(n, J, 6),
        loc=frames[:, LOC].reshape(n, J, 3),
        lin_vel=frames[:, LIN_VEL].reshape(n, J, 3),
        ang_vel=frames[:, ANG_VEL].reshape(n, J, 6),
        contacts=frames[:, CONTACTS],
    )


def pack_frames(rot6d, loc, lin_vel, ang_vel, contacts, dtype=np.float32) -> np.ndarray:
    n = rot6d.shape[0]
    out = np.empty((n, FRAME_WIDTH), dtype=dtype)
    out[:, ROT6D] = rot6d.reshape(n, -1)
    out[:, LOC] = loc.reshape(n, -1)
    out[:, LIN_VEL] = lin_vel.reshape(n, -1)
    out[:, ANG_VEL] = ang_vel.reshape(n, -1)
    out[:, CONTACTS] = contacts
    return out


def joint_channel_indices(joints, include_contacts=False) -> np.ndarray:
    """Flat frame columns carrying any feature of the given joint indices."""
    cols = []
    for j in sorted(joints):
        cols.extend(range(ROT6D.start + 6 * j, ROT6D.start + 6 * j + 6))
        cols.extend(range(LOC.start + 3 * j, LOC.start + 3 * j + 3))
        cols.extend(range(LIN_VEL.start + 3 * j, LIN_VEL.start + 3 * j + 3))
        cols.extend(range(ANG_VEL.start + 6 * j, ANG_VEL.start + 6 * j + 6))
    if include_contacts:
        cols.extend(range(CONTACTS.start, CONTACTS.stop))
    return np.array(sorted(cols), dtype=np.int64)


def rotation_channel_indices(joints) -> np.ndarray:
    """rot6d and ang_vel columns only; the channels a joint owns exclusively."""
    cols = []
    for j in sorted(joints):
        cols.extend(range(ROT6D.start + 6 * j, ROT6D.start + 6 * j + 6))
        cols.extend(range(ANG_VEL.start + 6 * j, ANG_VEL.start + 6 * j + 6))
    return np.array(sorted(cols), dtype=np.int64)


def partition_channel_indices(partition: BodyPartition) -> tuple[np.ndarray, np.ndarray]:
    """(finger columns, limb columns); contacts count as limb channels."""
    fingers = joint_channel_indices(partition.finger_joint_indices)
    limbs = joint_channel_indices(partition.limb_joint_indices, include_contacts=True)
    return fingers, limbs


@dataclass
class MotionClip:
    """A windowed sequence of unified frames with a validity mask."""

    frames: np.ndarray                  # (N, 994) float32
    mask: np.ndarray                    # (N,) uint8, 0 marks zero padding
    fps: int = TARGET_FPS
    source: str = "gesture"

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_WIDTH:
            raise ShapeError(f"clip frames must be (N, {FRAME_WIDTH}), got {self.frames.shape}")
        if self.mask.shape != (self.frames.shape[0],):
            raise ShapeError("mask length must equal frame count")
        if self.fps <= 0:
            raise StructuralError("fps must be positive")
        if self.source not in SOURCES:
            raise StructuralError(f"unknown source {self.source!r}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def fields(self) -> FrameFields:
        return unpack_frames(self.frames)

    def copy(self) -> "MotionClip":
        return MotionClip(self.frames.copy(), self.mask.copy(), self.fps, self.source)


@dataclass(frozen=True)
class ContactConfig:
    """Foot contact heuristic: low and slow means planted."""

    h_thresh: float = 0.05       # meters above ground
    v_thresh: float = 0.01      # meters per frame
    ground_y: float = CANONICAL_GROUND_Y
    heel_joints: tuple[int, int] = HEEL_JOINTS
    toe_joints: tuple[int, int] = TOE_JOINTS

    @property
    def contact_joints(self) -> tuple[int, int, int, int]:
        return (*self.heel_joints, *self.toe_joints)


def detect_contacts(loc: np.ndarray, config: ContactConfig | None = None) -> np.ndarray:
    """(N, 4) binary flags from (N, J, 3) positions.

    contact = height above ground < h_thresh AND speed < v_thresh, where
    speed is the per-frame displacement norm (frame 0 has none, so 0).
    """
    config = config or ContactConfig()
    pts = loc[:, list(config.contact_joints)]        # (N, 4, 3)
    height = pts[..., 1] - config.ground_y
    speed = np.zeros_like(height)
    if loc.shape[0] > 1:
        speed[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
    return ((height < config.h_thresh) & (speed < config.v_thresh)).astype(np.float64)


def assemble_unified(
    m: RawMotion,
    contact_config: ContactConfig | None = None,
    source: str = "gesture",
) -> MotionClip:
    """Convert a retargeted 20 fps RawMotion into a unified MotionClip.

    Positions come from forward kinematics; velocities are first differences
    with frame 0 set to zero.
    """
    if m.skeleton.joint_count != J:
        raise StructuralError(
            f"unified representation needs {J} joints, got {m.skeleton.joint_count}"
        )
    if m.fps != TARGET_FPS:
        raise StructuralError(f"expected {TARGET_FPS} fps input, got {m.fps}")
    rotmats = m.rotation_matrices()
    rot6d = matrix_to_rot6d(rotmats)
    loc, _ = forward_kinematics(m.skeleton, rotmats, m.root_translation(),
                                m.local_translations())
    lin_vel = np.zeros_like(loc)
    lin_vel[1:] = np.diff(loc, axis=0)
    ang_vel = np.zeros_like(rot6d)
    ang_vel[1:] = np.diff(rot6d, axis=0)
    contacts = detect_contacts(loc, contact_config)
    frames = pack_frames(rot6d, loc, lin_vel, ang_vel, contacts)
    mask = np.ones(frames.shape[0], dtype=np.uint8)
    return MotionClip(frames, mask, fps=TARGET_FPS, source=source)


def splice_hybrid(
    locomotion: MotionClip,
    gesture: MotionClip,
    partition: BodyPartition,
    skeleton: SkeletonHierarchy | None = None,
) -> MotionClip:
    """Lower body (at/below the third spine) from locomotion, rest from gesture.

    Rotation features and contacts are copied verbatim from their source;
    positions are recomputed by forward kinematics on the merged rotations
    driven by the locomotion root trajectory, and linear velocities follow.
    """
    if locomotion.length != gesture.length:
        raise SpliceError(
            f"frame count mismatch: {locomotion.length} vs {gesture.length}"
        )
    if locomotion.fps != gesture.fps:
        raise SpliceError("fps mismatch between splice inputs")
    skeleton = skeleton or canonical_skeleton()
    lower = sorted(partition.spine3_cut)

    lo = locomotion.fields()
    ge = gesture.fields()
    rot6d = ge.rot6d.copy()
    rot6d[:, lower] = lo.rot6d[:, lower]
    ang_vel = ge.ang_vel.copy()
    ang_vel[:, lower] = lo.ang_vel[:, lower]

    rotmats = rot6d_to_matrix(rot6d.astype(np.float64))
    root_pos = lo.loc[:, 0].astype(np.float64) - np.asarray(skeleton.joints[0].offset)
    loc, _ = forward_kinematics(skeleton, rotmats, root_pos)
    lin_vel = np.zeros_like(loc)
    lin_vel[1:] = np.diff(loc, axis=0)

    frames = pack_frames(rot6d, loc, lin_vel, ang_vel, lo.contacts)
    mask = locomotion.mask.astype(np.uint8) & gesture.mask.astype(np.uint8)
    return MotionClip(frames, mask, fps=locomotion.fps, source="hybrid")


def clip_window(
    m: MotionClip,
    target_len: int = TARGET_LEN,
    min_len: int = MIN_LEN,
    rng: np.random.Generator | int | None = None,
    start: int | None = None,
) -> MotionClip:
    """Crop or zero-pad to exactly target_len frames.

    Longer clips get a random contiguous window (seeded rng, or an explicit
    start for callers that must slice aligned data the same way); clips in
    [min_len, target_len) are padded with zero frames and mask 0; shorter
    ones are rejected.
    """
    n = m.length
    if n < min_len:
        raise ClipTooShortError(f"clip has {n} frames, minimum is {min_len}")
    if n == target_len:
        return m.copy()
    if n > target_len:
        if start is None:
            if not isinstance(rng, np.random.Generator):
                rng = np.random.default_rng(rng)
            start = int(rng.integers(0, n - target_len + 1))
        if not 0 <= start <= n - target_len:
            raise ConfigError(f"window start {start} out of range for {n} frames")
        return MotionClip(
            m.frames[start:start + target_len].copy(),
            m.mask[start:start + target_len].copy(),
            m.fps, m.source,
        )
    frames = np.zeros((target_len, FRAME_WIDTH), dtype=np.float32)
    mask = np.zeros(target_len, dtype=np.uint8)
    frames[:n] = m.frames
    mask[:n] = m.mask
    return MotionClip(frames, mask, m.fps, m.source)


def resample_nearest(m: RawMotion, target_fps: int = TARGET_FPS) -> RawMotion:
    """Nearest-frame downsampling; deterministic, no rotation blending."""
    src_fps = m.fps
    if src_fps == target_fps:
        return RawMotion(m.skeleton, m.channel_data.copy(), 1.0 / target_fps)
    n = m.frame_count
    count = int(np.floor((n - 1) * target_fps / src_fps)) + 1
    idx = np.round(np.arange(count) * src_fps / target_fps).astype(np.int64)
    idx = np.clip(idx, 0, n - 1)
    return RawMotion(m.skeleton, m.channel_data[idx].copy(), 1.0 / target_fps)


def retarget_and_scale(
    m: RawMotion,
    ref: SkeletonHierarchy | None = None,
    name_map: dict[str, str] | None = None,
    mandatory: tuple[str, ...] | None = None,
) -> RawMotion:
    """Re-express a motion on the reference skeleton.

    Local rotations are copied joint-by-joint through name_map (source name
    to reference name; identity by default), the root displacement is scaled
    by the leg-length ratio, and the whole motion is yawed so the first
    frame faces +Z. Reference joints with no source counterpart get zero
    rotations; missing mandatory joints raise RetargetError.
    """
    ref = ref or canonical_skeleton()
    mandatory = mandatory if mandatory is not None else MANDATORY_JOINTS
    name_map = name_map or {}

    src_names = m.skeleton.names
    to_ref = {name_map.get(s, s): i for i, s in enumerate(src_names)}
    missing = [name for name in mandatory if name not in to_ref]
    if missing:
        raise RetargetError("unmappable mandatory joints: " + ", ".join(missing))

    src_rot = m.rotation_matrices()                     # (N, Js, 3, 3)
    n = m.frame_count
    out_rot = np.broadcast_to(np.eye(3), (n, ref.joint_count, 3, 3)).copy()
    for ri, joint in enumerate(ref.joints):
        si = to_ref.get(joint.name)
        if si is not None:
            out_rot[:, ri] = src_rot[:, si]

    # leg-length ratio on the mapped source chain; 1 when legs are absent
    scale = 1.0
    if all(k in to_ref for k in ("left_knee", "left_ankle")):
        src_leg = sum(
            float(np.linalg.norm(m.skeleton.joints[to_ref[name]].offset))
            for name in ("left_knee", "left_ankle")
        )
        if src_leg > 0:
            scale = leg_length(ref) / src_leg
    root_pos = m.root_translation() * scale

    # yaw the first frame's facing direction onto +Z
    fwd = out_rot[0, 0] @ np.array([0.0, 0.0, 1.0])
    yaw = float(np.arctan2(fwd[0], fwd[2]))
    c, s = np.cos(-yaw), np.sin(-yaw)
    correction = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    out_rot[:, 0] = correction @ out_rot[:, 0]
    root_pos = root_pos @ correction.T

    slices = ref.channel_slices()
    data = np.zeros((n, ref.channel_count()), dtype=np.float64)
    for ri, joint in enumerate(ref.joints):
        sl = slices[ri]
        angles = matrix_to_euler(out_rot[:, ri], joint.rot_order, degrees=True)
        rot_cols = [sl.start + c for c, name in enumerate(joint.channels)
                    if name.endswith("rotation")]
        data[:, rot_cols] = angles
        if ri == 0:
            for c, name in enumerate(joint.channels):
                if name.endswith("position"):
                    data[:, sl.start + c] = root_pos[:, "XYZ".index(name[0])]
    return RawMotion(ref, data, m.frame_time)


def clip_to_raw(clip: MotionClip, skeleton: SkeletonHierarchy | None = None) -> RawMotion:
    """Rebuild a RawMotion (Euler channels) from unified frames, for BVH export."""
    skeleton = skeleton or canonical_skeleton()
    fields = clip.fields()
    rotmats = rot6d_to_matrix(fields.rot6d.astype(np.float64))
    root_pos = fields.loc[:, 0].astype(np.float64) - np.asarray(skeleton.joints[0].offset)
    slices = skeleton.channel_slices()
    data = np.zeros((clip.length, skeleton.channel_count()), dtype=np.float64)
    for ji, joint in enumerate(skeleton.joints):
        sl = slices[ji]
        angles = matrix_to_euler(rotmats[:, ji], joint.rot_order, degrees=True)
        rot_cols = [sl.start + c for c, name in enumerate(joint.channels)
                    if name.endswith("rotation")]
        data[:, rot_cols] = angles
        if ji == 0:
            for c, name in enumerate(joint.channels):
                if name.endswith("position"):
                    data[:, sl.start + c] = root_pos[:, "XYZ".index(name[0])]
    return RawMotion(skeleton, data, 1.0 / clip.fps)
