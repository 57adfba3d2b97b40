"""Skeleton hierarchy, the canonical 55-joint reference body, forward kinematics.

The canonical skeleton follows the SMPL-X joint set and ordering: 22 body
joints, jaw, two eyes, then 15 joints per hand. Offsets are meters in a
Y-up, +Z-forward, +X-left frame with the pelvis at the origin; the ground
plane sits at CANONICAL_GROUND_Y so a standing pose has ankles ~4 cm and
toes ~1 cm above ground.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError

ROOT_SENTINEL = -1

# Ground height of the canonical body, meters below the pelvis origin.
CANONICAL_GROUND_Y = -0.96

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")

CANONICAL_ROOT_CHANNELS = (
    "Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation",
)
CANONICAL_JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    offset: tuple[float, float, float]
    channels: tuple[str, ...]

    @property
    def rot_order(self) -> str:
        return "".join(c[0] for c in self.channels if c.endswith("rotation"))

    @property
    def has_translation(self) -> bool:
        return any(c.endswith("position") for c in self.channels)


@dataclass
class SkeletonHierarchy:
    """Ordered joint list; parents precede children, root parent is -1.

    end_sites holds (parent joint index, offset) leaf markers kept only so
    parsed files serialize back faithfully; they are not joints.
    """

    joints: list[Joint]
    end_sites: list[tuple[int, tuple[float, float, float]]] = field(default_factory=list)

    def __post_init__(self):
        for i, j in enumerate(self.joints):
            if i == 0:
                if j.parent != ROOT_SENTINEL:
                    raise StructuralError("first joint must be the root")
            elif not 0 <= j.parent < i:
                raise StructuralError(
                    f"joint {j.name!r} parent index {j.parent} not topologically ordered"
                )

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    def index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    def channel_count(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    def channel_slices(self) -> list[slice]:
        """Per-joint column slice into the flat frame channel vector."""
        out, c = [], 0
        for j in self.joints:
            out.append(slice(c, c + len(j.channels)))
            c += len(j.channels)
        return out


@dataclass(frozen=True)
class BodyPartition:
    """Finger/limb joint split plus the lower-body cut used for hybrids."""

    finger_joint_indices: frozenset[int]
    limb_joint_indices: frozenset[int]
    spine3_cut: frozenset[int]

    def __post_init__(self):
        if self.finger_joint_indices & self.limb_joint_indices:
            raise StructuralError("finger and limb joint sets overlap")
        if not self.spine3_cut <= self.limb_joint_indices:
            raise StructuralError("spine3 cut must lie inside the limb set")


_BODY = [
    # name, parent, offset
    ("pelvis", -1, (0.000, 0.000, 0.000)),
    ("left_hip", 0, (0.090, -0.060, 0.000)),
    ("right_hip", 0, (-0.090, -0.060, 0.000)),
    ("spine1", 0, (0.000, 0.100, 0.000)),
    ("left_knee", 1, (0.000, -0.400, 0.000)),
    ("right_knee", 2, (0.000, -0.400, 0.000)),
    ("spine2", 3, (0.000, 0.120, 0.000)),
    ("left_ankle", 4, (0.000, -0.460, 0.000)),
    ("right_ankle", 5, (0.000, -0.460, 0.000)),
    ("spine3", 6, (0.000, 0.130, 0.000)),
    ("left_foot", 7, (0.000, -0.030, 0.120)),
    ("right_foot", 8, (0.000, -0.030, 0.120)),
    ("neck", 9, (0.000, 0.150, 0.000)),
    ("left_collar", 9, (0.050, 0.100, 0.000)),
    ("right_collar", 9, (-0.050, 0.100, 0.000)),
    ("head", 12, (0.000, 0.100, 0.000)),
    ("left_shoulder", 13, (0.120, 0.020, 0.000)),
    ("right_shoulder", 14, (-0.120, 0.020, 0.000)),
    ("left_elbow", 16, (0.260, 0.000, 0.000)),
    ("right_elbow", 17, (-0.260, 0.000, 0.000)),
    ("left_wrist", 18, (0.250, 0.000, 0.000)),
    ("right_wrist", 19, (-0.250, 0.000, 0.000)),
    ("jaw", 15, (0.000, 0.010, 0.050)),
    ("left_eye", 15, (0.030, 0.050, 0.080)),
    ("right_eye", 15, (-0.030, 0.050, 0.080)),
]

# Fingers: (name stem, offset of segment 1); segments 2 and 3 extend along x.
_HAND = [
    ("index", (0.090, 0.000, 0.030), (0.035, 0.0, 0.0), (0.025, 0.0, 0.0)),
    ("middle", (0.095, 0.000, 0.010), (0.040, 0.0, 0.0), (0.028, 0.0, 0.0)),
    ("pinky", (0.085, 0.000, -0.030), (0.030, 0.0, 0.0), (0.020, 0.0, 0.0)),
    ("ring", (0.090, 0.000, -0.010), (0.035, 0.0, 0.0), (0.025, 0.0, 0.0)),
    ("thumb", (0.030, -0.010, 0.040), (0.030, 0.0, 0.015), (0.025, 0.0, 0.010)),
]

JOINT_COUNT = 55
FINGER_JOINT_COUNT = 30

LEFT_WRIST, RIGHT_WRIST = 20, 21
HEEL_JOINTS = (7, 8)   # ankles stand in for heels
TOE_JOINTS = (10, 11)  # foot joints point forward at toe height

# The 22 torso/limb joints every mocap source must provide; face and finger
# joints may be absent on body-only captures and are then zero-filled.
MANDATORY_JOINTS = tuple(name for name, _, _ in _BODY[:22])


def _mirror(offset):
    return (-offset[0], offset[1], offset[2])


def canonical_skeleton() -> SkeletonHierarchy:
    """The reference 55-joint skeleton every corpus clip is retargeted onto."""
    joints = []
    for i, (name, parent, off) in enumerate(_BODY):
        channels = CANONICAL_ROOT_CHANNELS if i == 0 else CANONICAL_JOINT_CHANNELS
        joints.append(Joint(name, parent, off, channels))
    for side, wrist in (("left", LEFT_WRIST), ("right", RIGHT_WRIST)):
        for stem, o1, o2, o3 in _HAND:
            parent = wrist
            for seg, off in enumerate((o1, o2, o3), start=1):
                if side == "right":
                    off = _mirror(off)
                joints.append(
                    Joint(f"{side}_{stem}{seg}", parent, off, CANONICAL_JOINT_CHANNELS)
                )
                parent = len(joints) - 1
    skel = SkeletonHierarchy(joints)
    assert skel.joint_count == JOINT_COUNT
    return skel


def canonical_partition() -> BodyPartition:
    fingers = frozenset(range(25, 55))
    limbs = frozenset(range(0, 25))
    # pelvis through feet: everything at or below the third spine joint
    cut = frozenset(range(0, 12))
    return BodyPartition(fingers, limbs, cut)


def leg_length(skeleton: SkeletonHierarchy, hip="left_hip", knee="left_knee",
               ankle="left_ankle") -> float:
    """Hip-to-ankle chain length, the scale reference for root displacement."""
    total = 0.0
    for name in (knee, ankle):
        total += float(np.linalg.norm(skeleton.joints[skeleton.index(name)].offset))
    return total


def forward_kinematics(
    skeleton: SkeletonHierarchy,
    rotmats: np.ndarray,
    root_pos: np.ndarray,
    local_trans: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Global joint positions and rotations from local rotation matrices.

    rotmats: (N, J, 3, 3) local rotations in hierarchy order.
    root_pos: (N, 3) root translation.
    local_trans: optional (N, J, 3) per-joint translation channels, added to
        the static offset in the parent frame (root entry ignored).
    Returns (positions (N, J, 3), global rotations (N, J, 3, 3)).
    """
    rotmats = np.asarray(rotmats, dtype=np.float64)
    root_pos = np.asarray(root_pos, dtype=np.float64)
    n, j = rotmats.shape[0], skeleton.joint_count
    if rotmats.shape[1] != j:
        raise StructuralError(f"rotations for {rotmats.shape[1]} joints, skeleton has {j}")
    offsets = skeleton.offsets()
    pos = np.empty((n, j, 3), dtype=np.float64)
    glob = np.empty((n, j, 3, 3), dtype=np.float64)
    for i, joint in enumerate(skeleton.joints):
        if joint.parent == ROOT_SENTINEL:
            pos[:, i] = root_pos + offsets[i]
            glob[:, i] = rotmats[:, i]
            continue
        off = offsets[i]
        if local_trans is not None:
            off = off + local_trans[:, i]
        parent_rot = glob[:, joint.parent]
        pos[:, i] = pos[:, joint.parent] + np.einsum("nab,nb->na", parent_rot, np.broadcast_to(off, (n, 3)))
        glob[:, i] = parent_rot @ rotmats[:, i]
    return pos, glob
