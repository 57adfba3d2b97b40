"""BVH motion capture parsing and serialization.

The parser keeps the flat per-frame channel matrix exactly as it appears in
the file (column order = channel declaration order), so serialize(parse(x))
reproduces every numeric value: floats are emitted with repr, the shortest
round-tripping decimal form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, StructuralError
from .rotations import euler_to_matrix
from .skeleton import (
    POSITION_CHANNELS,
    ROOT_SENTINEL,
    ROTATION_CHANNELS,
    Joint,
    SkeletonHierarchy,
)

_VALID_CHANNELS = set(POSITION_CHANNELS) | set(ROTATION_CHANNELS)


@dataclass
class RawMotion:
    """Parsed mocap: skeleton plus the raw channel matrix, (frames, channels)."""

    skeleton: SkeletonHierarchy
    channel_data: np.ndarray
    frame_time: float

    def __post_init__(self):
        expected = self.skeleton.channel_count()
        if self.channel_data.ndim != 2 or self.channel_data.shape[1] != expected:
            raise StructuralError(
                f"frame data has {self.channel_data.shape} channels, "
                f"skeleton declares {expected}"
            )
        if self.frame_time <= 0:
            raise StructuralError("frame time must be positive")

    @property
    def frame_count(self) -> int:
        return self.channel_data.shape[0]

    @property
    def fps(self) -> int:
        return round(1.0 / self.frame_time)

    def root_translation(self) -> np.ndarray:
        """(N, 3) root position channels in X, Y, Z order; zeros if absent."""
        out = np.zeros((self.frame_count, 3), dtype=np.float64)
        sl = self.skeleton.channel_slices()[0]
        for col, name in enumerate(self.skeleton.joints[0].channels):
            if name in POSITION_CHANNELS:
                out[:, POSITION_CHANNELS.index(name)] = self.channel_data[:, sl.start + col]
        return out

    def local_translations(self) -> np.ndarray | None:
        """(N, J, 3) translation channels of non-root joints, or None."""
        has_any = any(j.has_translation for j in self.skeleton.joints[1:])
        if not has_any:
            return None
        out = np.zeros((self.frame_count, self.skeleton.joint_count, 3), dtype=np.float64)
        slices = self.skeleton.channel_slices()
        for ji, joint in enumerate(self.skeleton.joints):
            if ji == 0:
                continue
            for col, name in enumerate(joint.channels):
                if name in POSITION_CHANNELS:
                    out[:, ji, POSITION_CHANNELS.index(name)] = \
                        self.channel_data[:, slices[ji].start + col]
        return out

    def rotation_matrices(self) -> np.ndarray:
        """(N, J, 3, 3) local rotations composed per each joint's channel order."""
        n, j = self.frame_count, self.skeleton.joint_count
        out = np.broadcast_to(np.eye(3), (n, j, 3, 3)).copy()
        slices = self.skeleton.channel_slices()
        for ji, joint in enumerate(self.skeleton.joints):
            order = joint.rot_order
            if not order:
                continue
            cols = [slices[ji].start + c for c, name in enumerate(joint.channels)
                    if name in ROTATION_CHANNELS]
            angles = self.channel_data[:, cols]
            out[:, ji] = euler_to_matrix(angles, order, degrees=True)
        return out


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    @property
    def line(self) -> int:
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return self.items[-1][1] if self.items else 0

    def done(self) -> bool:
        return self.pos >= len(self.items)

    def peek(self) -> str | None:
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    def take(self, expect: str | None = None) -> str:
        if self.done():
            raise ParseError("unexpected end of file", line=self.line)
        tok, ln = self.items[self.pos]
        if expect is not None and tok != expect:
            raise ParseError(f"expected {expect!r}, got {tok!r}", line=ln)
        self.pos += 1
        return tok

    def take_float(self) -> float:
        tok, ln = self.items[self.pos] if not self.done() else (None, self.line)
        if tok is None:
            raise ParseError("unexpected end of file", line=ln)
        try:
            val = float(tok)
        except ValueError:
            raise ParseError(f"expected a number, got {tok!r}", line=ln) from None
        self.pos += 1
        return val

    def take_int(self) -> int:
        tok, ln = self.items[self.pos] if not self.done() else (None, self.line)
        if tok is None:
            raise ParseError("unexpected end of file", line=ln)
        try:
            val = int(tok)
        except ValueError:
            raise ParseError(f"expected an integer, got {tok!r}", line=ln) from None
        self.pos += 1
        return val


def _parse_offset(tokens: _Tokens) -> tuple[float, float, float]:
    tokens.take("OFFSET")
    return (tokens.take_float(), tokens.take_float(), tokens.take_float())


def _parse_channels(tokens: _Tokens) -> tuple[str, ...]:
    tokens.take("CHANNELS")
    n = tokens.take_int()
    names = []
    for _ in range(n):
        tok = tokens.take()
        if tok not in _VALID_CHANNELS:
            raise ParseError(f"unknown channel {tok!r}", line=tokens.line)
        names.append(tok)
    return tuple(names)


def _parse_joint(tokens: _Tokens, parent: int, joints: list[Joint],
                 end_sites: list[tuple[int, tuple[float, float, float]]]) -> None:
    keyword = tokens.take()
    if keyword not in ("ROOT", "JOINT"):
        raise ParseError(f"expected ROOT or JOINT, got {keyword!r}", line=tokens.line)
    if keyword == "ROOT" and parent != ROOT_SENTINEL:
        raise ParseError("ROOT inside a joint block", line=tokens.line)
    name = tokens.take()
    tokens.take("{")
    offset = _parse_offset(tokens)
    channels = _parse_channels(tokens)
    joints.append(Joint(name, parent, offset, channels))
    me = len(joints) - 1
    while True:
        tok = tokens.peek()
        if tok == "JOINT":
            _parse_joint(tokens, me, joints, end_sites)
        elif tok == "End":
            tokens.take("End")
            tokens.take("Site")
            tokens.take("{")
            end_sites.append((me, _parse_offset(tokens)))
            tokens.take("}")
        elif tok == "}":
            tokens.take("}")
            return
        else:
            raise ParseError(f"expected JOINT, End Site or '}}', got {tok!r}",
                             line=tokens.line)


def parse_bvh(text: str) -> RawMotion:
    """Parse a BVH document into a RawMotion.

    Raises ParseError (with line number) on malformed structure and
    StructuralError when the frame data disagrees with the declared
    channel count.
    """
    tokens = _Tokens(text)
    tokens.take("HIERARCHY")
    joints: list[Joint] = []
    end_sites: list[tuple[int, tuple[float, float, float]]] = []
    _parse_joint(tokens, ROOT_SENTINEL, joints, end_sites)
    tokens.take("MOTION")
    tokens.take("Frames:")
    n_frames = tokens.take_int()
    tokens.take("Frame")
    tokens.take("Time:")
    frame_time = tokens.take_float()
    values = []
    while not tokens.done():
        values.append(tokens.take_float())
    skeleton = SkeletonHierarchy(joints, end_sites)
    n_channels = skeleton.channel_count()
    if len(values) != n_frames * n_channels:
        raise StructuralError(
            f"expected {n_frames} frames x {n_channels} channels = "
            f"{n_frames * n_channels} values, found {len(values)}"
        )
    data = np.array(values, dtype=np.float64).reshape(n_frames, n_channels)
    if frame_time <= 0:
        raise ParseError("frame time must be positive")
    return RawMotion(skeleton, data, frame_time)


def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_bvh(motion: RawMotion) -> str:
    """Emit BVH text that parses back to numerically identical content."""
    skel = motion.skeleton
    children: dict[int, list[int]] = {}
    for i, j in enumerate(skel.joints):
        children.setdefault(j.parent, []).append(i)
    sites: dict[int, list[tuple[float, float, float]]] = {}
    for parent, off in skel.end_sites:
        sites.setdefault(parent, []).append(off)

    lines = ["HIERARCHY"]
    order: list[int] = []  # depth-first visit order; motion columns must follow it

    def emit(idx: int, depth: int):
        order.append(idx)
        j = skel.joints[idx]
        pad = "  " * depth
        lines.append(f"{pad}{'ROOT' if j.parent == ROOT_SENTINEL else 'JOINT'} {j.name}")
        lines.append(f"{pad}{{")
        inner = "  " * (depth + 1)
        ox, oy, oz = j.offset
        lines.append(f"{inner}OFFSET {_fmt(ox)} {_fmt(oy)} {_fmt(oz)}")
        lines.append(f"{inner}CHANNELS {len(j.channels)} " + " ".join(j.channels))
        for child in children.get(idx, []):
            emit(child, depth + 1)
        for off in sites.get(idx, []):
            lines.append(f"{inner}End Site")
            lines.append(f"{inner}{{")
            lines.append(f"{inner}  OFFSET {_fmt(off[0])} {_fmt(off[1])} {_fmt(off[2])}")
            lines.append(f"{inner}}}")
        lines.append(f"{pad}}}")

    emit(0, 0)
    slices = skel.channel_slices()
    col_perm = np.concatenate([np.arange(slices[i].start, slices[i].stop)
                               for i in order])
    data = motion.channel_data[:, col_perm]
    lines.append("MOTION")
    lines.append(f"Frames: {motion.frame_count}")
    lines.append(f"Frame Time: {_fmt(motion.frame_time)}")
    for row in data:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"
