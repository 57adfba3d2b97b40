"""Euler angle and 6-value rotation feature conversions.

Repo-wide convention: the 6-value rotation feature ("rot6d") is the first
two ROWS of the 3x3 rotation matrix, flattened row-major. Gram-Schmidt
orthogonalization completes the feature back into a full matrix.

Euler composition is intrinsic in the listed axis order, matching BVH
channel semantics: order "ZXY" means R = Rz @ Rx @ Ry.
"""

from __future__ import annotations

import numpy as np

from .errors import DegeneracyError

_AXES = {"X": 0, "Y": 1, "Z": 2}

IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def axis_rotation_matrix(axis: str, angles: np.ndarray) -> np.ndarray:
    """Rotation matrices about a principal axis. angles in radians, any shape."""
    angles = np.asarray(angles, dtype=np.float64)
    c, s = np.cos(angles), np.sin(angles)
    one = np.ones_like(c)
    zero = np.zeros_like(c)
    if axis == "X":
        rows = [one, zero, zero, zero, c, -s, zero, s, c]
    elif axis == "Y":
        rows = [c, zero, s, zero, one, zero, -s, zero, c]
    elif axis == "Z":
        rows = [c, -s, zero, s, c, zero, zero, zero, one]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return np.stack(rows, axis=-1).reshape(angles.shape + (3, 3))


def euler_to_matrix(angles: np.ndarray, order: str, degrees: bool = True) -> np.ndarray:
    """Compose Euler angles into rotation matrices.

    angles: (..., k) with k = len(order); angles[..., i] rotates about
    order[i]. Intrinsic composition, left to right.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape[-1] != len(order):
        raise ValueError(f"got {angles.shape[-1]} angles for order {order!r}")
    if degrees:
        angles = np.deg2rad(angles)
    out = None
    for i, axis in enumerate(order):
        if axis not in _AXES:
            raise ValueError(f"invalid axis {axis!r} in order {order!r}")
        m = axis_rotation_matrix(axis, angles[..., i])
        out = m if out is None else out @ m
    if out is None:  # empty order: identity
        out = np.broadcast_to(np.eye(3), angles.shape[:-1] + (3, 3)).copy()
    return out


def matrix_to_rot6d(rotmat: np.ndarray) -> np.ndarray:
    """First two rows of (..., 3, 3) matrices, flattened to (..., 6)."""
    rotmat = np.asarray(rotmat, dtype=np.float64)
    return rotmat[..., :2, :].reshape(rotmat.shape[:-2] + (6,))


def euler_to_rot6d(angles: np.ndarray, order: str, degrees: bool = True) -> np.ndarray:
    return matrix_to_rot6d(euler_to_matrix(angles, order, degrees=degrees))


def rot6d_to_matrix(r6: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt completion of (..., 6) features into rotation matrices.

    Raises DegeneracyError when either embedded vector is near zero or the
    two are near parallel (|cos| > 1 - eps); such features carry no usable
    orientation.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected trailing dim 6, got {r6.shape}")
    a = r6[..., 0:3]
    b = r6[..., 3:6]
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na < eps) or np.any(nb < eps):
        raise DegeneracyError("rot6d vector with near-zero norm")
    cos = np.abs(np.sum(a * b, axis=-1)) / (na * nb)
    if np.any(cos > 1.0 - eps):
        raise DegeneracyError("rot6d vectors near parallel")
    r0 = a / na[..., None]
    b_perp = b - np.sum(r0 * b, axis=-1, keepdims=True) * r0
    r1 = b_perp / np.linalg.norm(b_perp, axis=-1, keepdims=True)
    r2 = np.cross(r0, r1)
    return np.stack([r0, r1, r2], axis=-2)


def matrix_to_euler(rotmat: np.ndarray, order: str, degrees: bool = True) -> np.ndarray:
    """Inverse of euler_to_matrix, delegated to scipy (intrinsic, uppercase)."""
    from scipy.spatial.transform import Rotation

    rotmat = np.asarray(rotmat, dtype=np.float64)
    flat = rotmat.reshape(-1, 3, 3)
    ang = Rotation.from_matrix(flat).as_euler(order.upper(), degrees=degrees)
    return ang.reshape(rotmat.shape[:-2] + (len(order),))
