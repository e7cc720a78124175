"""Rotations, rigid poses, similarity alignment and angular distances.

Rotations are plain ``(3, 3)`` float arrays. ``Pose`` and ``SimilarityTransform``
are small immutable wrappers around them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, ZeroVector


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector (or a stack of them)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def exp_so3(w) -> np.ndarray:
    """Rodrigues formula: rotation vector -> rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        # second-order Taylor expansion
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def log_so3(R) -> np.ndarray:
    """Rotation matrix -> rotation vector with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    theta = float(np.arctan2(0.5 * np.linalg.norm(v), (np.trace(R) - 1.0) / 2.0))
    if theta < 1e-8:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        S = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / np.sqrt(max(S[k, k], 1e-300))
        if v @ axis < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * v


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ZeroVector("rotation axis has zero length")
    return exp_so3(axis / n * angle)


def from_quaternion(q) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` -> rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def to_quaternion(R) -> np.ndarray:
    """Rotation matrix -> unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (normalized Gaussian quaternion)."""
    return from_quaternion(rng.normal(size=4))


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (R.shape == (3, 3)
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) <= tol)


def geodesic_angle(R1, R2) -> float:
    """Angle in radians of the relative rotation ``R1^T R2``.

    Equal to ``arccos((tr - 1) / 2)``; the atan2 form keeps full precision
    near zero, where arccos loses half the digits.
    """
    M = np.asarray(R1).T @ np.asarray(R2)
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.arctan2(s, c))


def direction_angle(t1, t2) -> float:
    """Angle in radians between two non-zero vectors."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    n1, n2 = np.linalg.norm(t1), np.linalg.norm(t2)
    if n1 < 1e-12 or n2 < 1e-12:
        raise ZeroVector("direction_angle needs two non-zero vectors")
    return float(np.arctan2(np.linalg.norm(np.cross(t1, t2)), t1 @ t2))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, M, tol: float = 1e-6) -> "Pose":
        """Validated 4x4 homogeneous matrix -> Pose."""
        M = np.asarray(M, dtype=float).reshape(4, 4)
        if not np.allclose(M[3], [0, 0, 0, 1], atol=tol) or not is_rotation(M[:3, :3], tol):
            raise ValueError("not a rigid transform (rotation block or last row invalid)")
        if not np.all(np.isfinite(M)):
            raise ValueError("non-finite pose entries")
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, x) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        return np.asarray(x, dtype=float) @ self.R.T + self.t

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol) and np.allclose(self.t, other.t, atol=atol))


def compose(a: Pose, b: Pose) -> Pose:
    """``compose(a, b).apply(x) == a.apply(b.apply(x))``."""
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def relative_pose(p_i: Pose, p_j: Pose) -> Pose:
    """``p_j * p_i^-1``: ``R = R_j R_i^T``, ``t = t_j - R t_i``.

    With world-to-camera extrinsics this maps camera-i coordinates to camera-j
    coordinates. For camera-to-world poses use :func:`relative_from_c2w`.
    """
    R = p_j.R @ p_i.R.T
    return Pose(R, p_j.t - R @ p_i.t)


def relative_from_c2w(c2w_i: Pose, c2w_j: Pose) -> Pose:
    """Map camera-i coordinates to camera-j coordinates given camera-to-world poses."""
    return compose(c2w_j.inverse(), c2w_i)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * R x + t``."""

    scale: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"similarity scale must be positive, got {self.scale}")

    def apply(self, x) -> np.ndarray:
        return self.scale * np.asarray(x, dtype=float) @ np.asarray(self.R).T + self.t


def umeyama_align(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity (or rigid) transform mapping ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] < 1e-12 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")
    n = len(src)
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = (xs**2).sum() / n
        scale = float(np.trace(np.diag(D) @ S) / var_s)
    else:
        scale = 1.0
    t = mu_d - scale * R @ mu_s
    return SimilarityTransform(scale, R, t)
