"""SE(3) pose algebra, pinhole intrinsics, and the surround camera rig.

Conventions used throughout the package:
  - A RigidTransform maps points as x_out = R @ x_in + t.
  - Camera frames are +x right, +y down, +z forward (optical axis).
  - The vehicle frame is aligned with the front camera: +z is the driving
    direction, +x points to the right of the vehicle.
  - Rig extrinsics map camera coordinates to vehicle coordinates; camera 0
    is the front view.
  - compose(a, b) applies a first, then b.
  - Twist vectors are (tx, ty, tz, wx, wy, wz): translation first, rotation
    (radians) last.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-9

# Horizontal mirroring of a camera frame negates the x axis.  Conjugating a
# transform by diag(-1, 1, 1) flips the signs of exactly these entries.
_FLIP_ROT_SIGNS = np.array([[1.0, -1.0, -1.0],
                            [-1.0, 1.0, 1.0],
                            [-1.0, 1.0, 1.0]])
_FLIP_TRANS_SIGNS = np.array([-1.0, 1.0, 1.0])
# Same conjugation expressed on twist coordinates (tx, ty, tz, wx, wy, wz).
_FLIP_TWIST_SIGNS = np.array([-1.0, 1.0, 1.0, 1.0, -1.0, -1.0])


class IllConditionedLog(ValueError):
    """Raised when a rotation logarithm is requested too close to angle pi."""


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation contains non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    det = np.linalg.det(r)
    if err > ROTATION_TOL or abs(det - 1.0) > ROTATION_TOL:
        raise ValueError(
            f"rotation is not orthonormal: |R^T R - I|={err:.3e}, det={det:.12f}")
    return r


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: rotation (3x3, orthonormal, det +1) and translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation contains non-finite entries")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("last row of a rigid 4x4 matrix must be (0,0,0,1)")
        return RigidTransform(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters in pixels; the image grid is width x height."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be strictly positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("image size must be at least 2x2")


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    extrinsic: RigidTransform  # camera coordinates -> vehicle coordinates


@dataclass(frozen=True)
class CameraRig:
    """Ordered cameras on a vehicle; index 0 is the designated front view."""

    cameras: tuple[Camera, ...]

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("a rig needs at least one camera")
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __len__(self) -> int:
        return len(self.cameras)

    def intrinsics(self, i: int) -> Intrinsics:
        return self.cameras[i].intrinsics

    def extrinsic(self, i: int) -> RigidTransform:
        return self.cameras[i].extrinsic

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Ring-adjacent camera indices (spatial neighbors on the rig)."""
        n = len(self.cameras)
        if n == 1:
            return ()
        if n == 2:
            return (1 - i,)
        return ((i - 1) % n, (i + 1) % n)

    def ordered_pairs(self) -> tuple[tuple[int, int], ...]:
        """All ordered (target, source) pairs of ring-adjacent cameras."""
        return tuple((i, j) for i in range(len(self.cameras))
                     for j in self.neighbors(i))

    def relative(self, i: int, j: int) -> RigidTransform:
        """Map from camera-i coordinates to camera-j coordinates."""
        return compose(self.cameras[i].extrinsic, invert(self.cameras[j].extrinsic))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Chain two rigid motions: the result applies a first, then b."""
    return RigidTransform(b.rotation @ a.rotation,
                          b.rotation @ a.translation + b.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def chain(*transforms: RigidTransform) -> RigidTransform:
    """Compose left to right: chain(a, b, c) applies a, then b, then c."""
    out = transforms[0]
    for t in transforms[1:]:
        out = compose(out, t)
    return out


def distribute_pose(t_front: RigidTransform, e_front: RigidTransform,
                    e_i: RigidTransform) -> RigidTransform:
    """Carry a front-view temporal pose over to camera i via the extrinsics.

    Returns the map E_i^-1 * E_front * t_front * E_front^-1 * E_i: camera-i
    points at the reference time are taken into the front view, moved by the
    front-view pose, and taken back.
    """
    return chain(e_i, invert(e_front), t_front, e_front, invert(e_i))


def flip_pose(t: RigidTransform) -> RigidTransform:
    """Relative pose of the horizontally mirrored camera pair.

    Equivalent to conjugating by diag(-1, 1, 1); an exact involution and a
    group homomorphism.
    """
    return RigidTransform(t.rotation * _FLIP_ROT_SIGNS,
                          t.translation * _FLIP_TRANS_SIGNS)


def flip_twist(xi: np.ndarray) -> np.ndarray:
    """Twist-coordinate form of flip_pose: flip_pose(exp(xi)) == exp(flip_twist(xi))."""
    return np.asarray(xi, dtype=np.float64) * _FLIP_TWIST_SIGNS


def flip_intrinsics(k: Intrinsics) -> Intrinsics:
    """Intrinsics of the horizontally mirrored image.

    Column u maps to (width-1) - u, so only the principal point moves.
    """
    return Intrinsics(fx=k.fx, fy=k.fy, cx=(k.width - 1) - k.cx, cy=k.cy,
                      width=k.width, height=k.height)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def _so3_exp(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    if theta < 1e-8:
        # second-order series; exact enough at this magnitude
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def _so3_log(r: np.ndarray) -> np.ndarray:
    cos_theta = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta > math.pi - 1e-6:
        raise IllConditionedLog(
            f"rotation angle {theta:.9f} is too close to pi for a stable log")
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-8:
        return vee * (1.0 + theta * theta / 6.0)
    if theta > 3.0:
        # sin(theta) is small: recover the axis from the symmetric part
        nnt = np.eye(3) + (0.5 * (r + r.T) - np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(nnt)))
        axis = nnt[:, k] / math.sqrt(max(nnt[k, k], 1e-300))
        if np.dot(axis, vee) < 0.0:
            axis = -axis
        return theta * axis
    return vee * (theta / math.sin(theta))


def _v_coeffs(theta: float) -> tuple[float, float]:
    """Coefficients b, c with V = I + b*K + c*K^2 for the full (non-unit) skew."""
    if theta < 1e-3:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    return ((1.0 - math.cos(theta)) / (theta * theta),
            (theta - math.sin(theta)) / (theta ** 3))


def _vinv_coeff(theta: float) -> float:
    if theta < 1e-3:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0
    return 1.0 / (theta * theta) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))


def exp_se3(xi) -> RigidTransform:
    """Exponential map from a twist (tx, ty, tz, wx, wy, wz) to a rigid motion."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist contains non-finite entries")
    rho, w = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    b, c = _v_coeffs(theta)
    v = np.eye(3) + b * k + c * (k @ k)
    return RigidTransform(_so3_exp(w), v @ rho)


def log_se3(t: RigidTransform) -> np.ndarray:
    """Inverse of exp_se3; raises IllConditionedLog near rotation angle pi."""
    w = _so3_log(t.rotation)
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    vinv = np.eye(3) - 0.5 * k + _vinv_coeff(theta) * (k @ k)
    return np.concatenate([vinv @ t.translation, w])


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "cameras": [
            {
                "fx": cam.intrinsics.fx, "fy": cam.intrinsics.fy,
                "cx": cam.intrinsics.cx, "cy": cam.intrinsics.cy,
                "width": cam.intrinsics.width, "height": cam.intrinsics.height,
                "extrinsic": [float(x) for x in cam.extrinsic.matrix().reshape(-1)],
            }
            for cam in rig.cameras
        ]
    }


def rig_from_dict(d: dict) -> CameraRig:
    cams = []
    for i, c in enumerate(d["cameras"]):
        try:
            k = Intrinsics(fx=float(c["fx"]), fy=float(c["fy"]),
                           cx=float(c["cx"]), cy=float(c["cy"]),
                           width=int(c["width"]), height=int(c["height"]))
            e = RigidTransform.from_matrix(np.asarray(c["extrinsic"], dtype=np.float64).reshape(4, 4))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"camera {i}: {exc}") from exc
        cams.append(Camera(k, e))
    return CameraRig(tuple(cams))


def save_rig(path, rig: CameraRig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rig_to_dict(rig), f, indent=2)
        f.write("\n")


def load_rig(path) -> CameraRig:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return rig_from_dict(d)
