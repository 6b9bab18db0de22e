"""Analytic multi-camera scene simulator.

Scenes are collections of infinite textured planes rendered by exact
ray-plane intersection, so every rendered image and depth map has a closed
form that downstream tests can check against.  Textures are smooth sums of
sinusoids, keeping photometric losses well behaved and gradients informative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .imaging import DepthMap, Image
from .losses import FrameBundle
from .rig import (Camera, CameraRig, Intrinsics, RigidTransform, chain, compose,
                  distribute_pose, invert)

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Plane:
    """Infinite textured plane: a point on it, a unit normal, and per-channel
    texture coefficients (3 rows of a, b, c, d)."""

    point: np.ndarray
    normal: np.ndarray
    texture: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=np.float64).reshape(3)
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("plane normal must be nonzero")
        tex = np.asarray(self.texture, dtype=np.float64).reshape(3, 4)
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "texture", tex)

    def color(self, points: np.ndarray) -> np.ndarray:
        """Texture color at world points (..., 3), clamped to [0, 1]."""
        x = points[..., 0:1]
        y = points[..., 1:2]
        a, b, c, d = (self.texture[:, k] for k in range(4))
        col = 0.5 + 0.25 * np.sin(a * x + b) + 0.25 * np.sin(c * y + d)
        return np.clip(col, 0.0, 1.0)


@dataclass(frozen=True)
class PlanarScene:
    planes: tuple[Plane, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.planes:
            raise ValueError("a scene needs at least one plane")
        object.__setattr__(self, "planes", tuple(self.planes))


@dataclass(frozen=True)
class EgoMotion:
    """Per-step motion of the vehicle: step t carries the vehicle frame at t
    onto the frame at t+1 (the pose increment, expressed in the frame at t)."""

    steps: tuple[RigidTransform, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @staticmethod
    def constant(step: RigidTransform, n: int) -> "EgoMotion":
        return EgoMotion(tuple(step for _ in range(n)))


def mirror_plane(p: Plane) -> Plane:
    """Mirror a plane across the x=0 plane: geometry and texture together."""
    flip = np.array([-1.0, 1.0, 1.0])
    tex = p.texture.copy()
    tex[:, 0] = -tex[:, 0]
    return Plane(p.point * flip, p.normal * flip, tex)


def render(scene: PlanarScene, k: Intrinsics,
           camera_pose: RigidTransform) -> tuple[Image, DepthMap]:
    """Render one camera.  `camera_pose` maps camera coordinates to world
    coordinates; depth is the camera-frame z of the nearest hit."""
    us = np.arange(k.width, dtype=np.float64)
    vs = np.arange(k.height, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy,
                         np.ones_like(uu)], axis=-1)
    dirs_world = dirs_cam @ camera_pose.rotation.T
    origin = camera_pose.translation

    best = np.full((k.height, k.width), np.inf)
    color = np.zeros((k.height, k.width, 3))
    for plane in scene.planes:
        denom = dirs_world @ plane.normal
        offset = float(plane.normal @ (plane.point - origin))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = offset / denom
        hit = np.isfinite(s) & (s > _RAY_EPS) & (s < best)
        if not hit.any():
            continue
        pts = origin + dirs_world[hit] * s[hit][:, None]
        color[hit] = plane.color(pts)
        best[hit] = s[hit]

    valid = np.isfinite(best)
    depth = np.where(valid, best, 0.0)
    return Image(color), DepthMap(depth, valid)


def make_rig(n: int, yaw_step_deg: float, fov_deg: float,
             width: int, height: int, radius: float = 0.3) -> CameraRig:
    """Surround rig: n cameras on a circle of the given radius around the
    vehicle origin, camera i yawed by i*yaw_step about the vehicle up axis,
    camera 0 facing forward.  Intrinsics match the horizontal field of view
    at the pixel-center extremes and use a centered principal point."""
    if n < 1:
        raise ValueError("a rig needs at least one camera")
    if not 0.0 < fov_deg < 180.0:
        raise ValueError("field of view must lie in (0, 180) degrees")
    fx = (width - 1) / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
    k = Intrinsics(fx=fx, fy=fx, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   width=width, height=height)
    cams = []
    for i in range(n):
        yaw = math.radians(i * yaw_step_deg)
        rot = np.array([[math.cos(yaw), 0.0, math.sin(yaw)],
                        [0.0, 1.0, 0.0],
                        [-math.sin(yaw), 0.0, math.cos(yaw)]])
        center = rot @ np.array([0.0, 0.0, radius])
        cams.append(Camera(k, RigidTransform(rot, center)))
    return CameraRig(tuple(cams))


@dataclass(frozen=True)
class SurroundFrame:
    images: tuple[Image, ...]
    depths: tuple[DepthMap, ...]


@dataclass(frozen=True)
class SequenceBundle:
    """Rendered sequence with ground-truth geometry for every step."""

    rig: CameraRig
    scene: PlanarScene
    ego: EgoMotion
    frames: tuple[SurroundFrame, ...]
    vehicle_poses: tuple[RigidTransform, ...]   # vehicle frame -> world

    def __len__(self) -> int:
        return len(self.frames)

    def front_pose_next(self, t: int) -> RigidTransform:
        """Front-camera map from step t coordinates to step t+1 coordinates."""
        e1 = self.rig.extrinsic(0)
        return chain(e1, invert(self.ego.steps[t]), invert(e1))

    def front_pose_prev(self, t: int) -> RigidTransform:
        e1 = self.rig.extrinsic(0)
        return chain(e1, self.ego.steps[t - 1], invert(e1))

    def camera_pose_next(self, t: int, i: int) -> RigidTransform:
        """Per-camera ground-truth temporal pose, distributed from the front."""
        return distribute_pose(self.front_pose_next(t), self.rig.extrinsic(0),
                               self.rig.extrinsic(i))

    def bundle_at(self, t: int) -> FrameBundle:
        if not 1 <= t <= len(self.frames) - 2:
            raise ValueError("bundle_at needs a step with both neighbors")
        return FrameBundle(
            rig=self.rig,
            images_prev=self.frames[t - 1].images,
            images_t=self.frames[t].images,
            images_next=self.frames[t + 1].images,
            front_next=self.front_pose_next(t),
            front_prev=self.front_pose_prev(t),
        )

    def depths_at(self, t: int) -> tuple[DepthMap, ...]:
        return self.frames[t].depths


def make_sequence(scene: PlanarScene, rig: CameraRig, ego: EgoMotion,
                  steps: int) -> SequenceBundle:
    """Render `steps` surround frames; the vehicle starts at the world origin
    and advances by one ego step between consecutive frames."""
    if steps < 1:
        raise ValueError("a sequence needs at least one step")
    if len(ego.steps) < steps - 1:
        raise ValueError("ego motion must provide steps-1 increments")
    poses = [RigidTransform.identity()]
    for t in range(steps - 1):
        poses.append(compose(ego.steps[t], poses[t]))
    frames = []
    for t in range(steps):
        images, depths = [], []
        for cam in rig.cameras:
            pose = compose(cam.extrinsic, poses[t])
            img, dep = render(scene, cam.intrinsics, pose)
            images.append(img)
            depths.append(dep)
        frames.append(SurroundFrame(tuple(images), tuple(depths)))
    return SequenceBundle(rig=rig, scene=scene, ego=ego, frames=tuple(frames),
                          vehicle_poses=tuple(poses))


# ---------------------------------------------------------------------------
# Ready-made scenes and scene files.
# ---------------------------------------------------------------------------

def random_texture(rng: np.random.Generator, freq_lo: float = 0.25,
                   freq_hi: float = 0.8) -> np.ndarray:
    tex = np.zeros((3, 4))
    tex[:, 0] = rng.uniform(freq_lo, freq_hi, 3)
    tex[:, 2] = rng.uniform(freq_lo, freq_hi, 3)
    tex[:, 1] = rng.uniform(0.0, 2.0 * math.pi, 3)
    tex[:, 3] = rng.uniform(0.0, 2.0 * math.pi, 3)
    return tex


def wall_scene(seed: int = 0, distance: float = 12.0,
               tilt: float = 0.12) -> PlanarScene:
    """One or two gently tilted walls in front of the rig; covers the frusta
    of forward-facing two-camera rigs."""
    rng = np.random.default_rng(seed)
    normal = np.array([math.sin(tilt), -0.5 * math.sin(tilt), -math.cos(tilt)])
    wall = Plane(np.array([0.0, 0.0, distance]), normal, random_texture(rng))
    floor = Plane(np.array([0.0, 3.0, 0.0]),
                  np.array([math.sin(0.06), -math.cos(0.06), 0.10]),
                  random_texture(rng))
    return PlanarScene((wall, floor), seed=seed)


def box_scene(seed: int = 0, half_size: float = 10.0,
              tilt: float = 0.08) -> PlanarScene:
    """Six slightly tilted planes enclosing the origin; covers the frusta of
    full surround rigs."""
    rng = np.random.default_rng(seed)
    planes = []
    axes = [(np.array([1.0, 0.0, 0.0]), half_size),
            (np.array([-1.0, 0.0, 0.0]), half_size),
            (np.array([0.0, 1.0, 0.0]), 0.45 * half_size),
            (np.array([0.0, -1.0, 0.0]), 0.45 * half_size),
            (np.array([0.0, 0.0, 1.0]), half_size),
            (np.array([0.0, 0.0, -1.0]), half_size)]
    for axis, dist in axes:
        point = axis * dist
        wobble = rng.uniform(-tilt, tilt, 3)
        normal = -axis + wobble - wobble.dot(axis) * axis
        planes.append(Plane(point, normal, random_texture(rng)))
    return PlanarScene(tuple(planes), seed=seed)


@dataclass(frozen=True)
class SceneSpec:
    """Parsed scene description: geometry, motion, step count, and an
    optional reference to a rig file (path relative to the scene file)."""

    scene: PlanarScene
    ego: EgoMotion
    steps: int
    rig_file: str | None = None


def scene_to_dict(spec: SceneSpec) -> dict:
    d = {
        "seed": spec.scene.seed,
        "planes": [
            {"point": p.point.tolist(), "normal": p.normal.tolist(),
             "texture": p.texture.tolist()}
            for p in spec.scene.planes
        ],
        "ego_motion": [[float(x) for x in t.matrix().reshape(-1)]
                       for t in spec.ego.steps],
        "steps": spec.steps,
    }
    if spec.rig_file is not None:
        d["rig_file"] = spec.rig_file
    return d


def scene_from_dict(d: dict) -> SceneSpec:
    planes = []
    for i, p in enumerate(d["planes"]):
        try:
            planes.append(Plane(np.asarray(p["point"]), np.asarray(p["normal"]),
                                np.asarray(p["texture"])))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"plane {i}: {exc}") from exc
    ego = EgoMotion(tuple(
        RigidTransform.from_matrix(np.asarray(m, dtype=np.float64).reshape(4, 4))
        for m in d.get("ego_motion", [])))
    return SceneSpec(scene=PlanarScene(tuple(planes), seed=int(d.get("seed", 0))),
                     ego=ego, steps=int(d["steps"]),
                     rig_file=d.get("rig_file"))


def save_scene(path, spec: SceneSpec) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scene_to_dict(spec), f, indent=2)
        f.write("\n")


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(json.load(f))
