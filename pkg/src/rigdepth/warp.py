"""Pinhole projection and the warping operations between rig cameras.

Backward warping reconstructs a target view by sampling a source grid at
coordinates computed from the target depth; forward warping scatters source
pixels into the target grid with a min-depth z-buffer and leaves holes where
the discretized mapping never lands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _engine as eng
from .imaging import DepthMap, Image, Mask
from .rig import CameraRig, Intrinsics, RigidTransform


@dataclass(frozen=True)
class PointCloudGrid:
    """Per-pixel 3D points in camera coordinates with a validity mask."""

    points: np.ndarray   # (H, W, 3)
    valid: np.ndarray    # (H, W) bool

    def __post_init__(self):
        if self.points.shape[:2] != self.valid.shape or self.points.shape[2] != 3:
            raise ValueError("points must be (H, W, 3) with a matching mask")


def backproject(depth: DepthMap, k: Intrinsics) -> PointCloudGrid:
    """Lift every pixel to camera coordinates: ((u-cx)d/fx, (v-cy)d/fy, d)."""
    dirs = eng.pixel_dirs(k)
    return PointCloudGrid(points=dirs * depth.values[..., None],
                          valid=depth.valid.copy())


def project(point, k: Intrinsics) -> tuple[float, float, float, bool]:
    """Project a camera-frame point to (u, v, depth, valid).

    Points at or behind the camera plane report valid=False; coordinates are
    then zero.
    """
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64).reshape(3))
    if z <= eng.Z_EPS:
        return 0.0, 0.0, 0.0, False
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z, True


def warp_image(target_depth: DepthMap, t_target_to_source: RigidTransform,
               k_target: Intrinsics, k_source: Intrinsics,
               source: Image) -> tuple[Image, Mask]:
    """Reconstruct the target view by bilinear sampling of the source image."""
    corr = eng.correspondence(target_depth.values, target_depth.valid,
                              k_target, k_source, None, None, t_target_to_source)
    data, _ = eng.bilin_forward(source.data, corr.u, corr.v, corr.valid)
    return Image(data), Mask(corr.valid)


def transform_depth(source_depth: DepthMap, t_source_to_target: RigidTransform,
                    k_source: Intrinsics) -> DepthMap:
    """Per-pixel depth each source point would have in the target frame,
    kept on the source grid; points ending up behind the camera are invalid."""
    z, valid, _ = eng.transform_z_forward(source_depth.values, source_depth.valid,
                                          k_source, t_source_to_target)
    return DepthMap(z, valid)


def project_depth_dense(target_depth: DepthMap, transformed_source_depth: DepthMap,
                        t_target_to_source: RigidTransform,
                        k_target: Intrinsics, k_source: Intrinsics
                        ) -> tuple[DepthMap, Mask]:
    """Densely sample the transported source depth at the target's source-view
    correspondences.  A pixel is valid only when its correspondence lands in
    bounds with all four sampling taps on valid transported entries."""
    corr = eng.correspondence(target_depth.values, target_depth.valid,
                              k_target, k_source, None, None, t_target_to_source)
    ok = eng.bilin_taps_valid(transformed_source_depth.valid, corr.u, corr.v,
                              corr.valid)
    vals, _ = eng.bilin_forward(transformed_source_depth.values, corr.u, corr.v, ok)
    return DepthMap(np.where(ok, vals, 0.0), ok), Mask(ok)


def forward_warp_depth(source_depth: DepthMap, t_source_to_target: RigidTransform,
                       k_source: Intrinsics, k_target: Intrinsics
                       ) -> tuple[DepthMap, Mask]:
    """Scatter source pixels into the target grid (nearest pixel, min-depth
    z-buffer).  Uncovered target pixels are holes."""
    dirs = eng.pixel_dirs(k_source)
    p = dirs * source_depth.values[..., None]
    q = p @ t_source_to_target.rotation.T + t_source_to_target.translation
    z = q[..., 2]
    ok = source_depth.valid & (z > eng.Z_EPS)
    zs = np.where(ok, z, 1.0)
    u = np.rint(k_target.fx * q[..., 0] / zs + k_target.cx).astype(np.int64)
    v = np.rint(k_target.fy * q[..., 1] / zs + k_target.cy).astype(np.int64)
    ok &= (u >= 0) & (u < k_target.width) & (v >= 0) & (v < k_target.height)
    buf = np.full((k_target.height, k_target.width), np.inf)
    np.minimum.at(buf, (v[ok], u[ok]), z[ok])
    covered = np.isfinite(buf)
    return DepthMap(np.where(covered, buf, 0.0), covered), Mask(covered)


def overlap_mask(rig: CameraRig, depths: list[DepthMap], i: int) -> Mask:
    """Pixels of camera i whose 3D points fall inside at least one
    ring-neighboring camera's frustum."""
    depth = depths[i]
    out = np.zeros(depth.values.shape, dtype=bool)
    for j in rig.neighbors(i):
        corr = eng.correspondence(depth.values, depth.valid,
                                  rig.intrinsics(i), rig.intrinsics(j),
                                  None, None, rig.relative(i, j))
        out |= corr.valid
    return Mask(out)
