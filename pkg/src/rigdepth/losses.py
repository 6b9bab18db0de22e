"""Training-loss terms for surround depth: photometric SSIM+L1 supervision,
spatial / temporal / spatial-temporal reconstruction, dense cross-view depth
consistency, reconstruction consistency, edge-aware smoothness, and their
weighted total.

Sums over pixels, cameras, and camera pairs are realized as means so the
weights are resolution independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _engine as eng
from .imaging import DepthMap, Image, Mask
from .rig import CameraRig, RigidTransform


class EmptySupervision(ValueError):
    """Raised when a loss term is evaluated over an empty pixel mask."""


@dataclass(frozen=True)
class LossConfig:
    """Weights of the total training loss; defaults follow the surround
    training recipe this package implements."""

    alpha: float = 0.85
    lambda_s: float = 0.03
    lambda_st: float = 0.1
    lambda_smooth: float = 0.1
    lambda_ddcl: float = 1e-3
    lambda_mvrcl: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for name in ("lambda_s", "lambda_st", "lambda_smooth", "lambda_ddcl",
                     "lambda_mvrcl"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class TermValue:
    value: float
    count: int


@dataclass(frozen=True)
class LossReport:
    total: float
    temporal: TermValue
    spatial: TermValue
    spatial_temporal: TermValue
    smoothness: TermValue
    ddcl: TermValue
    mvrcl: TermValue

    def terms(self) -> dict[str, TermValue]:
        return {
            "temporal": self.temporal,
            "spatial": self.spatial,
            "spatial_temporal": self.spatial_temporal,
            "smoothness": self.smoothness,
            "ddcl": self.ddcl,
            "mvrcl": self.mvrcl,
        }

    def to_text(self) -> str:
        lines = ["term\tvalue\tcount"]
        for name, tv in self.terms().items():
            lines.append(f"{name}\t{tv.value!r}\t{tv.count}")
        lines.append(f"total\t{self.total!r}\t-")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FrameBundle:
    """Surround frames at three consecutive steps plus the front-view motion.

    front_next maps front-camera points at the middle step to the following
    step; front_prev maps them to the preceding step.
    """

    rig: CameraRig
    images_prev: tuple[Image, ...]
    images_t: tuple[Image, ...]
    images_next: tuple[Image, ...]
    front_next: RigidTransform
    front_prev: RigidTransform

    def __post_init__(self):
        n = len(self.rig)
        for name in ("images_prev", "images_t", "images_next"):
            imgs = getattr(self, name)
            if len(imgs) != n:
                raise ValueError(f"{name} must hold one image per camera")
            object.__setattr__(self, name, tuple(imgs))


def engine_inputs(bundle: FrameBundle, depths: list[DepthMap]) -> eng.EngineInputs:
    if len(depths) != len(bundle.rig):
        raise ValueError("one depth map per camera is required")
    return eng.EngineInputs(
        rig=bundle.rig,
        imgs_prev=tuple(im.data for im in bundle.images_prev),
        imgs_t=tuple(im.data for im in bundle.images_t),
        imgs_next=tuple(im.data for im in bundle.images_next),
        depth_vals=tuple(d.values for d in depths),
        depth_valid=tuple(d.valid for d in depths),
        front_next=bundle.front_next,
        front_prev=bundle.front_prev,
    )


def engine_config(config: LossConfig) -> eng.EngineConfig:
    return eng.EngineConfig(
        alpha=config.alpha,
        with_temporal=True,
        with_spatial=config.lambda_s > 0.0,
        with_st=config.lambda_st > 0.0,
        with_smooth=config.lambda_smooth > 0.0,
        with_ddcl=config.lambda_ddcl > 0.0,
        with_mvrcl=config.lambda_mvrcl > 0.0,
    )


def ssim_map(a: Image, b: Image) -> np.ndarray:
    """Per-pixel structural similarity in [-1, 1] over a 3x3 uniform window
    with reflective padding, averaged over channels."""
    if a.data.shape != b.data.shape:
        raise ValueError("ssim_map requires images of identical shape")
    smap, _ = eng.ssim_forward(a.data, b.data)
    return smap.mean(axis=2)


def photometric_loss(a: Image, b: Image, mask: Mask, alpha: float) -> float:
    """Masked mean of (1-alpha)*|a-b|_1 + alpha*(1-SSIM)/2 (channel-averaged)."""
    if a.data.shape != b.data.shape:
        raise ValueError("photometric_loss requires images of identical shape")
    if mask.data.shape != a.data.shape[:2]:
        raise ValueError("mask shape does not match the images")
    if mask.count() == 0:
        raise EmptySupervision("photometric loss over an empty mask")
    value, _ = eng.photometric_forward(a.data, b.data, mask.data, alpha)
    return value


@dataclass(frozen=True)
class DdclPairReport:
    target: int
    source: int
    value: float
    count: int


def ddcl(depths: list[DepthMap], rig: CameraRig) -> tuple[float, list[DdclPairReport]]:
    """Dense depth-consistency loss over all ordered ring-adjacent pairs.

    For each (target, source) pair the source depth map is transported into
    the target frame, backward-warped onto the target grid, and compared with
    an L1 mean; the total is the mean over pairs with non-empty overlap.
    """
    if len(depths) != len(rig):
        raise ValueError("one depth map per camera is required")
    inputs = eng.EngineInputs(
        rig=rig,
        imgs_prev=tuple(np.zeros((d.height, d.width, 3)) for d in depths),
        imgs_t=tuple(np.zeros((d.height, d.width, 3)) for d in depths),
        imgs_next=tuple(np.zeros((d.height, d.width, 3)) for d in depths),
        depth_vals=tuple(d.values for d in depths),
        depth_valid=tuple(d.valid for d in depths),
        front_next=RigidTransform.identity(),
        front_prev=RigidTransform.identity(),
    )
    cfg = eng.EngineConfig(with_temporal=False, with_spatial=False, with_st=False,
                           with_smooth=False, with_mvrcl=False, with_ddcl=True)
    res = eng.evaluate(inputs, cfg)
    reports = [DdclPairReport(target=r.tgt, source=r.src, value=r.value, count=r.count)
               for r in res.ddcl.records]
    return res.ddcl.value, reports


def mvrcl(recon_spatial: Image, recon_spatiotemporal: Image,
          mask_s: Mask, mask_st: Mask, alpha: float) -> float:
    """Photometric consistency between the two reconstructions of one view;
    contributes 0 when the mask intersection is empty."""
    both = mask_s.data & mask_st.data
    if not both.any():
        return 0.0
    return photometric_loss(recon_spatial, recon_spatiotemporal, Mask(both), alpha)


def smoothness(depth: DepthMap, img: Image) -> float:
    """Edge-aware first-order smoothness of mean-normalized depth."""
    if depth.values.shape != img.data.shape[:2]:
        raise ValueError("depth and image dimensions differ")
    value, _ = eng.smoothness_forward(depth.values, img.data)
    return value


def report_from_engine(res: eng.EngineResult, config: LossConfig) -> LossReport:
    total = (res.temporal.value
             + config.lambda_s * res.spatial.value
             + config.lambda_st * res.st.value
             + config.lambda_smooth * res.smooth.value
             + config.lambda_ddcl * res.ddcl.value
             + config.lambda_mvrcl * res.mvrcl.value)
    return LossReport(
        total=total,
        temporal=TermValue(res.temporal.value, res.temporal.count),
        spatial=TermValue(res.spatial.value, res.spatial.count),
        spatial_temporal=TermValue(res.st.value, res.st.count),
        smoothness=TermValue(res.smooth.value, res.smooth.count),
        ddcl=TermValue(res.ddcl.value, res.ddcl.count),
        mvrcl=TermValue(res.mvrcl.value, res.mvrcl.count),
    )


def total_loss(bundle: FrameBundle, depths: list[DepthMap],
               config: LossConfig) -> LossReport:
    """Evaluate every enabled loss term over the bundle; terms whose weight
    is zero are skipped and reported with value 0 and count 0."""
    res = eng.evaluate(engine_inputs(bundle, depths), engine_config(config))
    return report_from_engine(res, config)
