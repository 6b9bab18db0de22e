"""Vectorized geometric/photometric pipeline with handwritten adjoints.

Internal module.  Every operation used by the loss terms comes in a forward
flavor (returning caches) and a backward flavor, so the public gradient
entry points can run reverse-mode over the fixed pipeline without a tape.
All functions work on raw numpy arrays; the public modules wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rig import CameraRig, Intrinsics, RigidTransform, chain, compose, invert

Z_EPS = 1e-9
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

_IDENTITY = None


def _identity() -> RigidTransform:
    global _IDENTITY
    if _IDENTITY is None:
        _IDENTITY = RigidTransform(np.eye(3), np.zeros(3))
    return _IDENTITY


def pixel_dirs(k: Intrinsics) -> np.ndarray:
    """Per-pixel ray directions ((u-cx)/fx, (v-cy)/fy, 1), shape (H, W, 3)."""
    us = np.arange(k.width, dtype=np.float64)
    vs = np.arange(k.height, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    return np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)


# ---------------------------------------------------------------------------
# Correspondence: target pixel + depth -> continuous source coordinates.
# The rigid chain is post(mid(pre(p))); `mid` is the pose slot that pose
# gradients refer to (left = exp(eps) inserted after mid, right = before).
# ---------------------------------------------------------------------------

@dataclass
class CorrCache:
    dirs: np.ndarray          # (H, W, 3) target ray directions
    s: np.ndarray             # after pre
    r: np.ndarray             # after mid
    q: np.ndarray             # after post, source-camera coordinates
    u: np.ndarray             # (H, W) source column coordinate
    v: np.ndarray
    valid: np.ndarray         # (H, W) bool
    r_total: np.ndarray       # 3x3, post @ mid @ pre rotation
    r_post: np.ndarray
    r_post_mid: np.ndarray
    k_src: Intrinsics
    qz_safe: np.ndarray


def correspondence(depth_vals: np.ndarray, depth_valid: np.ndarray,
                   k_tgt: Intrinsics, k_src: Intrinsics,
                   pre: RigidTransform | None, mid: RigidTransform | None,
                   post: RigidTransform | None) -> CorrCache:
    pre = pre or _identity()
    mid = mid or _identity()
    post = post or _identity()
    dirs = pixel_dirs(k_tgt)
    p = dirs * depth_vals[..., None]
    s = p @ pre.rotation.T + pre.translation
    r = s @ mid.rotation.T + mid.translation
    q = r @ post.rotation.T + post.translation
    qz = q[..., 2]
    valid = depth_valid & (qz > Z_EPS)
    qz_safe = np.where(qz > Z_EPS, qz, 1.0)
    u = k_src.fx * q[..., 0] / qz_safe + k_src.cx
    v = k_src.fy * q[..., 1] / qz_safe + k_src.cy
    valid = valid & (u >= 0.0) & (u <= k_src.width - 1) \
                  & (v >= 0.0) & (v <= k_src.height - 1)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return CorrCache(dirs=dirs, s=s, r=r, q=q, u=u, v=v, valid=valid,
                     r_total=post.rotation @ mid.rotation @ pre.rotation,
                     r_post=post.rotation, r_post_mid=post.rotation @ mid.rotation,
                     k_src=k_src, qz_safe=qz_safe)


def corr_backward(c: CorrCache, gu: np.ndarray, gv: np.ndarray,
                  want_pose: bool = False):
    """Pull coordinate gradients back to depth (and optionally the mid pose).

    Returns (gdepth, gpose_left, gpose_right); the pose entries are 6-vectors
    in (t, w) twist layout or None.  gu/gv must already be zero outside the
    valid mask.
    """
    k = c.k_src
    qz = c.qz_safe
    gq = np.empty_like(c.q)
    gq[..., 0] = gu * (k.fx / qz)
    gq[..., 1] = gv * (k.fy / qz)
    gq[..., 2] = -(gu * k.fx * c.q[..., 0] + gv * k.fy * c.q[..., 1]) / (qz * qz)
    gp = gq @ c.r_total
    gdepth = np.einsum("hwc,hwc->hw", gp, c.dirs)
    gpose_left = gpose_right = None
    if want_pose:
        w = gq @ c.r_post
        gpose_left = np.concatenate([
            w.reshape(-1, 3).sum(axis=0),
            np.cross(c.r.reshape(-1, 3), w.reshape(-1, 3)).sum(axis=0),
        ])
        w2 = gq @ c.r_post_mid
        gpose_right = np.concatenate([
            w2.reshape(-1, 3).sum(axis=0),
            np.cross(c.s.reshape(-1, 3), w2.reshape(-1, 3)).sum(axis=0),
        ])
    return gdepth, gpose_left, gpose_right


# ---------------------------------------------------------------------------
# Bilinear sampling on the source grid.
# ---------------------------------------------------------------------------

@dataclass
class BilinCache:
    u0: np.ndarray
    v0: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    active: np.ndarray


def _tap_indices(u, v, w, h, active):
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    np.clip(u0, 0, w - 2, out=u0)
    np.clip(v0, 0, h - 2, out=v0)
    u0[~active] = 0
    v0[~active] = 0
    return u0, v0, u - u0, v - v0


def bilin_forward(values: np.ndarray, u: np.ndarray, v: np.ndarray,
                  active: np.ndarray) -> tuple[np.ndarray, BilinCache]:
    """Sample `values` ((H,W) or (H,W,C)) at (u, v); caller guarantees that
    active pixels are in bounds.  Inactive outputs are zero."""
    h, w = values.shape[0], values.shape[1]
    u0, v0, fu, fv = _tap_indices(u, v, w, h, active)
    if values.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    t00 = values[v0, u0]
    t01 = values[v0, u0 + 1]
    t10 = values[v0 + 1, u0]
    t11 = values[v0 + 1, u0 + 1]
    top = (1.0 - fu) * t00 + fu * t01
    bot = (1.0 - fu) * t10 + fu * t11
    out = (1.0 - fv) * top + fv * bot
    out[~active] = 0.0
    return out, BilinCache(u0=u0, v0=v0, fu=fu, fv=fv, active=active)


def bilin_taps_valid(valid_grid: np.ndarray, u: np.ndarray, v: np.ndarray,
                     active: np.ndarray) -> np.ndarray:
    """True where all four sampling taps fall on valid source entries."""
    h, w = valid_grid.shape
    u0, v0, _, _ = _tap_indices(u, v, w, h, active)
    ok = (valid_grid[v0, u0] & valid_grid[v0, u0 + 1]
          & valid_grid[v0 + 1, u0] & valid_grid[v0 + 1, u0 + 1])
    return ok & active


def bilin_backward_coords(cache: BilinCache, values: np.ndarray,
                          gout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u0, v0, fu, fv = cache.u0, cache.v0, cache.fu, cache.fv
    t00 = values[v0, u0]
    t01 = values[v0, u0 + 1]
    t10 = values[v0 + 1, u0]
    t11 = values[v0 + 1, u0 + 1]
    du = (1.0 - fv) * (t01 - t00) + fv * (t11 - t10)
    dv = (1.0 - fu) * (t10 - t00) + fu * (t11 - t01)
    if values.ndim == 3:
        gu = np.einsum("hwc,hwc->hw", gout, du)
        gv = np.einsum("hwc,hwc->hw", gout, dv)
    else:
        gu = gout * du
        gv = gout * dv
    gu[~cache.active] = 0.0
    gv[~cache.active] = 0.0
    return gu, gv


def bilin_backward_values(cache: BilinCache, gout: np.ndarray,
                          shape: tuple[int, int]) -> np.ndarray:
    """Scatter output gradients onto the sampled 2-d grid."""
    g = np.zeros(shape, dtype=np.float64)
    u0, v0 = cache.u0, cache.v0
    fu = cache.fu if cache.fu.ndim == 2 else cache.fu[..., 0]
    fv = cache.fv if cache.fv.ndim == 2 else cache.fv[..., 0]
    gm = np.where(cache.active, gout, 0.0)
    np.add.at(g, (v0, u0), gm * (1.0 - fu) * (1.0 - fv))
    np.add.at(g, (v0, u0 + 1), gm * fu * (1.0 - fv))
    np.add.at(g, (v0 + 1, u0), gm * (1.0 - fu) * fv)
    np.add.at(g, (v0 + 1, u0 + 1), gm * fu * fv)
    return g


# ---------------------------------------------------------------------------
# 3x3 box filtering with reflective padding, and SSIM.
# ---------------------------------------------------------------------------

def _box3(x: np.ndarray) -> np.ndarray:
    pad = ((1, 1), (1, 1)) + ((0, 0),) * (x.ndim - 2)
    xp = np.pad(x, pad, mode="reflect")
    h, w = x.shape[0], x.shape[1]
    out = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            out += xp[i:i + h, j:j + w]
    return out / 9.0


def _box3_adjoint(g: np.ndarray) -> np.ndarray:
    h, w = g.shape[0], g.shape[1]
    pad_shape = (h + 2, w + 2) + g.shape[2:]
    gp = np.zeros(pad_shape, dtype=np.float64)
    gd = g / 9.0
    for i in range(3):
        for j in range(3):
            gp[i:i + h, j:j + w] += gd
    out = gp[1:h + 1, 1:w + 1].copy()
    out[1, :] += gp[0, 1:w + 1]
    out[h - 2, :] += gp[h + 1, 1:w + 1]
    out[:, 1] += gp[1:h + 1, 0]
    out[:, w - 2] += gp[1:h + 1, w + 1]
    out[1, 1] += gp[0, 0]
    out[1, w - 2] += gp[0, w + 1]
    out[h - 2, 1] += gp[h + 1, 0]
    out[h - 2, w - 2] += gp[h + 1, w + 1]
    return out


@dataclass
class SsimCache:
    a: np.ndarray
    b: np.ndarray
    mu_a: np.ndarray
    mu_b: np.ndarray
    sa: np.ndarray
    sb: np.ndarray
    sab: np.ndarray
    num: np.ndarray
    den: np.ndarray


def ssim_forward(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, SsimCache]:
    mu_a = _box3(a)
    mu_b = _box3(b)
    sa = _box3(a * a) - mu_a * mu_a
    sb = _box3(b * b) - mu_b * mu_b
    sab = _box3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * sab + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (sa + sb + SSIM_C2)
    return num / den, SsimCache(a, b, mu_a, mu_b, sa, sb, sab, num, den)


def ssim_backward(c: SsimCache, gs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gnum = gs / c.den
    gden = -gs * c.num / (c.den * c.den)
    lum = 2.0 * c.mu_a * c.mu_b + SSIM_C1
    struct = 2.0 * c.sab + SSIM_C2
    var_sum = c.sa + c.sb + SSIM_C2
    mu_sq = c.mu_a * c.mu_a + c.mu_b * c.mu_b + SSIM_C1
    gmu_a = gnum * 2.0 * c.mu_b * struct + gden * 2.0 * c.mu_a * var_sum
    gmu_b = gnum * 2.0 * c.mu_a * struct + gden * 2.0 * c.mu_b * var_sum
    gsab = gnum * 2.0 * lum
    gvar = gden * mu_sq          # shared by sa and sb
    # sa = box(a^2) - mu_a^2, sab = box(ab) - mu_a mu_b
    gmu_a += -2.0 * c.mu_a * gvar - c.mu_b * gsab
    gmu_b += -2.0 * c.mu_b * gvar - c.mu_a * gsab
    ga = _box3_adjoint(gmu_a) + 2.0 * c.a * _box3_adjoint(gvar) + c.b * _box3_adjoint(gsab)
    gb = _box3_adjoint(gmu_b) + 2.0 * c.b * _box3_adjoint(gvar) + c.a * _box3_adjoint(gsab)
    return ga, gb


# ---------------------------------------------------------------------------
# Photometric error: (1 - alpha) * L1 + alpha * (1 - SSIM) / 2, masked mean.
# ---------------------------------------------------------------------------

@dataclass
class PhotomCache:
    a: np.ndarray
    b: np.ndarray
    mask: np.ndarray
    alpha: float
    count: int
    ssim: SsimCache | None


def photometric_forward(a: np.ndarray, b: np.ndarray, mask: np.ndarray,
                        alpha: float) -> tuple[float, PhotomCache]:
    count = int(mask.sum())
    cache = PhotomCache(a=a, b=b, mask=mask, alpha=alpha, count=count, ssim=None)
    if count == 0:
        return 0.0, cache
    pe = (1.0 - alpha) * np.abs(a - b).mean(axis=2)
    if alpha != 0.0:
        smap, cache.ssim = ssim_forward(a, b)
        pe = pe + alpha * 0.5 * (1.0 - smap.mean(axis=2))
    value = float(pe[mask].sum() / count)
    return value, cache


def photometric_backward(c: PhotomCache, gvalue: float) -> tuple[np.ndarray, np.ndarray]:
    if c.count == 0:
        z = np.zeros_like(c.a)
        return z, z.copy()
    w = (gvalue / c.count) * c.mask.astype(np.float64)
    sgn = np.sign(c.a - c.b)
    ga = w[..., None] * ((1.0 - c.alpha) / 3.0) * sgn
    gb = -ga
    if c.alpha != 0.0:
        gs = np.broadcast_to((-c.alpha / 6.0 * w)[..., None], c.a.shape)
        gsa, gsb = ssim_backward(c.ssim, np.ascontiguousarray(gs))
        ga = ga + gsa
        gb = gb + gsb
    return ga, gb


# ---------------------------------------------------------------------------
# Edge-aware smoothness on mean-normalized depth.
# ---------------------------------------------------------------------------

@dataclass
class SmoothCache:
    d: np.ndarray
    mu: float
    sx: np.ndarray
    sy: np.ndarray
    wx: np.ndarray
    wy: np.ndarray


def smoothness_forward(d: np.ndarray, img: np.ndarray) -> tuple[float, SmoothCache]:
    mu = float(d.mean())
    ds = d / mu
    dx = ds[:, 1:] - ds[:, :-1]
    dy = ds[1:, :] - ds[:-1, :]
    wx = np.exp(-np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2))
    wy = np.exp(-np.abs(img[1:, :] - img[:-1, :]).mean(axis=2))
    value = float((np.abs(dx) * wx).mean() + (np.abs(dy) * wy).mean())
    return value, SmoothCache(d=d, mu=mu, sx=np.sign(dx), sy=np.sign(dy), wx=wx, wy=wy)


def smoothness_backward(c: SmoothCache, gvalue: float) -> np.ndarray:
    gdx = gvalue * c.sx * c.wx / c.sx.size
    gdy = gvalue * c.sy * c.wy / c.sy.size
    gds = np.zeros_like(c.d)
    gds[:, 1:] += gdx
    gds[:, :-1] -= gdx
    gds[1:, :] += gdy
    gds[:-1, :] -= gdy
    correction = -(gds * c.d).sum() / (c.mu * c.mu) / c.d.size
    return gds / c.mu + correction


# ---------------------------------------------------------------------------
# Depth value transport into another camera frame (z component only).
# ---------------------------------------------------------------------------

@dataclass
class TransformZCache:
    coef: np.ndarray
    valid: np.ndarray


def transform_z_forward(depth_vals: np.ndarray, depth_valid: np.ndarray,
                        k_src: Intrinsics, motion: RigidTransform
                        ) -> tuple[np.ndarray, np.ndarray, TransformZCache]:
    """New z of each source pixel's point after `motion`, on the source grid."""
    dirs = pixel_dirs(k_src)
    coef = dirs @ motion.rotation[2]
    z = depth_vals * coef + motion.translation[2]
    valid = depth_valid & (z > Z_EPS)
    return np.where(valid, z, 0.0), valid, TransformZCache(coef=coef, valid=valid)


def transform_z_backward(c: TransformZCache, gz: np.ndarray) -> np.ndarray:
    return np.where(c.valid, gz * c.coef, 0.0)


# ---------------------------------------------------------------------------
# Loss-term assembly over a surround bundle.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EngineInputs:
    rig: CameraRig
    imgs_prev: tuple[np.ndarray, ...]
    imgs_t: tuple[np.ndarray, ...]
    imgs_next: tuple[np.ndarray, ...]
    depth_vals: tuple[np.ndarray, ...]
    depth_valid: tuple[np.ndarray, ...]
    front_next: RigidTransform
    front_prev: RigidTransform


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 0.85
    with_temporal: bool = True
    with_spatial: bool = True
    with_st: bool = True
    with_smooth: bool = True
    with_ddcl: bool = True
    with_mvrcl: bool = True


@dataclass
class Recon:
    cam: int                  # camera whose depth drives the warp
    pose_slot: str | None     # None, "next" or "prev"
    corr: CorrCache
    bil: BilinCache
    source: np.ndarray
    image: np.ndarray
    valid: np.ndarray


@dataclass
class PhotomRecord:
    group: int                # camera index used for the per-camera mean
    value: float
    count: int
    cache: PhotomCache
    recon_a: Recon | None
    recon_b: Recon | None


@dataclass
class DdclRecord:
    tgt: int
    src: int
    value: float
    count: int
    mask: np.ndarray
    dtilde: np.ndarray
    corr: CorrCache
    bil: BilinCache
    zvals: np.ndarray
    zcache: TransformZCache


@dataclass
class SmoothRecord:
    cam: int
    value: float
    count: int
    cache: SmoothCache


@dataclass
class TermResult:
    value: float = 0.0
    count: int = 0
    records: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)   # id(record) -> d(term)/d(record value)


@dataclass
class EngineResult:
    temporal: TermResult
    spatial: TermResult
    st: TermResult
    smooth: TermResult
    ddcl: TermResult
    mvrcl: TermResult
    recons_s: dict
    recons_st: dict


def _grouped_mean(records: list, values: list[float], groups: list[int]) -> TermResult:
    """Mean over groups of the mean within each group; empty records dropped."""
    res = TermResult()
    by_group: dict[int, list[int]] = {}
    for idx, rec in enumerate(records):
        if rec.count > 0:
            by_group.setdefault(groups[idx], []).append(idx)
            res.count += rec.count
    if not by_group:
        return res
    n_groups = len(by_group)
    total = 0.0
    for members in by_group.values():
        inner = 1.0 / len(members)
        for idx in members:
            total += values[idx] * inner / n_groups
            res.weights[id(records[idx])] = inner / n_groups
    res.value = total
    res.records = records
    return res


def _front_to_cam(rig: CameraRig, i: int) -> RigidTransform:
    return compose(rig.extrinsic(0), invert(rig.extrinsic(i)))


def _cam_to_front(rig: CameraRig, i: int) -> RigidTransform:
    return compose(rig.extrinsic(i), invert(rig.extrinsic(0)))


def make_recon(inputs: EngineInputs, cam: int, source_cam: int,
               source_img: np.ndarray, pose_slot: str | None) -> Recon:
    """Backward-warp `source_img` onto camera `cam`'s grid at time t."""
    rig = inputs.rig
    k_t = rig.intrinsics(cam)
    k_s = rig.intrinsics(source_cam)
    depth = inputs.depth_vals[cam]
    dvalid = inputs.depth_valid[cam]
    if pose_slot is None:
        corr = correspondence(depth, dvalid, k_t, k_s, None, None,
                              rig.relative(cam, source_cam))
    else:
        mid = inputs.front_next if pose_slot == "next" else inputs.front_prev
        corr = correspondence(depth, dvalid, k_t, k_s,
                              _cam_to_front(rig, cam), mid,
                              _front_to_cam(rig, source_cam))
    img, bil = bilin_forward(source_img, corr.u, corr.v, corr.valid)
    return Recon(cam=cam, pose_slot=pose_slot, corr=corr, bil=bil,
                 source=source_img, image=img, valid=corr.valid)


def evaluate(inputs: EngineInputs, cfg: EngineConfig) -> EngineResult:
    rig = inputs.rig
    n = len(rig)
    alpha = cfg.alpha

    def photom(group, a_img, b_img, mask, ra=None, rb=None):
        value, cache = photometric_forward(a_img, b_img, mask, alpha)
        return PhotomRecord(group=group, value=value, count=cache.count,
                            cache=cache, recon_a=ra, recon_b=rb)

    temporal_records, temporal_groups = [], []
    if cfg.with_temporal:
        for i in range(n):
            for slot, imgs in (("prev", inputs.imgs_prev), ("next", inputs.imgs_next)):
                rec = make_recon(inputs, i, i, imgs[i], slot)
                temporal_records.append(photom(i, inputs.imgs_t[i], rec.image,
                                               rec.valid, rb=rec))
                temporal_groups.append(i)

    recons_s: dict[tuple[int, int], Recon] = {}
    recons_st: dict[tuple[int, int, str], Recon] = {}
    spatial_records, spatial_groups = [], []
    st_records, st_groups = [], []
    mvrcl_records, mvrcl_groups = [], []
    need_s = cfg.with_spatial or cfg.with_mvrcl
    need_st = cfg.with_st or cfg.with_mvrcl
    for i in range(n):
        for j in rig.neighbors(i):
            if need_s:
                recons_s[(i, j)] = make_recon(inputs, i, j, inputs.imgs_t[j], None)
            if need_st:
                recons_st[(i, j, "prev")] = make_recon(inputs, i, j, inputs.imgs_prev[j], "prev")
                recons_st[(i, j, "next")] = make_recon(inputs, i, j, inputs.imgs_next[j], "next")
    if cfg.with_spatial:
        for (i, j), rec in recons_s.items():
            spatial_records.append(photom(i, inputs.imgs_t[i], rec.image,
                                          rec.valid, rb=rec))
            spatial_groups.append(i)
    if cfg.with_st:
        for (i, j, slot), rec in recons_st.items():
            st_records.append(photom(i, inputs.imgs_t[i], rec.image,
                                     rec.valid, rb=rec))
            st_groups.append(i)
    if cfg.with_mvrcl:
        for (i, j, slot), rst in recons_st.items():
            rs = recons_s[(i, j)]
            mask = rs.valid & rst.valid
            mvrcl_records.append(photom(i, rs.image, rst.image, mask,
                                        ra=rs, rb=rst))
            mvrcl_groups.append(i)

    ddcl_records, ddcl_groups = [], []
    if cfg.with_ddcl:
        for pair_idx, (i, j) in enumerate(rig.ordered_pairs()):
            zvals, zvalid, zcache = transform_z_forward(
                inputs.depth_vals[j], inputs.depth_valid[j],
                rig.intrinsics(j), rig.relative(j, i))
            corr = correspondence(inputs.depth_vals[i], inputs.depth_valid[i],
                                  rig.intrinsics(i), rig.intrinsics(j),
                                  None, None, rig.relative(i, j))
            ok = bilin_taps_valid(zvalid, corr.u, corr.v, corr.valid)
            dtilde, bil = bilin_forward(zvals, corr.u, corr.v, ok)
            count = int(ok.sum())
            if count:
                value = float(np.abs(inputs.depth_vals[i] - dtilde)[ok].sum() / count)
            else:
                value = 0.0
            ddcl_records.append(DdclRecord(tgt=i, src=j, value=value, count=count,
                                           mask=ok, dtilde=dtilde, corr=corr,
                                           bil=bil, zvals=zvals, zcache=zcache))
            ddcl_groups.append(pair_idx)

    smooth_records, smooth_groups = [], []
    if cfg.with_smooth:
        for i in range(n):
            value, cache = smoothness_forward(inputs.depth_vals[i], inputs.imgs_t[i])
            smooth_records.append(SmoothRecord(cam=i, value=value,
                                               count=inputs.depth_vals[i].size,
                                               cache=cache))
            smooth_groups.append(i)

    def term(records, groups):
        return _grouped_mean(records, [r.value for r in records], groups)

    return EngineResult(
        temporal=term(temporal_records, temporal_groups),
        spatial=term(spatial_records, spatial_groups),
        st=term(st_records, st_groups),
        smooth=term(smooth_records, smooth_groups),
        ddcl=term(ddcl_records, ddcl_groups),
        mvrcl=term(mvrcl_records, mvrcl_groups),
        recons_s=recons_s,
        recons_st=recons_st,
    )


# ---------------------------------------------------------------------------
# Reverse pass.
# ---------------------------------------------------------------------------

class GradAccumulator:
    def __init__(self, inputs: EngineInputs, want_pose: bool):
        self.want_pose = want_pose
        self.gdepth = [np.zeros_like(d) for d in inputs.depth_vals]
        self.gpose = {"next": {"left": np.zeros(6), "right": np.zeros(6)},
                      "prev": {"left": np.zeros(6), "right": np.zeros(6)}}

    def recon(self, rec: Recon, gimg: np.ndarray) -> None:
        gu, gv = bilin_backward_coords(rec.bil, rec.source, gimg)
        gdepth, gl, gr = corr_backward(rec.corr, gu, gv,
                                       want_pose=self.want_pose and rec.pose_slot is not None)
        self.gdepth[rec.cam] += gdepth
        if gl is not None:
            self.gpose[rec.pose_slot]["left"] += gl
            self.gpose[rec.pose_slot]["right"] += gr


def backward_photom_term(term: TermResult, scale: float, acc: GradAccumulator) -> None:
    if scale == 0.0 or not term.records:
        return
    for rec in term.records:
        w = term.weights.get(id(rec))
        if w is None:
            continue
        ga, gb = photometric_backward(rec.cache, scale * w)
        if rec.recon_a is not None:
            acc.recon(rec.recon_a, ga)
        if rec.recon_b is not None:
            acc.recon(rec.recon_b, gb)


def backward_ddcl_term(term: TermResult, scale: float, acc: GradAccumulator,
                       inputs: EngineInputs) -> None:
    if scale == 0.0 or not term.records:
        return
    for rec in term.records:
        w = term.weights.get(id(rec))
        if w is None:
            continue
        g = scale * w / rec.count
        sgn = np.where(rec.mask, np.sign(inputs.depth_vals[rec.tgt] - rec.dtilde), 0.0)
        acc.gdepth[rec.tgt] += g * sgn
        gdtilde = -g * sgn
        gu, gv = bilin_backward_coords(rec.bil, rec.zvals, gdtilde)
        gdepth_t, _, _ = corr_backward(rec.corr, gu, gv)
        acc.gdepth[rec.tgt] += gdepth_t
        gz = bilin_backward_values(rec.bil, gdtilde, rec.zvals.shape)
        acc.gdepth[rec.src] += transform_z_backward(rec.zcache, gz)


def backward_smooth_term(term: TermResult, scale: float, acc: GradAccumulator) -> None:
    if scale == 0.0 or not term.records:
        return
    for rec in term.records:
        w = term.weights.get(id(rec))
        if w is None:
            continue
        acc.gdepth[rec.cam] += smoothness_backward(rec.cache, scale * w)
