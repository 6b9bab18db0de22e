"""Analytic gradients of the loss terms and their finite-difference checks.

Gradients are computed by handwritten adjoints over the fixed warp/loss
pipeline (reverse mode without a tape).  Depth gradients are per-pixel grids;
pose gradients are 6-vectors with respect to a twist perturbation at the
current front-view pose: the "left" convention inserts exp(eps) after the
pose, the "right" convention before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _engine as eng
from .imaging import DepthMap
from .losses import FrameBundle, LossConfig, LossReport, engine_config, \
    engine_inputs, report_from_engine
from .rig import compose, exp_se3

TERM_NAMES = ("temporal", "spatial", "spatial_temporal", "smoothness",
              "ddcl", "mvrcl")

_TERM_ATTR = {"temporal": "temporal", "spatial": "spatial",
              "spatial_temporal": "st", "smoothness": "smooth",
              "ddcl": "ddcl", "mvrcl": "mvrcl"}


def _backward_all(res: eng.EngineResult, inputs: eng.EngineInputs,
                  weights: dict[str, float], want_pose: bool) -> eng.GradAccumulator:
    acc = eng.GradAccumulator(inputs, want_pose=want_pose)
    eng.backward_photom_term(res.temporal, weights.get("temporal", 0.0), acc)
    eng.backward_photom_term(res.spatial, weights.get("spatial", 0.0), acc)
    eng.backward_photom_term(res.st, weights.get("spatial_temporal", 0.0), acc)
    eng.backward_photom_term(res.mvrcl, weights.get("mvrcl", 0.0), acc)
    eng.backward_ddcl_term(res.ddcl, weights.get("ddcl", 0.0), acc, inputs)
    eng.backward_smooth_term(res.smooth, weights.get("smoothness", 0.0), acc)
    return acc


def _loss_weights(config: LossConfig) -> dict[str, float]:
    return {"temporal": 1.0, "spatial": config.lambda_s,
            "spatial_temporal": config.lambda_st,
            "smoothness": config.lambda_smooth,
            "ddcl": config.lambda_ddcl, "mvrcl": config.lambda_mvrcl}


@dataclass
class LossContext:
    """Caches one total-loss evaluation together with all its gradients."""

    bundle: FrameBundle
    depths: list[DepthMap]
    config: LossConfig
    _state: dict = field(default_factory=dict, repr=False)

    def _evaluate(self) -> None:
        inputs = engine_inputs(self.bundle, self.depths)
        res = eng.evaluate(inputs, engine_config(self.config))
        acc = _backward_all(res, inputs, _loss_weights(self.config), want_pose=True)
        self._state = {"inputs": inputs, "result": res, "acc": acc}

    @property
    def result(self) -> eng.EngineResult:
        if not self._state:
            self._evaluate()
        return self._state["result"]

    @property
    def report(self) -> LossReport:
        return report_from_engine(self.result, self.config)

    @property
    def acc(self) -> eng.GradAccumulator:
        if not self._state:
            self._evaluate()
        return self._state["acc"]


def loss_grad_depth(ctx: LossContext, camera: int) -> np.ndarray:
    """d(total loss)/d(depth of `camera`), per pixel (units 1/m)."""
    return ctx.acc.gdepth[camera].copy()


def loss_grad_pose(ctx: LossContext, direction: str = "next",
                   mode: str = "left") -> np.ndarray:
    """d(total loss)/d(twist at the current front pose) for one temporal
    direction ("next" = toward the following frame, "prev" = preceding)."""
    if direction not in ("next", "prev"):
        raise ValueError("direction must be 'next' or 'prev'")
    return ctx.acc.gpose[direction][mode].copy()


def coupled_pose_gradient(ctx: LossContext) -> np.ndarray:
    """Gradient under the single-twist model where the backward front pose is
    the inverse of the forward one: perturbing exp(eps)*T_next implies
    T_prev*exp(-eps)."""
    return ctx.acc.gpose["next"]["left"] - ctx.acc.gpose["prev"]["right"]


# ---------------------------------------------------------------------------
# Finite differences.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FdProbe:
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass(frozen=True)
class FdReport:
    max_rel_error: float
    probes: tuple[FdProbe, ...]

    def worst(self) -> FdProbe | None:
        return max(self.probes, key=lambda p: p.rel_error) if self.probes else None


def finite_diff_check(functional, parameters: np.ndarray, step: float,
                      probes: int, analytic: np.ndarray, seed: int = 0,
                      eligible: np.ndarray | None = None) -> FdReport:
    """Compare an analytic gradient with central finite differences at
    `probes` randomly seeded coordinates (restricted to `eligible` if given)."""
    params = np.array(parameters, dtype=np.float64)
    grad = np.asarray(analytic, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError("analytic gradient shape must match the parameters")
    if eligible is None:
        pool = np.arange(params.size)
    else:
        pool = np.flatnonzero(np.asarray(eligible, dtype=bool).reshape(-1))
    if pool.size == 0:
        return FdReport(0.0, ())
    rng = np.random.default_rng(seed)
    take = min(probes, pool.size)
    chosen = rng.choice(pool, size=take, replace=False)
    gmax = float(np.abs(grad.reshape(-1)[chosen]).max()) if take else 0.0
    floor = max(1e-6 * gmax, 1e-12)
    entries = []
    flat = params.reshape(-1)
    for idx in chosen:
        saved = flat[idx]
        flat[idx] = saved + step
        f_plus = functional(params)
        flat[idx] = saved - step
        f_minus = functional(params)
        flat[idx] = saved
        fd = (f_plus - f_minus) / (2.0 * step)
        a = float(grad.reshape(-1)[idx])
        rel = abs(a - fd) / max(abs(a), abs(fd), floor)
        entries.append(FdProbe(index=np.unravel_index(idx, params.shape),
                               analytic=a, numeric=fd, rel_error=rel))
    return FdReport(max(e.rel_error for e in entries), tuple(entries))


# ---------------------------------------------------------------------------
# Per-term gradient check over a synthetic bundle.
# ---------------------------------------------------------------------------

def _single_term_config(config: LossConfig, term: str) -> eng.EngineConfig:
    return eng.EngineConfig(
        alpha=config.alpha,
        with_temporal=term == "temporal",
        with_spatial=term == "spatial",
        with_st=term == "spatial_temporal",
        with_smooth=term == "smoothness",
        with_ddcl=term == "ddcl",
        with_mvrcl=term == "mvrcl",
    )


def _term_value(inputs: eng.EngineInputs, cfg: eng.EngineConfig, term: str) -> float:
    res = eng.evaluate(inputs, cfg)
    return getattr(res, _TERM_ATTR[term]).value


def _term_gradients(inputs: eng.EngineInputs, cfg: eng.EngineConfig, term: str
                    ) -> tuple[eng.EngineResult, eng.GradAccumulator]:
    res = eng.evaluate(inputs, cfg)
    acc = _backward_all(res, inputs, {term: 1.0}, want_pose=True)
    return res, acc


def _coord_margin_ok(corr: eng.CorrCache, margin: float) -> np.ndarray:
    fu = corr.u - np.floor(corr.u)
    fv = corr.v - np.floor(corr.v)
    k = corr.k_src
    ok = corr.valid.copy()
    ok &= (fu > margin) & (fu < 1.0 - margin)
    ok &= (fv > margin) & (fv < 1.0 - margin)
    ok &= (corr.u > margin) & (corr.u < k.width - 1 - margin)
    ok &= (corr.v > margin) & (corr.v < k.height - 1 - margin)
    ok &= corr.q[..., 2] > 0.05
    return ok


def _photom_kink_ok(rec: eng.PhotomRecord, margin: float) -> np.ndarray:
    diff = np.abs(rec.cache.a - rec.cache.b)
    return diff.min(axis=2) > margin


def _term_eligibility(res: eng.EngineResult, inputs: eng.EngineInputs,
                      term: str, coord_margin: float = 0.05,
                      kink_margin: float = 1e-3) -> list[np.ndarray]:
    """Per-camera masks of depth probes that stay away from bilinear knot
    lines, mask borders, and L1 kinks for the given term."""
    ok = [np.zeros(d.shape, dtype=bool) for d in inputs.depth_vals]
    seen: set[int] = set()

    def restrict(cam: int, mask: np.ndarray) -> None:
        if cam in seen:
            ok[cam] &= mask
        else:
            ok[cam] = mask.copy()
            seen.add(cam)

    if term == "smoothness":
        for rec in res.smooth.records:
            d = inputs.depth_vals[rec.cam]
            ds = d / d.mean()
            gx = np.abs(ds[:, 1:] - ds[:, :-1]) > kink_margin
            gy = np.abs(ds[1:, :] - ds[:-1, :]) > kink_margin
            m = np.zeros_like(ok[rec.cam])
            m[:, 1:-1] = gx[:, 1:] & gx[:, :-1]
            m[1:-1, :] &= gy[1:, :] & gy[:-1, :]
            m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = False
            restrict(rec.cam, m)
        return ok

    if term == "ddcl":
        for rec in res.ddcl.records:
            restrict(rec.tgt,
                     _coord_margin_ok(rec.corr, coord_margin) & rec.mask
                     & (np.abs(inputs.depth_vals[rec.tgt] - rec.dtilde) > kink_margin))
        # exclude source pixels feeding target pixels near the L1 kink
        for rec in res.ddcl.records:
            near_kink = rec.mask & (np.abs(inputs.depth_vals[rec.tgt] - rec.dtilde)
                                    < 10.0 * kink_margin)
            forbidden = eng.bilin_backward_values(
                rec.bil, near_kink.astype(np.float64),
                inputs.depth_vals[rec.src].shape) > 0.0
            ok[rec.src] &= ~forbidden
        return ok

    records = {
        "temporal": res.temporal.records,
        "spatial": res.spatial.records,
        "spatial_temporal": res.st.records,
        "mvrcl": res.mvrcl.records,
    }[term]
    for rec in records:
        mask = rec.cache.mask & _photom_kink_ok(rec, kink_margin)
        for recon in (rec.recon_a, rec.recon_b):
            if recon is not None:
                mask = mask & _coord_margin_ok(recon.corr, coord_margin)
        restrict((rec.recon_b or rec.recon_a).cam, mask)
    return ok


@dataclass(frozen=True)
class GradCheckEntry:
    term: str
    kind: str
    probes: int
    max_rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.max_rel_error < self.tol for e in self.entries)

    def to_text(self) -> str:
        lines = ["term\tkind\tprobes\tmax_rel_error\tstatus"]
        for e in self.entries:
            status = "ok" if e.max_rel_error < self.tol else "FAIL"
            lines.append(f"{e.term}\t{e.kind}\t{e.probes}\t{e.max_rel_error:.3e}\t{status}")
        lines.append(f"tolerance\t{self.tol:g}\toverall\t"
                     f"{'ok' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def gradcheck(bundle: FrameBundle, depths: list[DepthMap], config: LossConfig,
              probes_per_term: int = 200, depth_step: float = 1e-3,
              pose_step: float = 1e-5, seed: int = 0, tol: float = 1e-4,
              terms: tuple[str, ...] = TERM_NAMES) -> GradCheckReport:
    """Check every loss term's analytic gradient against central differences.

    Depth probes are drawn from pixels bounded away from bilinear knot lines,
    mask borders, and L1 kinks; pose probes perturb each twist coordinate of
    the front pose for both temporal directions.
    """
    base_inputs = engine_inputs(bundle, depths)
    entries = []
    active = {
        "temporal": True,
        "spatial": config.lambda_s > 0,
        "spatial_temporal": config.lambda_st > 0,
        "smoothness": config.lambda_smooth > 0,
        "ddcl": config.lambda_ddcl > 0,
        "mvrcl": config.lambda_mvrcl > 0,
    }
    rng = np.random.default_rng(seed)
    for term in terms:
        if not active[term]:
            continue
        cfg = _single_term_config(config, term)
        res, acc = _term_gradients(base_inputs, cfg, term)
        eligible = _term_eligibility(res, base_inputs, term)
        n_cams = len(depths)
        per_cam = max(1, probes_per_term // n_cams)
        total_probes = 0
        worst = 0.0
        for cam in range(n_cams):
            if not eligible[cam].any():
                continue

            def depth_functional(vals, cam=cam):
                new_vals = list(base_inputs.depth_vals)
                new_vals[cam] = vals
                inputs = eng.EngineInputs(
                    rig=base_inputs.rig, imgs_prev=base_inputs.imgs_prev,
                    imgs_t=base_inputs.imgs_t, imgs_next=base_inputs.imgs_next,
                    depth_vals=tuple(new_vals),
                    depth_valid=base_inputs.depth_valid,
                    front_next=base_inputs.front_next,
                    front_prev=base_inputs.front_prev)
                return _term_value(inputs, cfg, term)

            rep = finite_diff_check(depth_functional,
                                    base_inputs.depth_vals[cam].copy(),
                                    depth_step, per_cam, acc.gdepth[cam],
                                    seed=int(rng.integers(2 ** 31)),
                                    eligible=eligible[cam])
            total_probes += len(rep.probes)
            worst = max(worst, rep.max_rel_error)
        entries.append(GradCheckEntry(term=term, kind="depth",
                                      probes=total_probes, max_rel_error=worst))

        if term in ("temporal", "spatial_temporal", "mvrcl"):
            for slot in ("next", "prev"):
                base_pose = getattr(base_inputs, f"front_{slot}")

                def pose_functional(delta, slot=slot, base_pose=base_pose):
                    perturbed = compose(base_pose, exp_se3(delta))
                    kwargs = {"front_next": base_inputs.front_next,
                              "front_prev": base_inputs.front_prev}
                    kwargs[f"front_{slot}"] = perturbed
                    inputs = eng.EngineInputs(
                        rig=base_inputs.rig, imgs_prev=base_inputs.imgs_prev,
                        imgs_t=base_inputs.imgs_t, imgs_next=base_inputs.imgs_next,
                        depth_vals=base_inputs.depth_vals,
                        depth_valid=base_inputs.depth_valid, **kwargs)
                    return _term_value(inputs, cfg, term)

                rep = finite_diff_check(pose_functional, np.zeros(6), pose_step,
                                        6, acc.gpose[slot]["left"],
                                        seed=int(rng.integers(2 ** 31)))
                entries.append(GradCheckEntry(term=term, kind=f"pose_{slot}",
                                              probes=len(rep.probes),
                                              max_rel_error=rep.max_rel_error))
    return GradCheckReport(tuple(entries), tol)
