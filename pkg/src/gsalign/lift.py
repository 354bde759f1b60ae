"""Lifting observed feature maps onto frozen Gaussian geometry.

With geometry, opacity and color fixed, the rendered feature map is linear
in the per-Gaussian descriptors: F^r[px] = sum_i w_i[px] f_i with weights
w = alpha * transmittance that never change. The weights are therefore
extracted once per view and reused across all descent steps on the L1
objective sum_views |F - F^r|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from gsalign.cameras import CameraPose
from gsalign.model import GaussianModel
from gsalign.render import DEFAULT_CONFIG, FeatureMap, RenderConfig, \
    _build_fragments, _project

F64 = NDArray[np.float64]


@dataclass
class _ViewWeights:
    pix: NDArray[np.intp]
    gid: NDArray[np.intp]
    weight: F64
    npix: int
    observed: F64          # (npix, 3)


def _extract_weights(model: GaussianModel, views, cfg: RenderConfig
                     ) -> list[_ViewWeights]:
    out = []
    for fmap, cam in views:
        if (fmap.height, fmap.width) != (cam.height, cam.width):
            raise ValueError("feature map resolution does not match camera")
        proj = _project(model, cam, cfg)
        frags = _build_fragments(proj, model.opacities, cam.width, cam.height, cfg)
        weight = frags.alpha * frags.trans
        # Fragments buried under an opaque stack contribute nothing to the
        # maps; dropping them gives truly occluded Gaussians a zero gradient
        # instead of a weight-normalized full-size step.
        keep = weight >= 1e-12
        out.append(_ViewWeights(
            pix=frags.pix[keep], gid=frags.gid[keep], weight=weight[keep],
            npix=cam.width * cam.height, observed=fmap.data.reshape(-1, 3)))
    return out


def lift_features(model: GaussianModel, views: list[tuple[FeatureMap, CameraPose]],
                  iters: int = 200, step: float = 0.25,
                  init: F64 | None = None,
                  cfg: RenderConfig = DEFAULT_CONFIG) -> GaussianModel:
    """Optimize per-Gaussian descriptors to explain the observed maps.

    Projected subgradient descent on the L1 image loss with a 1/sqrt(k)
    step decay (a constant step oscillates around the weighted median and
    stalls an order of magnitude above it). Each Gaussian's step is
    normalized by its total compositing weight so poorly seen splats move
    no faster than dominant ones. Descriptors stay clamped to [0, 1];
    Gaussians with zero weight in every view keep their initialization.
    """
    if not views:
        raise ValueError("need at least one view")
    if iters < 0 or step <= 0.0:
        raise ValueError("iters must be >= 0 and step > 0")
    vw = _extract_weights(model, views, cfg)
    n = len(model)
    total_weight = np.zeros(n)
    for v in vw:
        total_weight += np.bincount(v.gid, weights=v.weight, minlength=n)
    denom = np.maximum(total_weight, 1e-12)

    f = np.zeros((n, 3)) if init is None else np.array(init, dtype=np.float64)
    if f.shape != (n, 3):
        raise ValueError(f"init must be ({n}, 3)")
    for k in range(iters):
        grad = np.zeros((n, 3))
        for v in vw:
            rendered = np.zeros((v.npix, 3))
            for c in range(3):
                rendered[:, c] = np.bincount(v.pix, weights=v.weight * f[v.gid, c],
                                             minlength=v.npix)
            sgn = np.sign(rendered - v.observed)
            for c in range(3):
                grad[:, c] += np.bincount(v.gid, weights=v.weight * sgn[v.pix, c],
                                          minlength=n)
        f = np.clip(f - (step / np.sqrt(k + 1.0)) * grad / denom[:, None], 0.0, 1.0)
    return model.with_features(f)


def per_gaussian_visibility(model: GaussianModel, cams: list[CameraPose],
                            cfg: RenderConfig = DEFAULT_CONFIG) -> F64:
    """Best single-view visibility of each Gaussian, in [0, 1].

    Visibility in a view is the transmittance-weighted fraction
    sum(alpha * T) / sum(alpha) over the Gaussian's fragments: 1 when
    nothing occludes it, 0 when fully hidden or never projected.
    """
    n = len(model)
    best = np.zeros(n)
    for cam in cams:
        proj = _project(model, cam, cfg)
        frags = _build_fragments(proj, model.opacities, cam.width, cam.height, cfg)
        num = np.bincount(frags.gid, weights=frags.alpha * frags.trans, minlength=n)
        den = np.bincount(frags.gid, weights=frags.alpha, minlength=n)
        vis = np.where(den > 0.0, num / np.maximum(den, 1e-300), 0.0)
        best = np.maximum(best, vis)
    return best
