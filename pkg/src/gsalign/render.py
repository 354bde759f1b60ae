"""Deterministic differentiable CPU splatting of Gaussian models.

Forward pass: EWA projection of each Gaussian to an image-plane ellipse,
front-to-back alpha compositing per pixel. All reductions are fixed-order
(stable sort + cumulative sums + bincount), so rasters are bitwise
reproducible regardless of thread count.

Backward pass: analytic reverse-mode gradients of the multi-view squared
rendering loss with respect to a 7-parameter similarity chart (axis-angle
increment, translation, log scale) anchored at the current transform.

Implementation detail: the per-splat alpha uses a windowed Gaussian
alpha = opacity * max(exp(power) - exp(power_cut), 0), which reaches zero
exactly at the bounding-box cutoff. A hard cutoff would make the loss
discontinuous in the pose parameters and break finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from gsalign.cameras import CameraPose
from gsalign.errors import NoOverlapError
from gsalign.model import GaussianModel
from gsalign.sim3 import Sim3Transform

F64 = NDArray[np.float64]


@dataclass(frozen=True)
class RenderConfig:
    znear: float = 1e-3
    alpha_clip: float = 0.99
    cov_floor: float = 0.3        # px^2 added to the projected covariance diagonal
    cutoff_sigma: float = 4.5     # bounding-box radius in projected sigmas

    @property
    def power_cut(self) -> float:
        return -0.5 * self.cutoff_sigma ** 2


DEFAULT_CONFIG = RenderConfig()


@dataclass(frozen=True)
class FeatureMap:
    """A rendered 3-channel raster plus accumulated per-pixel alpha."""

    data: F64     # (H, W, 3)
    alpha: F64    # (H, W)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3 or alpha.shape != data.shape[:2]:
            raise ValueError(f"inconsistent raster shapes {data.shape} / {alpha.shape}")
        if not (np.isfinite(data).all() and np.isfinite(alpha).all()):
            raise ValueError("raster contains non-finite values")
        if alpha.min(initial=0.0) < -1e-9 or alpha.max(initial=0.0) > 1.0 + 1e-9:
            raise ValueError("alpha outside [0, 1]")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "alpha", np.clip(alpha, 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

@dataclass
class _Projection:
    x_cam: F64      # (N, 3) camera-frame positions
    mean2d: F64     # (N, 2) pixel coordinates
    M: F64          # (N, 2, 3) Jacobian @ world-to-camera rotation
    cov2d: F64      # (N, 2, 2) floored projected covariance
    depth: F64      # (N,)
    valid: NDArray[np.bool_]


def _project(model: GaussianModel, cam: CameraPose,
             cfg: RenderConfig) -> _Projection:
    W = cam.rotation
    x_cam = model.positions @ W.T + cam.translation
    x, y, z = x_cam[:, 0], x_cam[:, 1], x_cam[:, 2]
    valid = z > cfg.znear
    zs = np.where(valid, z, 1.0)   # placeholder depth for culled rows

    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    M = np.empty((len(model), 2, 3))
    M[:, 0, :] = (cam.fx / zs)[:, None] * W[0] - (cam.fx * x / zs ** 2)[:, None] * W[2]
    M[:, 1, :] = (cam.fy / zs)[:, None] * W[1] - (cam.fy * y / zs ** 2)[:, None] * W[2]
    cov2d = np.einsum("nij,njk,nlk->nil", M, model.covariances, M)
    cov2d[:, 0, 0] += cfg.cov_floor
    cov2d[:, 1, 1] += cfg.cov_floor
    return _Projection(x_cam, mean2d, M, cov2d, z, valid)


def project_gaussian(position, covariance, cam: CameraPose,
                     cfg: RenderConfig = DEFAULT_CONFIG):
    """Project one Gaussian; returns (mean2d, cov2d, depth) or None if culled."""
    model = GaussianModel(np.asarray(position, dtype=np.float64).reshape(1, 3),
                          np.asarray(covariance, dtype=np.float64).reshape(1, 3, 3),
                          np.ones(1), np.zeros((1, 3)))
    proj = _project(model, cam, cfg)
    if not proj.valid[0]:
        return None
    return proj.mean2d[0], proj.cov2d[0], float(proj.depth[0])


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

@dataclass
class _Fragments:
    """Per-fragment arrays, sorted by (pixel, depth, gaussian index)."""

    gid: NDArray[np.intp]     # source Gaussian of each fragment
    pix: NDArray[np.intp]     # flat pixel index iy * W + ix
    dx: F64
    dy: F64
    expp: F64                 # exp(power), pre-window
    alpha: F64                # clipped, in (0, alpha_clip]
    trans: F64                # transmittance ahead of this fragment
    seg_start: NDArray[np.intp]   # per-fragment index of its pixel run start
    seg_end: NDArray[np.intp]     # per-fragment index one past its pixel run


def _build_fragments(proj: _Projection, opacities: F64, width: int, height: int,
                     cfg: RenderConfig) -> _Fragments:
    c11, c12, c22 = proj.cov2d[:, 0, 0], proj.cov2d[:, 0, 1], proj.cov2d[:, 1, 1]
    half_tr = 0.5 * (c11 + c22)
    lam_max = half_tr + np.sqrt(np.maximum((0.5 * (c11 - c22)) ** 2 + c12 ** 2, 0.0))
    radius = cfg.cutoff_sigma * np.sqrt(lam_max)

    u, v = proj.mean2d[:, 0], proj.mean2d[:, 1]
    x0 = np.clip(np.ceil(u - radius - 0.5).astype(np.int64), 0, width - 1)
    x1 = np.clip(np.floor(u + radius - 0.5).astype(np.int64), 0, width - 1)
    y0 = np.clip(np.ceil(v - radius - 0.5).astype(np.int64), 0, height - 1)
    y1 = np.clip(np.floor(v + radius - 0.5).astype(np.int64), 0, height - 1)
    # Boxes entirely off-screen collapse after clipping unless rejected here.
    off = (u + radius < 0.5) | (u - radius > width - 0.5) | \
          (v + radius < 0.5) | (v - radius > height - 0.5)
    wpx = np.where(proj.valid & ~off, x1 - x0 + 1, 0).astype(np.int64)
    hpx = np.where(proj.valid & ~off, y1 - y0 + 1, 0).astype(np.int64)
    counts = np.maximum(wpx, 0) * np.maximum(hpx, 0)

    total = int(counts.sum())
    gid = np.repeat(np.arange(len(counts), dtype=np.intp), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total, dtype=np.int64) - starts[gid]
    ix = x0[gid] + local % np.maximum(wpx[gid], 1)
    iy = y0[gid] + local // np.maximum(wpx[gid], 1)

    dx = ix + 0.5 - u[gid]
    dy = iy + 0.5 - v[gid]
    det = c11 * c22 - c12 ** 2
    a11, a12, a22 = (c22 / det)[gid], (-c12 / det)[gid], (c11 / det)[gid]
    power = -0.5 * (a11 * dx * dx + 2.0 * a12 * dx * dy + a22 * dy * dy)
    expp = np.exp(power)
    window = expp - np.exp(cfg.power_cut)
    alpha = np.minimum(opacities[gid] * window, cfg.alpha_clip)

    keep = window > 0.0
    gid, dx, dy, expp, alpha = gid[keep], dx[keep], dy[keep], expp[keep], alpha[keep]
    pix = (iy[keep] * width + ix[keep]).astype(np.intp)

    order = np.lexsort((gid, proj.depth[gid], pix))
    gid, pix = gid[order], pix[order]
    dx, dy, expp, alpha = dx[order], dy[order], expp[order], alpha[order]

    newseg = np.empty(len(pix), dtype=bool)
    if len(pix):
        newseg[0] = True
        newseg[1:] = pix[1:] != pix[:-1]
    seg_first = np.flatnonzero(newseg)
    seg_id = np.cumsum(newseg) - 1
    seg_start = seg_first[seg_id] if len(pix) else np.empty(0, dtype=np.intp)
    bounds = np.append(seg_first, len(pix))
    seg_end = bounds[seg_id + 1] if len(pix) else np.empty(0, dtype=np.intp)

    logs = np.log1p(-alpha)
    cums = np.cumsum(logs)
    excl = cums - logs
    base = excl[seg_start] if len(pix) else excl
    trans = np.exp(excl - base)
    return _Fragments(gid, pix, dx, dy, expp, alpha, trans, seg_start, seg_end)


def _composite(frags: _Fragments, channels: F64, width: int, height: int
               ) -> tuple[F64, F64]:
    weight = frags.alpha * frags.trans
    npix = width * height
    img = np.zeros((npix, 3))
    for c in range(3):
        img[:, c] = np.bincount(frags.pix, weights=weight * channels[frags.gid, c],
                                minlength=npix)
    alpha = np.bincount(frags.pix, weights=weight, minlength=npix)
    return img.reshape(height, width, 3), alpha.reshape(height, width)


def _render_channels(model: GaussianModel, cam: CameraPose, channels: F64,
                     cfg: RenderConfig) -> tuple[FeatureMap, _Projection, _Fragments]:
    proj = _project(model, cam, cfg)
    frags = _build_fragments(proj, model.opacities, cam.width, cam.height, cfg)
    img, alpha = _composite(frags, channels, cam.width, cam.height)
    return FeatureMap(img, alpha), proj, frags


def render_feature_map(model: GaussianModel, cam: CameraPose,
                       cfg: RenderConfig = DEFAULT_CONFIG) -> FeatureMap:
    """Splat the model's descriptor channels into the camera."""
    fmap, _, _ = _render_channels(model, cam, model.require_features(), cfg)
    return fmap


def render_rgb(model: GaussianModel, cam: CameraPose,
               cfg: RenderConfig = DEFAULT_CONFIG) -> FeatureMap:
    """Splat the model's DC colors into the camera."""
    fmap, _, _ = _render_channels(model, cam, model.colors_dc, cfg)
    return fmap


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _backward_fragments(frags: _Fragments, channels: F64, opacities: F64,
                        d_img: F64, cfg: RenderConfig) -> F64:
    """Propagate dL/d(image) to the per-fragment dL/d(power).

    The fragment weight is alpha_i * T_i; a fragment's alpha also shades
    every fragment behind it through the transmittance, which contributes
    the segmented suffix-sum term.
    """
    gid, pix = frags.gid, frags.pix
    flat = d_img.reshape(-1, 3)
    g = np.einsum("nc,nc->n", flat[pix], channels[gid])

    q = g * frags.alpha * frags.trans
    cq = np.cumsum(q)
    cq0 = np.concatenate([[0.0], cq])
    suffix = cq0[frags.seg_end] - cq
    d_alpha = g * frags.trans - suffix / (1.0 - frags.alpha)

    unclipped = opacities[gid] * (frags.expp - np.exp(cfg.power_cut)) < cfg.alpha_clip
    return d_alpha * unclipped * opacities[gid] * frags.expp


def _accumulate_spatial_grads(frags: _Fragments, proj: _Projection, d_power: F64,
                              n: int) -> tuple[F64, F64]:
    """dL/d(mean2d) and dL/d(cov2d) per Gaussian from per-fragment d_power."""
    gid = frags.gid
    cov = proj.cov2d
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    a11, a12, a22 = cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det

    # d(power)/d(d) = -A d; mean2d enters through d = pixel - mean.
    gdx = d_power * -(a11[gid] * frags.dx + a12[gid] * frags.dy)
    gdy = d_power * -(a12[gid] * frags.dx + a22[gid] * frags.dy)
    dmean = np.stack([-np.bincount(gid, weights=gdx, minlength=n),
                      -np.bincount(gid, weights=gdy, minlength=n)], axis=1)

    dA11 = np.bincount(gid, weights=d_power * frags.dx ** 2 * -0.5, minlength=n)
    dA12 = np.bincount(gid, weights=d_power * frags.dx * frags.dy * -1.0, minlength=n)
    dA22 = np.bincount(gid, weights=d_power * frags.dy ** 2 * -0.5, minlength=n)
    GA = np.empty((n, 2, 2))
    GA[:, 0, 0], GA[:, 1, 1] = dA11, dA22
    GA[:, 0, 1] = GA[:, 1, 0] = 0.5 * dA12
    A = np.empty((n, 2, 2))
    A[:, 0, 0], A[:, 0, 1], A[:, 1, 0], A[:, 1, 1] = a11, a12, a12, a22
    dcov = -np.einsum("nij,njk,nkl->nil", A, GA, A)
    return dmean, dcov


def _project_backward(proj: _Projection, model: GaussianModel, cam: CameraPose,
                      dmean: F64, dcov: F64) -> tuple[F64, F64]:
    """Pull image-plane gradients back to world positions and covariances."""
    W = cam.rotation
    x, y, z = proj.x_cam[:, 0], proj.x_cam[:, 1], proj.x_cam[:, 2]
    z = np.where(proj.valid, z, 1.0)
    fx, fy = cam.fx, cam.fy

    dsigma = np.einsum("nji,njk,nkl->nil", proj.M, dcov, proj.M)

    dM = 2.0 * np.einsum("nij,njk,nkl->nil", dcov, proj.M, model.covariances)
    dxc = np.empty((len(model), 3))
    dxc[:, 0] = dmean[:, 0] * fx / z - np.einsum("ni,i->n", dM[:, 0, :], W[2]) * fx / z ** 2
    dxc[:, 1] = dmean[:, 1] * fy / z - np.einsum("ni,i->n", dM[:, 1, :], W[2]) * fy / z ** 2
    dxc[:, 2] = (
        -dmean[:, 0] * fx * x / z ** 2 - dmean[:, 1] * fy * y / z ** 2
        + np.einsum("ni,i->n", dM[:, 0, :], W[0]) * -fx / z ** 2
        + np.einsum("ni,i->n", dM[:, 0, :], W[2]) * 2.0 * fx * x / z ** 3
        + np.einsum("ni,i->n", dM[:, 1, :], W[1]) * -fy / z ** 2
        + np.einsum("ni,i->n", dM[:, 1, :], W[2]) * 2.0 * fy * y / z ** 3)
    dxc[~proj.valid] = 0.0
    dsigma[~proj.valid] = 0.0
    dpos = dxc @ W
    return dpos, dsigma


_SKEWS = np.array([
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
])


def _chart_reduce(transform: Sim3Transform, positions: F64, covariances: F64,
                  dpos: F64, dsigma: F64) -> F64:
    """Collapse per-Gaussian world gradients onto the 7-parameter chart.

    Chart at T0 = (s0, R0, t0): T(w, dt, ds) maps p to
    exp(ds) R(w) (s0 R0 p) + t0 + dt, evaluated at w = 0, dt = 0, ds = 0.
    """
    v = positions - transform.translation
    grad = np.zeros(7)
    for k in range(3):
        K = _SKEWS[k]
        grad[k] = np.einsum("ni,ni->", dpos, v @ K.T)
        B = np.einsum("ij,njk->nik", K, covariances) - \
            np.einsum("nij,jk->nik", covariances, K)
        grad[k] += np.einsum("nij,nij->", dsigma, B)
    grad[3:6] = dpos.sum(axis=0)
    grad[6] = np.einsum("ni,ni->", dpos, v) + \
        2.0 * np.einsum("nij,nij->", dsigma, covariances)
    return grad


# ---------------------------------------------------------------------------
# Multi-view loss
# ---------------------------------------------------------------------------

class MultiViewLoss:
    """Squared multi-view rendering-consistency loss with cached targets.

    The target model's renders do not depend on the transform under
    optimization, so they are rendered once per camera up front.
    """

    def __init__(self, source: GaussianModel, target: GaussianModel,
                 cams: list[CameraPose], mode: str = "feature",
                 cfg: RenderConfig = DEFAULT_CONFIG):
        if len(cams) < 1:
            raise ValueError("need at least one camera")
        if mode not in ("feature", "rgb"):
            raise ValueError(f"unknown render mode {mode!r}")
        self.source = source
        self.cams = cams
        self.cfg = cfg
        self.src_channels = (source.require_features() if mode == "feature"
                             else source.colors_dc)
        tgt_channels = (target.require_features() if mode == "feature"
                        else target.colors_dc)
        self.target_maps = [_render_channels(target, cam, tgt_channels, cfg)[0]
                            for cam in cams]
        self._target_alpha = sum(m.alpha.sum() for m in self.target_maps)

    def loss_and_gradient(self, transform: Sim3Transform) -> tuple[float, F64]:
        moved = self.source.transformed(transform)
        total = 0.0
        grad = np.zeros(7)
        moved_alpha = 0.0
        for cam, tgt in zip(self.cams, self.target_maps):
            fmap, proj, frags = _render_channels(moved, cam, self.src_channels,
                                                 self.cfg)
            moved_alpha += fmap.alpha.sum()
            residual = fmap.data - tgt.data
            total += float(np.einsum("ijc,ijc->", residual, residual))
            d_power = _backward_fragments(frags, self.src_channels,
                                          moved.opacities, 2.0 * residual, self.cfg)
            dmean, dcov = _accumulate_spatial_grads(frags, proj, d_power, len(moved))
            dpos, dsigma = _project_backward(proj, moved, cam, dmean, dcov)
            grad += _chart_reduce(transform, moved.positions, moved.covariances,
                                  dpos, dsigma)
        if moved_alpha == 0.0 and self._target_alpha == 0.0:
            raise NoOverlapError()
        return total, grad

    def loss(self, transform: Sim3Transform) -> float:
        moved = self.source.transformed(transform)
        total = 0.0
        for cam, tgt in zip(self.cams, self.target_maps):
            fmap, _, _ = _render_channels(moved, cam, self.src_channels, self.cfg)
            residual = fmap.data - tgt.data
            total += float(np.einsum("ijc,ijc->", residual, residual))
        return total


def render_loss_gradient(transform: Sim3Transform, source: GaussianModel,
                         target: GaussianModel, cams: list[CameraPose],
                         mode: str = "feature",
                         cfg: RenderConfig = DEFAULT_CONFIG) -> tuple[float, F64]:
    """One-shot multi-view loss and 7-parameter chart gradient.

    The gradient is ordered (axis-angle x3, translation x3, log-scale) and
    matches central finite differences in the same chart.
    """
    return MultiViewLoss(source, target, cams, mode, cfg).loss_and_gradient(transform)
