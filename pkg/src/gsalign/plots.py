"""Matplotlib figure and raster emission (Agg backend, file output only)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from gsalign.render import FeatureMap


def save_raster_png(fmap: FeatureMap, path: str | os.PathLike) -> None:
    """8-bit PNG dump of a rendered map, channels linearly mapped [0,1]->[0,255]."""
    rgb = np.clip(fmap.data, 0.0, 1.0)
    matplotlib.image.imsave(os.fspath(path), rgb)


def save_raster_npy(fmap: FeatureMap, path: str | os.PathLike) -> None:
    """Raw float32 planar dump, shape (4, H, W): 3 channels plus alpha."""
    planes = np.concatenate([np.moveaxis(fmap.data, 2, 0),
                             fmap.alpha[None, :, :]]).astype(np.float32)
    np.save(os.fspath(path), planes)


def load_raster_npy(path: str | os.PathLike) -> FeatureMap:
    planes = np.load(os.fspath(path))
    if planes.ndim != 3 or planes.shape[0] not in (3, 4):
        raise ValueError(f"expected a (3|4, H, W) planar dump, got {planes.shape}")
    data = np.moveaxis(planes[:3].astype(np.float64), 0, 2)
    alpha = planes[3].astype(np.float64) if planes.shape[0] == 4 \
        else np.zeros(planes.shape[1:])
    return FeatureMap(data, np.clip(alpha, 0.0, 1.0))


def save_trace_figure(coarse_trace, fine_trace, path: str | os.PathLike) -> None:
    """Residual / loss curves for the two registration stages."""
    panels = int(coarse_trace is not None) + int(fine_trace is not None)
    fig, axes = plt.subplots(1, max(panels, 1), figsize=(5.0 * max(panels, 1), 3.4))
    axes = np.atleast_1d(axes)
    col = 0
    if coarse_trace is not None:
        ax = axes[col]
        col += 1
        its = [r.iteration for r in coarse_trace.iterations]
        ax.semilogy(its, [max(r.residual_before, 1e-300)
                          for r in coarse_trace.iterations], "o-", label="before solve")
        ax.semilogy(its, [max(r.residual_after, 1e-300)
                          for r in coarse_trace.iterations], "s-", label="after solve")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean squared residual")
        ax.set_title("coarse alignment")
        ax.legend()
    if fine_trace is not None:
        ax = axes[col]
        its = [r.iteration for r in fine_trace.iterations]
        losses = [max(r.loss, 1e-300) for r in fine_trace.iterations]
        ax.semilogy(its, losses, "-")
        ax.axvline(fine_trace.best_index, color="tab:red", ls="--", lw=1,
                   label=f"best @ {fine_trace.best_index}")
        ax.set_xlabel("iteration")
        ax.set_ylabel("multi-view loss")
        ax.set_title("fine alignment")
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.fspath(path), dpi=110)
    plt.close(fig)


def save_benchmark_figure(rows: list[dict], path: str | os.PathLike) -> None:
    """Per-method RRE and scale-error distributions over successful trials."""
    ok = [r for r in rows if r["status"] == "ok"]
    methods = sorted({r["method"] for r in ok})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    for ax, key, label in ((ax1, "rre_deg", "RRE (deg)"),
                           (ax2, "scale_error_pct", "scale error (%)")):
        data, labels = [], []
        for m in methods:
            vals = [r["metrics"][key] for r in ok
                    if r["method"] == m and key in r["metrics"]]
            if vals:
                data.append(vals)
                labels.append(m)
        if data:
            ax.boxplot(data)
            ax.set_xticks(range(1, len(labels) + 1))
            ax.set_xticklabels(labels)
            ax.set_yscale("log")
        ax.set_ylabel(label)
    fig.suptitle("registration benchmark")
    fig.tight_layout()
    fig.savefig(os.fspath(path), dpi=110)
    plt.close(fig)
