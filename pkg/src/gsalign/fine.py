"""Multi-view rendering-consistency refinement of a similarity transform.

Starting from the coarse estimate, ADAM walks a 7-parameter chart
(axis-angle increment composed onto the rotation, translation, log scale)
down the multi-view squared rendering loss. The returned transform is the
best iterate seen, not necessarily the last: a fixed learning rate can
overshoot once the basin flattens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from gsalign.cameras import CameraPose, ViewSelection, select_views
from gsalign.errors import GsAlignError
from gsalign.model import GaussianModel
from gsalign.render import DEFAULT_CONFIG, MultiViewLoss, RenderConfig
from gsalign.sim3 import Sim3Transform, axis_angle_matrix, matrix_to_quat


@dataclass(frozen=True)
class FineConfig:
    num_views: int = 3
    iterations: int = 60
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mode: str = "feature"                     # feature | rgb
    view_strategy: str = "diverse_fibonacci"  # diverse_fibonacci | manual
    resolution: tuple[int, int] = (128, 128)
    view_radius_factor: float = 2.5
    fov_deg: float = 48.0
    manual_views: tuple[CameraPose, ...] = ()
    render: RenderConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if self.num_views < 1:
            raise ValueError("num_views must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class FineIteration:
    iteration: int
    loss: float
    transform: Sim3Transform
    increment: NDArray[np.float64] | None   # chart step applied after this eval

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "loss": self.loss,
                "transform": self.transform.to_dict(),
                "increment": None if self.increment is None
                else [float(v) for v in self.increment]}


@dataclass
class FineTrace:
    iterations: list[FineIteration] = field(default_factory=list)
    best_index: int = 0
    best_loss: float = float("inf")
    last_loss: float = float("inf")

    def to_dict(self) -> dict:
        return {"best_index": self.best_index, "best_loss": self.best_loss,
                "last_loss": self.last_loss,
                "iterations": [it.to_dict() for it in self.iterations]}


def apply_chart_step(transform: Sim3Transform,
                     delta: NDArray[np.float64]) -> Sim3Transform:
    """Apply a 7-vector chart increment (axis-angle, translation, log scale)."""
    R = axis_angle_matrix(delta[:3]) @ transform.rotation
    return Sim3Transform(transform.scale * float(np.exp(delta[6])),
                         matrix_to_quat(R),
                         transform.translation + delta[3:6])


def _views_for(target: GaussianModel, cfg: FineConfig) -> list[CameraPose]:
    w, h = cfg.resolution
    sel = ViewSelection(strategy=cfg.view_strategy,
                        radius_factor=cfg.view_radius_factor,
                        width=w, height=h, fov_deg=cfg.fov_deg,
                        manual_poses=list(cfg.manual_views))
    return select_views(target, cfg.num_views, sel)


def fine_register(t0: Sim3Transform, source: GaussianModel,
                  target: GaussianModel, cfg: FineConfig = FineConfig()
                  ) -> tuple[Sim3Transform, FineTrace]:
    """Refine t0 by minimizing the multi-view rendering-consistency loss.

    Runs cfg.iterations ADAM steps; the trace records every evaluated
    iterate with its loss and the chart increment taken from it. The loss
    of the returned transform never exceeds the loss at t0.
    """
    views = _views_for(target, cfg)
    objective = MultiViewLoss(source, target, views, cfg.mode, cfg.render)

    trace = FineTrace()
    T = t0
    m = np.zeros(7)
    v = np.zeros(7)
    for it in range(cfg.iterations):
        loss, grad = objective.loss_and_gradient(T)
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            raise GsAlignError(f"non-finite loss or gradient at fine iteration "
                               f"{it} (loss={loss!r})")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        mhat = m / (1.0 - cfg.beta1 ** (it + 1))
        vhat = v / (1.0 - cfg.beta2 ** (it + 1))
        delta = -cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        trace.iterations.append(FineIteration(it, float(loss), T, delta.copy()))
        T = apply_chart_step(T, delta)

    final_loss = objective.loss(T)
    trace.iterations.append(FineIteration(cfg.iterations, float(final_loss), T, None))

    losses = [rec.loss for rec in trace.iterations]
    best = int(np.argmin(losses))
    trace.best_index = best
    trace.best_loss = losses[best]
    trace.last_loss = losses[-1]
    return trace.iterations[best].transform, trace
