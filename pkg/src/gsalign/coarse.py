"""Iterative feature-guided coarse registration.

Alternates between correspondence search and the closed-form Sim(3) solve.
Matching is feature-first: for each source Gaussian, candidate targets are
those within tau_f in descriptor space, and the spatially closest candidate
wins. Sources with no candidate are dropped outright, which keeps the
pruning semantics strict: descriptors veto, geometry ranks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from gsalign.errors import InsufficientMatchesError
from gsalign.model import GaussianModel
from gsalign.orientation import CorrespondenceSet, solve_absolute_orientation
from gsalign.sim3 import Sim3Transform


@dataclass(frozen=True)
class CoarseConfig:
    tau_f: float = 0.01
    max_iterations: int = 6
    convergence_eps: float = 1e-6
    subsample: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tau_f <= 0.0:
            raise ValueError("tau_f must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class CoarseIteration:
    iteration: int
    matched: int
    unmatched: int
    residual_before: float     # mean squared residual under the incoming transform
    residual_after: float      # same correspondences under the updated transform
    transform: Sim3Transform   # accumulated source-to-target estimate

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "matched": self.matched,
                "unmatched": self.unmatched,
                "residual_before": self.residual_before,
                "residual_after": self.residual_after,
                "transform": self.transform.to_dict()}


@dataclass
class CoarseTrace:
    iterations: list[CoarseIteration] = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {"converged": self.converged,
                "iterations": [it.to_dict() for it in self.iterations]}


class FeatureSpatialIndex:
    """Answers: nearest target position among descriptor-compatible targets.

    A KD-tree over descriptors yields the candidate set for the tau_f ball;
    the spatial winner is picked by exhaustive scan over that (small) set.
    Semantics are identical to a full scan, with spatial ties broken by
    lowest target index.
    """

    def __init__(self, target: GaussianModel):
        if len(target) == 0:
            raise ValueError("cannot index an empty model")
        self.positions = target.positions
        self.features = target.require_features()
        self._feature_tree = cKDTree(self.features)
        self._position_tree = cKDTree(self.positions)

    def query(self, point: NDArray[np.float64], feature: NDArray[np.float64],
              tau_f: float) -> int:
        """Index of the matched target, or -1 when no candidate survives."""
        if np.isinf(tau_f):
            d, _ = self._position_tree.query(point)
            ball = self._position_tree.query_ball_point(point, d * (1.0 + 1e-9) + 1e-300)
            cand = np.sort(ball)
        else:
            cand = np.sort(self._feature_tree.query_ball_point(feature, tau_f))
            if cand.size == 0:
                return -1
        diff = self.positions[cand] - point
        return int(cand[np.argmin(np.einsum("ni,ni->n", diff, diff))])


def find_correspondences(points: NDArray[np.float64],
                         features: NDArray[np.float64],
                         index: FeatureSpatialIndex,
                         tau_f: float) -> CorrespondenceSet:
    """Match each source point against the index; drop unmatched sources.

    Batched equivalent of FeatureSpatialIndex.query over all sources.
    Raises InsufficientMatchesError when fewer than 3 pairs survive.
    """
    n = len(points)
    if np.isinf(tau_f):
        d, _ = index._position_tree.query(points)
        balls = index._position_tree.query_ball_point(
            points, d * (1.0 + 1e-9) + 1e-300)
    else:
        balls = index._feature_tree.query_ball_point(features, tau_f)
    lens = np.array([len(b) for b in balls])
    flat = np.concatenate([np.asarray(b, dtype=np.intp) for b in balls]) \
        if lens.sum() else np.empty(0, dtype=np.intp)
    owner = np.repeat(np.arange(n), lens)
    diff = index.positions[flat] - points[owner]
    d2 = np.einsum("ni,ni->n", diff, diff)
    # Per-source argmin with lowest-index tie-break: sort by (owner, d2, flat)
    # and keep each owner's first row.
    order = np.lexsort((flat, d2, owner))
    first = np.unique(owner[order], return_index=True)[1]
    matches = np.full(n, -1, dtype=np.intp)
    matches[owner[order][first]] = flat[order][first]
    keep = np.flatnonzero(matches >= 0)
    if keep.size < 3:
        raise InsufficientMatchesError(int(keep.size))
    tgt = matches[keep]
    return CorrespondenceSet(points[keep], index.positions[tgt],
                             source_indices=keep, target_indices=tgt)


def coarse_register(source: GaussianModel, target: GaussianModel,
                    cfg: CoarseConfig = CoarseConfig()
                    ) -> tuple[Sim3Transform, CoarseTrace]:
    """Estimate the source-to-target Sim(3) by iterated match-and-solve.

    Starts from the identity; each round transforms the source by the
    current estimate, matches under tau_f, solves in closed form for the
    incremental correction and composes it on. Stops when the increment is
    within convergence_eps of the identity (rotation angle, |log s| and
    translation relative to the target diameter) or after max_iterations.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both models must be non-empty")
    src_feat = source.require_features()
    index = FeatureSpatialIndex(target)
    rng = np.random.default_rng(cfg.seed)
    diameter = target.scene_diameter()

    T = Sim3Transform.identity()
    trace = CoarseTrace()
    for it in range(1, cfg.max_iterations + 1):
        pts, feats = source.positions, src_feat
        if cfg.subsample is not None and cfg.subsample < len(source):
            pick = np.sort(rng.choice(len(source), cfg.subsample, replace=False))
            pts, feats = pts[pick], feats[pick]
        moved = T.apply(pts)
        corr = find_correspondences(moved, feats, index, cfg.tau_f)
        unmatched = len(pts) - len(corr)

        delta = solve_absolute_orientation(corr)
        diff0 = corr.source_points - corr.target_points
        diff1 = delta.apply(corr.source_points) - corr.target_points
        record = CoarseIteration(
            iteration=it, matched=len(corr), unmatched=unmatched,
            residual_before=float(np.einsum("ni,ni->", diff0, diff0) / len(corr)),
            residual_after=float(np.einsum("ni,ni->", diff1, diff1) / len(corr)),
            transform=delta.compose(T))
        trace.iterations.append(record)
        T = record.transform
        if delta.is_close_to_identity(cfg.convergence_eps, translation_scale=diameter):
            trace.converged = True
            break
    return T, trace
