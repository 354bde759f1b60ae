import numpy as np
import pytest

from gsalign.model import GaussianModel
from gsalign.sim3 import Sim3Transform, random_rotation


def random_model(rng: np.random.Generator, n: int = 50,
                 featured: bool = True, spread: float = 1.0) -> GaussianModel:
    """Small random model with well-conditioned covariances."""
    positions = rng.normal(size=(n, 3)) * spread
    stddev = rng.uniform(0.05, 0.2, size=n) * spread
    axes = np.stack([random_rotation(rng) for _ in range(n)])
    evals = (stddev[:, None] * rng.uniform(0.5, 1.0, size=(n, 3))) ** 2
    cov = np.einsum("nij,nj,nkj->nik", axes, evals, axes)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return GaussianModel(
        positions=positions,
        covariances=cov,
        opacities=rng.uniform(0.3, 0.9, size=n),
        colors_dc=rng.uniform(size=(n, 3)),
        features=rng.uniform(size=(n, 3)) if featured else None,
    )


def random_sim3_uniform(rng: np.random.Generator,
                        scale_lo: float = 0.5, scale_hi: float = 2.0,
                        translation: float = 1.0) -> Sim3Transform:
    R = random_rotation(rng)
    s = np.exp(rng.uniform(np.log(scale_lo), np.log(scale_hi)))
    t = rng.uniform(-translation, translation, size=3)
    return Sim3Transform.from_rotation_matrix(s, R, t)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
