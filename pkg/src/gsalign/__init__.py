"""Feature-guided registration of 3D Gaussian splat models under Sim(3)."""

from gsalign.model import GaussianModel
from gsalign.sim3 import Sim3Transform

__all__ = ["GaussianModel", "Sim3Transform"]

__version__ = "0.1.0"
