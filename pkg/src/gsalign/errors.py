"""Exception hierarchy; the CLI maps these to exit code 1."""

from __future__ import annotations


class GsAlignError(Exception):
    """Base class for domain failures (as opposed to usage errors)."""


class PlyParseError(GsAlignError):
    """Malformed or truncated PLY input; message carries a byte offset."""


class InsufficientMatchesError(GsAlignError):
    """Fewer than 3 correspondences survived feature pruning."""

    def __init__(self, survivors: int):
        self.survivors = survivors
        super().__init__(f"insufficient matches: only {survivors} correspondences "
                         f"survived feature pruning (need >= 3)")


class NoOverlapError(GsAlignError):
    """Every view rendered with zero accumulated alpha for a model pair."""

    def __init__(self):
        super().__init__("no overlap signal: models are invisible in all views")


class DegenerateGeometryError(GsAlignError):
    """Rank-deficient point configuration (collinear or coincident)."""
