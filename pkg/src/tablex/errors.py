"""Exception types shared across the toolkit."""


class TablexError(Exception):
    """Base class for all toolkit errors."""


class ParseError(TablexError):
    """Malformed input file (bad JSON, bad TSV row)."""


class ValidationError(TablexError):
    """Structurally valid input that violates a domain invariant."""


class ConfigError(TablexError):
    """Invalid or inconsistent configuration."""


class ShapeError(TablexError):
    """Tensor/raster shape mismatch."""


class WeightLoadError(TablexError):
    """Missing or incompatible checkpoint / pretrained weights."""


class TrainingDiverged(TablexError):
    """Loss became non-finite during training."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")


class LayoutError(TablexError):
    """Synthetic page layout is infeasible for the requested spec."""
