"""Exception types shared across the earfit package."""


class EarfitError(Exception):
    """Base class for earfit-specific failures."""


class ModelConstructionError(EarfitError):
    """Raised when a statistical model cannot be built from the given data."""


class DegenerateVarianceError(ModelConstructionError):
    """All sample variance is zero; PCA has no components to retain."""


class SamplingError(EarfitError):
    """Vertex colour sampling failed (e.g. every vertex out of bounds)."""


class CorpusError(EarfitError):
    """Too many corpus items failed to be usable for model building."""


class FitDivergedError(EarfitError):
    """Optimization produced non-finite values.

    Carries the best state seen before divergence in ``best_report``.
    """

    def __init__(self, message, best_report=None):
        super().__init__(message)
        self.best_report = best_report
