"""Sequential estimation of ROC, PPV and NPV curves with group-sequential design tools."""

from importlib import metadata

from .asymptotics import CovProbe, NumericalError, StudyShape
from .curves import BinormalModel, MarkerModel
from .empirical import DomainError, MarkerSample, SampleFormatError, SequentialView, ValidityWindow

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
    __version__ = "0.0.0+local"

__all__ = [
    "BinormalModel",
    "CovProbe",
    "DomainError",
    "MarkerModel",
    "MarkerSample",
    "NumericalError",
    "SampleFormatError",
    "SequentialView",
    "StudyShape",
    "ValidityWindow",
    "__version__",
]
