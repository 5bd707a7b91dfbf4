"""Event-based neural spike detection on delta-modulator PCM event streams."""
from .core import DetectionSet, GroundTruth, Recording
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "DetectionSet", "GroundTruth", "Recording", "__version__"]
