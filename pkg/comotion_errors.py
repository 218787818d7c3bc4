#!/usr/bin/env python3
"""
Error types for the co-motion pipeline.

Every error carries a stable ``error_code`` so command-line callers can report
failures as a single machine-parsable line (``ERROR[E_CODE]: message``).
"""

from typing import Any, Dict


class ComotionError(ValueError):
    """Base class for all pipeline errors."""

    error_code = "E_COMOTION"

    def to_status(self) -> Dict[str, Any]:
        """Status dictionary in the form returned by the command functions."""
        return {
            "status": "error",
            "error_code": self.error_code,
            "error_message": str(self),
        }


class DimensionMismatchError(ComotionError):
    error_code = "E_DIMENSION"


class NonFiniteInputError(ComotionError):
    error_code = "E_NONFINITE"


class FlowFormatError(ComotionError):
    error_code = "E_FLO_FORMAT"


class FrameFormatError(ComotionError):
    error_code = "E_FRAME_FORMAT"


class TrackFormatError(ComotionError):
    error_code = "E_TRACK_FORMAT"


class TrackInconsistentError(ComotionError):
    error_code = "E_TRACK_INCONSISTENT"


class EmptyTrackError(ComotionError):
    error_code = "E_TRACK_EMPTY"


class EigensolverError(ComotionError):
    error_code = "E_EIGEN"


class ClusteringError(ComotionError):
    error_code = "E_CLUSTERING"


class DegenerateMotionError(ComotionError):
    """All motion features are zero; the pair carries no grouping evidence."""

    error_code = "E_DEGENERATE_MOTION"


class EmptyInputError(ComotionError):
    error_code = "E_EMPTY"


class ZeroWeightError(ComotionError):
    error_code = "E_ZERO_WEIGHT"


class NotNormalizedError(ComotionError):
    error_code = "E_NOT_NORMALIZED"


class SingleClassError(ComotionError):
    error_code = "E_SINGLE_CLASS"


class NoSurvivingPairsError(ComotionError):
    error_code = "E_NO_PAIRS"


class ConfigError(ComotionError):
    error_code = "E_CONFIG"


class SchemaError(ComotionError):
    error_code = "E_SCHEMA"


class MissingInputError(ComotionError):
    error_code = "E_INPUT"
