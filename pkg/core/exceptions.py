"""
Exception hierarchy shared by every app of the toolkit.

Modelled on DRF's `APIException`: each subclass declares a `default_detail`
message and a `default_code`, and instead of an HTTP status it carries the
process `exit_code` the `cdf` management command exits with.

Exit codes:
    0 success
    1 usage / configuration
    2 dependency / cascade order
    3 runtime (numeric, format, shape) failure
"""

EXIT_USAGE = 1
EXIT_DEPENDENCY = 2
EXIT_RUNTIME = 3


class CdfError(Exception):
    """
    Base class for toolkit errors.

    Attributes:
        exit_code (int): Process exit code used by the command line.
        default_detail (str): Message used when no detail is given.
        default_code (str): Short machine-readable error code.
    """

    exit_code = EXIT_RUNTIME
    default_detail = "toolkit error"
    default_code = "error"

    def __init__(self, detail=None, code=None):
        if detail is None:
            detail = self.default_detail
        if code is None:
            code = self.default_code
        self.detail = detail
        self.code = code
        super().__init__(detail)

    def __str__(self):
        return str(self.detail)


class ConfigError(CdfError, ValueError):
    exit_code = EXIT_USAGE
    default_detail = "config error"
    default_code = "config_error"


class ConfigMismatchError(CdfError, ValueError):
    default_detail = "config mismatch"
    default_code = "config_mismatch"


class SignalTooShortError(CdfError, ValueError):
    default_detail = "signal too short"
    default_code = "signal_too_short"


class FilterbankDegenerateError(CdfError, ValueError):
    default_detail = "filterbank degenerate"
    default_code = "filterbank_degenerate"


class ZeroVectorError(CdfError, ValueError):
    default_detail = "cannot normalize zero vector"
    default_code = "zero_vector"


class IterationError(CdfError, ValueError):
    default_detail = "at least one iteration required"
    default_code = "iterations"


class DimensionError(CdfError, ValueError):
    default_detail = "dimension error"
    default_code = "dimension_error"


class LabelError(CdfError, ValueError):
    default_detail = "label error"
    default_code = "label_error"


class ModelKindError(CdfError, ValueError):
    default_detail = "model kind error"
    default_code = "model_kind_error"


class GeometryError(CdfError, ValueError):
    default_detail = "geometry error"
    default_code = "geometry_error"


class UtteranceTooShortError(CdfError, ValueError):
    default_detail = "utterance too short"
    default_code = "utterance_too_short"


class NoFramesError(CdfError, ValueError):
    default_detail = "no frames"
    default_code = "no_frames"


class AlignmentError(CdfError, ValueError):
    default_detail = "alignment error"
    default_code = "alignment_error"


class NoDataError(CdfError, ValueError):
    default_detail = "no data"
    default_code = "no_data"


class ProtocolInfeasibleError(CdfError, ValueError):
    default_detail = "protocol infeasible"
    default_code = "protocol_infeasible"


class ProtocolError(CdfError, ValueError):
    default_detail = "protocol error"
    default_code = "protocol_error"


class CascadeMismatchError(CdfError, ValueError):
    default_detail = "cascade mismatch"
    default_code = "cascade_mismatch"


class AudioFormatError(CdfError, ValueError):
    default_detail = "unsupported audio format"
    default_code = "audio_format"


class ArchiveFormatError(CdfError, ValueError):
    default_detail = "malformed archive"
    default_code = "archive_format"


class CheckpointFormatError(ArchiveFormatError):
    default_detail = "malformed checkpoint"
    default_code = "checkpoint_format"


class NumericError(CdfError, ArithmeticError):
    default_detail = "non-finite value encountered"
    default_code = "numeric_error"


class WriteError(CdfError, OSError):
    default_detail = "write error"
    default_code = "write_error"


class CascadeOrderError(CdfError):
    """
    Raised when a stage is requested before the stages it conditions on.
    """

    exit_code = EXIT_DEPENDENCY
    default_detail = "cascade order violation"
    default_code = "cascade_order"
