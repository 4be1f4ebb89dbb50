"""Exception hierarchy.

The CLI maps :class:`InputError` subclasses to exit code 2 and
:class:`NumericalError` subclasses to exit code 3.
"""


class GtfError(Exception):
    pass


class InputError(GtfError):
    """Bad configuration, missing file or malformed input data."""


class NumericalError(GtfError):
    """Geometry or numerics make the requested quantity undefined."""


class ConfigError(InputError):
    pass


class CorrespondenceError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class OrderingError(InputError):
    pass


class AlignmentError(InputError):
    """Signals that should be sample-aligned have different lengths."""


class RejectedMeasurementError(InputError):
    pass


class WireFormatError(InputError):
    pass


class DegenerateGeometryError(NumericalError):
    pass


class InsufficientPointsError(NumericalError):
    pass


class UninitializedError(GtfError):
    pass


class SyncTimeoutError(GtfError):
    pass


class ChannelBusyError(GtfError):
    pass


class TrajectoryRangeError(InputError):
    pass
