"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes: validation problems (bad
inputs, broken invariants) exit with 2, domain runtime failures with 3
and I/O errors (plain ``OSError``) with 4.
"""


class ToolkitError(Exception):
    """Base class for all toolkit-specific runtime errors."""


class ValidationError(ToolkitError):
    """Invalid parameters, malformed inputs or violated data invariants."""


class ManifestError(ValidationError):
    """Dataset manifest missing, malformed or internally inconsistent.

    ``field`` carries the JSON path of the offending entry when known,
    e.g. ``frames[3].bbox``.
    """

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class GeometryError(ToolkitError):
    """Degenerate geometric operation (non-positive depth, point at infinity)."""


class DecodeError(ToolkitError):
    """Heatmap decoding produced an invalid pose."""


class OutOfVolumeError(ToolkitError):
    """A joint falls outside the encodable heatmap volume."""

    def __init__(self, message, joint_index=None):
        super().__init__(message)
        self.joint_index = joint_index


class CalibrationError(ToolkitError):
    """Occluder generation could not reach the requested degree of occlusion."""


class HeatmapFormatError(ValidationError):
    """Malformed volumetric-heatmap file."""
