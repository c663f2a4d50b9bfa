"""Exception hierarchy shared across the package."""


class DiamondError(Exception):
    """Base class for all package errors."""


class DimensionError(DiamondError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(DiamondError, ArithmeticError):
    """A NaN or infinite value appeared where finite values are required."""


class ContractError(DiamondError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(DiamondError, ValueError):
    """Invalid or inconsistent model / training / run configuration."""


class VolumeError(DiamondError, ValueError):
    """Base class for DMVOL1 read failures."""


class VolumeFormatError(VolumeError):
    """Bad magic or reserved bytes."""


class VolumeTruncatedError(VolumeError):
    """Payload shorter than the header declares."""


class VolumeDimensionError(VolumeError):
    """Header declares zero, oversized or inconsistent extents."""


class VolumeRangeError(VolumeError):
    """Voxels outside [0, 1] or non-finite."""


class CheckpointError(DiamondError, ValueError):
    """Unreadable checkpoint or one that does not match the requested model."""


class ManifestError(DiamondError, ValueError):
    """Malformed manifest, labels or split file."""
