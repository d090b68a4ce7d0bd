"""Exception hierarchy shared by every subpackage."""


class SSMTError(Exception):
    """Base class for all errors raised by ssmtnet."""


class DimensionError(SSMTError, ValueError):
    """Tensor or image shapes do not satisfy an operation's contract."""


class ContractError(SSMTError, ValueError):
    """A precondition on values (not shapes) was violated."""


class DegenerateRowError(SSMTError, ValueError):
    """Softmax was asked to normalize a row whose entries are all -inf."""


class NumericalFault(SSMTError, FloatingPointError):
    """NaN or Inf appeared where finite values are required."""


class FormatError(SSMTError, ValueError):
    """A file does not follow the expected binary layout."""


class ManifestError(SSMTError):
    """Dataset directory is inconsistent (e.g. a mask without an image)."""


class DatasetError(SSMTError):
    """Samples are unsuitable for the requested training phase."""


class GenerationError(SSMTError):
    """Synthetic phantom geometry could not be satisfied."""


class ConfigError(SSMTError, ValueError):
    """Run configuration failed validation."""


class CorruptCheckpointError(SSMTError):
    """Checkpoint checksum or structure is invalid."""
