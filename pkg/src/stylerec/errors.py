"""Exception hierarchy shared by all stylerec modules.

The CLI maps these onto process exit codes: input problems exit 1,
configuration/contract problems exit 2, numeric failures exit 3.
"""


class StyleRecError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StyleRecError):
    """Operands have incompatible dimensions."""


class MaskError(StyleRecError):
    """A softmax/attention slice has no valid (unmasked) entry."""


class NumericError(StyleRecError):
    """Non-finite values, zero-norm vectors, or diverging training."""


class ContractError(StyleRecError):
    """An API precondition was violated (e.g. non-scalar loss)."""


class InputError(StyleRecError):
    """User-supplied data is malformed (bad session lines, bad ids)."""


class ConfigError(StyleRecError):
    """A configuration value is out of its legal range."""


class FormatError(StyleRecError):
    """A binary file is corrupt or has the wrong magic/version."""
