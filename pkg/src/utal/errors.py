"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage/config errors exit 1,
verification failures exit 2, runtime numeric failures exit 3.
"""


class UtalError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(UtalError):
    """Invalid configuration, file format, or incompatible inputs."""


class VerificationError(UtalError):
    """An oracle/verification suite found a deviation beyond tolerance."""


class NumericError(UtalError):
    """A non-finite value appeared where the pipeline requires finiteness."""
