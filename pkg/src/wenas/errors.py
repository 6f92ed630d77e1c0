"""Exception types shared across the package.

ConfigError maps to CLI exit code 2, everything else to 1.
"""


class WenasError(Exception):
    pass


class ConfigError(WenasError):
    """Invalid configuration or violated precondition caught before compute."""


class ShapeError(WenasError):
    """Operand shapes incompatible; message names both shapes."""


class GenomeParseError(WenasError):
    """Malformed or invalid genome text; message carries position info."""


class TrainingDiverged(WenasError):
    """Loss became non-finite; message names the offending batch."""


class HiddenStateDiverged(WenasError):
    """Recurrent state blew up (relu/identity chains can amplify)."""
