"""Exception taxonomy shared across the engine.

Every error raised on a data or validation problem derives from
:class:`RscirError` so the CLI can map them to exit code 1; genuine
usage mistakes (bad flags) stay with argparse and exit code 2.
"""


class RscirError(Exception):
    """Base class for all engine errors."""


# --- embedding store / file format ---

class BadMagic(RscirError):
    pass


class HeaderParse(RscirError):
    pass


class DimensionMismatch(RscirError):
    pass


class DuplicateId(RscirError):
    pass


class ZeroNormRow(RscirError):
    pass


class NonFiniteValue(RscirError):
    pass


class NotNormalized(RscirError):
    """Header claims unit rows but a row norm is off by more than 1e-4."""


class UnknownId(RscirError):
    pass


# --- manifests / labels / relevance ---

class ParseError(RscirError):
    pass


class UnknownProtocol(RscirError):
    pass


class MissingField(RscirError):
    pass


class UnresolvedImageId(RscirError):
    pass


class EmptyPositives(RscirError):
    pass


class MixedProtocols(RscirError):
    pass


class MultiplePositives(RscirError):
    pass


class PositiveOutsidePool(RscirError):
    pass


class MissingComposedEntry(RscirError):
    """Composed-text table lacks one or more (modifier, word) keys."""

    def __init__(self, missing_keys):
        self.missing_keys = list(missing_keys)
        preview = ", ".join(self.missing_keys[:5])
        more = "" if len(self.missing_keys) <= 5 else f" (+{len(self.missing_keys) - 5} more)"
        super().__init__(f"composed table is missing {len(self.missing_keys)} keys: {preview}{more}")


# --- numerics ---

class NonFiniteInput(RscirError):
    pass


class TooShort(RscirError):
    pass


class TooFewSamples(RscirError):
    pass


class NotSymmetric(RscirError):
    pass


class NoConvergence(RscirError):
    pass


# --- scoring / ranking ---

class EmptyPool(RscirError):
    pass


class LengthMismatch(RscirError):
    pass


class KTooLarge(RscirError):
    pass


class UnknownMethod(RscirError):
    pass


class UnknownParam(RscirError):
    pass


class BadConfig(RscirError):
    pass
