"""Exception types shared across the harness."""


class NebulaError(Exception):
    """Base class for all harness errors."""


# -- episode / storage --------------------------------------------------------

class InvalidEpisode(NebulaError):
    """Episode failed validation; carries the violation report."""

    def __init__(self, violations):
        self.violations = list(violations)
        codes = ", ".join(v.code for v in self.violations)
        super().__init__(f"invalid episode: {codes}")


class IndexOutOfRange(NebulaError, IndexError):
    pass


class ChecksumMismatch(NebulaError):
    pass


class FormatVersionUnsupported(NebulaError):
    pass


# -- query --------------------------------------------------------------------

class MalformedQuery(NebulaError):
    pass


# -- task generation / evaluation ---------------------------------------------

class UnknownTemplate(NebulaError):
    pass


class SpecMismatch(NebulaError):
    pass


# -- simulation ---------------------------------------------------------------

class DimensionMismatch(NebulaError):
    pass


class UnknownCamera(NebulaError):
    pass


class InvalidEvent(NebulaError):
    pass


# -- metrics ------------------------------------------------------------------

class TooShort(NebulaError):
    pass


class CatalogMismatch(NebulaError):
    pass


class UnknownFormat(NebulaError):
    pass


# -- policy / bridge ----------------------------------------------------------

class ProtocolViolation(NebulaError):
    pass


class EmbodimentMismatch(NebulaError):
    pass


class BridgeTimeout(NebulaError):
    pass


class BridgeDisconnected(NebulaError):
    pass


class MalformedAction(NebulaError):
    pass
