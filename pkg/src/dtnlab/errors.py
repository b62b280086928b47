"""Exception hierarchy shared by all dtnlab modules."""


class DtnError(Exception):
    """Base class for every error raised by dtnlab."""


# -- wire ---------------------------------------------------------------------

class DecodeError(DtnError, ValueError):
    """Bytes could not be parsed into an SDNV, block or bundle."""


class Truncated(DecodeError):
    pass


class Overflow(DecodeError):
    pass


class NonMinimal(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class TrailingGarbage(DecodeError):
    pass


class MissingPayload(DecodeError):
    pass


class DuplicateSingletonBlock(DecodeError):
    pass


class MalformedBlock(DecodeError):
    """A block or primary field parsed but its contents are not valid."""


# -- model --------------------------------------------------------------------

class InvalidEndpoint(DtnError, ValueError):
    pass


class InvalidLifetime(DtnError, ValueError):
    pass


class NoAgeBlock(DtnError):
    pass


class AlreadyExpired(DtnError):
    pass


# -- integrity ----------------------------------------------------------------

class EmptyCoverage(DtnError, ValueError):
    pass


class KeyRequired(DtnError, ValueError):
    pass


class AlreadyProtected(DtnError):
    pass


# -- agent --------------------------------------------------------------------

class TargetAbsent(DtnError):
    pass


# -- channel ------------------------------------------------------------------

class LinkDown(DtnError, ConnectionError):
    pass


class FrameTooLarge(DtnError, ValueError):
    pass


class BadFrame(DtnError):
    pass


# -- harness ------------------------------------------------------------------

class ParseError(DtnError, ValueError):
    pass


class ValidationError(DtnError, ValueError):
    """Scenario or config failed validation.

    ``problems`` holds ``(field_path, message)`` pairs, one per violation.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.problems))


class UnknownPreset(DtnError, KeyError):
    pass
