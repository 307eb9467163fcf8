"""Exception hierarchy shared by all pipeline stages."""


class AgeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(AgeError, ValueError):
    """An argument violates an operation's precondition."""


class ParseError(AgeError, ValueError):
    """A file or stream does not match its declared format."""


class EmptyAffordanceError(AgeError):
    """No affordance cluster survived clustering."""
