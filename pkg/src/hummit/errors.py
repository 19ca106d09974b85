"""Exception hierarchy.

Every error raised on bad input derives from :class:`HummitError`; the CLI
maps these to exit code 2 and prints the class name.
"""


class HummitError(Exception):
    """Base class for data errors raised by hummit."""


# corpus
class MalformedContainer(HummitError, ValueError):
    pass


class UnsupportedFormat(HummitError, ValueError):
    pass


class MalformedMidi(HummitError, ValueError):
    pass


class PolyphonyError(HummitError, ValueError):
    pass


class EmptyCorpus(HummitError):
    pass


class AmbiguousMapping(HummitError):
    pass


# pitch
class AudioTooShort(HummitError, ValueError):
    pass


class NonPositiveFrequency(HummitError, ValueError):
    pass


class AllUnvoiced(HummitError, ValueError):
    pass


# tvr / contour
class EmptySignal(HummitError, ValueError):
    pass


class LengthMismatch(HummitError, ValueError):
    pass


class NonFiniteInput(HummitError, ValueError):
    pass


class SignalTooShort(HummitError, ValueError):
    pass


class InvalidTransitionIndex(HummitError, ValueError):
    pass


# dataset
class EmptyContour(HummitError, ValueError):
    pass


class MissingContour(HummitError, LookupError):
    pass


class SingleClassDataset(HummitError, ValueError):
    pass


class CorruptFile(HummitError, ValueError):
    """A dataset cache or checkpoint failed its format checks."""


# network
class ShapeMismatch(HummitError, ValueError):
    pass


class DegenerateBatch(HummitError, ValueError):
    pass


class EmptySplit(HummitError, ValueError):
    pass


class NoFrames(HummitError, ValueError):
    pass
