"""Exception types shared across the toolkit.

Exit-code mapping used by the CLI lives in ``air.cli``; library code raises
these and never calls ``sys.exit`` itself.
"""


class AirError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(AirError):
    """An input file does not match its documented schema."""


class CrossRefError(AirError):
    """Corpus ids do not cross-reference (question without scene, ...)."""


class UnknownOperation(AirError):
    """Program text matches no lowering rule and no alias."""

    def __init__(self, text: str, line: int | None = None):
        self.text = text
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"no lowering rule for {text!r}{where}")


class MalformedDeps(AirError):
    """Dependency list has a cycle, forward reference, or wrong arity."""


class EmptyCorpus(AirError):
    """An operation requiring at least one scene/record got none."""


class NoFixations(AirError):
    """Fixation-consuming operation called with an empty fixation list."""


class BadEdges(AirError):
    """Temporal bin edges are not strictly increasing."""


class LengthMismatch(AirError):
    """Paired inputs differ in length."""


class ShapeMismatch(AirError):
    """Paired arrays differ in shape."""


class ZeroAreaBox(AirError):
    """Box clipped to the map frame covers no pixels."""


class ConstantInput(AirError):
    """Correlation requested on a constant input."""


class NoProposals(AirError):
    """Target construction requires at least one region proposal."""


class NotADistribution(AirError):
    """Vector expected to sum to 1 does not."""


class TooFewSubjects(AirError):
    """Split-half consistency needs at least two subjects."""


class MaxStepsExceeded(AirError):
    """Reasoning stepped past the configured maximum."""


class NoSteps(AirError):
    """Aggregation requested before any reasoning step ran."""


class Divergence(AirError):
    """Training loss became non-finite."""


class InsufficientData(AirError):
    """Not enough samples to compute the requested statistic."""
