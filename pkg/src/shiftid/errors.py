"""Exception and warning types shared across the package."""


class ShiftIdError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ShiftIdError):
    """A data file could not be parsed (bad header, bad magic, truncated payload)."""


class DimensionMismatch(ShiftIdError):
    """Row or column counts of two related tables disagree."""


class ValidationError(ShiftIdError):
    """A table violates a structural invariant (NaN entries, row sums, label range)."""


class EmptyInput(ShiftIdError):
    """An operation received an empty vector where at least one element is required."""


class InvalidAlpha(ShiftIdError):
    """Significance level outside (0, 1)."""


class DegenerateSample(ShiftIdError):
    """All pairwise distances are zero; no bandwidth can be formed."""


class GroupSizeMismatch(ShiftIdError):
    """Grouped permutation cannot produce two usable sides."""


class MissingLabels(ShiftIdError):
    """A reference-set operation requires labels the bundle does not carry."""


class EmptyClassNeeded(ShiftIdError):
    """Resampling target puts mass on a class absent from the reference set."""


class ZeroReferencePrior(ShiftIdError):
    """A class is absent from the reference prior; density ratios cannot be formed."""


class DegenerateLabels(ShiftIdError):
    """Only one class is present where at least two are required."""


class InvalidSpec(ShiftIdError):
    """A simulation spec is structurally invalid."""


class RankDeficientWarning(UserWarning):
    """Fewer nonzero singular values than requested components; k was reduced."""
