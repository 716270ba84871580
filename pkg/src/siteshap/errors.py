"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class SiteShapError(Exception):
    """Base class for all errors raised by siteshap."""


class ConfigError(SiteShapError):
    """A run configuration or argument is invalid."""


class DataValidationError(SiteShapError):
    """Input data cannot be turned into a valid scored dataset."""


class UndefinedMetricError(SiteShapError):
    """The metric is undefined on the given records (e.g. a single label class)."""


class InsufficientSupport(SiteShapError):
    """A matching step lacks external rows for a stratum the reference requires.

    ``strata`` holds one dict per offending stratum with the factor, member
    (for group flags), value token, reference proportion and available count.
    """

    def __init__(self, strata: list[dict]):
        self.strata = strata
        parts = [
            f"{s['factor']}{'.' + s['member'] if s.get('member') else ''}={s['value']}"
            f" (available {s['available']}, needed {s['needed']})"
            for s in strata
        ]
        super().__init__("insufficient support for " + ", ".join(parts))


class AttributionInfeasible(SiteShapError):
    """Too many sampled permutations were skipped for lack of support."""

    def __init__(self, message: str, strata: list[dict] | None = None):
        super().__init__(message)
        self.strata = strata or []
