"""Exception hierarchy shared by all modules."""


class HorizontalDiffusionError(Exception):
    pass


class DomainError(HorizontalDiffusionError, ValueError):
    """A point or step left the chart domain."""


class StepTooLarge(DomainError):
    """Tangent vector exceeds the exponential-map guard."""


class CutLocusError(HorizontalDiffusionError, ValueError):
    """Two points are not joined by a certified unique minimal geodesic."""


class InvalidStart(DomainError):
    pass


class ConfigError(HorizontalDiffusionError, ValueError):
    pass


class SchemaError(ConfigError):
    """Configuration failed validation; ``violations`` lists every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  {path}: {msg}" for path, msg in self.violations)
        super().__init__(f"{len(self.violations)} config violation(s):\n{lines}")


class SizeMismatch(HorizontalDiffusionError, ValueError):
    pass


class MissingGridPoint(HorizontalDiffusionError, KeyError):
    pass
