"""Exception hierarchy. Every error carries a short machine-readable category."""


class SettleSenseError(Exception):
    category = "error"


class DomainError(SettleSenseError, ValueError):
    """Input outside the support of a distribution or transform."""

    category = "domain"


class GeometryError(SettleSenseError, ValueError):
    """Point at or above the tunnel axis, or otherwise invalid geometry."""

    category = "geometry"


class ContractError(SettleSenseError, ValueError):
    """A documented precondition was violated by the caller."""

    category = "contract"


class SubsetSimulationError(SettleSenseError, RuntimeError):
    """Subset simulation hit ``max_levels`` before reaching the failure domain.

    The partial result (levels computed so far) is kept on ``partial``.
    """

    category = "subset_simulation"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoHitsError(SettleSenseError, RuntimeError):
    """Crude Monte Carlo produced zero hits; increase n or use subset simulation."""

    category = "no_hits"


class ConvergenceError(SettleSenseError, RuntimeError):
    """Adaptive loop did not reach its COV target; ``best`` holds the last result."""

    category = "convergence"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InstabilityError(SettleSenseError, RuntimeError):
    category = "instability"


class KrigingError(SettleSenseError, RuntimeError):
    category = "kriging"


class ConfigError(SettleSenseError, ValueError):
    """Scenario file failed validation. ``key`` and ``line`` locate the problem."""

    category = "config"

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
