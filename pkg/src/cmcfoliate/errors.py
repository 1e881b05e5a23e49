"""Exception types shared across modules."""


class CMCFoliateError(Exception):
    """Base class; ``module`` and ``operation`` feed the structured CLI error record."""

    module = "cmcfoliate"
    operation = ""

    def __init__(self, message: str, *, module: str | None = None, operation: str | None = None):
        super().__init__(message)
        if module:
            self.module = module
        if operation:
            self.operation = operation

    def record(self) -> dict:
        return {"module": self.module, "operation": self.operation, "message": str(self)}


class DomainError(CMCFoliateError, ValueError):
    module = "ambient"


class SizeMismatchError(CMCFoliateError, ValueError):
    module = "sphere_spectral"


class GeometryError(CMCFoliateError):
    module = "surface_geometry"


class NearCriticalLeafError(CMCFoliateError):
    module = "cmc_solver"
    operation = "solve_cmc"


class NoConvergenceError(CMCFoliateError):
    module = "cmc_solver"
    operation = "solve_cmc"

    def __init__(self, message, *, residual_history=None, **kw):
        super().__init__(message, **kw)
        self.residual_history = list(residual_history or [])


class ContinuationAborted(CMCFoliateError):
    module = "cmc_solver"
    operation = "trace_foliation"

    def __init__(self, message, *, partial=None, **kw):
        super().__init__(message, **kw)
        self.partial = partial


class ConfigError(CMCFoliateError):
    """``kind`` is one of "syntax", "type", "range", "unknown_key", "missing"."""

    module = "cli"
    operation = "config"

    def __init__(self, message, *, kind: str = "syntax", **kw):
        super().__init__(message, **kw)
        self.kind = kind

    def record(self) -> dict:
        return {**super().record(), "kind": self.kind}


class UniformizationError(CMCFoliateError):
    module = "uniformization"
