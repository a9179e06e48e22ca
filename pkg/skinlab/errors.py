from __future__ import annotations

from typing import Any


class SkinlabError(Exception):
    code = "skinlab_error"

    def __init__(self, message: str, op: str = "", **extra: Any) -> None:
        super().__init__(message)
        self.message = message
        self.op = op
        self.extra = extra

    def detail(self) -> dict[str, Any]:
        out: dict[str, Any] = {"code": self.code, "message": self.message, "op": self.op}
        out.update(self.extra)
        return out


class ModelError(SkinlabError):
    code = "invalid_model"


class DimensionCapError(SkinlabError):
    code = "dimension_cap"


class IllConditionedError(SkinlabError):
    code = "ill_conditioned"


class AmbiguousGapError(SkinlabError):
    code = "ambiguous_gap"


class SteadyStateError(SkinlabError):
    code = "steady_state"


class FitError(SkinlabError):
    code = "fit_error"


class NotRelaxedError(SkinlabError):
    code = "not_relaxed"


class IntegratorError(SkinlabError):
    code = "integrator_error"


class PerturbationError(SkinlabError):
    code = "perturbation_error"


class ConvergenceError(SkinlabError):
    code = "not_converged"


class BackendUnavailableError(SkinlabError):
    code = "backend_unavailable"
