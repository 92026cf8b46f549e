"""Ready-made Monte Carlo studies (scenario, estimators, truth)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .design import MatchDenominator, ModelSpec
from .errors import InputError
from .gee import EXCHANGEABLE, INDEPENDENCE, GeeSpec
from .montecarlo import EstimatorSpec
from .simulate import APPENDIX_C, DEFAULTS, ENDOGENOUS, SimScenario

# working-model control sets compared in the efficiency study
APPENDIX_C_CONTROLS = {
    "WCLS-1": ["x", "y_lag"],
    "WCLS-2": ["x"],
    "WCLS-3": ["y_lag"],
    "WCLS-4": [],
}


@dataclass(frozen=True)
class Preset:
    scenario: SimScenario
    estimators: list[EstimatorSpec]
    truth: Any


def appendix_c(seed: int = 0, n: int = 37, T: int = 210, params=None) -> Preset:
    """Four WCLS fits differing only in their working-model controls."""
    scenario = SimScenario(APPENDIX_C, n, T, seed, params or {})
    ests = [
        EstimatorSpec(name, ModelSpec(arms=["treatment"], controls=ctrl, moderators=[],
                                      numerator=MatchDenominator()))
        for name, ctrl in APPENDIX_C_CONTROLS.items()
    ]
    return Preset(scenario, ests, {"treatment": scenario.resolved()["effect"]})


def endogeneity(seed: int = 0, n: int = 1000, params=None) -> Preset:
    """WCLS against independence and exchangeable GEE with an endogenous covariate."""
    scenario = SimScenario(ENDOGENOUS, n, 2, seed, params or {})
    prm = scenario.resolved()
    ests = [
        EstimatorSpec("WCLS", ModelSpec(arms=["treatment"], controls=["x"], moderators=["x"],
                                        numerator=MatchDenominator())),
        EstimatorSpec("GEE-indep", GeeSpec(covariates=["x"], interactions=["x"],
                                           working_correlation=INDEPENDENCE)),
        EstimatorSpec("GEE-exch", GeeSpec(covariates=["x"], interactions=["x"],
                                          working_correlation=EXCHANGEABLE)),
    ]
    return Preset(scenario, ests, {"treatment": prm["beta0"], "treatment:x": prm["beta1"]})


PRESETS = {"appendix-c": appendix_c, "endogeneity": endogeneity}


def get_preset(name: str, seed: int = 0, n: int | None = None, T: int | None = None,
               params=None) -> Preset:
    key = name.lower().replace("_", "-")
    if key not in PRESETS:
        raise InputError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    kw = {"seed": seed, "params": params}
    if n is not None:
        kw["n"] = n
    if T is not None:
        if key == "endogeneity" and T != 2:
            raise InputError("the endogeneity preset has T = 2")
        if key == "appendix-c":
            kw["T"] = T
    return PRESETS[key](**kw)


__all__ = ["APPENDIX_C_CONTROLS", "DEFAULTS", "PRESETS", "Preset", "appendix_c", "endogeneity",
           "get_preset"]
