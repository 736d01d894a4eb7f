"""Bundled reference models, populations and study files.

The two reference populations share the loading vector (.3, .4, .5, .6, .7)
on one factor with unit variance and unit unique variances. The first has
structured means (zero intercepts, factor mean 10), so its mean vector
(3, 4, 5, 6, 7) is proportional to the loadings; the second reverses the
mean vector to (7, 6, 5, 4, 3), which no factor mean can produce, making
it the canonical misspecified case.

Unique variances are 1.0, not 1 - loading^2: the embedded reference
results (REFERENCE_TABLE in montecarlo) are only reproduced under unit
unique variances, which pins down the generating model. With this choice
the population covariance has diagonal 1 + loading_i^2.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..model_spec import ModelSpec, fix_intercept_variant, one_factor_spec
from ..simulate import PopulationModel, explicit, structured

REFERENCE_LOADINGS = (0.3, 0.4, 0.5, 0.6, 0.7)
MODEL1_FACTOR_MEAN = 10.0
MODEL2_MEANS = (7.0, 6.0, 5.0, 4.0, 3.0)

_FIXTURE_DIR = Path(__file__).parent


def reference_model_spec() -> ModelSpec:
    """One-factor pattern fitted throughout the reference studies.

    Five free loadings, five free unique variances, factor variance fixed
    at 1, intercepts fixed at 0, factor mean free: t = 11, df = 9.
    """
    return one_factor_spec(5)


def anchored_model_spec(anchor: int) -> ModelSpec:
    """Reference pattern re-anchored on one intercept (see fix_intercept_variant)."""
    return fix_intercept_variant(reference_model_spec(), anchor)


def reference_population(key: str) -> PopulationModel:
    lam = np.array(REFERENCE_LOADINGS)[:, None]
    phi = np.array([[1.0]])
    psi2 = np.ones(5)
    if key == "model1":
        return structured(
            lam, phi, psi2, nu=np.zeros(5), theta=np.array([MODEL1_FACTOR_MEAN])
        )
    if key == "model2":
        return explicit(lam, phi, psi2, mean_vector=np.array(MODEL2_MEANS))
    raise KeyError(f"unknown reference population {key!r}")


def bundled_studies() -> tuple:
    """Names of the study files shipped with the package, without extension."""
    return tuple(sorted(path.stem for path in _FIXTURE_DIR.glob("*.json")))


def study_path(name: str) -> Path:
    """Path to a bundled study file; accepts the name with or without .json."""
    if not name.endswith(".json"):
        name = name + ".json"
    path = _FIXTURE_DIR / name
    if not path.exists():
        known = ", ".join(bundled_studies())
        raise FileNotFoundError(f"no bundled study {name!r}; available: {known}")
    return path
