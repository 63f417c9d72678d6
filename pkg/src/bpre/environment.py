"""Finite-support iid random-environment models.

An environment model is a finite mixture over offspring laws. Keeping the
mixture finite makes every expectation over the environment an exact finite
sum, so tilting weights, regime constants and importance-sampling ratios are
exact arithmetic rather than nested estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .offspring import (
    PROB_TOL,
    LinearFractional,
    OffspringLaw,
    geometric_lf,
    lf_from_moments,
    moments,
)


@dataclass(frozen=True)
class EnvironmentModel:
    """Finite mixture of offspring laws; one draw per generation."""

    components: tuple[tuple[OffspringLaw, float], ...]

    def __init__(self, components: Sequence[tuple[OffspringLaw, float]]):
        components = tuple((law, float(w)) for law, w in components)
        if not components:
            raise ValidationError("model needs at least one component", field="components")
        if any(w <= 0.0 for _, w in components):
            raise ValidationError("component weights must be positive", field="components")
        total = math.fsum(w for _, w in components)
        if abs(total - 1.0) > PROB_TOL:
            raise ValidationError(
                f"weights sum to {total!r}, not 1 within {PROB_TOL}", field="components"
            )
        object.__setattr__(
            self, "components", tuple((law, w / total) for law, w in components)
        )

    @property
    def laws(self) -> tuple[OffspringLaw, ...]:
        return tuple(law for law, _ in self.components)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.components])

    @cached_property
    def means(self) -> np.ndarray:
        return np.array([moments(law)[0] for law, _ in self.components])

    @cached_property
    def log_means(self) -> np.ndarray:
        return np.log(self.means)

    @cached_property
    def all_linear_fractional(self) -> bool:
        return all(isinstance(law, LinearFractional) for law, _ in self.components)


@dataclass(frozen=True)
class EnvSequence:
    """An ordered environment realization: one offspring law per generation."""

    laws: tuple[OffspringLaw, ...]

    def __init__(self, laws: Sequence[OffspringLaw]):
        object.__setattr__(self, "laws", tuple(laws))

    def __len__(self) -> int:
        return len(self.laws)

    def __iter__(self):
        return iter(self.laws)

    def __getitem__(self, i):
        return self.laws[i]


def draw_env(
    model: EnvironmentModel, n: int, stream: np.random.Generator
) -> EnvSequence:
    """Draw n iid generations from the component mixture."""
    if n < 0:
        raise ValidationError(f"generation count must be >= 0, got {n}", field="n")
    idx = draw_component_indices(model, n, stream)
    laws = model.laws
    return EnvSequence([laws[i] for i in idx])


def draw_component_indices(
    model: EnvironmentModel, size, stream: np.random.Generator
) -> np.ndarray:
    """Component indices for iid environment draws (shape ``size``)."""
    return stream.choice(len(model.components), size=size, p=model.weights)


def env_expectation(model: EnvironmentModel, g: Callable[[OffspringLaw], float]) -> float:
    """Exact mixture expectation of a functional of the offspring law."""
    return math.fsum(w * g(law) for law, w in model.components)


def tilt(model: EnvironmentModel, theta: float) -> tuple[EnvironmentModel, float]:
    """Exponentially tilt the environment law by the offspring mean.

    Component i's weight becomes w_i * m_i**theta / Z with Z the normalizer,
    which equals the mixture expectation of m**theta. Returns (tilted model, Z).
    """
    if theta < 0.0:
        raise ValidationError(f"tilt exponent must be >= 0, got {theta}", field="theta")
    if theta == 0.0:
        return model, 1.0
    ms = model.means
    if np.any(ms == 0.0):
        raise ValidationError(
            "cannot tilt a model with a zero-mean component", field="theta"
        )
    raw = [w * moments(law)[0] ** theta for law, w in model.components]
    z = math.fsum(raw)
    tilted = EnvironmentModel(
        [(law, r / z) for (law, _), r in zip(model.components, raw)]
    )
    return tilted, z


# --- reference models -------------------------------------------------------
#
# Three pinned mixtures, one per subcritical regime. Components are
# linear-fractional realizations of the target offspring means; where a
# choice with B = 1/2 exists (means <= 2) it is used because the target mean
# is then reproduced exactly in double precision.


def ss_ref(f2_scale: float | None = None) -> EnvironmentModel:
    """Strongly subcritical reference: means {1/2, 1/4}, weights (1/2, 1/2)."""
    return _two_point_lf_model([0.5, 0.25], [0.5, 0.5], f2_scale)


def is_ref(f2_scale: float | None = None) -> EnvironmentModel:
    """Intermediate subcritical reference: means {2, 1/4}, weights (1/5, 4/5).

    The mean of m*log(m) vanishes exactly for this mixture.
    """
    return _two_point_lf_model([2.0, 0.25], [0.2, 0.8], f2_scale)


def ws_ref(f2_scale: float | None = None) -> EnvironmentModel:
    """Weakly subcritical reference: means {e**-2, e}, weights (1/2, 1/2).

    Log means sit on the unit lattice, which the exact random-walk oracle
    relies on.
    """
    means = [math.exp(-2.0), math.e]
    if f2_scale is None:
        laws = [geometric_lf(m) for m in means]
    else:
        laws = [lf_from_moments(m, f2_scale * m * m) for m in means]
    return EnvironmentModel([(laws[0], 0.5), (laws[1], 0.5)])


def _two_point_lf_model(means, weights, f2_scale):
    if f2_scale is None:
        laws = [lf_from_moments(m, 2.0 * m) for m in means]  # B = 1/2 exactly
    else:
        laws = [lf_from_moments(m, f2_scale * m * m) for m in means]
    return EnvironmentModel(list(zip(laws, weights)))


BUILTIN_MODELS: dict[str, Callable[[], EnvironmentModel]] = {
    "ss-ref": ss_ref,
    "is-ref": is_ref,
    "ws-ref": ws_ref,
}


def builtin_model(name: str) -> EnvironmentModel:
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ValidationError(
            f"unknown builtin model {name!r}; available: {sorted(BUILTIN_MODELS)}",
            field="model",
        ) from None
    return factory()
