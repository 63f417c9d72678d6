"""The log-mean random walk attached to an environment model.

Each generation contributes a step log m; survival events are controlled by
the walk's running minimum. This module provides exact path statistics
(running minimum, occupation counts above the minimum, the reflected
exponential sum), Monte Carlo and exact tail probabilities for the running
minimum, and conditioned occupation statistics.

Two running-minimum conventions coexist: over steps 1..n, and over 0..n
(which includes S_0 = 0, so it is always <= 0). Both are recorded; the
0..n convention is the default for occupation and reflected statistics.
For tail events {min >= -x} with x >= 0 the two conventions agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import streams
from .environment import EnvSequence, EnvironmentModel
from .errors import NonLatticeError, ValidationError
from .offspring import moments
from .regime import classify
from .simcore import (
    METHOD_ENV_EXACT,
    METHOD_EXACT,
    METHOD_TILTED,
    EstimateWithCI,
    _centered_tilt,
)
from .stats import kish_neff, mean_and_se, ratio_and_se


@dataclass(frozen=True)
class WalkPath:
    """Steps and partial sums, S_0 = 0."""

    steps: tuple[float, ...]

    @classmethod
    def from_env(cls, env: EnvSequence) -> "WalkPath":
        return cls(tuple(math.log(moments(law)[0]) for law in env))

    @property
    def partial_sums(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.steps)])


@dataclass(frozen=True)
class WalkStats:
    n: int
    min_from_1: float  # min over S_1..S_n (0.0 for an empty path)
    min_from_0: float  # min over S_0..S_n, always <= 0
    occupation: dict[int, int]  # level band -> visit count, 0..n convention
    reflected_sum: float  # sum_i exp(min_from_0 - S_i), i = 0..n

    @property
    def total_occupation(self) -> int:
        return sum(self.occupation.values())


def walk_stats(path: WalkPath) -> WalkStats:
    """Exact running minimum, occupation counts, and reflected sum."""
    s = path.partial_sums
    n = len(path.steps)
    min0 = float(s.min())
    min1 = float(s[1:].min()) if n >= 1 else 0.0
    bands = np.floor(s - min0).astype(int)
    occupation: dict[int, int] = {}
    for b in bands:
        occupation[int(b)] = occupation.get(int(b), 0) + 1
    reflected = math.fsum(math.exp(min0 - si) for si in s)
    return WalkStats(
        n=n,
        min_from_1=min1,
        min_from_0=min0,
        occupation=occupation,
        reflected_sum=reflected,
    )


# --- Monte Carlo tail of the running minimum ---------------------------------


def _draw_walk_chunks(
    model: EnvironmentModel,
    n: int,
    reps: int,
    seed: int,
    purpose: str,
    tilted: bool,
    chunk_size: int = streams.DEFAULT_CHUNK,
):
    """Per-replicate (running minimum, S_n, weight, paths) arrays."""
    if tilted:
        alpha, gamma = _centered_tilt(model)
        from .environment import tilt as tilt_model

        draw_weights = tilt_model(model, alpha)[0].weights
    else:
        draw_weights = model.weights
    log_m = model.log_means

    def chunk(rng, count, start):
        idx = rng.choice(len(model.components), size=(count, n), p=np.asarray(draw_weights))
        steps = log_m[idx]
        paths = np.zeros((count, n + 1))
        if n > 0:
            np.cumsum(steps, axis=1, out=paths[:, 1:])
        mins = paths.min(axis=1)
        s_n = paths[:, -1]
        if tilted:
            w = np.exp(n * math.log(gamma) - alpha * s_n)
        else:
            w = np.ones(count)
        return mins, s_n, w, paths

    return streams.run_chunks(chunk, reps, seed, purpose, chunk_size)


def ln_tail(
    model: EnvironmentModel,
    n: int,
    x: float,
    reps: int,
    method: str = METHOD_ENV_EXACT,
    seed: int = 0,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> EstimateWithCI:
    """P(running minimum of the log-mean walk >= -x) by Monte Carlo.

    The tilted estimator draws the walk under the centered tilt and carries
    the weight rate**n * exp(-alpha * S_n); it is unbiased for the base
    probability.
    """
    if x < 0:
        raise ValidationError(f"x must be >= 0, got {x}", field="x")
    if method not in (METHOD_ENV_EXACT, METHOD_TILTED, "direct"):
        raise ValidationError(f"unknown method {method!r}", field="method")
    tilted = method == METHOD_TILTED
    mins, _s_n, w, _paths = _draw_walk_chunks(
        model, n, reps, seed, f"lntail-n{n}", tilted, chunk_size
    )
    vals = w * (mins >= -x)
    value, se = mean_and_se(vals)
    return EstimateWithCI(
        value,
        se,
        reps,
        METHOD_TILTED if tilted else METHOD_ENV_EXACT,
        streams.seed_provenance(seed, f"lntail-n{n}", chunk_size),
    )


# --- exact lattice oracle -----------------------------------------------------

MAX_DP_HORIZON = 64
LATTICE_TOL = 1e-9


def _lattice_spacing(model: EnvironmentModel) -> float:
    """Common lattice spacing of the nonzero log means, or raise."""
    values = [v for v in model.log_means if abs(v) > LATTICE_TOL]
    if not values:
        return 0.0  # all steps are zero
    g = abs(values[0])
    for v in values[1:]:
        a, b = g, abs(v)
        while b > LATTICE_TOL:
            a, b = b, a % b
        g = a
    # a genuine desk-scale lattice has small integer step multipliers; an
    # absurdly fine spacing means the steps are incommensurable
    max_units = 10**4
    if g <= LATTICE_TOL or max(abs(v) for v in values) / g > max_units:
        raise NonLatticeError(
            "log offspring means do not share a lattice: "
            + ", ".join(f"{v:.12g}" for v in model.log_means)
        )
    for law, v in zip(model.laws, model.log_means):
        if abs(v - round(v / g) * g) > LATTICE_TOL:
            raise NonLatticeError(
                f"component with mean {moments(law)[0]:.12g} is off the lattice "
                f"(log mean {v:.12g}, spacing {g:.12g})"
            )
    return g


def ln_tail_exact(model: EnvironmentModel, n: int, x: float) -> float:
    """Exact P(running minimum >= -x) by dynamic programming on the lattice.

    Requires every log mean on a common lattice and x a lattice point.
    The walk is absorbed as soon as it steps below -x.
    """
    if x < 0:
        raise ValidationError(f"x must be >= 0, got {x}", field="x")
    if n > MAX_DP_HORIZON:
        raise ValidationError(
            f"exact oracle capped at horizon {MAX_DP_HORIZON}, got {n}", field="n"
        )
    spacing = _lattice_spacing(model)
    if spacing == 0.0:
        return 1.0  # zero-drift degenerate walk never goes below 0
    x_units_f = x / spacing
    x_units = round(x_units_f)
    if abs(x_units_f - x_units) > 1e-6:
        raise ValidationError(
            f"x = {x} is not on the lattice with spacing {spacing:.12g}", field="x"
        )
    step_units = [int(round(v / spacing)) for v in model.log_means]
    weights = [w for _, w in model.components]
    floor_units = -x_units
    dist: dict[int, float] = {0: 1.0}
    for _ in range(n):
        acc: dict[int, list[float]] = {}
        for s, mass in dist.items():
            for du, w in zip(step_units, weights):
                s2 = s + du
                if s2 >= floor_units:
                    acc.setdefault(s2, []).append(mass * w)
        dist = {s: math.fsum(parts) for s, parts in acc.items()}
    return math.fsum(dist.values())


# --- conditioned occupation statistics ----------------------------------------


def occupation_tail(
    model: EnvironmentModel,
    n: int,
    k: int,
    l: int,
    x: float,
    reps: int,
    seed: int = 0,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> EstimateWithCI:
    """P(occupation of band k above the minimum >= l | minimum >= -x).

    Both numerator and denominator are tilted-importance-sampled from the
    same draws, so the conditional is a common-random-number ratio.
    Replicates escalate when the conditioning event carries too little
    effective mass, same policy as the survival-conditioned estimators.
    """
    if l < 0:
        raise ValidationError(f"l must be >= 0, got {l}", field="l")
    from .errors import ConditioningStarvationError
    from .simcore import ESCALATION_CAP, HARD_MIN_EFFECTIVE_EVENTS, MIN_EFFECTIVE_EVENTS

    all_cond: list[np.ndarray] = []
    all_occ: list[np.ndarray] = []
    total = 0
    target = reps
    round_seed = seed
    while True:
        mins, _s_n, w, paths = _draw_walk_chunks(
            model, n, target - total, round_seed, f"occ-n{n}", tilted=True,
            chunk_size=chunk_size,
        )
        bands = np.floor(paths - paths.min(axis=1, keepdims=True))
        all_cond.append(w * (mins >= -x))
        all_occ.append((bands == k).sum(axis=1))
        total = target
        cond = np.concatenate(all_cond)
        eff = kish_neff(cond)
        if eff >= MIN_EFFECTIVE_EVENTS or total >= reps * ESCALATION_CAP:
            break
        target = min(total * 2, reps * ESCALATION_CAP)
        round_seed += 1
    if eff < HARD_MIN_EFFECTIVE_EVENTS:
        raise ConditioningStarvationError(eff, HARD_MIN_EFFECTIVE_EVENTS)
    occ = np.concatenate(all_occ)
    num = cond * (occ >= l)
    value, se = ratio_and_se(num, cond)
    return EstimateWithCI(
        value, se, total, METHOD_TILTED, streams.seed_provenance(seed, f"occ-n{n}", chunk_size)
    )


@dataclass(frozen=True)
class ReflectedSumReport:
    """Smallest threshold on the grid keeping the reflected sum small with
    conditional probability at least 1/4 across the whole (n, x) grid."""

    beta_hat: float | None
    grid: tuple[float, ...]
    curve: dict[tuple[int, float, float], tuple[float, float]]  # (n, x, beta) -> (est, SE)
    passed: bool


def reflected_sum_check(
    model: EnvironmentModel,
    n_values: tuple[int, ...] = (5, 10, 15, 20),
    x_values: tuple[float, ...] = (0.0, 1.0, 2.0),
    reps: int = 20000,
    seed: int = 0,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> ReflectedSumReport:
    """Search the geometric grid for a uniform reflected-sum bound.

    Requires a weakly subcritical model with minimizing exponent below 1/2.
    The reflected sum sum_i exp(min - S_i) is at most n+1 termwise, so the
    search cannot run off the grid at desk horizons; a missing threshold is
    reported as a failure rather than raised.
    """
    report = classify(model)
    if report.regime != "WS" or report.alpha >= 0.5:
        raise ValidationError(
            f"requires a weakly subcritical model with exponent < 1/2 "
            f"(regime {report.regime}, exponent {report.alpha:.4g})",
            field="model",
        )
    grid = tuple(float(2**j) for j in range(0, 17))
    curve: dict[tuple[int, float, float], tuple[float, float]] = {}
    for n in n_values:
        mins, _s_n, w, paths = _draw_walk_chunks(
            model, n, reps, seed, f"reflected-n{n}", tilted=True, chunk_size=chunk_size
        )
        reflected = np.exp(paths.min(axis=1, keepdims=True) - paths).sum(axis=1)
        for x in x_values:
            cond = w * (mins >= -x)
            for beta in grid:
                num = cond * (reflected <= beta)
                curve[(n, float(x), beta)] = ratio_and_se(num, cond)
    beta_hat = None
    for beta in grid:
        if all(
            curve[(n, float(x), beta)][0] >= 0.25 for n in n_values for x in x_values
        ):
            beta_hat = beta
            break
    return ReflectedSumReport(
        beta_hat=beta_hat, grid=grid, curve=curve, passed=beta_hat is not None
    )


# --- path-wise link between walk and quenched survival -------------------------


def survival_floor_constant(model: EnvironmentModel) -> float:
    """1 / (1 + max over components of f''(1)/f'(1)).

    For all-linear-fractional sequences the quenched survival is at least
    (C/2) * exp(min) / reflected_sum with this C, path by path.
    """
    ratios = []
    for law, _ in model.components:
        m, f2 = moments(law)
        if m <= 0:
            raise ValidationError("requires positive offspring means", field="model")
        ratios.append(f2 / m)
    return 1.0 / (1.0 + max(ratios))


def reversed_walk(env: EnvSequence) -> WalkPath:
    """Walk of the reversed sequence: step i is the log mean of law n-1-i."""
    return WalkPath(tuple(math.log(moments(law)[0]) for law in reversed(tuple(env))))


def survival_lower_bound(env: EnvSequence, floor_constant: float) -> float:
    """(C/2) * exp(S'_n - max S'_j) / sum_i exp(S'_i - max S'_j), reversed walk.

    Algebraically equal to (C/2) * exp(min) / reflected_sum of the forward
    walk; computed from the reversed partial sums.
    """
    s = reversed_walk(env).partial_sums
    m = float(s.max())
    return 0.5 * floor_constant * math.exp(s[-1] - m) / float(np.exp(s - m).sum())
