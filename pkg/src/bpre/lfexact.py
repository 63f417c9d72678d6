"""Exact quenched computations for a fixed environment sequence.

Survival after n generations is 1 - F_n(0) with F_n the composition of the
per-generation pgfs. The composition is iterated in survival coordinates
(and in log space), which keeps full relative precision for horizons far
beyond the point where 1 - F_n(0) underflows intermediate float math. For
all-linear-fractional sequences the same probability also has a closed form
driven by the partial products of the offspring means; both are computed and
cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import EnvSequence, EnvironmentModel
from .errors import CrossCheckError, ValidationError
from .offspring import (
    LinearFractional,
    OffspringLaw,
    lf_from_moments,
    log_survival_step,
    moments,
    pgf,
)

LOG_AGREE_TOL = 1e-8
P_AGREE_TOL = 1e-10


def iterate_F(env: EnvSequence, s: float) -> float:
    """Evaluate the n-fold pgf composition at s (first law outermost)."""
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"argument must lie in [0, 1], got {s}", field="s")
    x = s
    for law in reversed(tuple(env)):
        x = pgf(law, x)
    return x


def log_survival_env(env: EnvSequence) -> float:
    """log(1 - F_n(0)), iterated stably in survival coordinates."""
    lu = 0.0
    for law in reversed(tuple(env)):
        lu = log_survival_step(law, lu)
    return lu


def closed_form_log_survival(env: EnvSequence) -> float:
    """log(1 - F_n(0)) for an all-linear-fractional sequence.

    Uses the closed form 1 - F_n(0) = P_n / (1 + sum_j c_j * Q_j) with
    P_n the product of all means, c_j = f_j''(1) / (2 f_j'(1)) and Q_j the
    product of the means after generation j. Everything is kept in log
    space; the denominator goes through log-sum-exp.
    """
    laws = tuple(env)
    if not all(isinstance(law, LinearFractional) for law in laws):
        raise ValidationError("closed form requires all-linear-fractional laws")
    n = len(laws)
    if n == 0:
        return 0.0
    log_m = np.empty(n)
    log_c = np.empty(n)
    for j, law in enumerate(laws):
        m, f2 = moments(law)
        log_m[j] = math.log(m) if m > 0 else -math.inf
        ratio = f2 / (2.0 * m) if m > 0 else 0.0  # = B/(1-B)
        log_c[j] = math.log(ratio) if ratio > 0 else -math.inf
    # suffix[j] = sum of log means strictly after generation j
    suffix = np.concatenate([np.cumsum(log_m[::-1])[::-1][1:], [0.0]])
    terms = np.concatenate([[0.0], log_c + suffix])
    terms = terms[terms > -math.inf]
    log_den = terms.max() + math.log(np.exp(terms - terms.max()).sum())
    total = float(np.sum(log_m))
    return total - float(log_den)


@dataclass(frozen=True)
class QuenchedSurvival:
    """Survival probabilities for a fixed environment sequence."""

    n: int
    k: int
    p: float  # single-lineage survival 1 - F_n(0)
    log_p: float
    log_p_closed_form: float | None
    p_all_survive: float  # all k lineages alive: p**k
    p_any_survive: float  # at least one alive: 1 - (1-p)**k


def quenched_survival(env: EnvSequence, k: int = 1) -> QuenchedSurvival:
    """Exact survival record; cross-checks the closed form when it applies."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}", field="k")
    laws = tuple(env)
    log_p = log_survival_env(env)
    p = math.exp(log_p)
    log_cf: float | None = None
    if laws and all(isinstance(law, LinearFractional) for law in laws):
        log_cf = closed_form_log_survival(env)
        _check_agreement(log_p, log_cf)
    p_any = -math.expm1(k * math.log1p(-p)) if p < 1.0 else 1.0
    return QuenchedSurvival(
        n=len(laws),
        k=k,
        p=p,
        log_p=log_p,
        log_p_closed_form=log_cf,
        p_all_survive=math.exp(k * log_p),
        p_any_survive=p_any,
    )


def _check_agreement(log_p: float, log_cf: float) -> None:
    if log_p == -math.inf and log_cf == -math.inf:
        return
    dp = abs(math.exp(log_p) - math.exp(log_cf))
    dlog = abs(log_p - log_cf)
    if dp > P_AGREE_TOL or dlog > LOG_AGREE_TOL * max(1.0, abs(log_p)):
        raise CrossCheckError(
            f"survival iteration and closed form disagree: "
            f"log {log_p} vs {log_cf} (|dp| = {dp:.3g})"
        )


DOMINANCE_GRID = np.linspace(0.0, 1.0, 101)


def lf_minorant(law: OffspringLaw) -> LinearFractional:
    """Linear-fractional law that dominates the given pgf pointwise.

    The returned law matches f'(1) and has doubled f''(1); its pgf sits above
    the original on [0, 1], so substituting it can only lower survival.
    Dominance is re-verified on a grid as a post-check.
    """
    m, f2 = moments(law)
    if m <= 0.0:
        raise ValidationError(f"law must have positive mean, got {m}", field="law")
    try:
        tilde = lf_from_moments(m, 2.0 * f2)
    except ValidationError:
        raise ValidationError(
            f"no dominating linear-fractional law for mean {m}, f''(1) = {f2}: "
            f"needs f''(1) >= m*(m-1) = {m * (m - 1):.6g}"
        ) from None
    for s in DOMINANCE_GRID:
        if pgf(tilde, float(s)) < pgf(law, float(s)) - 1e-12:
            raise CrossCheckError(
                f"dominance violated at s = {s}: {pgf(tilde, float(s))} < {pgf(law, float(s))}"
            )
    return tilde


def minorant_env(env: EnvSequence) -> EnvSequence:
    """Replace every law in the sequence by its dominating linear-fractional law."""
    return EnvSequence([lf_minorant(law) for law in env])


# --- vectorized kernels -----------------------------------------------------
#
# Monte Carlo over environments only needs, per replicate, the log survival
# probability and the log-mean walk. For all-linear-fractional models both
# are computed for a whole chunk of replicates at once.


@dataclass(frozen=True)
class SurvivalChunk:
    log_q: np.ndarray  # (reps,) log single-lineage survival
    s_n: np.ndarray  # (reps,) terminal log-mean walk value
    paths: np.ndarray | None  # (reps, n+1) walk including S_0 = 0, if requested
    idx: np.ndarray | None  # (reps, n) component indices, if requested


def log_survival_for_indices(model: EnvironmentModel, idx: np.ndarray) -> np.ndarray:
    """Vectorized log survival for environments given as component indices.

    ``idx`` has shape (replicates, generations); generation order is left to
    right (first law outermost in the composition).
    """
    if model.all_linear_fractional:
        return _lf_chunk(model, idx)[0]
    return _generic_chunk(model, idx)[0]


def draw_survival_chunk(
    model: EnvironmentModel,
    draw_weights: np.ndarray,
    n: int,
    rng: np.random.Generator,
    count: int,
    want_paths: bool = False,
    want_idx: bool = False,
) -> SurvivalChunk:
    """Draw ``count`` environments of length n and compute survival + walk.

    ``draw_weights`` selects components (tilted or not); survival and the
    walk always use the base model's laws, so importance weights can be
    formed from ``s_n`` afterwards.
    """
    ncomp = len(model.components)
    idx = rng.choice(ncomp, size=(count, n), p=np.asarray(draw_weights))
    if model.all_linear_fractional:
        log_q, steps = _lf_chunk(model, idx)
    else:
        log_q, steps = _generic_chunk(model, idx)
    s_n = steps.sum(axis=1) if n > 0 else np.zeros(count)
    paths = None
    if want_paths:
        paths = np.zeros((count, n + 1))
        if n > 0:
            np.cumsum(steps, axis=1, out=paths[:, 1:])
    return SurvivalChunk(
        log_q=log_q, s_n=s_n, paths=paths, idx=idx if want_idx else None
    )


def _lf_params(model: EnvironmentModel) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([law.A for law in model.laws])
    b = np.array([law.B for law in model.laws])
    with np.errstate(divide="ignore"):
        log_m = np.log(a) - 2.0 * np.log1p(-b)
    return log_m, b / (1.0 - b)


def _lf_chunk(model: EnvironmentModel, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    log_m, c = _lf_params(model)
    count, n = idx.shape
    lu = np.zeros(count)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n - 1, -1, -1):
            col = idx[:, i]
            lu = lu + log_m[col] - np.log1p(c[col] * np.exp(lu))
    steps = log_m[idx]
    return lu, steps


def _generic_chunk(model: EnvironmentModel, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    laws = model.laws
    with np.errstate(divide="ignore"):
        log_means = np.where(model.means > 0.0, np.log(np.maximum(model.means, 1e-300)), -np.inf)
    count, n = idx.shape
    log_q = np.empty(count)
    for r in range(count):
        lu = 0.0
        for i in range(n - 1, -1, -1):
            lu = log_survival_step(laws[idx[r, i]], lu)
        log_q[r] = lu
    return log_q, log_means[idx]
