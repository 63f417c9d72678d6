"""Quasistationary limits: conditioned populations, size-biased kernels,
environment posteriors.

Sampling Z_n given survival is done exactly, per environment, through the
prolific-skeleton decomposition: an individual is prolific when it has a
descendant alive at the horizon, every ancestor of a survivor is prolific,
and given the environment the prolific individuals form a branching process
whose offspring law has an explicit form (closed form for linear-fractional
components, finite enumeration otherwise). This replaces accept/reject on
the survival event, whose acceptance probability decays geometrically in
the horizon. A literal rejection sampler is kept for validation at short
horizons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import streams
from .environment import EnvSequence, EnvironmentModel, draw_env
from .errors import (
    ConditioningStarvationError,
    ValidationError,
)
from .offspring import FiniteSupport, LinearFractional, pgf, survival_step
from .regime import classify
from .simcore import (
    METHOD_ENV_EXACT,
    METHOD_EXACT,
    METHOD_TILTED,
    ESCALATION_CAP,
    HARD_MIN_EFFECTIVE_EVENTS,
    MIN_EFFECTIVE_EVENTS,
    _any_survive,
    evolve_lineages,
)
from .stats import (
    kish_neff,
    ratio_and_se,
    weighted_median,
    weighted_pmf,
)

DEFAULT_STATE_CAP = 2**14
DEFAULT_S_GRID = tuple(np.linspace(0.0, 1.0, 21))


def survival_profile(env: EnvSequence) -> np.ndarray:
    """u[i] = P(one individual at generation i has a descendant at the horizon).

    Backward recursion in survival coordinates; u[n] = 1.
    """
    laws = tuple(env)
    n = len(laws)
    u = np.ones(n + 1)
    for i in range(n - 1, -1, -1):
        u[i] = survival_step(laws[i], u[i + 1])
    return u


# --- conditioned offspring laws ----------------------------------------------
#
# For a prolific parent at generation i (child survival probability
# u = u[i+1], extinction x = 1 - u):
#   * prolific children count: P(j) = ((1-B)/D) * (B*u/D)**(j-1), j >= 1,
#     with D = 1 - B*x -- a shifted geometric (linear-fractional case);
#   * doomed children given j prolific: NegativeBinomial(j+1, 1 - B*x).
# For a doomed parent: no offspring with probability (1 - A/(1-B))/x_parent,
# otherwise 1 + Geometric(1 - B*x).


def _skeleton_pmf(law, u_next: float) -> np.ndarray:
    """Exact pmf of the prolific-children count for a finite-support law."""
    x = 1.0 - u_next
    probs = np.asarray(law.probs)
    kmax = len(probs) - 1
    pmf = np.zeros(kmax + 1)
    for c, pc in enumerate(probs):
        for j in range(1, c + 1):
            pmf[j] += pc * math.comb(c, j) * u_next**j * x ** (c - j)
    total = pmf.sum()
    if total <= 0.0:
        raise ValidationError("law cannot produce a prolific child", field="law")
    return pmf / total


def _sample_skeleton_children(law, u_next: float, size: int, rng) -> np.ndarray:
    if isinstance(law, LinearFractional):
        d = 1.0 - law.B * (1.0 - u_next)
        return rng.geometric((1.0 - law.B) / d, size=size)
    pmf = _skeleton_pmf(law, u_next)
    return rng.choice(len(pmf), p=pmf, size=size)


def conditioned_binomial_positive(k: int, q: np.ndarray, rng) -> np.ndarray:
    """Draw Binomial(k, q) conditioned to be >= 1, vectorized over q.

    Uses pmf ratios scaled by 1/q so tiny survival probabilities stay exact.
    Rows with q = 0 return 1; they only occur with conditioning weight zero.
    """
    count = len(q)
    if k == 1:
        return np.ones(count, dtype=np.int64)
    js = np.arange(1, k + 1)
    # m_j = C(k,j) q**(j-1) (1-q)**(k-j), proportional to the conditioned pmf
    logs = np.where(q > 0, np.log(q, where=q > 0, out=np.zeros_like(q)), 0.0)
    m = np.empty((count, k))
    for idx, j in enumerate(js):
        m[:, idx] = math.comb(k, int(j)) * np.exp((j - 1) * logs) * (1.0 - q) ** (k - j)
    m[q == 0.0] = 0.0
    m[q == 0.0, 0] = 1.0
    cum = np.cumsum(m, axis=1)
    r = rng.random(count) * cum[:, -1]
    picks = (r[:, None] >= cum).sum(axis=1)
    return (picks + 1).astype(np.int64)


# --- conditioned environment + skeleton sampling ------------------------------


def _conditioning_plan(model: EnvironmentModel):
    """(tilt_theta, rate) for conditioned sampling: tilted where centered."""
    report = classify(model)
    if report.regime in ("IS", "WS"):
        return report.alpha, report.gamma, METHOD_TILTED
    return None, None, METHOD_ENV_EXACT


def _draw_env_profile_chunk(model, n, rng, count, tilt_theta, rate):
    """Component indices, survival profile matrix, and importance weights."""
    if tilt_theta is None:
        draw_weights = model.weights
    else:
        from .environment import tilt as tilt_model

        draw_weights = tilt_model(model, tilt_theta)[0].weights
    idx = rng.choice(len(model.components), size=(count, n), p=np.asarray(draw_weights))
    laws = model.laws
    u = np.ones((count, n + 1))
    if model.all_linear_fractional:
        a = np.array([law.A for law in laws])
        b = np.array([law.B for law in laws])
        for i in range(n - 1, -1, -1):
            ai, bi = a[idx[:, i]], b[idx[:, i]]
            un = u[:, i + 1]
            u[:, i] = ai * un / ((1.0 - bi) * (1.0 - bi + bi * un))
    else:
        for r in range(count):
            for i in range(n - 1, -1, -1):
                u[r, i] = survival_step(laws[idx[r, i]], u[r, i + 1])
    if tilt_theta is None:
        w = np.ones(count)
    else:
        s_n = model.log_means[idx].sum(axis=1) if n > 0 else np.zeros(count)
        w = np.exp(n * math.log(rate) - tilt_theta * s_n)
    return idx, u, w


def _evolve_skeleton(model, idx, u, z0, rng, cap) -> tuple[np.ndarray, np.ndarray]:
    """Evolve prolific counts generation by generation for a whole chunk.

    Returns (final counts, overflow mask); overflowed replicates are frozen
    at zero and must be folded into reported tail mass.
    """
    count, n = idx.shape
    laws = model.laws
    z = z0.astype(np.int64).copy()
    overflow = np.zeros(count, dtype=bool)
    lf = model.all_linear_fractional
    if lf:
        b_arr = np.array([law.B for law in laws])
    for i in range(n):
        total = int(z.sum())
        if total == 0:
            break
        owners = np.repeat(np.arange(count), z)
        if lf:
            bi = b_arr[idx[:, i]]
            un = u[:, i + 1]
            d = 1.0 - bi * (1.0 - un)
            p_ind = np.repeat((1.0 - bi) / d, z)
            draws = rng.geometric(p_ind)
        else:
            draws = np.empty(total, dtype=np.int64)
            pos = 0
            for r in range(count):
                if z[r] == 0:
                    continue
                draws[pos : pos + z[r]] = _sample_skeleton_children(
                    laws[idx[r, i]], u[r, i + 1], int(z[r]), rng
                )
                pos += z[r]
        z = np.bincount(owners, weights=draws, minlength=count).astype(np.int64)
        over = z > cap
        if over.any():
            overflow |= over
            z[over] = 0
    return z, overflow


@dataclass(frozen=True)
class YaglomEstimate:
    """Empirical law of the population at the horizon given survival."""

    k: int
    n: int
    pmf: dict[int, tuple[float, float]]  # size -> (estimate, SE)
    s_grid: tuple[float, ...]
    pgf_values: tuple[float, ...]
    tail_mass: float
    effective_events: float
    reps_used: int
    method: str
    seed_info: str


def yaglom(
    model: EnvironmentModel,
    k: int,
    n: int,
    reps: int,
    seed: int = 0,
    state_cap: int = DEFAULT_STATE_CAP,
    s_grid: tuple[float, ...] = DEFAULT_S_GRID,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> YaglomEstimate:
    """Estimate the law of Z_n given Z_n > 0, starting from k particles.

    Per environment draw: the number of surviving initial lineages is an
    exactly-sampled conditioned binomial, each surviving lineage's
    population is an exact skeleton sample, and the replicate carries weight
    (importance weight) x P(survival | environment).
    """
    tilt_theta, rate, method = _conditioning_plan(model)

    def chunk(rng, count, start):
        idx, u, w = _draw_env_profile_chunk(model, n, rng, count, tilt_theta, rate)
        q = u[:, 0]
        survive_w = w * _any_survive(q, k)
        n_alive = conditioned_binomial_positive(k, q, rng)
        z, over = _evolve_skeleton(model, idx, u, n_alive, rng, state_cap)
        return z.astype(np.int64), survive_w, over.astype(bool)

    z, survive_w, overflow, reps_used, eff = _accumulate_conditioned(
        chunk, reps, seed, f"yaglom-k{k}-n{n}", chunk_size
    )
    total_w = float(np.sum(survive_w))
    ok = ~overflow
    ok_fraction = float(np.sum(survive_w[ok])) / total_w if total_w > 0 else 0.0
    # pmf mass is scaled so that pmf + tail_mass accounts for all weight
    pmf = {
        size: (p * ok_fraction, se * ok_fraction)
        for size, (p, se) in weighted_pmf(z[ok], survive_w[ok]).items()
    }
    tail_mass = 1.0 - ok_fraction
    pgf_values = []
    for s in s_grid:
        if s >= 1.0:
            pgf_values.append(1.0)
        else:
            vals = np.where(overflow, 0.0, np.power(float(s), z))
            pgf_values.append(float(np.sum(survive_w * vals) / total_w))
    return YaglomEstimate(
        k=k,
        n=n,
        pmf=pmf,
        s_grid=tuple(float(s) for s in s_grid),
        pgf_values=tuple(pgf_values),
        tail_mass=tail_mass,
        effective_events=eff,
        reps_used=reps_used,
        method=method,
        seed_info=streams.seed_provenance(seed, f"yaglom-k{k}-n{n}", chunk_size),
    )


def _accumulate_conditioned(chunk_fn, reps, seed, purpose, chunk_size):
    """Escalating accumulation shared by the conditioned samplers."""
    batches = []
    total = 0
    target = reps
    round_seed = seed
    while True:
        fields = streams.run_chunks(chunk_fn, target - total, round_seed, purpose, chunk_size)
        batches.append(fields)
        total = target
        survive_w = np.concatenate([b[1] for b in batches])
        eff = kish_neff(survive_w)
        if eff >= MIN_EFFECTIVE_EVENTS or total >= reps * ESCALATION_CAP:
            break
        target = min(total * 2, reps * ESCALATION_CAP)
        round_seed += 1
    if eff < HARD_MIN_EFFECTIVE_EVENTS:
        raise ConditioningStarvationError(eff, HARD_MIN_EFFECTIVE_EVENTS)
    merged = [np.concatenate([b[i] for b in batches]) for i in range(len(batches[0]))]
    return (*merged, total, eff)


def conditioned_population_by_rejection(
    model: EnvironmentModel,
    k: int,
    n: int,
    accepted: int,
    seed: int = 0,
    max_attempts: int = 10**7,
) -> np.ndarray:
    """Brute-force oracle: simulate whole populations, keep survivors.

    Only usable at short horizons where survival is not rare; validates the
    skeleton sampler.
    """
    out = []
    attempts = 0
    index = 0
    while len(out) < accepted:
        rng = streams.stream(seed, "yaglom-reject", index)
        index += 1
        for _ in range(4096):
            attempts += 1
            if attempts > max_attempts:
                raise ConditioningStarvationError(float(len(out)), float(accepted))
            env = draw_env(model, n, rng)
            pops = evolve_lineages(env, k, rng)
            total = int(pops[-1].sum())
            if total > 0:
                out.append(total)
                if len(out) >= accepted:
                    break
    return np.array(out, dtype=np.int64)


def functional_residual(
    estimate: YaglomEstimate, model: EnvironmentModel, gamma: float
) -> tuple[float, dict[float, float]]:
    """Residual of the stationarity equation E[G(f(s))] = gamma*G(s) + 1-gamma.

    G is the estimated conditioned pgf, evaluated off-grid by monotone cubic
    interpolation (shape preserving, so the interpolant stays a plausible
    pgf between grid points).
    """
    grid = np.asarray(estimate.s_grid)
    values = np.asarray(estimate.pgf_values)
    interp = PchipInterpolator(grid, values)
    curve: dict[float, float] = {}
    for s in grid:
        lhs = math.fsum(
            w * float(interp(pgf(law, float(s)))) for law, w in model.components
        )
        rhs = gamma * float(interp(float(s))) + (1.0 - gamma)
        curve[float(s)] = abs(lhs - rhs)
    return max(curve.values()), curve


# --- size-biased one-step kernel (SS / IS) -------------------------------------


@dataclass(frozen=True)
class QKernelRow:
    """One row of the survival-conditioned chain's transition kernel."""

    state: int
    probs: np.ndarray  # probs[m] = P(next = m), m = 0..cap (ceil at cap)
    tail_mass: float

    @property
    def row_sum(self) -> float:
        return float(self.probs.sum())


def _component_pmf(law, cap: int) -> np.ndarray:
    if isinstance(law, FiniteSupport):
        pmf = np.zeros(cap + 1)
        upto = min(len(law.probs), cap + 1)
        pmf[:upto] = law.probs[:upto]
        return pmf
    pmf = np.zeros(cap + 1)
    pmf[0] = 1.0 - law.A / (1.0 - law.B)
    j = np.arange(1, cap + 1)
    pmf[1:] = law.A * law.B ** (j - 1.0)
    return pmf


def _convolve(a: np.ndarray, b: np.ndarray, cap: int) -> np.ndarray:
    if len(a) * len(b) > 2**22:  # FFT pays off for long vectors
        from scipy.signal import fftconvolve

        out = fftconvolve(a, b)[: cap + 1]
        return np.clip(out, 0.0, None)
    return np.convolve(a, b)[: cap + 1]


def _convolve_power(pmf: np.ndarray, power: int, cap: int) -> np.ndarray:
    """power-fold convolution truncated to length cap+1 (binary powering)."""
    result = np.zeros(cap + 1)
    result[0] = 1.0
    base = pmf.copy()
    p = power
    while p > 0:
        if p & 1:
            result = _convolve(result, base, cap)
        p >>= 1
        if p:
            base = _convolve(base, base, cap)
    return result


def qprocess_kernel(
    model: EnvironmentModel, state: int, state_cap: int = DEFAULT_STATE_CAP
) -> QKernelRow:
    """Exact one-step kernel of the chain conditioned to survive forever.

    Only the strongly and intermediate subcritical regimes admit this closed
    form (size-biased, rate-normalized one-step law); weakly subcritical
    models are rejected because the size-bias weights there are not
    computable in closed form.
    """
    if state < 1:
        raise ValidationError(f"state must be >= 1, got {state}", field="state")
    report = classify(model)
    if report.regime == "WS":
        raise ValidationError(
            "no exact kernel in the weakly subcritical regime", field="model"
        )
    gamma = report.e_m
    base = np.zeros(state_cap + 1)
    for law, w in model.components:
        base += w * _convolve_power(_component_pmf(law, state_cap), state, state_cap)
    sizes = np.arange(state_cap + 1)
    row = base * sizes / (state * gamma)
    return QKernelRow(
        state=state, probs=row, tail_mass=max(0.0, 1.0 - float(row.sum()))
    )


@dataclass(frozen=True)
class QProcessRun:
    """Trajectory summaries of the survival-conditioned chain."""

    regime: str
    method: str  # exact kernel chain, or finite-horizon approximation
    horizon: int
    medians: tuple[float, ...]  # per-generation median population
    final_pmf: dict[int, tuple[float, float]] | None
    overflow_mass: float
    reps: int
    seed_info: str


def _chain_step_lf(model, gamma, y, rng):
    """One exact kernel step for all-linear-fractional mixtures.

    Picks the component size-biased by its mean, then draws the size-biased
    sum: one size-biased offspring plus y-1 plain offspring.
    """
    a = np.array([law.A for law in model.laws])
    b = np.array([law.B for law in model.laws])
    pick_p = model.weights * model.means / gamma
    comp = rng.choice(len(a), size=len(y), p=pick_p / pick_p.sum())
    ai, bi = a[comp], b[comp]
    pnz = ai / (1.0 - bi)
    j = rng.binomial(np.maximum(y - 1, 0), pnz)
    extra = np.zeros(len(y), dtype=np.int64)
    pos = j > 0
    if pos.any():
        extra[pos] = rng.negative_binomial(j[pos], 1.0 - bi[pos])
    plain = j + extra
    sb = rng.geometric(1.0 - bi) + rng.geometric(1.0 - bi) - 1
    return plain + sb


def _chain_step_generic(model, gamma, y, rng, cache, cap):
    out = np.empty(len(y), dtype=np.int64)
    for r, state in enumerate(y):
        state = int(state)
        if state not in cache:
            row = qprocess_kernel(model, state, cap).probs
            cache[state] = row / row.sum()
        out[r] = rng.choice(len(cache[state]), p=cache[state])
    return out


def qprocess_run(
    model: EnvironmentModel,
    k: int,
    horizon: int,
    reps: int,
    seed: int = 0,
    lookahead: int = 10,
    state_cap: int = DEFAULT_STATE_CAP,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> QProcessRun:
    """Simulate the chain conditioned to survive in the distant future.

    SS/IS: the exact one-step kernel drives the chain. WS: no exact kernel
    exists, so trajectories are drawn conditioned on survival ``lookahead``
    generations past the horizon (finite-horizon approximation, labeled as
    such in the output).
    """
    report = classify(model)
    if report.regime in ("SS", "IS"):
        gamma = report.e_m
        medians_acc: list[np.ndarray] = []
        finals: list[np.ndarray] = []
        overflow = 0

        def chunk(rng, count, start):
            y = np.full(count, k, dtype=np.int64)
            traj = np.empty((count, horizon + 1), dtype=np.int64)
            traj[:, 0] = y
            cache: dict[int, np.ndarray] = {}
            for i in range(horizon):
                if model.all_linear_fractional:
                    y = _chain_step_lf(model, gamma, y, rng)
                else:
                    y = _chain_step_generic(model, gamma, y, rng, cache, state_cap)
                traj[:, i + 1] = y
            return (traj,)

        (traj,) = streams.run_chunks(chunk, reps, seed, "qprocess", chunk_size)
        medians = tuple(float(np.median(traj[:, i])) for i in range(horizon + 1))
        final_pmf = weighted_pmf(traj[:, -1], np.ones(len(traj)))
        return QProcessRun(
            regime=report.regime,
            method="exact-kernel-chain",
            horizon=horizon,
            medians=medians,
            final_pmf=final_pmf,
            overflow_mass=0.0,
            reps=reps,
            seed_info=streams.seed_provenance(seed, "qprocess", chunk_size),
        )
    # WS: finite-horizon conditioned simulation
    traj, survive_w, over, reps_used = conditioned_trajectories(
        model, k, horizon, lookahead, reps, seed, state_cap, chunk_size
    )
    ok = ~over
    total_w = float(np.sum(survive_w))
    medians = tuple(
        weighted_median(traj[ok, i], survive_w[ok]) for i in range(horizon + 1)
    )
    overflow_mass = float(np.sum(survive_w[~ok])) / total_w if total_w > 0 else 0.0
    return QProcessRun(
        regime="WS",
        method=f"finite-horizon-approximation(lookahead={lookahead})",
        horizon=horizon,
        medians=medians,
        final_pmf=None,
        overflow_mass=overflow_mass,
        reps=reps_used,
        seed_info=streams.seed_provenance(seed, "qprocess-ws", chunk_size),
    )


def conditioned_trajectories(
    model: EnvironmentModel,
    k: int,
    horizon: int,
    lookahead: int,
    reps: int,
    seed: int = 0,
    state_cap: int = DEFAULT_STATE_CAP,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Population trajectories Z_0..Z_horizon given survival at horizon+lookahead.

    Returns (trajectories, weights, overflow mask, replicates used); weighted
    statistics of the rows approximate the conditioned law.
    """
    total_horizon = horizon + lookahead
    tilt_theta, rate, _method = _conditioning_plan(model)

    def chunk(rng, count, start):
        return _dressed_trajectories(
            model, k, total_horizon, horizon, rng, count, tilt_theta, rate, state_cap
        )

    traj, survive_w, over, reps_used, _eff = _accumulate_conditioned(
        chunk, reps, seed, f"qtraj-k{k}-h{horizon}", chunk_size
    )
    return traj, survive_w, over, reps_used


def _dressed_trajectories(model, k, total_horizon, record, rng, count, tilt_theta, rate, cap):
    """Full conditioned population trajectories (prolific + doomed parts).

    Prolific individuals carry the skeleton; each prolific parent also
    spawns doomed children (negative binomial in the linear-fractional
    case), and doomed subtrees evolve under the extinction-conditioned
    offspring law. Records Z_0..Z_record.
    """
    idx, u, w = _draw_env_profile_chunk(model, total_horizon, rng, count, tilt_theta, rate)
    q = u[:, 0]
    survive_w = w * _any_survive(q, k)
    n_alive = conditioned_binomial_positive(k, q, rng)
    laws = model.laws
    lf = model.all_linear_fractional
    if lf:
        a_arr = np.array([law.A for law in laws])
        b_arr = np.array([law.B for law in laws])
    prolific = n_alive.astype(np.int64).copy()
    doomed = (k - n_alive).astype(np.int64)
    overflow = np.zeros(count, dtype=bool)
    traj = np.zeros((count, record + 1), dtype=np.int64)
    traj[:, 0] = k
    for i in range(record):
        un = u[:, i + 1]
        xn = 1.0 - un
        if lf:
            ai, bi = a_arr[idx[:, i]], b_arr[idx[:, i]]
            d = 1.0 - bi * xn
            # prolific parents: j prolific children, NB(j+1, 1-B*x) doomed ones
            owners_p = np.repeat(np.arange(count), prolific)
            p_geo = np.repeat((1.0 - bi) / d, prolific)
            j_draw = rng.geometric(p_geo) if len(owners_p) else np.zeros(0, dtype=np.int64)
            extra = (
                rng.negative_binomial(j_draw + 1, np.repeat(1.0 - bi * xn, prolific))
                if len(owners_p)
                else np.zeros(0, dtype=np.int64)
            )
            new_prolific = np.bincount(owners_p, weights=j_draw, minlength=count).astype(np.int64)
            doomed_born = np.bincount(owners_p, weights=extra, minlength=count).astype(np.int64)
            # doomed parents: zero-inflated shifted geometric
            x_par = 1.0 - u[:, i]
            with np.errstate(divide="ignore", invalid="ignore"):
                pnz_d = np.where(
                    x_par > 0.0, ai * xn / ((1.0 - bi * xn) * np.maximum(x_par, 1e-300)), 0.0
                )
            pnz_d = np.clip(pnz_d, 0.0, 1.0)
            owners_d = np.repeat(np.arange(count), doomed)
            if len(owners_d):
                nz = rng.random(len(owners_d)) < np.repeat(pnz_d, doomed)
                kids = np.zeros(len(owners_d), dtype=np.int64)
                if nz.any():
                    kids[nz] = rng.geometric(np.repeat(1.0 - bi * xn, doomed)[nz])
                doomed_next = np.bincount(owners_d, weights=kids, minlength=count).astype(np.int64)
            else:
                doomed_next = np.zeros(count, dtype=np.int64)
        else:
            new_prolific = np.zeros(count, dtype=np.int64)
            doomed_born = np.zeros(count, dtype=np.int64)
            doomed_next = np.zeros(count, dtype=np.int64)
            for r in range(count):
                law = laws[idx[r, i]]
                jp, db = _dressed_step_fs(law, float(un[r]), float(u[r, i]), int(prolific[r]), rng)
                new_prolific[r], doomed_born[r] = jp, db
                doomed_next[r] = _doomed_step_fs(law, float(xn[r]), float(1.0 - u[r, i]), int(doomed[r]), rng)
        prolific = new_prolific
        doomed = doomed_born + doomed_next
        total = prolific + doomed
        over = total > cap
        if over.any():
            overflow |= over
            prolific[over] = 0
            doomed[over] = 0
            total = prolific + doomed
        traj[:, i + 1] = total
    return traj, survive_w, overflow


def _dressed_step_fs(law, u_next, u_par, n_parents, rng):
    """Prolific-parent step for a finite-support law: exact joint enumeration."""
    if n_parents == 0:
        return 0, 0
    x = 1.0 - u_next
    probs = np.asarray(law.probs)
    pairs = []  # (j, c - j, probability)
    for c, pc in enumerate(probs):
        for j in range(1, c + 1):
            pairs.append((j, c - j, pc * math.comb(c, j) * u_next**j * x ** (c - j)))
    weights = np.array([p for _, _, p in pairs])
    weights = weights / weights.sum()
    picks = rng.choice(len(pairs), p=weights, size=n_parents)
    j_total = sum(pairs[p][0] for p in picks)
    d_total = sum(pairs[p][1] for p in picks)
    return j_total, d_total


def _doomed_step_fs(law, x_next, x_par, n_parents, rng):
    """Doomed-parent step: offspring law reweighted by extinction of every child."""
    if n_parents == 0:
        return 0
    if x_par <= 0.0:
        return 0
    probs = np.asarray(law.probs)
    c_vals = np.arange(len(probs))
    pmf = probs * x_next**c_vals
    pmf = pmf / pmf.sum()
    return int(rng.choice(len(pmf), p=pmf, size=n_parents).sum())


# --- environment posterior ------------------------------------------------------


@dataclass(frozen=True)
class EnvPosterior:
    """Distribution of the first p environment draws given distant survival."""

    p: int
    per_position: tuple[dict[int, tuple[float, float]], ...]
    joint: dict[tuple[int, ...], tuple[float, float]] | None
    prior: tuple[float, ...]
    effective_events: float
    reps_used: int
    method: str


def env_posterior(
    model: EnvironmentModel,
    k: int,
    p: int,
    n: int,
    reps: int,
    seed: int = 0,
    chunk_size: int = streams.DEFAULT_CHUNK,
) -> EnvPosterior:
    """Posterior of the first p environment components given survival at n+p.

    Each drawn path is weighted by its exact survival probability from k
    particles; the estimate is a weighted frequency. The p = 1, n = 0 case
    is a one-step exact computation (no sampling).
    """
    if p < 1 or p > 5:
        raise ValidationError(f"prefix length must be in 1..5, got {p}", field="p")
    if n + p > 25:
        raise ValidationError(f"n + p must be <= 25, got {n + p}", field="n")
    ncomp = len(model.components)
    prior = tuple(float(w) for w in model.weights)
    if n == 0 and p == 1:
        raw = [
            w * (1.0 - pgf(law, 0.0) ** k) for law, w in model.components
        ]
        z = math.fsum(raw)
        dist = {i: (r / z, 0.0) for i, r in enumerate(raw)}
        return EnvPosterior(
            p=p,
            per_position=(dist,),
            joint={(i,): v for i, v in dist.items()},
            prior=prior,
            effective_events=math.inf,
            reps_used=0,
            method=METHOD_EXACT,
        )

    def chunk(rng, count, start):
        idx, u, w = _draw_env_profile_chunk(model, n + p, rng, count, None, None)
        survive_w = w * _any_survive(u[:, 0], k)
        return idx[:, :p].astype(np.int64), survive_w

    prefix, survive_w, reps_used, eff = _accumulate_conditioned(
        chunk, reps, seed, f"envpost-p{p}-n{n}", chunk_size
    )
    per_position = []
    for pos in range(p):
        dist: dict[int, tuple[float, float]] = {}
        for comp in range(ncomp):
            num = survive_w * (prefix[:, pos] == comp)
            dist[comp] = ratio_and_se(num, survive_w)
        per_position.append(dist)
    joint = None
    if p <= 3:
        joint = {}
        keys = {tuple(row) for row in prefix.tolist()}
        for key in sorted(keys):
            match = np.all(prefix == np.array(key), axis=1)
            joint[tuple(int(v) for v in key)] = ratio_and_se(survive_w * match, survive_w)
    return EnvPosterior(
        p=p,
        per_position=tuple(per_position),
        joint=joint,
        prior=prior,
        effective_events=eff,
        reps_used=reps_used,
        method=METHOD_ENV_EXACT,
    )
