"""Subcriticality regimes and the decay-rate constants attached to them.

For a subcritical model (mean log offspring mean < 0) the survival decay
rate is the minimum of the convex map theta -> E[m**theta] over [0, 1]; the
regime (SS / IS / WS) is read off the sign of E[m * log m]. The k-particle
joint-survival rate comes from the same map minimized over [0, k].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .environment import EnvironmentModel, env_expectation
from .errors import NotSubcriticalError
from .offspring import moments

IS_TIE_TOL = 1e-10  # |E[m log m]| below this declares the intermediate regime
THETA_TOL = 1e-12


def _safe_log(m: float) -> float:
    return math.log(m) if m > 0.0 else -math.inf


def _phi(model: EnvironmentModel, theta: float) -> float:
    """E[m**theta], exact over the finite mixture."""
    return env_expectation(model, lambda law: moments(law)[0] ** theta)


def _dphi(model: EnvironmentModel, theta: float) -> float:
    """E[m**theta * log m]; increasing in theta by convexity."""

    def term(law):
        m = moments(law)[0]
        if m == 0.0:
            return -math.inf if theta == 0.0 else 0.0
        return m**theta * math.log(m)

    return env_expectation(model, term)


def _bisect_dphi_root(model: EnvironmentModel, lo: float, hi: float) -> float:
    # dphi is monotone increasing; the caller guarantees a sign change.
    flo = _dphi(model, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= THETA_TOL:
            break
        fmid = _dphi(model, mid)
        if (fmid < 0.0) == (flo < 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RegimeReport:
    subcritical: bool
    regime: str  # "SS" | "IS" | "WS"
    alpha: float
    gamma: float
    k: int
    alpha_tilde_k: float
    gamma_tilde_k: float
    joint_case: str  # "i" | "ii" | "iii": sign of E[m**k log m]
    e_log_m: float
    e_m_log_m: float
    e_m: float

    def as_dict(self) -> dict:
        return {
            "subcritical": self.subcritical,
            "regime": self.regime,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "k": self.k,
            "alpha_tilde_k": self.alpha_tilde_k,
            "gamma_tilde_k": self.gamma_tilde_k,
            "joint_case": self.joint_case,
            "e_log_m": self.e_log_m,
            "e_m_log_m": self.e_m_log_m,
            "e_m": self.e_m,
        }


def solve_alpha(model: EnvironmentModel) -> tuple[float, float]:
    """Minimize theta -> E[m**theta] over [0, 1]; returns (argmin, min).

    The minimizer is interior iff E[m * log m] > 0, in which case it is the
    unique root of the increasing map theta -> E[m**theta * log m]; otherwise
    the minimum sits at theta = 1. Bisection keeps a guaranteed bracket.
    """
    _require_subcritical(model)
    if _dphi(model, 1.0) <= 0.0:
        return 1.0, _phi(model, 1.0)
    alpha = _bisect_dphi_root(model, 0.0, 1.0)
    return alpha, _phi(model, alpha)


def solve_gamma_tilde(model: EnvironmentModel, k: int) -> tuple[float, float, str]:
    """Joint-survival rate for k particles: minimize E[m**theta] over [0, k].

    Returns (theta*, rate, case) where case records the sign of
    E[m**k * log m]: "i" negative, "ii" zero within tolerance, "iii"
    positive (interior minimizer).
    """
    _require_subcritical(model)
    d_at_k = _dphi(model, float(k))
    if d_at_k > IS_TIE_TOL:
        theta = _bisect_dphi_root(model, 0.0, float(k))
        return theta, _phi(model, theta), "iii"
    case = "ii" if abs(d_at_k) <= IS_TIE_TOL else "i"
    return float(k), _phi(model, float(k)), case


def classify(model: EnvironmentModel, k: int = 1) -> RegimeReport:
    """Regime tag plus all rate constants for a subcritical model."""
    e_log_m = env_expectation(model, lambda law: _safe_log(moments(law)[0]))
    if e_log_m >= 0.0:
        raise NotSubcriticalError(e_log_m)
    e_m_log_m = _dphi(model, 1.0)
    if abs(e_m_log_m) <= IS_TIE_TOL:
        regime = "IS"
    elif e_m_log_m < 0.0:
        regime = "SS"
    else:
        regime = "WS"
    alpha, gamma = solve_alpha(model)
    alpha_tilde, gamma_tilde, case = solve_gamma_tilde(model, k)
    return RegimeReport(
        subcritical=True,
        regime=regime,
        alpha=alpha,
        gamma=gamma,
        k=k,
        alpha_tilde_k=alpha_tilde,
        gamma_tilde_k=gamma_tilde,
        joint_case=case,
        e_log_m=e_log_m,
        e_m_log_m=e_m_log_m,
        e_m=_phi(model, 1.0),
    )


def _require_subcritical(model: EnvironmentModel) -> None:
    e_log_m = env_expectation(model, lambda law: _safe_log(moments(law)[0]))
    if e_log_m >= 0.0:
        raise NotSubcriticalError(e_log_m)
