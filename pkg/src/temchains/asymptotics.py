"""Predictive laws for the composition extremes and the parts-count tails.

Largest parts: with N0 = floor(alpha nu) effective chain steps, the mu-th
largest part Y^(mu) satisfies P{Y^(mu) <= n} ~ P{Poisson(rate(n)) < mu} with

    rate(n) = B N0 (ln N0 / ln z*)^2 z*^n   (cca)
    rate(n) = B N0 z*^n                     (carlitz)

and W = rate(Y^(mu)) converges to the sum of mu unit exponentials.  The
integer-lattice side conditions of the exact statements are relaxed here:
predictions are evaluated at every integer n, and empirical tails are judged
against the two-sided bracket [P{z* W_mu >= s}, P{W_mu >= s}] that the
rounding of n induces.

Parts count: the number of parts is asymptotically Gaussian(alpha nu,
beta nu); the bivariate saddle point of -nu ln z - m ln w - ln(z(w) - z)
yields a computable tail bound for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaincc

from . import compositions
from .series import (SADDLE_WINDOW, _check_model, constants, counting_series,
                     h_partials, z_of_w)


def reference_count(model: str, nu: int) -> int:
    """N0 = floor(alpha nu): the effective number of chain steps."""
    return int(constants(model).alpha * nu)


def count_window(model: str, nu: int):
    """(N1, N2) = floor(alpha nu -+ 2 sqrt(nu) ln nu): the range the actual
    bulk length falls in, up to negligible probability."""
    c = constants(model)
    slack = 2.0 * math.sqrt(nu) * math.log(nu)
    return int(c.alpha * nu - slack), int(c.alpha * nu + slack)


def poisson_rate(model: str, nu: int, n) -> float:
    """Expected number of parts exceeding n among the first N0."""
    c = constants(model)
    n0 = reference_count(model, nu)
    n = np.asarray(n, dtype=float)
    if model == "cca":
        lam = c.B * n0 * (math.log(n0) / math.log(c.z_star)) ** 2 * c.z_star**n
    else:
        lam = c.B * n0 * c.z_star**n
    return lam if lam.shape else float(lam)


@dataclass(frozen=True)
class ExtremePrediction:
    """Poisson prediction for the mu-th largest part at threshold n."""
    model: str
    nu: int
    mu: int
    n: int
    n0: int
    window: tuple
    rate: float

    def cdf(self) -> float:
        return float(stats.poisson.cdf(self.mu - 1, self.rate))


def extreme_prediction(model: str, nu: int, mu: int, n: int) -> ExtremePrediction:
    _check_model(model)
    if mu < 1 or n < 1:
        raise ValueError("mu >= 1 and n >= 1 required")
    return ExtremePrediction(model=model, nu=nu, mu=mu, n=n,
                             n0=reference_count(model, nu),
                             window=count_window(model, nu),
                             rate=poisson_rate(model, nu, n))


def predict_extreme_cdf(model: str, nu: int, mu: int, n: int) -> float:
    """P{Y^(mu) <= n} ~ P{Poisson(rate(n)) < mu}, any integer n."""
    return extreme_prediction(model, nu, mu, n).cdf()


def gamma_tail(mu: int, s: float) -> float:
    """P{W_mu >= s}: upper tail of the sum of mu unit exponentials,
    e^{-s} sum_{j<mu} s^j/j!."""
    if mu < 1:
        raise ValueError("mu >= 1")
    if s < 0:
        raise ValueError("s >= 0")
    return float(gammaincc(mu, s))


@dataclass(frozen=True)
class ExtremesSample:
    """Monte Carlo draw of composition extremes."""
    model: str
    nu: int
    reps: int
    seed: int
    tops: np.ndarray    # (reps, mu_max) largest parts, decreasing
    counts: np.ndarray  # parts count per replica

    def w_values(self, mu: int) -> np.ndarray:
        """W_{nu,mu} = rate(Y^(mu)) per replica."""
        return poisson_rate(self.model, self.nu, self.tops[:, mu - 1])

    def gap(self, mu: int) -> np.ndarray:
        """Y^(1) - Y^(mu) per replica."""
        return self.tops[:, 0] - self.tops[:, mu - 1]


def empirical_extremes(model: str, nu: int, mu_max: int, reps: int,
                       seed: int, jobs: int = 1) -> ExtremesSample:
    """Sample `reps` compositions, recording the mu_max largest parts of each.

    Replica r draws from stream (seed, r); results are aggregated in replica
    order, so the output is independent of `jobs`.
    """
    counts, tops = compositions.sample_batch(model, nu, reps, seed,
                                             mu_max=mu_max, jobs=jobs)
    return ExtremesSample(model=model, nu=nu, reps=reps, seed=seed,
                          tops=tops, counts=counts)


def w_tail_bracket(model: str, mu: int, s: float):
    """[P{z* W_mu >= s}, P{W_mu >= s}]: the lattice-rounding envelope for
    empirical P{W_{nu,mu} >= s}."""
    z = constants(model).z_star
    return gamma_tail(mu, s / z), gamma_tail(mu, s)


# ---------------------------------------------------------------------------
# parts-count large deviations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChernoffPoint:
    """Saddle of the parts-count tail exponent at a given m."""
    model: str
    nu: int
    m: float
    w_bar: float
    z_bar: float
    exponent: float  # -nu ln(z_bar) - m ln(w_bar) - ln(z(w_bar) - z_bar)


def _log_slope(model: str, w: float) -> float:
    """w z'(w)/z(w) along the root curve; strictly decreasing in w."""
    z = z_of_w(model, w, window=SADDLE_WINDOW[model])
    hw, hz = h_partials(model, w, z)
    return -w * hw / (hz * z)


def _exponent_at(model: str, nu: int, m: float, w: float) -> float:
    """-nu ln(z_bar) - m ln(w) - ln(z(w) - z_bar) with z_bar = nu/(nu+1) z(w)."""
    zw = z_of_w(model, w, window=SADDLE_WINDOW[model])
    z_bar = nu / (nu + 1.0) * zw
    return -nu * math.log(z_bar) - m * math.log(w) - math.log(zw - z_bar)


def chernoff_saddle(model: str, nu: int, m: float,
                    margin: float = 1e-9) -> ChernoffPoint:
    """Stationary point of -nu ln z - m ln w - ln(z(w) - z).

    Solves w z'(w)/z(w) = -m/(nu+1) on the scanned root-curve window; m must
    be close enough to alpha*nu for the solution to land inside it.  At
    m = alpha (nu+1) the saddle sits at w = 1 exactly.
    """
    _check_model(model)
    if m <= 0:
        raise ValueError("m > 0 required")
    target = -m / (nu + 1.0)
    wlo, whi = SADDLE_WINDOW[model]
    wlo += 1e-7
    whi -= 1e-7
    glo, ghi = _log_slope(model, wlo), _log_slope(model, whi)
    if not (ghi - margin <= target <= glo + margin):
        raise ValueError(
            f"m={m} is too far from alpha*nu: slope target {target:.6f} "
            f"outside [{ghi:.6f}, {glo:.6f}] reachable on the w-window")
    w_bar = float(optimize.brentq(
        lambda w: _log_slope(model, w) - target, wlo, whi, xtol=1e-12))
    zw = z_of_w(model, w_bar, window=SADDLE_WINDOW[model])
    z_bar = nu / (nu + 1.0) * zw
    exponent = _exponent_at(model, nu, m, w_bar)
    return ChernoffPoint(model=model, nu=nu, m=m, w_bar=w_bar, z_bar=z_bar,
                         exponent=exponent)


def log_count(model: str, nu: int) -> float:
    """ln T(nu): exact below the big-integer cap, amplitude form beyond
    (relative error O(gamma^nu), invisible at the nu where it is used)."""
    c = constants(model)
    if nu <= max(compositions.MAX_EXACT_NU, 360):
        t = counting_series(model, nu).coefficient(nu)
        return compositions._ln_big(t)
    return math.log(c.C) - nu * math.log(c.z_star)


@dataclass(frozen=True)
class LdpBound:
    """Tail bound for the parts count at threshold m (constant c = 1).

    ``saddle`` evaluates exp(H at the saddle)/T(nu); ``gaussian`` is the
    closed form nu * exp(-(m - alpha nu)^2 / (3 beta nu)).  Both are upper
    bounds up to an absolute constant the analysis leaves unspecified:
    reports print them with the c = 1 caveat, and acceptance only requires
    the empirical tail to stay below a fitted c <= 10 multiple.
    """
    model: str
    nu: int
    m: float
    side: str
    w_bar: float
    saddle: float
    gaussian: float


def ldp_bound(model: str, nu: int, m: float, side: str = "upper") -> LdpBound:
    """Bound P{M >= m} (side="upper", needs m >= alpha nu) or P{M <= m}
    (side="lower", m <= alpha nu)."""
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    c = constants(model)
    point = chernoff_saddle(model, nu, m)
    if side == "upper" and point.w_bar < 1.0 - 1e-6:
        raise ValueError(f"upper bound needs m >= alpha*nu ~ {c.alpha * nu:.1f}")
    if side == "lower" and point.w_bar > 1.0 + 1e-6:
        raise ValueError(f"lower bound needs m <= alpha*nu ~ {c.alpha * nu:.1f}")
    ln_bound = point.exponent - log_count(model, nu)
    saddle = math.exp(ln_bound) if ln_bound < 700 else math.inf
    dev = (m - c.alpha * nu) ** 2
    gaussian = nu * math.exp(-dev / (3.0 * c.beta * nu))
    return LdpBound(model=model, nu=nu, m=m, side=side, w_bar=point.w_bar,
                    saddle=saddle, gaussian=gaussian)


# ---------------------------------------------------------------------------
# parts-count CLT check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CltReport:
    model: str
    nu: int
    alpha: float
    beta: float
    exact_mean_ratio: float | None   # E[M]/(alpha nu)
    exact_var_ratio: float | None    # Var[M]/(beta nu)
    mc_reps: int
    mc_mean_ratio: float | None
    mc_var_ratio: float | None
    mc_skewness: float | None


def clt_check(model: str, nu: int, reps: int = 0, seed: int = 0,
              exact_cap: int = compositions.MAX_EXACT_NU,
              jobs: int = 1) -> CltReport:
    """Compare the parts-count law against its Gaussian(alpha nu, beta nu) limit.

    Uses the exact by-parts counts when nu is below the big-integer cap and
    Monte Carlo (reps > 0) beyond.
    """
    c = constants(model)
    exact_mean = exact_var = None
    if nu <= exact_cap:
        st = compositions.parts_count_stats(model, nu)
        exact_mean = float(st.mean) / (c.alpha * nu)
        exact_var = float(st.variance) / (c.beta * nu)
    mc_mean = mc_var = mc_skew = None
    if reps > 0:
        counts, _ = compositions.sample_batch(model, nu, reps, seed, jobs=jobs)
        x = (counts - c.alpha * nu) / math.sqrt(c.beta * nu)
        mc_mean = float(counts.mean()) / (c.alpha * nu)
        mc_var = float(counts.var(ddof=1)) / (c.beta * nu)
        mc_skew = float(stats.skew(x))
    return CltReport(model=model, nu=nu, alpha=c.alpha, beta=c.beta,
                     exact_mean_ratio=exact_mean, exact_var_ratio=exact_var,
                     mc_reps=reps, mc_mean_ratio=mc_mean,
                     mc_var_ratio=mc_var, mc_skewness=mc_skew)
