"""Hitting times and hit locations of rare sets on the truncated kernels.

The joint law of (hit time T, hit location X(T)) is computed by pushing the
restricted mass vector through the substochastic block: after a short
transient the vector locks onto the leading eigendirection, so the law is
stored as explicit head rows plus an exact geometric continuation.  That
makes total-variation comparisons against the product law (restricted
stationary location x geometric time) cheap at any rarity level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from . import _speed, chains
from .chains import TruncatedChain
from .rng import stream
from .series import _check_model

LOC_TAIL = -1  # label of the "beyond truncation" location bucket


class NumericalError(RuntimeError):
    """A solver failed to reach its certified residual."""


# ---------------------------------------------------------------------------
# rare sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RareSet:
    """An upper tail S_n = {n+1, n+2, ...} or a band (a, b] of states."""
    a: int
    b: float = math.inf  # inclusive upper end; inf gives the upper tail

    @classmethod
    def upper(cls, n: int) -> "RareSet":
        return cls(a=n)

    @classmethod
    def band(cls, a: int, b: int) -> "RareSet":
        if not a <= b:
            raise ValueError("band needs a <= b")
        return cls(a=a, b=b)

    @property
    def is_upper(self) -> bool:
        return math.isinf(self.b)

    def contains(self, k: int) -> bool:
        return self.a < k <= self.b

    def member_states(self, K: int) -> np.ndarray:
        hi = K if self.is_upper else min(int(self.b), K)
        return np.arange(self.a + 1, hi + 1)

    def pi(self, model: str) -> float:
        """Stationary mass pi(S)."""
        top = chains.stationary_tail(model, self.a)
        if self.is_upper:
            return top
        return top - chains.stationary_tail(model, int(self.b))

    def p_sup(self, model: str) -> float:
        """p(S) = sup_i p(i, S)."""
        if self.is_upper:
            return chains.sup_row_tail(model, self.a)
        scan = max(4 * int(self.b), 64)
        return max(chains.row_tail(model, i, self.a)
                   - chains.row_tail(model, i, int(self.b))
                   for i in range(1, scan + 1))

    def epsilon(self, model: str, K: int) -> float:
        """sup over i in S^c cap [1..K] of p(i, S)."""
        best = 0.0
        for i in range(1, K + 1):
            if self.contains(i):
                continue
            t = chains.row_tail(model, i, self.a)
            if not self.is_upper:
                t -= chains.row_tail(model, i, int(self.b))
            best = max(best, t)
        return best


def _split_indices(S: RareSet, K: int):
    states = np.arange(1, K + 1)
    inside = (states > S.a) & (states <= S.b)
    return np.where(~inside)[0], np.where(inside)[0]


# ---------------------------------------------------------------------------
# expected hitting times and moments
# ---------------------------------------------------------------------------

def expected_hits(chain: TruncatedChain, S: RareSet,
                  method: str = "direct", tol: float = 1e-10) -> np.ndarray:
    """E_i[T(S)] for every i = 1..K, from the one-step linear system.

    "direct" LU-solves (I - P_cc) E = 1 on S^c and certifies the residual;
    "iterative" runs the monotone fixed point x <- 1 + P_cc x, whose iterates
    increase to the answer.
    """
    return hit_moments(chain, S, 1, method=method, tol=tol)[1]


def hit_moments(chain: TruncatedChain, S: RareSet, order: int,
                method: str = "direct", tol: float = 1e-10) -> dict:
    """{k: vector of E_i[T^k(S)], i = 1..K} for k = 1..order.

    Moment k solves the same restricted system with inhomogeneity
    b(i,k) = 1 + sum_{r<k} C(k,r) sum_{j in S^c} p(i,j) E_j[T^r].
    """
    if order < 1:
        raise ValueError("order >= 1")
    sc, _ = _split_indices(S, chain.K)
    if sc.size == 0:
        raise ValueError("S covers every truncated state")
    Pcc = chain.P[np.ix_(sc, sc)]
    Pfc = chain.P[:, sc]
    lu = linalg.lu_factor(np.eye(sc.size) - Pcc)
    out = {}
    for k in range(1, order + 1):
        b_full = np.ones(chain.K)
        for r in range(1, k):
            b_full += math.comb(k, r) * (Pfc @ out[r][sc])
        if method == "direct":
            ek_sc = linalg.lu_solve(lu, b_full[sc])
        elif method == "iterative":
            ek_sc = _monotone_solve(Pcc, b_full[sc], tol)
        else:
            raise ValueError(f"unknown method {method!r}")
        resid = np.abs((np.eye(sc.size) - Pcc) @ ek_sc - b_full[sc]).max()
        if resid > tol * max(b_full[sc].max(), 1.0):
            raise NumericalError(f"moment-{k} system residual {resid:.2e}")
        out[k] = b_full + Pfc @ ek_sc
    return out


def _monotone_solve(Pcc, b, tol, max_iter=10_000_000):
    x = b.copy()
    for _ in range(max_iter):
        nxt = b + Pcc @ x
        if np.abs(nxt - x).max() <= 0.05 * tol * (1.0 + np.abs(nxt).max()):
            return nxt
        x = nxt
    raise NumericalError("monotone iteration did not converge")


def kac_residual(chain: TruncatedChain, S: RareSet) -> float:
    """|sum_{k in S} pi(k) E_k[T(S)] - 1| on the truncation.

    The stationary mass beyond K contributes at most pi_tail * max E, which
    is included in the returned residual bound.
    """
    e = expected_hits(chain, S)
    _, ss = _split_indices(S, chain.K)
    total = float(chain.pi_trunc[ss] @ e[ss])
    slack = chain.pi_tail * float(e.max()) if S.is_upper else 0.0
    return abs(total - 1.0) + slack


# ---------------------------------------------------------------------------
# Perron data of the restricted block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerronData:
    """Leading eigenvalue and min-normalized positive eigenvector of P on S^c."""
    lam: float
    f: np.ndarray          # over S^c cap [1..K], min = 1
    states: np.ndarray
    residual: float


def perron(chain: TruncatedChain, S: RareSet, tol: float = 1e-12,
           max_iter: int = 500_000) -> PerronData:
    sc, _ = _split_indices(S, chain.K)
    if sc.size == 0:
        raise ValueError("S covers every truncated state")
    Pcc = chain.P[np.ix_(sc, sc)]
    v = np.ones(sc.size)
    lam = 0.0
    for it in range(max_iter):
        w = Pcc @ v
        lam = float(w.max())
        if lam <= 0:
            raise NumericalError("restricted block lost all mass")
        w /= lam
        if it % 4 == 3 and np.abs(Pcc @ w - lam * w).max() <= tol * np.abs(w).max():
            v = w
            break
        v = w
    resid = float(np.abs(Pcc @ v - lam * v).max() / np.abs(v).max())
    if resid > 10 * tol:
        raise NumericalError(f"power iteration stagnated at residual {resid:.2e}")
    f = v / v.min()
    return PerronData(lam=lam, f=f, states=sc + 1, residual=resid)


# ---------------------------------------------------------------------------
# joint hit laws
# ---------------------------------------------------------------------------

@dataclass
class JointHitLaw:
    """P{T = tau, X(T) = s} as head rows plus a geometric continuation.

    head[t - 1, l] covers tau = 1..head_len; for tau beyond,
    P = cont_amp[l] * cont_ratio^(tau - head_len - 1).  Locations are the
    states of S within the truncation plus the LOC_TAIL bucket for hits
    beyond it.  ``unaccounted`` bounds every bit of mass the table and
    continuation miss; it is added in full to any TV distance.
    """
    locations: np.ndarray
    head: np.ndarray
    cont_amp: np.ndarray
    cont_ratio: float
    unaccounted: float

    @property
    def head_len(self) -> int:
        return self.head.shape[0]

    def mass(self) -> float:
        return float(self.head.sum() + self.cont_amp.sum() / (1.0 - self.cont_ratio))

    def time_pmf(self, tau: int) -> float:
        if tau < 1:
            return 0.0
        if tau <= self.head_len:
            return float(self.head[tau - 1].sum())
        return float(self.cont_amp.sum()
                     * self.cont_ratio ** (tau - self.head_len - 1))

    def loc_marginal(self) -> np.ndarray:
        return np.asarray(self.head.sum(axis=0)
                          + self.cont_amp / (1.0 - self.cont_ratio))

    def rows_until(self, T: int) -> np.ndarray:
        """Materialized joint rows for tau = 1..T."""
        if T <= self.head_len:
            return self.head[:T]
        extra = T - self.head_len
        pows = self.cont_ratio ** np.arange(extra)
        return np.vstack([self.head, pows[:, None] * self.cont_amp[None, :]])

    def tail_after(self, T: int):
        """(amp, ratio) of the geometric block for tau > T >= head_len."""
        if T < self.head_len:
            raise ValueError("tail_after needs T >= head_len")
        amp = self.cont_amp * self.cont_ratio ** (T - self.head_len)
        return amp, self.cont_ratio


def exact_hit_law(chain: TruncatedChain, S: RareSet, i: int,
                  tau_max: int | None = None, tail_tol: float = 1e-9,
                  lock_tol: float = 1e-13, max_head: int = 20_000) -> JointHitLaw:
    """Joint law of (T(S), X(T(S))) from initial state i, by vector iteration.

    With tau_max=None the head grows until the restricted vector locks onto
    the leading eigendirection (relative change < lock_tol), after which the
    law continues geometrically and the result is certified to float
    accuracy.  With an explicit tau_max the head is materialized to tau_max
    rows, no continuation; if the residual mass beyond exceeds ``tail_tol``
    a ValueError reports the tail as too large.
    """
    if not 1 <= i <= chain.K:
        raise ValueError(f"initial state {i} outside truncation 1..{chain.K}")
    sc, ss = _split_indices(S, chain.K)
    Pcc = chain.P[np.ix_(sc, sc)]
    PcS = chain.P[np.ix_(sc, ss)]
    defect_sc = chain.row_defect[sc]
    into_tail = defect_sc if S.is_upper else np.zeros_like(defect_sc)
    locations = np.concatenate([ss + 1, [LOC_TAIL]])

    # tau = 1 row and the restricted vector after one step, from the delta at i
    first_tail = float(chain.row_defect[i - 1]) if S.is_upper else 0.0
    rows = [np.concatenate([chain.P[i - 1, ss], [first_tail]])]
    u = chain.P[i - 1, sc].copy()
    unaccounted = 0.0 if S.is_upper else float(chain.row_defect[i - 1])

    prev_dir = None
    lam = None
    hard_cap = tau_max if tau_max is not None else max_head
    locked = False
    for tau in range(2, hard_cap + 1):
        row = np.concatenate([u @ PcS, [float(u @ into_tail)]])
        rows.append(row)
        if not S.is_upper:
            unaccounted += float(u @ defect_sc)
        u = u @ Pcc
        total = u.sum()
        if total <= 0.0:
            lam = 0.0
            locked = True
            break
        direction = u / total
        if tau_max is None and prev_dir is not None:
            if np.abs(direction - prev_dir).max() < lock_tol and tau > 8:
                lam = float(total / prev_total)
                locked = True
                break
        prev_dir = direction
        prev_total = total
    head = np.vstack(rows)

    if tau_max is not None:
        residual = max(1.0 - head.sum() - unaccounted, 0.0)
        if residual > tail_tol:
            raise ValueError(
                f"tau_max={tau_max} leaves tail mass {residual:.2e} > {tail_tol}")
        return JointHitLaw(locations=locations, head=head,
                           cont_amp=np.zeros(ss.size + 1), cont_ratio=0.0,
                           unaccounted=unaccounted + residual)
    if not locked:
        raise NumericalError("restricted vector did not lock onto the "
                             f"leading direction within {max_head} steps")
    if lam >= 1.0:
        raise NumericalError(f"leading ratio {lam} >= 1 on the restricted block")
    amp = np.concatenate([u @ PcS, [float(u @ into_tail)]])
    law = JointHitLaw(locations=locations, head=head, cont_amp=amp,
                      cont_ratio=lam, unaccounted=unaccounted)
    # everything the head+continuation misses (subdominant modes, float) is
    # charged to the certified slack
    law.unaccounted += abs(1.0 - law.mass() - law.unaccounted)
    return law


def product_law(model: str, S: RareSet, K: int | None = None,
                head_len: int = 32) -> JointHitLaw:
    """The reference law: restricted stationary location x geometric(pi(S)) time."""
    _check_model(model)
    if K is None:
        K = chains.DEFAULT_K
    piS = S.pi(model)
    if not 0.0 < piS < 1.0:
        raise ValueError(f"pi(S) = {piS} outside (0,1)")
    states = S.member_states(K)
    pi_states = np.array([chains.stationary(model, int(s)) for s in states])
    tail_mass = piS - pi_states.sum()
    loc = np.concatenate([pi_states, [max(tail_mass, 0.0)]]) / piS
    q = 1.0 - piS
    taus = np.arange(1, head_len + 1)
    tpmf = piS * q ** (taus - 1)
    head = tpmf[:, None] * loc[None, :]
    amp = piS * q**head_len * loc
    return JointHitLaw(locations=np.concatenate([states, [LOC_TAIL]]),
                       head=head, cont_amp=amp, cont_ratio=q, unaccounted=0.0)


def _geom_abs_sum(a: float, p: float, b: float, q: float) -> float:
    """sum_{t >= 0} |a p^t - b q^t| for a,b >= 0 and 0 <= p,q < 1."""
    if a == 0.0 and b == 0.0:
        return 0.0
    if a == 0.0:
        return b / (1.0 - q)
    if b == 0.0:
        return a / (1.0 - p)
    if p == 0.0 or q == 0.0 or abs(math.log(p / q)) < 1e-14:
        if abs(p - q) < 1e-14:
            return abs(a - b) / (1.0 - p)
        # one of them is a point mass at t = 0
        if p == 0.0:
            return abs(a - b) + b * q / (1.0 - q)
        return abs(a - b) + a * p / (1.0 - p)
    tstar = math.log(b / a) / math.log(p / q)
    tc = max(int(math.ceil(tstar)), 0)
    if tc <= 0:
        return abs(a / (1.0 - p) - b / (1.0 - q))
    s1 = a * (1.0 - p**tc) / (1.0 - p) - b * (1.0 - q**tc) / (1.0 - q)
    s2 = a * p**tc / (1.0 - p) - b * q**tc / (1.0 - q)
    return abs(s1) + abs(s2)


def tv(law_a: JointHitLaw, law_b: JointHitLaw) -> float:
    """Total variation between two joint hit laws (conservative upper bound).

    Half the L1 difference over the common table plus, in full, both laws'
    unaccounted masses.
    """
    if law_a.locations.shape != law_b.locations.shape or \
            (law_a.locations != law_b.locations).any():
        raise ValueError("laws live on different location grids")
    T = max(law_a.head_len, law_b.head_len)
    ra = law_a.rows_until(T)
    rb = law_b.rows_until(T)
    total = float(np.abs(ra - rb).sum())
    amp_a, p = law_a.tail_after(T)
    amp_b, q = law_b.tail_after(T)
    for s in range(amp_a.size):
        total += _geom_abs_sum(float(amp_a[s]), p, float(amp_b[s]), q)
    return 0.5 * total + 0.5 * (law_a.unaccounted + law_b.unaccounted)


# ---------------------------------------------------------------------------
# simulation of hit sequences
# ---------------------------------------------------------------------------

def simulate_hits(model: str, init, S: RareSet, count: int,
                  seed: int = 0, replica: int = 0,
                  step_budget: int = 1_000_000_000):
    """(locations, inter-hit times) of the first `count` visits to S
    along one simulated path.

    Draws from stream (seed, replica); one uniform per step.  Raises
    ResourceLimitError beyond `step_budget` steps.
    """
    from .compositions import ResourceLimitError
    _check_model(model)
    g = stream(seed, replica)
    state = chains.draw_initial(model, init, g)
    cdf, lim, imax = chains.cdf_tables(model)
    locs = np.empty(count, dtype=np.int64)
    times = np.empty(count, dtype=np.int64)
    got = 0
    elapsed = 0
    hi = float(S.b)
    steps = 0
    piS = S.pi(model)
    block = int(min(max(4096, 4 * count / max(piS, 1e-9)), 8_000_000))
    while got < count:
        u = g.random(block)
        got, state, elapsed = _speed.collect_hits(
            cdf, lim, imax, state, u, float(S.a), hi, locs, times, got, elapsed)
        steps += block
        if steps > step_budget:
            raise ResourceLimitError(
                f"simulate_hits exceeded the {step_budget}-step budget")
    return locs, times


# ---------------------------------------------------------------------------
# Poisson extreme-value formulas
# ---------------------------------------------------------------------------

def poisson_extreme_cdf(N: int, piS: float, mu: int) -> float:
    """P{X^(mu) <= n} ~ P{Poisson(N pi(S_n)) < mu}."""
    if mu < 1:
        raise ValueError("mu >= 1")
    if not 0.0 <= piS < 1.0:
        raise ValueError("piS in [0,1) required")
    return float(stats.poisson.cdf(mu - 1, N * piS))


def band_visits_joint(model: str, N: int, bands, caps) -> float:
    """prod_l P{Poisson(N pi((a_l, b_l])) <= mu_l} over disjoint bands."""
    bands = [(int(a), int(b)) for a, b in bands]
    for (a1, b1) in bands:
        if a1 > b1:
            raise ValueError("band needs a <= b")
    for x, y in zip(sorted(bands), sorted(bands)[1:]):
        if y[0] < x[1]:
            raise ValueError(f"bands {x} and {y} overlap")
    out = 1.0
    for (a, b), cap in zip(bands, caps):
        lam = N * (chains.stationary_tail(model, a)
                   - chains.stationary_tail(model, b))
        out *= float(stats.poisson.cdf(cap, lam))
    return out


def threshold_rates(model: str, N: int, thresholds) -> list:
    """lambda_r = N pi((n_r, n_{r-1}]) for nonincreasing thresholds, n_0 = inf."""
    ns = list(thresholds)
    if any(x < y for x, y in zip(ns, ns[1:])):
        raise ValueError("thresholds must be nonincreasing")
    lams = []
    prev_tail = 0.0
    for n in ns:
        tail = chains.stationary_tail(model, n)
        lams.append(N * (tail - prev_tail))
        prev_tail = tail
    return lams


def order_stats_pmf(lambdas, mu: int) -> float:
    """P{X^(r) <= n_r for all r <= mu} from the band rates.

    Dynamic program over the cumulative band counts: feasible states after
    band r are cumulative sums c <= r - 1; each step convolves with a
    Poisson(lambda_r) count.
    """
    lambdas = list(lambdas)
    if len(lambdas) < mu:
        raise ValueError("need one rate per rank")
    dp = {0: 1.0}
    for r in range(1, mu + 1):
        lam = lambdas[r - 1]
        pmf = stats.poisson.pmf(np.arange(0, r), lam)
        nxt = {}
        for c, prob in dp.items():
            for v in range(0, r - c):
                nxt[c + v] = nxt.get(c + v, 0.0) + prob * float(pmf[v])
        dp = nxt
    return float(sum(dp.values()))


def ranked_tuple_prob(model: str, N: int, values, multiplicities,
                      reading: str = "point") -> float:
    """P{(X^(1),...,X^(mu)) has distinct values y_r with multiplicities a_r}.

    The "point" reading multiplies e^{-N pi([y_r, y_{r-1}))} by
    (N pi(y_r))^{a_r}/a_r! (exactly a_r Poisson points on each value, none in
    the gaps); "interval" puts the interval mass in the power as well.  The
    point reading is the self-consistent one (sums to ~1 over all tuples and
    matches simulation); both are exposed.
    """
    ys = list(values)
    if any(x <= y for x, y in zip(ys, ys[1:])):
        raise ValueError("values must be strictly decreasing")
    out = 1.0
    prev = math.inf
    for y, mult in zip(ys, multiplicities):
        # pi([y, prev)) = pi(S_{y-1}) - pi(S_{prev-1})
        gap = chains.stationary_tail(model, y - 1)
        if not math.isinf(prev):
            gap -= chains.stationary_tail(model, prev - 1)
        point = (chains.stationary_tail(model, y - 1)
                 - chains.stationary_tail(model, y))
        lam_pow = N * (gap if reading == "interval" else point)
        out *= math.exp(-N * gap) * lam_pow**mult / math.factorial(mult)
        prev = y
    return out
