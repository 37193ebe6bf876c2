"""The two approximating Markov kernels, their laws and diagnostics.

cca:      p(i,k) = z*^k (i+k-1)(k+a)/(i+a)
carlitz:  p(i,k) = z*^k (1+z*^i)/(1+z*^k) for i != k, 0 on the diagonal

with stationary laws pi(k) ~ z*^k (k+a)^2 resp. z*^k/(1+z*^k)^2 and first-part
laws pi_1(k) = z*^k (k+a) resp. z*^k/(1+z*^k).  Both kernels are tight (row
tails vanish uniformly, geometrically) and mixing (all row pairs overlap);
the diagnostics quantify both.  As i grows, row i converges to pi_1, which
serves as the limiting row for states beyond any truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _speed
from .rng import stream
from .series import _check_model, constants

DEFAULT_K = 200


# ---------------------------------------------------------------------------
# geometric moment tails: sum_{k>K} k^m z^k, m = 0,1,2, in closed form
# ---------------------------------------------------------------------------

def _geom_tails(z: float, K: int):
    q = z ** (K + 1)
    s0 = q / (1 - z)
    s1 = q * (z / (1 - z) ** 2 + (K + 1) / (1 - z))
    s2 = q * (z * (1 + z) / (1 - z) ** 3 + 2 * (K + 1) * z / (1 - z) ** 2
              + (K + 1) ** 2 / (1 - z))
    return s0, s1, s2


# ---------------------------------------------------------------------------
# kernel entries and laws
# ---------------------------------------------------------------------------

def transition(model: str, i: int, k: int) -> float:
    """One kernel entry p(i, k)."""
    _check_model(model)
    if i < 1 or k < 1:
        raise ValueError("states are positive integers")
    c = constants(model)
    z = c.z_star
    if model == "cca":
        return z**k * (i + k - 1) * (k + c.a) / (i + c.a)
    if i == k:
        return 0.0
    return z**k * (1 + z**i) / (1 + z**k)


def transition_row(model: str, i: int, kmax: int) -> np.ndarray:
    """p(i, 1..kmax) as a vector (index 0 unused)."""
    c = constants(model)
    z = c.z_star
    k = np.arange(kmax + 1, dtype=float)
    zk = z ** k
    if model == "cca":
        row = zk * (i + k - 1) * (k + c.a) / (i + c.a)
    else:
        row = zk * (1 + z**i) / (1 + zk)
        if i <= kmax:
            row[i] = 0.0
    row[0] = 0.0
    return row


def limit_row(model: str, kmax: int) -> np.ndarray:
    """The i -> infinity limit of the rows; equals the first-part law pi_1."""
    return initial_vector(model, kmax)


def stationary(model: str, k: int) -> float:
    """Stationary mass pi(k)."""
    c = constants(model)
    z = c.z_star
    if model == "cca":
        return z**k * (k + c.a) ** 2 / c.A
    return z**k / ((1 + z**k) ** 2 * c.A)


def initial(model: str, k: int) -> float:
    """First/last-part mass pi_1(k)."""
    c = constants(model)
    z = c.z_star
    if model == "cca":
        return z**k * (k + c.a)
    return z**k / (1 + z**k)


def stationary_vector(model: str, kmax: int) -> np.ndarray:
    c = constants(model)
    z = c.z_star
    k = np.arange(kmax + 1, dtype=float)
    zk = z ** k
    if model == "cca":
        v = zk * (k + c.a) ** 2 / c.A
    else:
        v = zk / ((1 + zk) ** 2 * c.A)
    v[0] = 0.0
    return v


def initial_vector(model: str, kmax: int) -> np.ndarray:
    c = constants(model)
    z = c.z_star
    k = np.arange(kmax + 1, dtype=float)
    zk = z ** k
    if model == "cca":
        v = zk * (k + c.a)
    else:
        v = zk / (1 + zk)
    v[0] = 0.0
    return v


def stationary_tail(model: str, n: int) -> float:
    """pi(S_n) = sum_{k>n} pi(k), exactly for cca, certified for carlitz."""
    c = constants(model)
    z = c.z_star
    if n < 0:
        n = 0
    if model == "cca":
        s0, s1, s2 = _geom_tails(z, n)
        return (s2 + 2 * c.a * s1 + c.a * c.a * s0) / c.A
    # 1/(1+x)^2 within [1-2x, 1]; iterate far enough that the bracket closes
    acc = 0.0
    k = n + 1
    zk = z ** k
    while True:
        term = zk / (1 + zk) ** 2
        acc += term
        k += 1
        zk *= z
        if zk < 1e-18 * (acc + 1e-300):
            break
    return (acc + zk / (1 - z) * 0.5) / c.A  # midpoint of [0, tail] remainder


def initial_tail(model: str, n: int) -> float:
    """pi_1(S_n), by the same closed/certified sums."""
    c = constants(model)
    z = c.z_star
    if model == "cca":
        s0, s1, _ = _geom_tails(z, n)
        return s1 + c.a * s0
    acc = 0.0
    k = n + 1
    zk = z ** k
    while True:
        acc += zk / (1 + zk)
        k += 1
        zk *= z
        if zk < 1e-18 * (acc + 1e-300):
            break
    return acc + zk / (1 - z) * 0.5


def row_tail(model: str, i: int, n: int) -> float:
    """p(i, S_n) = sum_{k>n} p(i,k): closed form (cca), certified sum (carlitz)."""
    _check_model(model)
    c = constants(model)
    z = c.z_star
    if model == "cca":
        # (i+k-1)(k+a) = k^2 + (i-1+a) k + a(i-1)
        s0, s1, s2 = _geom_tails(z, n)
        return (s2 + (i - 1 + c.a) * s1 + c.a * (i - 1) * s0) / (i + c.a)
    acc = 0.0
    k = n + 1
    zk = z ** k
    zi = z ** i
    while True:
        if k != i:
            acc += zk / (1 + zk)
        k += 1
        zk *= z
        if zk < 1e-18 * (acc + 1e-300):
            break
    return (1 + zi) * (acc + zk / (1 - z) * 0.5)


def sup_row_tail(model: str, n: int, scan_to: int | None = None) -> float:
    """p(S_n) = sup_i p(i, S_n).

    Both kernels put their heaviest tails on the i = 1 row (the k-dependent
    factor (i+k-1)/(i+a), resp. (1+z^i), is largest there for every k > 1);
    the sup is confirmed by a scan over i <= max(4n, 64).
    """
    if scan_to is None:
        scan_to = max(4 * n, 64)
    best = 0.0
    for i in range(1, scan_to + 1):
        t = row_tail(model, i, n)
        if t > best:
            best = t
    # i -> infinity limit row
    lim = initial_tail(model, n)
    return max(best, lim)


def epsilon_n(model: str, n: int) -> float:
    """sup over i in S_n^c (i <= n) of p(i, S_n)."""
    if n < 1:
        raise ValueError("n >= 1")
    return max(row_tail(model, i, n) for i in range(1, n + 1))


# ---------------------------------------------------------------------------
# mixing diagnostics
# ---------------------------------------------------------------------------

def _row_matrix(model: str, imax: int, kmax: int) -> np.ndarray:
    """Rows p(i, 1..kmax) for i = 1..imax plus the limit row, stacked."""
    rows = np.empty((imax + 1, kmax + 1))
    for i in range(1, imax + 1):
        rows[i - 1] = transition_row(model, i, kmax)
    rows[imax] = limit_row(model, kmax)
    return rows


def mixing_diagnostics(model: str, K: int = 100):
    """(delta0, rho0): minimal row overlap and half the max L1 row distance.

    delta0 = min_{i,j} sum_k p(i,k) p(j,k) over i,j <= K plus the limiting
    row; truncation of k adds only positive mass, so the value is a slight
    underestimate (safe for the delta0 > 0 claims).  rho0 < 1 certifies
    exponential mixing.
    """
    _check_model(model)
    kmax = _kmax_for(model, 1e-13)
    rows = _row_matrix(model, K, kmax)
    overlap = rows @ rows.T
    delta0 = float(overlap.min())
    rho0 = 0.0
    for i in range(rows.shape[0]):
        diff = np.abs(rows[i + 1:] - rows[i]).sum(axis=1)
        if diff.size:
            rho0 = max(rho0, float(diff.max()))
    return delta0, 0.5 * rho0


def _kmax_for(model: str, tol: float) -> int:
    z = constants(model).z_star
    k = int(math.log(tol) / math.log(z)) + 8
    return max(k, 32)


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedChain:
    """Substochastic K x K block of the kernel with explicit row defects.

    P[i-1, k-1] = p(i,k); row_defect[i-1] = p(i, S_K) analytically, so
    row sums + defect reproduce 1 up to float error.  No renormalization:
    hitting-time systems and the restricted-eigenvalue analysis need the
    substochastic block as is.
    """
    model: str
    K: int
    P: np.ndarray
    row_defect: np.ndarray
    pi_trunc: np.ndarray
    pi_tail: float

    @property
    def states(self) -> np.ndarray:
        return np.arange(1, self.K + 1)


def truncate(model: str, K: int = DEFAULT_K) -> TruncatedChain:
    if K < 2:
        raise ValueError("K >= 2 required")
    _check_model(model)
    P = np.empty((K, K))
    defect = np.empty(K)
    for i in range(1, K + 1):
        P[i - 1] = transition_row(model, i, K)[1:]
        defect[i - 1] = row_tail(model, i, K)
    pi = stationary_vector(model, K)[1:]
    return TruncatedChain(model=model, K=K, P=P, row_defect=defect,
                          pi_trunc=pi, pi_tail=stationary_tail(model, K))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _row_cdf(row: np.ndarray) -> np.ndarray:
    """Cumulative row with the residual beyond the cutoff folded into the
    last block (mass error < 1e-14 per step)."""
    cdf = np.cumsum(row)
    cdf[-1] = 1.0
    return cdf


def cdf_tables(model: str, imax: int = 600, kmax: int | None = None):
    """(cdf, limit_cdf, imax) inputs for the numba path kernels."""
    if kmax is None:
        kmax = _kmax_for(model, 1e-15)
    cdf = np.empty((imax + 1, kmax + 1))
    cdf[0] = 0.0
    for i in range(1, imax + 1):
        cdf[i] = _row_cdf(transition_row(model, i, kmax))
    lim = _row_cdf(limit_row(model, kmax))
    return cdf, lim, imax


def step(model: str, i: int, rng) -> int:
    """One exact kernel step from state i (inverse-CDF scan).

    The scan stops once cumulative mass reaches 1 - 1e-14; the residual is
    folded into the last positive-probability block.
    """
    _check_model(model)
    u = rng.random()
    cum = 0.0
    k = 0
    while True:
        k += 1
        p = transition(model, i, k)
        cum += p
        if p > 0.0 and (cum >= u or cum >= 1.0 - 1e-14):
            return k


def draw_initial(model: str, init, rng) -> int:
    """Starting state: a fixed int, or 'initial'/'stationary' law by name."""
    if isinstance(init, (int, np.integer)):
        return int(init)
    if init == "initial":
        vec = initial_vector(model, _kmax_for(model, 1e-15))
    elif init == "stationary":
        vec = stationary_vector(model, _kmax_for(model, 1e-15))
    else:
        raise ValueError(f"unknown initial condition {init!r}")
    cdf = _row_cdf(vec)
    return max(int(np.searchsorted(cdf, rng.random())), 1)


def simulate_path(model: str, init, length: int, rng) -> np.ndarray:
    """States X(1..length) started from `init` (X(0) excluded)."""
    state = draw_initial(model, init, rng)
    out = np.empty(length, dtype=np.int64)
    for t in range(length):
        state = step(model, state, rng)
        out[t] = state
    return out


def visit_counts(model: str, init, length: int, thresholds, reps: int,
                 seed: int, jobs: int = 1) -> np.ndarray:
    """counts[r, q] = #{t <= length : X(t) > thresholds[q]} for replica r.

    Replica r consumes stream (seed, r): one uniform for X(0) when `init`
    names a law, then one per step.
    """
    thresholds = np.asarray(thresholds, dtype=np.int64)
    cdf, lim, imax = cdf_tables(model)
    out = np.zeros((reps, len(thresholds)), dtype=np.int64)

    def run(r0, r1):
        for r in range(r0, r1):
            g = stream(seed, r)
            s0 = draw_initial(model, init, g)
            u = g.random(length)
            _speed.count_threshold_visits(cdf, lim, imax, s0, u,
                                          thresholds, out[r])

    _run_chunked(run, reps, jobs)
    return out


def band_visit_counts(model: str, init, length: int, bands, reps: int,
                      seed: int, jobs: int = 1) -> np.ndarray:
    """counts[r, q] = visits of replica r to the band (lo_q, hi_q]."""
    lo = np.asarray([b[0] for b in bands], dtype=np.int64)
    hi = np.asarray([b[1] for b in bands], dtype=np.int64)
    cdf, lim, imax = cdf_tables(model)
    out = np.zeros((reps, len(bands)), dtype=np.int64)

    def run(r0, r1):
        for r in range(r0, r1):
            g = stream(seed, r)
            s0 = draw_initial(model, init, g)
            u = g.random(length)
            _speed.count_band_visits(cdf, lim, imax, s0, u, lo, hi, out[r])

    _run_chunked(run, reps, jobs)
    return out


def _run_chunked(run, reps, jobs):
    if jobs <= 1:
        run(0, reps)
        return
    from concurrent.futures import ThreadPoolExecutor
    size = (reps + jobs - 1) // jobs
    spans = [(i, min(i + size, reps)) for i in range(0, reps, size)]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        list(ex.map(lambda s: run(*s), spans))
