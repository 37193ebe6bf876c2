"""Exact counting, enumeration, sampling and prefix laws of the compositions.

The workhorse is the completion count G(s, j): the total weight of ways to
finish a composition when s units remain and the previous part was j, with
pair weight w(j,k) = j+k-1 (cca: the number of vertical offsets of adjacent
columns) or 1{j != k} (carlitz).  Both kernels collapse to O(nu) state:

    cca:      G(s,j) = (j-1) H0(s) + H1(s),      H0/H1 plain moment sums
    carlitz:  G(s,j) = sum_t (-1)^t H(s - t*j),  H(s) = total count of s

Exact mode keeps big integers; float mode keeps G(s,j) z*^s, which stays
O(1) for all s, so nu in the tens of thousands costs O(nu) memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import chains, series
from . import _speed
from .rng import stream
from .series import _check_model, counting_series

MAX_ENUM_NU = 20
MAX_EXACT_NU = 300


class ResourceLimitError(RuntimeError):
    """A guard range was exceeded; pass a higher limit to override."""


@dataclass(frozen=True)
class Composition:
    """A composition of nu: positive parts summing to nu."""
    parts: tuple
    nu: int

    @classmethod
    def of(cls, parts) -> "Composition":
        parts = tuple(int(p) for p in parts)
        if not parts or any(p < 1 for p in parts):
            raise ValueError("parts must be a nonempty sequence of positive integers")
        return cls(parts=parts, nu=sum(parts))

    def valid_for(self, model: str) -> bool:
        if model == "carlitz":
            return all(a != b for a, b in zip(self.parts, self.parts[1:]))
        return True


def transfer_weight(model: str, j: int, k: int) -> int:
    """Multiplicity w(j, k) of part k following part j."""
    if model == "cca":
        return j + k - 1
    return 0 if j == k else 1


def composition_weight(model: str, parts) -> int:
    """Product of transfer weights along a composition (1 for a single part)."""
    w = 1
    for j, k in zip(parts, parts[1:]):
        w *= transfer_weight(model, j, k)
    return w


# ---------------------------------------------------------------------------
# completion tables
# ---------------------------------------------------------------------------

class CompletionTable:
    """Completion counts G(s, j) for one (model, nu), exact or float-scaled.

    mode "exact": big-integer arithmetic, guarded at nu <= max_exact.
    mode "float": entries G(s,j) z*^s as float64 with a tracked relative
    error bound (<= 1e-9 enforced at build).
    """

    def __init__(self, model, nu, mode, data):
        self.model = model
        self.nu = nu
        self.mode = mode
        self._d = data
        if mode == "float":
            kcap = data["kcap"]
            self.rel_err_bound = (kcap + 2) * 2.3e-16 * max(nu, 1)
        else:
            self.rel_err_bound = 0.0

    # -- exact interface ----------------------------------------------------
    def completions(self, s: int, j: int) -> int:
        """G(s, j) as an exact integer (exact mode only)."""
        if self.mode != "exact":
            raise ValueError("exact completions need an exact-mode table")
        self._check_sj(s, j)
        if s == 0:
            return 1
        if self.model == "cca":
            return (j - 1) * self._d["h0"][s] + self._d["h1"][s]
        h = self._d["h"]
        acc = 0
        sign = 1
        r = s
        while r >= 0:
            acc += sign * h[r]
            sign = -sign
            r -= j
        return acc

    def total(self) -> int:
        """T(nu): total weighted count (exact mode only)."""
        if self.mode != "exact":
            raise ValueError("exact total needs an exact-mode table; see log_total")
        if self.model == "cca":
            return self._d["h0"][self.nu]
        return self._d["h"][self.nu]

    # -- scaled interface ---------------------------------------------------
    def completions_scaled(self, s: int, j: int) -> float:
        """G(s, j) * z_star^s (well-scaled in both modes)."""
        self._check_sj(s, j)
        if self.mode == "exact":
            z = series.z_star(self.model)
            g = self.completions(s, j)
            return _big_to_float_scaled(g, z, s)
        if s == 0:
            return 1.0
        if self.model == "cca":
            return (j - 1) * self._d["h0"][s] + self._d["h1"][s]
        hs = self._d["h"]
        zj = series.z_star(self.model) ** j
        acc = 0.0
        sign = 1.0
        fac = 1.0
        r = s
        while r >= 0:
            acc += sign * fac * hs[r]
            if fac < 1e-19:
                break
            sign = -sign
            fac *= zj
            r -= j
        return acc

    def log_total(self) -> float:
        """ln T(nu), available in both modes."""
        z = series.z_star(self.model)
        if self.mode == "exact":
            return _ln_big(self.total())
        top = self._d["h0"][self.nu] if self.model == "cca" else self._d["h"][self.nu]
        return math.log(top) - self.nu * math.log(z)

    def _check_sj(self, s, j):
        if not (0 <= s <= self.nu):
            raise ValueError(f"remaining sum {s} outside [0, {self.nu}]")
        if j < 1:
            raise ValueError("previous part must be >= 1")


def _ln_big(n: int) -> float:
    if n <= 0:
        raise ValueError("positive integer required")
    shift = max(n.bit_length() - 53, 0)
    return math.log(n >> shift) + shift * math.log(2.0)


def _big_to_float_scaled(g: int, z: float, s: int) -> float:
    if g == 0:
        return 0.0
    return math.exp(_ln_big(g) + s * math.log(z))


@lru_cache(maxsize=8)
def build_table(model: str, nu: int, mode: str = "auto",
                max_exact: int = MAX_EXACT_NU) -> CompletionTable:
    """Build the completion table for (model, nu).

    mode "auto" selects exact up to ``max_exact`` and float beyond.
    """
    _check_model(model)
    if nu < 1:
        raise ValueError("nu >= 1 required")
    if mode == "auto":
        mode = "exact" if nu <= max_exact else "float"
    if mode == "exact":
        if nu > max_exact:
            raise ResourceLimitError(
                f"exact table at nu={nu} exceeds the cap {max_exact}; "
                "use float mode or raise max_exact")
        if model == "carlitz":
            t = counting_series(model, nu).coefficients
            h = [1] + list(t[1:])
            data = {"h": h}
        else:
            h0 = [0] * (nu + 1)
            h1 = [0] * (nu + 1)
            for s in range(1, nu + 1):
                a0 = 0
                a1 = 0
                for k in range(1, s + 1):
                    r = s - k
                    g = 1 if r == 0 else (k - 1) * h0[r] + h1[r]
                    a0 += g
                    a1 += k * g
                h0[s] = a0
                h1[s] = a1
            data = {"h0": h0, "h1": h1}
        return CompletionTable(model, nu, "exact", data)
    if mode != "float":
        raise ValueError(f"unknown mode {mode!r}")
    z = series.z_star(model)
    kcap = _speed.KCAP[model]
    if model == "cca":
        h0, h1 = _speed.build_cca_scaled(nu, z, kcap)
        data = {"h0": h0, "h1": h1, "kcap": kcap}
    else:
        hs = _speed.build_carlitz_scaled(nu, z, kcap)
        ghat = _carlitz_ghat(hs, z, min(_speed.JCAP, nu))
        data = {"h": hs, "ghat": ghat, "kcap": kcap, "jcap": min(_speed.JCAP, nu)}
    table = CompletionTable(model, nu, "float", data)
    if table.rel_err_bound > 1e-9:
        raise ResourceLimitError(
            f"float table at nu={nu}: tracked error bound "
            f"{table.rel_err_bound:.2e} above 1e-9")
    return table


def _carlitz_ghat(hs: np.ndarray, z: float, jcap: int) -> np.ndarray:
    """ghat[s, j] = G(s, j) z^s for j <= jcap, by vectorized alternating shifts."""
    nu = hs.shape[0] - 1
    ghat = np.zeros((nu + 1, jcap + 1))
    for j in range(1, jcap + 1):
        sign = 1.0
        fac = 1.0
        shift = 0
        while shift <= nu:
            ghat[shift:, j] += sign * fac * hs[: nu + 1 - shift]
            if fac < 1e-19:
                break
            sign = -sign
            fac *= z ** j
            shift += j
    return ghat


# ---------------------------------------------------------------------------
# enumeration and by-parts counts
# ---------------------------------------------------------------------------

def enumerate_compositions(model: str, nu: int, max_nu: int = MAX_ENUM_NU):
    """Yield every (Composition, weight) of nu, each exactly once.

    The weight is the product of transfer weights (cca multiplicity, or 1
    for carlitz); invalid carlitz compositions are not produced.
    """
    _check_model(model)
    if nu > max_nu:
        raise ResourceLimitError(
            f"enumeration at nu={nu} exceeds the cap {max_nu} "
            f"(2^(nu-1) compositions)")
    if nu < 1:
        raise ValueError("nu >= 1 required")
    parts: list = []

    def rec(remaining, prev, weight):
        for k in range(1, remaining + 1):
            w = weight if prev == 0 else weight * transfer_weight(model, prev, k)
            if w == 0:
                continue
            parts.append(k)
            if remaining == k:
                yield Composition(parts=tuple(parts), nu=nu), w
            else:
                yield from rec(remaining - k, k, w)
            parts.pop()

    yield from rec(nu, 0, 1)


def count_by_parts(model: str, nu: int):
    """Exact counts T(nu, mu) indexed by mu = 0..nu.

    These are the bivariate series coefficients: animals with mu columns for
    cca, carlitz compositions with mu parts.  sum_mu T(nu,mu) = T(nu).
    """
    _check_model(model)
    if nu < 1:
        raise ValueError("nu >= 1 required")
    if model == "cca":
        return _cca_count_by_parts(nu)
    return _carlitz_count_by_parts(nu)


def _cca_count_by_parts(nu: int):
    """Coefficient recurrence of w z (z-1)^3 / h(w, z) in z, coefficients in w."""
    rhs = {1: -1, 2: 3, 3: -3, 4: 1}  # of w^1
    fs = [[0]]  # fs[n] = w-coefficient list of [z^n]
    for n in range(1, nu + 1):
        out = [0] * (n + 1)

        def add(coeffs, shift, factor):
            for i, c in enumerate(coeffs):
                if c:
                    out[i + shift] += factor * c

        if n >= 1:
            add(fs[n - 1], 1, 1)   # w * F_{n-1}
            add(fs[n - 1], 0, 4)
        if n >= 2:
            add(fs[n - 2], 1, -1)
            add(fs[n - 2], 0, -6)
        if n >= 3:
            add(fs[n - 3], 2, 1)   # w^2
            add(fs[n - 3], 1, -1)
            add(fs[n - 3], 0, 4)
        if n >= 4:
            add(fs[n - 4], 1, 1)
            add(fs[n - 4], 0, -1)
        if n in rhs:
            out[1] -= rhs[n]
        fs.append(out)
    last = fs[nu]
    return tuple(last[m] if m < len(last) else 0 for m in range(nu + 1))


def _carlitz_count_by_parts(nu: int):
    """Series inversion of h(w, z) with the w-polynomials Kronecker-packed.

    Each z-coefficient (a polynomial in w with nonnegative count
    coefficients) lives in one big integer, base 2^bits; the sparse
    divisor-sum factors of h shift-and-add in C speed.
    """
    bits = int(0.81 * nu) + 64
    mask = (1 << bits) - 1
    # -h_k(w) = sum over divisors m of k of (-1)^(m-1) w^m
    hneg = []
    for k in range(1, nu + 1):
        terms = []
        for m in range(1, k + 1):
            if k % m == 0:
                terms.append((m, 1 if (m % 2 == 1) else -1))
        hneg.append(terms)
    g = [0] * (nu + 1)
    g[0] = 1
    for n in range(1, nu + 1):
        acc = 0
        for k in range(1, n + 1):
            gn = g[n - k]
            if gn == 0:
                continue
            for m, sgn in hneg[k - 1]:
                if sgn > 0:
                    acc += gn << (m * bits)
                else:
                    acc -= gn << (m * bits)
        g[n] = acc
    coeffs = []
    val = g[nu]
    for _ in range(nu + 1):
        coeffs.append(val & mask)
        val >>= bits
    return tuple(coeffs)


@dataclass(frozen=True)
class PartsStats:
    """Exact distribution of the number of parts at a given nu."""
    model: str
    nu: int
    counts: tuple
    pmf: tuple        # Fractions, summing to exactly 1
    mean: Fraction
    variance: Fraction


def parts_count_stats(model: str, nu: int) -> PartsStats:
    counts = count_by_parts(model, nu)
    total = sum(counts)
    pmf = tuple(Fraction(c, total) for c in counts)
    mean = sum((Fraction(m * c, total) for m, c in enumerate(counts)), Fraction(0))
    second = sum((Fraction(m * m * c, total) for m, c in enumerate(counts)), Fraction(0))
    return PartsStats(model=model, nu=nu, counts=counts, pmf=pmf,
                      mean=mean, variance=second - mean * mean)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample(model: str, nu: int, table: CompletionTable | None = None,
           rng=None) -> Composition:
    """Draw one composition with P(c) = weight(c) / T(nu).

    Sequential conditional sampling: the first part k has probability
    G(nu-k, k)/T(nu), each next part k given (previous j, remaining s) has
    probability w(j,k) G(s-k,k)/G(s,j).  One uniform per part.
    """
    _check_model(model)
    if table is None:
        table = build_table(model, nu)
    if table.model != model or table.nu != nu:
        raise ValueError("table does not match (model, nu)")
    if rng is None:
        rng = stream(0, 0)
    z = series.z_star(model)
    parts = []
    s, j = nu, 0
    while s > 0:
        total = _row_total_scaled(table, s, j)
        target = rng.random() * total
        cum = 0.0
        chosen = 0
        for k in range(1, s + 1):
            w = 1.0 if j == 0 else float(transfer_weight(model, j, k))
            if w == 0.0:
                continue
            cum += w * (z ** k) * table.completions_scaled(s - k, k)
            chosen = k
            if cum >= target:
                break
        parts.append(chosen)
        s -= chosen
        j = chosen
    return Composition(parts=tuple(parts), nu=nu)


def _row_total_scaled(table: CompletionTable, s: int, j: int) -> float:
    if j == 0:
        if table.model == "cca":
            if table.mode == "exact":
                return _big_to_float_scaled(table._d["h0"][s],
                                            series.z_star("cca"), s)
            return table._d["h0"][s]
        if table.mode == "exact":
            return _big_to_float_scaled(table._d["h"][s],
                                        series.z_star("carlitz"), s)
        return table._d["h"][s]
    return table.completions_scaled(s, j)


def sample_batch(model: str, nu: int, reps: int, seed: int,
                 mu_max: int = 0, table: CompletionTable | None = None,
                 per_rep_streams: bool = True, jobs: int = 1):
    """Draw `reps` compositions fast; returns (counts, tops).

    counts[r] is the number of parts of replica r; tops[r] its mu_max
    largest parts in decreasing order.  Replica r draws its uniforms from
    stream (seed, r); with per_rep_streams=False a single stream (seed, 0)
    feeds all replicas row-wise (cheaper for huge reps at tiny nu).
    """
    _check_model(model)
    if table is None:
        table = build_table(model, nu, mode="float" if nu > MAX_EXACT_NU else "auto")
    if table.mode != "float":
        table = build_table(model, nu, mode="float")
    counts = np.zeros(reps, dtype=np.int64)
    tops = np.zeros((reps, mu_max), dtype=np.int64)
    if reps == 0:
        return counts, tops
    z = series.z_star(model)
    kcap = table._d["kcap"]
    zp = z ** np.arange(kcap + 1)
    parts_buf = np.empty(nu + 1, dtype=np.int64)
    maxlen = nu + 1
    if per_rep_streams:
        chunks = _chunk_ranges(reps, jobs)

        def run(chunk):
            lo, hi = chunk
            pb = np.empty(nu + 1, dtype=np.int64)
            for r in range(lo, hi):
                u = stream(seed, r).random(maxlen)
                _dispatch_one(model, table, zp, kcap, u, pb, counts, tops, r)

        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                list(ex.map(run, chunks))
        else:
            for c in chunks:
                run(c)
    else:
        u2 = stream(seed, 0).random((reps, maxlen))
        if model == "cca":
            _speed.sample_cca_batch(table._d["h0"], table._d["h1"], zp, kcap,
                                    u2, parts_buf, counts, tops)
        else:
            _speed.sample_carlitz_batch(table._d["h"], table._d["ghat"], zp,
                                        table._d["jcap"], kcap, u2, parts_buf,
                                        counts, tops)
    return counts, tops


def _dispatch_one(model, table, zp, kcap, u, parts_buf, counts, tops, r):
    if model == "cca":
        m = _speed.sample_cca(table._d["h0"], table._d["h1"], zp, kcap,
                              u, parts_buf)
    else:
        m = _speed.sample_carlitz(table._d["h"], table._d["ghat"], zp,
                                  table._d["jcap"], kcap, u, parts_buf)
    if m < 0:
        raise RuntimeError("sampler reached a zero-mass state; corrupt table")
    counts[r] = m
    k = tops.shape[1]
    if k:
        top = np.sort(parts_buf[:m])[::-1][:k]
        tops[r, :len(top)] = top


def sample_keys(model: str, nu: int, reps: int, seed: int) -> np.ndarray:
    """Batch-sample small compositions encoded as base-64 integer keys.

    Single shared stream (seed, 0); nu must be < 32 so keys fit an int64.
    """
    if nu >= 32:
        raise ValueError("keys only support nu < 32")
    table = build_table(model, nu, mode="float")
    z = series.z_star(model)
    kcap = table._d["kcap"]
    zp = z ** np.arange(kcap + 1)
    keys = np.empty(reps, dtype=np.int64)
    parts_buf = np.empty(nu + 1, dtype=np.int64)
    u2 = stream(seed, 0).random((reps, nu + 1))
    if model == "cca":
        _speed.pack_keys(u2, parts_buf, keys, table._d["h0"], table._d["h1"],
                         np.zeros(1), np.zeros((1, 1)), zp, 0, kcap, True)
    else:
        _speed.pack_keys(u2, parts_buf, keys, np.zeros(1), np.zeros(1),
                         table._d["h"], table._d["ghat"], zp,
                         table._d["jcap"], kcap, False)
    return keys


def composition_key(parts) -> int:
    key = 0
    for p in parts:
        key = key * 64 + p
    return key


def _chunk_ranges(n, jobs):
    jobs = max(1, jobs)
    size = (n + jobs - 1) // jobs
    return [(i, min(i + size, n)) for i in range(0, n, size)]


# ---------------------------------------------------------------------------
# prefix laws
# ---------------------------------------------------------------------------

def prefix_probability(model: str, nu: int, prefix,
                       table: CompletionTable | None = None,
                       strict: bool = False) -> Fraction:
    """Exact P{Y_1 = i_1, ..., Y_k = i_k} for the weighted composition law.

    Equals [prod of transfer weights] * G(nu - |prefix|, i_k) / T(nu).
    Prefixes that cannot extend to a composition of nu get probability 0
    (or a ValueError with strict=True).
    """
    _check_model(model)
    prefix = tuple(int(p) for p in prefix)
    if not prefix or any(p < 1 for p in prefix):
        raise ValueError("prefix must be nonempty with positive parts")
    total = sum(prefix)
    if total > nu:
        if strict:
            raise ValueError(f"prefix sum {total} exceeds nu={nu}")
        return Fraction(0)
    w = composition_weight(model, prefix)
    if w == 0:
        return Fraction(0)
    if table is None:
        table = build_table(model, nu, mode="exact")
    if table.mode != "exact":
        raise ValueError("prefix probabilities need an exact table")
    return Fraction(w * table.completions(nu - total, prefix[-1]), table.total())


def chain_prefix_probability(model: str, prefix) -> float:
    """P{Z(1) = i_1, ..., Z(k) = i_k} under the kernel with initial law pi_1."""
    _check_model(model)
    prefix = tuple(int(p) for p in prefix)
    if not prefix or any(p < 1 for p in prefix):
        raise ValueError("prefix must be nonempty with positive parts")
    p = chains.initial(model, prefix[0])
    for j, k in zip(prefix, prefix[1:]):
        p *= chains.transition(model, j, k)
    return p


@dataclass(frozen=True)
class PrefixComparison:
    """Exact TV and log-ratio diagnostics between the two length-k prefix laws."""
    model: str
    nu: int
    k: int
    threshold: float
    n_prefixes: int
    tv: float
    composition_mass: float
    chain_mass: float
    max_abs_log_ratio: float
    #: max |log ratio| among prefixes with nu - |prefix| >= d, for trend tests
    log_ratio_by_depth: tuple


def prefix_tv(model: str, nu: int, k: int,
              table: CompletionTable | None = None,
              max_prefixes: int = 2_000_000) -> PrefixComparison:
    """Compare composition and chain prefix laws over all length-k prefixes
    with partial sum below nu - ln^2(nu).

    TV treats the two restricted (sub-probability) laws' missing masses as a
    single extra atom each.  Also reports max |log(P_nu/P)| together with the
    same maximum restricted to prefixes of residual depth nu - |prefix| >= d.
    """
    _check_model(model)
    if k < 1:
        raise ValueError("k >= 1 required")
    threshold = nu - math.log(nu) ** 2
    if threshold < k:
        raise ValueError(f"threshold {threshold:.2f} admits no length-{k} prefix")
    if table is None:
        table = build_table(model, nu, mode="exact")
    n_est = math.comb(int(threshold), k)
    if n_est > max_prefixes:
        raise ResourceLimitError(
            f"{n_est} prefixes exceed the enumeration cap {max_prefixes}")

    abs_diff = 0.0
    comp_mass = 0.0
    chain_mass = 0.0
    max_log = 0.0
    depths = {}
    count = 0
    limit = int(threshold)

    prefix = [0] * k

    def rec(pos, remaining):
        nonlocal abs_diff, comp_mass, chain_mass, max_log, count
        lo = 1
        if pos == k - 1:
            hi = remaining
        else:
            hi = remaining - (k - 1 - pos)
        for v in range(lo, hi + 1):
            prefix[pos] = v
            if pos == k - 1:
                count += 1
                pc = float(prefix_probability(model, nu, prefix, table))
                pm = chain_prefix_probability(model, prefix)
                comp_mass += pc
                chain_mass += pm
                abs_diff += abs(pc - pm)
                if pc > 0.0 and pm > 0.0:
                    lr = abs(math.log(pc / pm))
                    depth = nu - (limit - remaining + v)
                    if lr > max_log:
                        max_log = lr
                    if lr > depths.get(depth, 0.0):
                        depths[depth] = lr
            else:
                rec(pos + 1, remaining - v)

    rec(0, limit)
    tv = 0.5 * abs_diff + 0.5 * abs(comp_mass - chain_mass)
    by_depth = tuple(sorted(depths.items()))
    return PrefixComparison(model=model, nu=nu, k=k, threshold=threshold,
                            n_prefixes=count, tv=tv,
                            composition_mass=comp_mass, chain_mass=chain_mass,
                            max_abs_log_ratio=max_log,
                            log_ratio_by_depth=by_depth)


def max_log_ratio_at_depth(cmp: PrefixComparison, min_depth: int) -> float:
    """max |log(P_nu/P)| over enumerated prefixes with nu - |prefix| >= min_depth."""
    vals = [v for d, v in cmp.log_ratio_by_depth if d >= min_depth]
    return max(vals) if vals else 0.0


# ---------------------------------------------------------------------------
# the bulk/boundary split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrefixSplit:
    """Longest prefix whose sum stays at or below nu - ln^2(nu)."""
    hat_m: int
    prefix: tuple
    threshold: float


def split_hat_m(composition) -> PrefixSplit:
    """Largest m < M with Y_1 + ... + Y_m <= nu - ln^2(nu); 0 if none.

    Always hat_m > M - ln^2(nu) - 1: each part that the threshold cuts off
    costs at least one unit of the ln^2(nu) budget.
    """
    parts = composition.parts if isinstance(composition, Composition) else tuple(composition)
    nu = sum(parts)
    threshold = nu - math.log(nu) ** 2
    acc = 0
    hat_m = 0
    for m, p in enumerate(parts[:-1], start=1):
        acc += p
        if acc <= threshold:
            hat_m = m
        else:
            break
    return PrefixSplit(hat_m=hat_m, prefix=tuple(parts[:hat_m]), threshold=threshold)
