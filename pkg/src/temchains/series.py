"""Scalar analysis of the two composition models' generating functions.

Each model ("cca": column-convex-animal compositions, "carlitz": compositions
with distinct adjacent parts) is governed by a bivariate function h(w, z)
whose zero curve z(w) near w = 1 carries everything downstream: the growth
base z_star = z(1), the counting amplitude C, the parts-count drift alpha and
dispersion beta, and the tail constant B of the stationary law.

All counting series are exact (Python integers); analytic constants are
float64 derived from a certified bracketed root, never from literature
decimals.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MODELS = ("cca", "carlitz")

#: half-width of the w-window on which the root curve z(w) is trusted.
#: Chosen after a sign scan of h_w and h_z over z in (0, z_star + 0.1],
#: |w - 1| <= 0.15: both partials keep a fixed sign there for both models,
#: so the root is unique and simple on the window.
Z_WINDOW = 0.15

ROOT_TOL = 1e-14


def _check_model(model: str) -> str:
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    return model


# ---------------------------------------------------------------------------
# h functions and their partial derivatives
# ---------------------------------------------------------------------------

def cca_h(w, z):
    """Quartic kernel polynomial of the cca model.

    h(w,z) = z^4 (w-1) + z^3 (w^2 - w + 4) - z^2 (w+6) + z (w+4) - 1.
    Exact for exact inputs (Fraction in, Fraction out).
    """
    return (z**4 * (w - 1) + z**3 * (w * w - w + 4)
            - z * z * (w + 6) + z * (w + 4) - 1)


def cca_h_partials(w, z):
    """(h_w, h_z) of the cca kernel polynomial."""
    hw = z**4 + z**3 * (2 * w - 1) - z * z + z
    hz = 4 * z**3 * (w - 1) + 3 * z * z * (w * w - w + 4) - 2 * z * (w + 6) + (w + 4)
    return hw, hz


def cca_h_second_partials(w, z):
    """(h_ww, h_wz, h_zz) of the cca kernel polynomial."""
    hww = 2 * z**3
    hwz = 4 * z**3 + 3 * z * z * (2 * w - 1) - 2 * z + 1
    hzz = 12 * z * z * (w - 1) + 6 * z * (w * w - w + 4) - 2 * (w + 6)
    return hww, hwz, hzz


def _carlitz_terms(tol: float, w: float, z: float) -> int:
    """Number of series terms J with geometric tail w |z|^(J+1)/(1-|z|) <= tol."""
    az = abs(z)
    if az >= 1.0:
        raise ValueError(f"carlitz series needs |z| < 1, got z={z}")
    if w <= 0.0:
        raise ValueError(f"carlitz series needs w > 0, got w={w}")
    if az == 0.0:
        return 1
    budget = tol * (1.0 - az) / w
    if budget <= 0.0:
        budget = 1e-300
    j = int(math.log(budget) / math.log(az))
    return max(j + 1, 4)


def carlitz_h(w: float, z: float, tol: float = 1e-15):
    """Certified partial sum of h(w,z) = 1 - sum_{j>=1} w z^j / (1 + w z^j).

    Returns ``(value, tail_bound)`` where the dropped tail is at most
    ``tail_bound <= min(tol, 1e-16)`` in absolute value.  Requires |z| < 1
    and w > 0; rejects non-convergent input.
    """
    tol = min(tol, 1e-16)
    J = _carlitz_terms(tol, w, z)
    az = abs(z)
    acc = 0.0
    zj = 1.0
    for _ in range(J):
        zj *= z
        acc += w * zj / (1.0 + w * zj)
    tail = w * az ** (J + 1) / (1.0 - az)
    if z < 0.0:
        # denominators 1 + w z^j can dip below 1; J is large enough that
        # w |z|^(J+1) <= 1/2, so each tail term is at most twice the
        # geometric envelope.
        tail *= 2.0
    return 1.0 - acc, tail


def carlitz_h_partials(w: float, z: float, tol: float = 1e-16):
    """(h_w, h_z) of the carlitz kernel by certified series summation."""
    J = _carlitz_terms(min(tol, 1e-17), max(w, 1.0), z) + 8
    hw = 0.0
    hz = 0.0
    zj = 1.0
    for j in range(1, J + 1):
        zjm1 = zj
        zj *= z
        d = 1.0 + w * zj
        hw -= zj / (d * d)
        hz -= j * w * zjm1 / (d * d)
    return hw, hz


def h_value(model: str, w: float, z: float) -> float:
    _check_model(model)
    if model == "cca":
        return cca_h(w, z)
    return carlitz_h(w, z)[0]


def h_partials(model: str, w: float, z: float):
    _check_model(model)
    if model == "cca":
        return cca_h_partials(w, z)
    return carlitz_h_partials(w, z)


# ---------------------------------------------------------------------------
# certified root finding
# ---------------------------------------------------------------------------

def _certified(f, x):
    """Evaluate f at x, returning (value, error_bound).

    Accepts either a plain callable or one already returning a
    ``(value, bound)`` pair.
    """
    out = f(x)
    if isinstance(out, tuple):
        v, e = out
        return float(v), abs(float(e)) + 1e-15 * abs(float(v))
    v = float(out)
    return v, 5e-16 * (abs(v) + 1.0)


def find_root(f, lo: float, hi: float, tol: float = ROOT_TOL) -> float:
    """Bisection with a sign-change certificate.

    ``f`` maps a float to either a float or a ``(value, error_bound)`` pair;
    a sign is only trusted when |value| exceeds the bound.  Raises
    ``ValueError`` when no certified sign change exists on [lo, hi].
    Deterministic; returns the midpoint of the final bracket of width <= tol.
    """
    if not lo < hi:
        raise ValueError("empty bracket")
    flo, elo = _certified(f, lo)
    fhi, ehi = _certified(f, hi)
    if abs(flo) <= elo or abs(fhi) <= ehi or (flo > 0) == (fhi > 0):
        raise ValueError(
            f"no certified sign change on [{lo}, {hi}]: "
            f"f(lo)={flo}+-{elo}, f(hi)={fhi}+-{ehi}")
    slo = flo > 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm, em = _certified(f, mid)
        if abs(fm) <= em:
            # cannot certify the sign at the midpoint; the root is within
            # the evaluation noise, which is far below tol for our h's.
            break
        if (fm > 0) == slo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_BRACKET = {"cca": (1e-9, 0.5), "carlitz": (1e-9, 0.78)}


#: wider per-model windows for the large-deviation saddle, justified by the
#: same sign scan (h_z < 0 identically for carlitz; the cca quartic's
#: partials are sign-checked over the scan grid in the test suite) plus the
#: convergence constraint w z(w) < 1 for the carlitz series.
SADDLE_WINDOW = {"cca": (0.70, 1.38), "carlitz": (0.80, 1.22)}


def z_of_w(model: str, w: float, window=None) -> float:
    """Root z(w) of h(w, .) = 0 near z_star, for |w - 1| <= Z_WINDOW.

    z(1) = z_star; z(w) is strictly decreasing on the window.  ``window``
    accepts an explicit (wlo, whi) pair for callers working on the scanned
    large-deviation window.
    """
    _check_model(model)
    wlo, whi = window if window is not None else (1.0 - Z_WINDOW, 1.0 + Z_WINDOW)
    if not wlo - 1e-12 <= w <= whi + 1e-12:
        raise ValueError(
            f"w={w} outside the validity window [{wlo}, {whi}]")
    lo, hi = _BRACKET[model]
    if model == "cca":
        return find_root(lambda z: cca_h(w, z), lo, hi)
    return find_root(lambda z: carlitz_h(w, z), lo, hi)


def z_prime(model: str, w: float) -> float:
    """z'(w) = -h_w / h_z along the root curve."""
    z = z_of_w(model, w)
    hw, hz = h_partials(model, w, z)
    return -hw / hz


def z_derivatives(model: str):
    """(z'(1), z''(1)) of the root curve.

    z''(1) comes from closed-form second partials for the cca quartic and
    from Richardson-extrapolated central differences of z_of_w for carlitz.
    """
    _check_model(model)
    zs = z_star(model)
    hw, hz = h_partials(model, 1.0, zs)
    z1 = -hw / hz
    if model == "cca":
        hww, hwz, hzz = cca_h_second_partials(1.0, zs)
        z2 = -(hww + 2.0 * hwz * z1 + hzz * z1 * z1) / hz
    else:
        def second_diff(h):
            return (z_of_w(model, 1.0 + h) - 2.0 * zs + z_of_w(model, 1.0 - h)) / (h * h)
        d1 = second_diff(1e-2)
        d2 = second_diff(5e-3)
        z2 = (4.0 * d2 - d1) / 3.0
    return z1, z2


@lru_cache(maxsize=None)
def z_star(model: str) -> float:
    """Smallest positive root of h(1, .) = 0."""
    return z_of_w(model, 1.0)


# ---------------------------------------------------------------------------
# exact counting series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesExpansion:
    """Truncated power series with exact integer coefficients.

    ``coefficients[n]`` is the degree-n coefficient, n = 0..order.
    """
    model: str
    order: int
    coefficients: tuple

    def __post_init__(self):
        assert len(self.coefficients) == self.order + 1

    def coefficient(self, n: int) -> int:
        return self.coefficients[n]


def carlitz_h_int_coeffs(nu_max: int):
    """Integer z-coefficients of the carlitz h(1, z) up to degree nu_max.

    h(1,z) = 1 - sum_n z^n * sum_{d | n} (-1)^(n/d - 1).
    """
    c = [0] * (nu_max + 1)
    c[0] = 1
    for j in range(1, nu_max + 1):
        sign = 1
        for n in range(j, nu_max + 1, j):
            c[n] -= sign
            sign = -sign
    return c


@lru_cache(maxsize=None)
def counting_series(model: str, nu_max: int) -> SeriesExpansion:
    """Exact counts T(1..nu_max): weighted cca compositions, or carlitz ones.

    cca: T is the coefficient sequence of z(z-1)^3 / h(1,z), which satisfies
    T(n) = 5 T(n-1) - 7 T(n-2) + 4 T(n-3) once past the numerator.  (The
    numerator carries the factor z: compositions have total >= 1, so the
    degree-0 coefficient vanishes; the z-free variant of the same rational
    function fails the enumeration oracle by a one-index shift.)

    carlitz: exact series inversion of h(1, z).
    """
    _check_model(model)
    if nu_max < 1:
        raise ValueError("nu_max >= 1 required")
    if model == "cca":
        # (1 - 5z + 7z^2 - 4z^3) * sum T(n) z^n = z - 3z^2 + 3z^3 - z^4
        rhs = {1: 1, 2: -3, 3: 3, 4: -1}
        t = [0] * (nu_max + 1)
        for n in range(1, nu_max + 1):
            v = rhs.get(n, 0)
            if n >= 1:
                v += 5 * t[n - 1]
            if n >= 2:
                v -= 7 * t[n - 2]
            if n >= 3:
                v += 4 * t[n - 3]
            t[n] = v
    else:
        h = carlitz_h_int_coeffs(nu_max)
        g = [0] * (nu_max + 1)
        g[0] = 1
        for n in range(1, nu_max + 1):
            g[n] = -sum(h[k] * g[n - k] for k in range(1, n + 1))
        t = [0] + g[1:]
    return SeriesExpansion(model=model, order=nu_max, coefficients=tuple(t))


# ---------------------------------------------------------------------------
# model constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConstants:
    """Singularity-derived scalars of a composition model.

    z_star : growth base, the smallest positive zero of h(1, .)
    a      : first/last-part shift of the cca laws (None for carlitz)
    A      : stationary-law normalizer
    alpha  : parts-count drift, -z'(1)/z_star
    beta   : parts-count dispersion, alpha^2 + alpha - z''(1)/z_star
    B      : upper-tail amplitude of the stationary law
    C      : counting amplitude, T(nu) ~ C z_star^(-nu)
    gamma  : ratio z_star/|z_2| to the next-smallest-modulus zero;
             diagnostic only (sets error-decay expectations in tests)
    """
    model: str
    z_star: float
    a: float | None
    A: float
    alpha: float
    beta: float
    B: float
    C: float
    gamma: float


def _cca_secondary_modulus() -> float:
    roots = np.roots([4.0, -7.0, 5.0, -1.0])
    zs = z_star("cca")
    others = [abs(r) for r in roots if abs(r - zs) > 1e-6]
    return min(others)


def _carlitz_h_complex(z: complex, J: int = 400) -> complex:
    acc = 0.0 + 0.0j
    zj = 1.0 + 0.0j
    for _ in range(J):
        zj *= z
        acc += zj / (1.0 + zj)
    return 1.0 - acc


def _carlitz_hz_complex(z: complex, J: int = 400) -> complex:
    acc = 0.0 + 0.0j
    zjm1 = 1.0 + 0.0j
    for j in range(1, J + 1):
        zj = zjm1 * z
        d = 1.0 + zj
        acc += j * zjm1 / (d * d)
        zjm1 = zj
    return -acc


def _carlitz_secondary_modulus() -> float:
    """Modulus of the next-smallest zero of the continued carlitz h(1, .).

    Candidate zeros come from the companion roots of a degree-160 truncation
    of the integer series; each candidate inside |z| <= 0.95 is polished by
    complex Newton on the actual series.  Diagnostic quantity.
    """
    coeffs = carlitz_h_int_coeffs(160)
    roots = np.roots(np.array(coeffs[::-1], dtype=float))
    zs = z_star("carlitz")
    candidates = [complex(r) for r in roots
                  if abs(r) < 0.95 and abs(r - zs) > 1e-4]
    moduli = []
    for z in candidates:
        for _ in range(60):
            step = _carlitz_h_complex(z) / _carlitz_hz_complex(z)
            z = z - step
            if abs(step) < 1e-14:
                break
        if abs(_carlitz_h_complex(z)) < 1e-10 and abs(z - zs) > 1e-4 and abs(z) < 1:
            moduli.append(abs(z))
    if not moduli:
        raise RuntimeError("no secondary zero located for carlitz h")
    return min(moduli)


@lru_cache(maxsize=None)
def derive_constants(model: str) -> ModelConstants:
    """Resolve every ModelConstants field from the certified root."""
    _check_model(model)
    zs = z_star(model)
    z1, z2 = z_derivatives(model)
    alpha = -z1 / zs
    beta = alpha * alpha + alpha - z2 / zs
    if beta <= 0:
        raise RuntimeError(f"beta must be positive, got {beta} for {model}")
    if model == "cca":
        a1 = (1 - zs) / zs - 1 / (1 - zs)
        a2 = 2 * zs * zs / ((1 - 2 * zs) * (1 - zs))
        a3 = (zs**3 - zs**2 + zs) / (1 - zs) ** 3
        if max(abs(a1 - a2), abs(a1 - a3)) > 1e-10:
            raise RuntimeError(f"cca shift-constant forms disagree: {a1} {a2} {a3}")
        a = a1
        A = zs * zs / (1 - zs) ** 3 + (1 - zs) / zs
        B = zs * zs * (1 - zs) ** 2 / (zs**3 + (1 - zs) ** 4)
        _, hz = cca_h_partials(1.0, zs)
        C = (1 - zs) ** 3 / hz
        gamma = zs / _cca_secondary_modulus()
    else:
        a = None
        hw, hz = carlitz_h_partials(1.0, zs)
        A = -hw  # sum z^k / (1+z^k)^2
        B = zs / ((1 - zs) * A)
        C = -1.0 / (zs * hz)
        gamma = zs / _carlitz_secondary_modulus()
    const = ModelConstants(model=model, z_star=zs, a=a, A=A, alpha=alpha,
                           beta=beta, B=B, C=C, gamma=gamma)
    _crosscheck_amplitude(const)
    return const


def _crosscheck_amplitude(const: ModelConstants, nu: int = 64) -> None:
    t = counting_series(const.model, nu).coefficient(nu)
    approx = float(t) * const.z_star ** nu
    if abs(approx - const.C) > 1e-6 * const.C:
        raise RuntimeError(
            f"counting amplitude cross-check failed for {const.model}: "
            f"T({nu}) z*^{nu} = {approx} vs C = {const.C}")


def constants(model: str) -> ModelConstants:
    """Cached ModelConstants for a model tag."""
    return derive_constants(model)


# ---------------------------------------------------------------------------
# high-precision amplitude diagnostics
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _mp_star(model: str):
    """(z_star, C) at 50 significant digits, for convergence diagnostics.

    The cca error |T(nu) z*^nu - C| sits near 1e-15 already at nu = 30, so
    float64 cannot resolve its further decay; mpmath can.
    """
    import mpmath as mp
    with mp.workdps(50):
        if model == "cca":
            zs = mp.findroot(lambda z: 4 * z**3 - 7 * z**2 + 5 * z - 1,
                             mp.mpf("0.312"))
            C = (1 - zs) ** 3 / (12 * zs**2 - 14 * zs + 5)
        else:
            def h(z):
                return 1 - mp.fsum(z**j / (1 + z**j) for j in range(1, 260))
            zs = mp.findroot(h, mp.mpf("0.571"))
            hz = -mp.fsum(j * zs ** (j - 1) / (1 + zs**j) ** 2
                          for j in range(1, 260))
            C = -1 / (zs * hz)
        return zs, C


def amplitude_error(model: str, nu: int) -> float:
    """|T(nu) z_star^nu - C| evaluated in 50-digit arithmetic."""
    import mpmath as mp
    t = counting_series(model, nu).coefficient(nu)
    zs, C = _mp_star(model)
    with mp.workdps(50):
        return float(abs(t * zs**nu - C))
