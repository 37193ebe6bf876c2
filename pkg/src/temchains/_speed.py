"""Numba kernels for the hot loops: table builds, samplers, path simulation.

Everything here works on pre-scaled float arrays (values G(s,j) z^s, bounded
uniformly in s) so no entry ever overflows.  Conditional laws are scanned
cumulatively and cut off at relative mass 1e-14; the residual is folded into
the last scanned block.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# scan cutoffs: z^k below these k contribute < 1e-14 of any row
KCAP = {"cca": 48, "carlitz": 72}
JCAP = 64


@njit(cache=True, nogil=True)
def build_cca_scaled(nu, z, kcap):
    """Scaled completion sums (H0*z^s, H1*z^s) for the cca weights."""
    h0 = np.zeros(nu + 1)
    h1 = np.zeros(nu + 1)
    zp = np.empty(kcap + 1)
    zp[0] = 1.0
    for k in range(1, kcap + 1):
        zp[k] = zp[k - 1] * z
    for s in range(1, nu + 1):
        acc0 = 0.0
        acc1 = 0.0
        kmax = min(s, kcap)
        for k in range(1, kmax + 1):
            r = s - k
            if r == 0:
                g = 1.0
            else:
                g = (k - 1) * h0[r] + h1[r]
            t = zp[k] * g
            acc0 += t
            acc1 += k * t
        h0[s] = acc0
        h1[s] = acc1
    return h0, h1


@njit(cache=True, nogil=True)
def build_carlitz_scaled(nu, z, kcap):
    """Scaled completion totals H*z^s for the distinct-adjacent weights."""
    hs = np.zeros(nu + 1)
    hs[0] = 1.0
    zp = np.empty(kcap + 1)
    zp[0] = 1.0
    for k in range(1, kcap + 1):
        zp[k] = zp[k - 1] * z
    for s in range(1, nu + 1):
        acc = 0.0
        kmax = min(s, kcap)
        for k in range(1, kmax + 1):
            # G(s-k, k) * z^(s-k) by the alternating unroll
            g = 0.0
            sign = 1.0
            fac = 1.0
            r = s - k
            while r >= 0:
                g += sign * fac * hs[r]
                if fac < 1e-19:
                    break
                sign = -sign
                fac *= zp[k]
                r -= k
            acc += zp[k] * g
        hs[s] = acc
    return hs


@njit(cache=True, nogil=True)
def sample_cca(h0, h1, zp, kcap, u, parts):
    """Draw one weighted cca composition; returns the part count.

    Consumes u[t] for part t.  Scan over the next part k is cut at kcap
    (residual < 1e-14 of the row); the terminal k = s case is always scanned
    exactly because kmax = min(s, kcap).
    """
    nu = h0.shape[0] - 1
    s = nu
    j = 0
    t = 0
    while s > 0:
        if j == 0:
            total = h0[s]
        else:
            total = (j - 1) * h0[s] + h1[s]
        target = u[t] * total
        cum = 0.0
        chosen = 0
        kmax = min(s, kcap)
        for k in range(1, kmax + 1):
            r = s - k
            if r == 0:
                g = 1.0
            else:
                g = (k - 1) * h0[r] + h1[r]
            if j == 0:
                w = 1.0
            else:
                w = j + k - 1.0
            cum += w * zp[k] * g
            chosen = k
            if cum >= target:
                break
        parts[t] = chosen
        s -= chosen
        j = chosen
        t += 1
    return t


@njit(cache=True, nogil=True)
def sample_carlitz(hs, ghat, zp, jcap, kcap, u, parts):
    """Draw one carlitz composition; returns the part count.

    ghat[s, k] holds G(s,k) z^s for k <= jcap; for k > jcap the correction
    z^k G(s-k,k) is below 3e-16 of the total and G ~ H is used.
    """
    nu = hs.shape[0] - 1
    s = nu
    j = 0
    t = 0
    while s > 0:
        if j == 0 or j > jcap:
            total = hs[s]
        else:
            total = ghat[s, j]
        target = u[t] * total
        cum = 0.0
        chosen = 0
        kmax = min(s, kcap)
        for k in range(1, kmax + 1):
            if k == j:
                continue
            r = s - k
            if k <= jcap:
                g = ghat[r, k]
            else:
                g = hs[r]
            cum += zp[k] * g
            chosen = k
            if cum >= target:
                break
        if chosen == 0:
            return -1  # unreachable state; signals a corrupt table
        parts[t] = chosen
        s -= chosen
        j = chosen
        t += 1
    return t


@njit(cache=True, nogil=True)
def sample_cca_batch(h0, h1, zp, kcap, u2, parts_buf, counts, tops):
    for r in range(u2.shape[0]):
        m = sample_cca(h0, h1, zp, kcap, u2[r], parts_buf)
        counts[r] = m
        _fill_tops(parts_buf, m, tops, r)


@njit(cache=True, nogil=True)
def sample_carlitz_batch(hs, ghat, zp, jcap, kcap, u2, parts_buf, counts, tops):
    for r in range(u2.shape[0]):
        m = sample_carlitz(hs, ghat, zp, jcap, kcap, u2[r], parts_buf)
        counts[r] = m
        _fill_tops(parts_buf, m, tops, r)


@njit(cache=True, nogil=True)
def _fill_tops(parts, m, tops, row):
    k = tops.shape[1]
    if k == 0:
        return
    for c in range(k):
        tops[row, c] = 0
    for i in range(m):
        v = parts[i]
        if v > tops[row, k - 1]:
            pos = k - 1
            while pos > 0 and tops[row, pos - 1] < v:
                tops[row, pos] = tops[row, pos - 1]
                pos -= 1
            tops[row, pos] = v


@njit(cache=True, nogil=True)
def pack_keys(u2, parts_buf, keys, h0, h1, hs, ghat, zp, jcap, kcap, is_cca):
    """Sample a batch of small compositions and encode each as a base-64 key."""
    for r in range(u2.shape[0]):
        if is_cca:
            m = sample_cca(h0, h1, zp, kcap, u2[r], parts_buf)
        else:
            m = sample_carlitz(hs, ghat, zp, jcap, kcap, u2[r], parts_buf)
        key = np.int64(0)
        for i in range(m):
            key = key * 64 + parts_buf[i]
        keys[r] = key


# ---------------------------------------------------------------------------
# chain path kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def chain_step(cdf, limit_cdf, imax, state, uval):
    """One kernel step from `state` by inverse-CDF scan of its row."""
    if state <= imax:
        row = cdf[state]
    else:
        row = limit_cdf
    k = 1
    kmax = row.shape[0] - 1
    while k < kmax and uval > row[k]:
        k += 1
    return k


@njit(cache=True, nogil=True)
def count_threshold_visits(cdf, limit_cdf, imax, state0, u, thresholds, out):
    """Visits above each threshold along one path of len(u) steps.

    out[q] accumulates #{t : X(t) > thresholds[q]}; returns the final state.
    """
    state = state0
    for t in range(u.shape[0]):
        state = chain_step(cdf, limit_cdf, imax, state, u[t])
        for q in range(thresholds.shape[0]):
            if state > thresholds[q]:
                out[q] += 1
    return state


@njit(cache=True, nogil=True)
def count_band_visits(cdf, limit_cdf, imax, state0, u, lo, hi, out):
    """Visits to each band (lo[q], hi[q]] along one path."""
    state = state0
    for t in range(u.shape[0]):
        state = chain_step(cdf, limit_cdf, imax, state, u[t])
        for q in range(lo.shape[0]):
            if lo[q] < state <= hi[q]:
                out[q] += 1
    return state


@njit(cache=True, nogil=True)
def collect_hits(cdf, limit_cdf, imax, state0, u, set_lo, set_hi,
                 locs, times, start_count, start_elapsed):
    """Segment one path at entries of the set (set_lo, set_hi].

    Fills locs/times from start_count on while uniforms last; returns
    (hits_recorded_total, final_state, steps_since_last_hit) so the caller
    can resume with a fresh uniform block.
    """
    state = state0
    count = start_count
    elapsed = start_elapsed
    for t in range(u.shape[0]):
        if count >= locs.shape[0]:
            break
        state = chain_step(cdf, limit_cdf, imax, state, u[t])
        elapsed += 1
        if set_lo < state <= set_hi:
            locs[count] = state
            times[count] = elapsed
            count += 1
            elapsed = 0
    return count, state, elapsed
