"""Compiled inner loops for dead time, afterpulses and coincidence search."""
from __future__ import annotations

import numpy as np
from numba import njit

NO_TAG = np.iinfo(np.int64).min // 2


@njit(cache=True)
def _heap_push(ht, hc, n, t, c):
    i = n
    ht[i] = t
    hc[i] = c
    while i > 0:
        p = (i - 1) >> 1
        if ht[p] <= ht[i]:
            break
        ht[p], ht[i] = ht[i], ht[p]
        hc[p], hc[i] = hc[i], hc[p]
        i = p
    return n + 1


@njit(cache=True)
def _heap_pop(ht, hc, n):
    t = ht[0]
    c = hc[0]
    n -= 1
    ht[0] = ht[n]
    hc[0] = hc[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        m = l
        r = l + 1
        if r < n and ht[r] < ht[l]:
            m = r
        if ht[i] <= ht[m]:
            break
        ht[m], ht[i] = ht[i], ht[m]
        hc[m], hc[i] = hc[i], hc[m]
        i = m
    return t, c, n


@njit(cache=True)
def detect(times, chans, ap_delay, dead, boundary, last, ht, hc, hn, out_t, out_c, out_src):
    """Non-paralyzable dead time plus afterpulsing over one sorted block.

    Candidates ``times``/``chans`` are consumed in order and merged with
    pending afterpulses (heap ``ht``/``hc`` of size ``hn``). An event on
    detector ``c`` registers if it comes at least ``dead`` after the last
    registered one; a registered candidate with ``ap_delay >= 0`` schedules an
    afterpulse at ``t + ap_delay``. Afterpulses later than ``boundary`` stay
    pending. ``out_src`` is the candidate index, or -1 for an afterpulse.

    Returns ``(n_out, hn)``; ``hn = -1`` signals heap overflow.
    """
    n = times.size
    cap = ht.size
    i = 0
    k = 0
    while True:
        from_heap = False
        if hn > 0 and ht[0] < boundary and (i >= n or ht[0] < times[i]):
            from_heap = True
        elif i >= n:
            break
        if from_heap:
            t, c, hn = _heap_pop(ht, hc, hn)
            src = -1
        else:
            t = times[i]
            c = chans[i]
            src = i
            i += 1
        if t - last[c] >= dead:
            last[c] = t
            out_t[k] = t
            out_c[k] = c
            out_src[k] = src
            k += 1
            if src >= 0 and ap_delay[src] >= 0:
                if hn >= cap:
                    return k, -1
                hn = _heap_push(ht, hc, hn, t + ap_delay[src], c)
    return k, hn


@njit(cache=True)
def _gallop_left(a, x, start):
    """First index ``i >= start`` with ``a[i] >= x`` (exponential search)."""
    n = a.size
    if start >= n or a[start] >= x:
        return start
    step = 1
    lo = start
    hi = start + 1
    while hi < n and a[hi] < x:
        lo = hi
        step *= 2
        hi = lo + step
    if hi > n:
        hi = n
    # a[lo] < x, answer in (lo, hi]
    lo += 1
    while lo < hi:
        m = (lo + hi) >> 1
        if a[m] < x:
            lo = m + 1
        else:
            hi = m
    return lo


@njit(cache=True)
def candidate_pairs(ta, tb, half_window):
    """All ``(i, j)`` with ``|tb[j] - ta[i]| <= half_window``.

    The lower bound advances monotonically by galloping search, which is
    cheap both for dense and for sparse ``tb``. Both inputs must be sorted. Returns index arrays and ``dt = tb - ta``.
    """
    na = ta.size
    nb = tb.size
    cap = 1024
    ii = np.empty(cap, np.int64)
    jj = np.empty(cap, np.int64)
    dd = np.empty(cap, np.int64)
    k = 0
    lo = 0
    for j in range(nb):
        t = tb[j]
        lo = _gallop_left(ta, t - half_window, lo)
        i = lo
        while i < na and ta[i] <= t + half_window:
            if k == cap:
                cap *= 2
                ii2 = np.empty(cap, np.int64)
                jj2 = np.empty(cap, np.int64)
                dd2 = np.empty(cap, np.int64)
                ii2[:k] = ii[:k]
                jj2[:k] = jj[:k]
                dd2[:k] = dd[:k]
                ii, jj, dd = ii2, jj2, dd2
            ii[k] = i
            jj[k] = j
            dd[k] = t - ta[i]
            k += 1
            i += 1
    return ii[:k], jj[:k], dd[:k]


@njit(cache=True)
def greedy_select(ii, jj, order, na, nb):
    """Accept candidates in ``order`` unless either tag is already used."""
    used_a = np.zeros(na, np.bool_)
    used_b = np.zeros(nb, np.bool_)
    keep = np.zeros(ii.size, np.bool_)
    for q in range(order.size):
        k = order[q]
        a = ii[k]
        b = jj[k]
        if not used_a[a] and not used_b[b]:
            used_a[a] = True
            used_b[b] = True
            keep[k] = True
    return keep


@njit(cache=True)
def diff_histogram(ta, tb, lo, bin_width, n_bins):
    """Histogram of ``tb[j] - ta[i]`` over ``[lo, lo + n_bins * bin_width)``.

    The lower bound in ``ta`` advances by galloping search.
    """
    hist = np.zeros(n_bins, np.int64)
    hi = lo + n_bins * bin_width
    na = ta.size
    nb = tb.size
    start = 0
    for j in range(nb):
        t = tb[j]
        # need ta in (t - hi, t - lo]
        start = _gallop_left(ta, t - hi + 1, start)
        i = start
        while i < na and ta[i] <= t - lo:
            hist[(t - ta[i] - lo) // bin_width] += 1
            i += 1
    return hist
