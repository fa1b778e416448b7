"""Clock recovery and coincidence identification between two tag streams.

Offsets follow the convention of :class:`ClockModel`: B's clock reads
``t + delta(t)`` at reference (A) time ``t``, so a coincidence shows up at
``t_b - t_a = delta``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import poisson

from . import _kernels
from .clock import ClockModel
from .errors import DomainError, SyncError
from .tags import TagStream

PS = 1e12
SEARCH_WINDOW = 1e-3
COARSE_BIN = 1e-6
FINEST_BIN = 200e-12
SIGNIFICANCE_THRESHOLD = 6.0
SEGMENT_LENGTH = 1.0
KNEE_TOLERANCE_PS = 50.0
N_CANDIDATES = 8
MAX_FFT_BINS = 1 << 25
PAIR_BUDGET = 3e7  # tag pairs per refinement histogram
KNOT_SEARCH_POINTS = 16384
MAX_DRIFT = 2e-6  # widest relative clock rate searched when the peak is smeared
STACK_BIN = 100e-9
STACK_THRESHOLD = 8.0  # excess z; the joint search scans many more cells
FALSE_ALARM = 1e-3  # chance of a background fluke anywhere in the search window


@dataclass(frozen=True)
class OffsetEstimate:
    offset_ps: float
    significance: float
    bin_ps: float
    peak_counts: int
    false_alarm: float = 0.0


@dataclass(frozen=True)
class CorrelationHistogram:
    bin_width_ps: float
    origin_ps: float  # left edge of bin 0
    counts: np.ndarray
    peak_index: int
    significance: float
    fit_sigma_ps: float = math.nan
    fit_center_ps: float = math.nan

    @property
    def centers_ps(self) -> np.ndarray:
        return self.origin_ps + (np.arange(self.counts.size) + 0.5) * self.bin_width_ps


def _significance(counts) -> float:
    return float(counts.max()) / max(float(np.median(counts)), 1.0)


def _excess_z(counts) -> float:
    """Peak excess over the median in units of its Poisson spread.

    Adjacent bin pairs are scored too, so a narrow peak split by a bin edge
    is not penalised.
    """
    med = max(float(np.median(counts)), 1.0)
    z = (float(counts.max()) - med) / math.sqrt(med)
    if counts.size > 1:
        pair = counts[:-1] + counts[1:]
        z = max(z, (float(pair.max()) - 2.0 * med) / math.sqrt(2.0 * med))
    return z


def _histogram(ta, tb, lo_ps, bin_ps, n_bins):
    return _kernels.diff_histogram(ta, tb, int(lo_ps), int(bin_ps), int(n_bins))


def _peak_centroid(hist, lo_ps, bin_ps):
    """Background-subtracted centroid of the peak region (ps).

    The region grows from the maximum while bins stay 3 sigma above the
    median, plus one bin of margin on each side.
    """
    k = int(np.argmax(hist))
    bg = float(np.median(hist))
    cut = bg + 3.0 * math.sqrt(max(bg, 1.0))
    a = k
    while a > 0 and hist[a - 1] > cut:
        a -= 1
    b = k
    while b < hist.size - 1 and hist[b + 1] > cut:
        b += 1
    a, b = max(a - 1, 0), min(b + 2, hist.size)
    w = np.clip(hist[a:b] - bg, 0, None).astype(float)
    centers = lo_ps + (np.arange(a, b) + 0.5) * bin_ps
    if w.sum() <= 0:
        return float(lo_ps + (k + 0.5) * bin_ps)
    return float((w * centers).sum() / w.sum())


def _false_alarm(hist, cells) -> float:
    """Probability that background alone puts a peak this high in any of ``cells`` bins."""
    srt = np.sort(hist)
    lam = max(float(np.median(hist)), float(srt[:-3].mean()) if srt.size > 3 else 0.0, 1e-3)
    return min(1.0, cells * float(poisson.sf(int(srt[-1]) - 1, lam)))


def _level_estimate(ta, tb, center_ps, b, search_ps=0.0, final_bins=64):
    lo = int(round(center_ps)) - final_bins * b
    hist = _histogram(ta, tb, lo, b, 2 * final_bins)
    cells = max(2.0 * search_ps / b, 2.0 * final_bins)
    return OffsetEstimate(_peak_centroid(hist, lo, b), _significance(hist), float(b), int(hist.max()),
                          _false_alarm(hist, cells))


def _refine(ta, tb, center_ps, bin_ps, finest_ps, threshold, search_ps=0.0, span_bins=8):
    """Halve the bin around ``center`` down to ``finest``.

    Every level is scored by peak over median. The finest level that clears
    ``threshold`` and keeps at least half the best score is returned, so a
    peak smeared by uncorrected drift stops the refinement early instead of
    being lost in the background. Levels whose peak a background fluke
    anywhere in ``search_ps`` would likely explain do not count as clearing.
    """
    levels = []
    b = int(bin_ps)
    while True:
        half_span = span_bins * b
        b_next = max(int(round(b / 2.0)), 1)
        lo = int(round(center_ps - half_span))
        n = int(math.ceil(2 * half_span / b_next))
        hist = _histogram(ta, tb, lo, b_next, n)
        if hist.max() == 0:
            break
        center_ps = lo + (int(np.argmax(hist)) + 0.5) * b_next
        b = b_next
        levels.append(_level_estimate(ta, tb, center_ps, b, search_ps))
        if b <= finest_ps or b == 1:
            break
    if not levels:
        return _level_estimate(ta, tb, center_ps, int(bin_ps), search_ps)
    best = max(e.significance for e in levels)
    for e in reversed(levels):
        if e.significance >= threshold and e.significance >= 0.5 * best and e.false_alarm <= FALSE_ALARM:
            return e
    return max(levels, key=lambda e: e.significance)


def _coarse_candidates(ta, tb, search_ps, bin_ps, k):
    """Top-``k`` lags of the binned cross-correlation (FFT)."""
    t0 = min(ta[0], tb[0])
    t1 = max(ta[-1], tb[-1])
    n = int((t1 - t0) // bin_ps) + 1
    lag_bins = int(math.ceil(search_ps / bin_ps))
    size = 1 << int(math.ceil(math.log2(n + lag_bins + 1)))
    if size > MAX_FFT_BINS:
        raise DomainError("coarse correlation too large; restrict the data span or enlarge the bin")
    ha = np.bincount((ta - t0) // bin_ps, minlength=n).astype(float)
    hb = np.bincount((tb - t0) // bin_ps, minlength=n).astype(float)
    fa = np.fft.rfft(ha, size)
    fb = np.fft.rfft(hb, size)
    xc = np.fft.irfft(np.conj(fa) * fb, size)  # xc[l] = sum_i ha[i] hb[i + l]
    lags = np.arange(-lag_bins, lag_bins + 1)
    vals = xc[lags % size]
    order = np.lexsort((np.abs(lags), -np.round(vals, 6)))
    picked = []
    for idx in order:
        if all(abs(lags[idx] - p) > 1 for p in picked):
            picked.append(int(lags[idx]))
        if len(picked) == k:
            break
    return [p * bin_ps for p in picked]


def _leading(ta, tb, span_s):
    """The first ``span_s`` seconds of both streams (all if ``None``)."""
    if span_s is None:
        return ta, tb
    return (ta[: np.searchsorted(ta, ta[0] + int(span_s * PS))],
            tb[: np.searchsorted(tb, tb[0] + int(span_s * PS))])


def _budget_span(ta, tb, width_ps):
    """Seconds of data whose histogram over ``width_ps`` stays within the pair budget."""
    t = max(int(max(ta[-1], tb[-1]) - min(ta[0], tb[0])), 1) / PS
    pairs = ta.size * tb.size / t * (width_ps / PS)
    return t * min(1.0, PAIR_BUDGET / max(pairs, 1.0))


def coarse_offset_search(a: TagStream, b: TagStream, search_window: float = SEARCH_WINDOW,
                         coarse_bin: float = COARSE_BIN, finest_bin: float = FINEST_BIN,
                         threshold: float = SIGNIFICANCE_THRESHOLD, max_span: float | None = 2.0,
                         candidates: int = N_CANDIDATES) -> OffsetEstimate:
    """Offset ``t_b - t_a`` of the strongest correlation peak within ``search_window``.

    The coarse lag comes from an FFT cross-correlation at ``coarse_bin``;
    the best ``candidates`` lags are refined by halving the bin down to
    ``finest_bin`` and the most significant one (peak over median) wins.
    Only the first ``max_span`` seconds are used.
    """
    if len(a) == 0 or len(b) == 0:
        raise SyncError("cannot synchronize an empty stream", significance=0.0)
    ta, tb = _leading(a.times, b.times, max_span)
    bin_ps = max(int(round(coarse_bin * PS)), 1)
    search_ps = search_window * PS
    # the widest refinement histogram spans 128 coarse bins
    ta, tb = _leading(ta, tb, _budget_span(ta, tb, 128 * bin_ps))
    best = None
    for c in _coarse_candidates(ta, tb, search_ps, bin_ps, candidates):
        est = _refine(ta, tb, c, bin_ps, finest_bin * PS, threshold, search_ps)
        if est.false_alarm > FALSE_ALARM:
            continue
        if best is None or est.significance > best.significance:
            best = est
    if best is None or best.significance < threshold:
        sig = 0.0 if best is None else best.significance
        raise SyncError(f"no significant correlation peak (best significance {sig:.2f} < {threshold})",
                        significance=sig)
    return best


# ---------------------------------------------------------------------------
# drift tracking
# ---------------------------------------------------------------------------


def _hinge_design(t, knots):
    cols = [np.ones_like(t), t]
    for k in knots:
        cols.append(np.maximum(t - k, 0.0))
    return np.column_stack(cols)


def _fit_hinge(t, y, w, knots):
    X = _hinge_design(t, knots)
    sw = np.sqrt(w)
    A = X * sw[:, None]
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / scale, y * sw, rcond=None)
    coef = coef / scale
    resid = y - X @ coef
    return coef, resid


def _model_from_hinge(coef, knots) -> ClockModel:
    """Clock model whose delta is ``c0 + c1 t + sum c_k (t - k)_+``."""
    slope = float(coef[1])
    segs = [(0.0, slope)]
    for k, c in zip(knots, coef[2:]):
        slope += float(c)
        segs.append((float(k), slope))
    return ClockModel(float(coef[0]), tuple(segs))


def _model_through(t, d) -> ClockModel:
    """Continuous piecewise-linear delta through points ``(t, d)``."""
    if t.size == 1:
        return ClockModel.linear(float(d[0]), 0.0)
    slopes = np.diff(d) / np.diff(t)
    segs = [(0.0, float(slopes[0]))] + [(float(tk), float(sk)) for tk, sk in zip(t[1:-1], slopes[1:])]
    return ClockModel(float(d[0] - slopes[0] * t[0]), tuple(segs))


def _piece_residual(ta, tb_ref, s0, s1, bin_ps, span_ps, threshold):
    lim = np.array([math.ceil(s0), math.ceil(s1)], dtype=np.int64)
    ia = np.searchsorted(ta, lim)
    ib = np.searchsorted(tb_ref, lim)
    sa, sb = ta[ia[0]:ia[1]], tb_ref[ib[0]:ib[1]]
    if sa.size == 0 or sb.size == 0:
        return None
    n = int(math.ceil(2 * span_ps / bin_ps))
    hist = _histogram(sa, sb, -int(span_ps), bin_ps, n)
    if hist.max() == 0 or _excess_z(hist) < threshold:
        return None
    return _peak_centroid(hist, -int(span_ps), bin_ps)


def _segment_residuals(ta, tb_ref, edges_ps, bin_ps, span_ps, threshold, max_depth=4):
    """Peak position of ``tb_ref - ta`` (ps) per segment.

    A segment without a significant peak is split in halves (down to
    ``max_depth`` levels), since residual curvature smears the peak of long
    pieces. Returns ``(points, gaps)`` with points ``(t_mid, residual)``.
    """
    points = []
    gaps = []
    for s0, s1 in zip(edges_ps[:-1], edges_ps[1:]):
        stack = [(float(s0), float(s1), 0)]
        found = []
        while stack:
            p0, p1, depth = stack.pop()
            y = _piece_residual(ta, tb_ref, p0, p1, bin_ps, span_ps, threshold)
            if y is not None:
                found.append((0.5 * (p0 + p1), y))
            elif depth < max_depth:
                mid = 0.5 * (p0 + p1)
                stack.extend([(mid, p1, depth + 1), (p0, mid, depth + 1)])
        if found:
            points.extend(found)
        else:
            gaps.append((float(s0), float(s1)))
    points.sort()
    return points, gaps


def _pair_dt(ta, tb_ref, half_window_ps):
    ii, jj, dd = _kernels.candidate_pairs(ta, tb_ref, int(half_window_ps))
    return ta[ii].astype(float), dd.astype(float)


def track_drift(a: TagStream, b: TagStream, initial_offset_ps: float,
                segment_length: float = SEGMENT_LENGTH, search_ps: float = 20e6,
                threshold: float = SIGNIFICANCE_THRESHOLD, knee_tol_ps: float = KNEE_TOLERANCE_PS,
                max_knees: int = 4, initial_slope: float = 0.0) -> ClockModel:
    """Piecewise-linear clock model from per-segment peak re-estimation.

    Each pass corrects B with the current model, re-estimates the residual
    offset segment by segment with a finer bin, and refits. The last stage
    fits the pair time differences directly and adds knees greedily while
    the per-segment mean residual exceeds ``knee_tol_ps``. Segments without a
    significant peak are reported as gaps and bridged by the fit.
    """
    if len(a) == 0 or len(b) == 0:
        raise SyncError("cannot track drift on an empty stream", significance=0.0)
    ta = a.times
    model = ClockModel.linear(float(initial_offset_ps), float(initial_slope))
    t_end = int(ta[-1]) + 1
    seg_ps = segment_length * PS
    n_seg = max(int(math.ceil((t_end - ta[0]) / seg_ps)), 1)
    edges = ta[0] + np.arange(n_seg + 1) * seg_ps
    edges[-1] = max(edges[-1], t_end)

    gaps = ()
    span = float(search_ps)
    bin_ps = max(span / 128.0, 64.0)
    while True:
        for _ in range(4):
            tb_ref = model.to_reference(b.times)
            points, gap_list = _segment_residuals(ta, tb_ref, edges, int(bin_ps), span, threshold)
            gaps = tuple(gap_list)
            if not points:
                raise SyncError("no segment shows a correlation peak", significance=0.0)
            t_mid = np.array([p[0] for p in points])
            y = np.array([p[1] for p in points])
            d_abs = model.delta(t_mid) + y
            # a straight line averages the per-piece noise; only real
            # curvature justifies joining the pieces point to point
            if t_mid.size >= 2:
                coef, resid = _fit_hinge(t_mid, d_abs, np.ones_like(d_abs), [])
                if np.max(np.abs(resid)) < 2.0 * bin_ps:
                    model = _model_from_hinge(coef, [])
                else:
                    model = _model_through(t_mid, d_abs)
            else:
                model = ClockModel.linear(float(d_abs[0] - model.slope * t_mid[0]), model.slope)
            if np.max(np.abs(y)) < 0.25 * bin_ps:
                break
        if bin_ps <= 256.0:
            break
        span = 16.0 * bin_ps
        bin_ps = max(bin_ps / 8.0, 64.0)

    # pair-level least squares with greedy knees; the window narrows so that
    # pairs the interpolated model misplaces near a knee are kept at first
    knots: list[float] = []
    residual = math.nan
    for half_w in (64.0 * bin_ps, 16.0 * bin_ps, 4.0 * bin_ps, 4.0 * bin_ps):
        tb_ref = model.to_reference(b.times)
        t_pair, dt = _pair_dt(ta, tb_ref, half_w)
        mask = _robust_mask(dt, half_w)
        t_pair, dt = t_pair[mask], dt[mask]
        if t_pair.size < 3:
            break
        d_abs = model.delta(t_pair) + dt
        keep = np.ones(t_pair.size, bool)
        for _ in range(3):
            tk, dk = t_pair[keep], d_abs[keep]
            knots = _greedy_knots(tk, dk, edges, knee_tol_ps, max_knees)
            coef, _ = _fit_hinge(tk, dk, np.ones_like(dk), knots)
            r = d_abs - _hinge_design(t_pair, knots) @ coef
            # trim accidentals against the fitted curve
            mad = 1.4826 * np.median(np.abs(r[keep]))
            new_keep = np.abs(r) <= max(5.0 * mad, 64.0)
            if np.count_nonzero(new_keep) < 3 or np.array_equal(new_keep, keep):
                break
            keep = new_keep
        model = _model_from_hinge(coef, knots)
        residual = float(np.sqrt(np.mean(r[keep] ** 2)))
    return ClockModel(model.offset_ps, model.segments, residual, gaps)


def _robust_mask(dt, half_w):
    """Keep pairs near the peak: drop accidentals far from the median."""
    if dt.size == 0:
        return np.zeros(0, bool)
    med = np.median(dt)
    mad = np.median(np.abs(dt - med)) * 1.4826
    lim = max(5.0 * mad, 0.5 * half_w)
    return np.abs(dt - med) <= lim


def _segment_means(t, r, edges):
    idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, edges.size - 2)
    n = np.bincount(idx, minlength=edges.size - 1)
    s = np.bincount(idx, weights=r, minlength=edges.size - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        m = s / n
    return m, n


def _greedy_knots(t, dt, edges, tol, max_knees, max_points=KNOT_SEARCH_POINTS):
    knots: list[float] = []
    if t.size > max_points:
        # pairs are time ordered, so a stride keeps the coverage uniform
        step = int(math.ceil(t.size / max_points))
        t, dt = t[::step], dt[::step]
    for _ in range(max_knees):
        _, resid = _fit_hinge(t, dt, np.ones_like(dt), knots)
        m, n = _segment_means(t, resid, edges)
        se = np.where(n > 0, np.std(resid) / np.sqrt(np.maximum(n, 1)), np.inf)
        worst = np.nanmax(np.where(n > 0, np.abs(m) - 3 * se, -np.inf))
        if not worst > tol:
            break
        best, best_sse = None, np.sum(resid ** 2)
        # coarse scan over segment boundaries, then golden refinement
        for k in edges[1:-1]:
            if any(abs(k - q) < 1 for q in knots):
                continue
            _, r = _fit_hinge(t, dt, np.ones_like(dt), knots + [k])
            sse = float(np.sum(r ** 2))
            if sse < best_sse:
                best, best_sse = float(k), sse
        if best is None:
            break
        seg = float(edges[1] - edges[0])
        lo, hi = best - seg, best + seg

        def sse_at(k):
            _, r = _fit_hinge(t, dt, np.ones_like(dt), sorted(knots + [k]))
            return float(np.sum(r ** 2))

        phi = (math.sqrt(5) - 1) / 2
        c, d = hi - phi * (hi - lo), lo + phi * (hi - lo)
        fc, fd = sse_at(c), sse_at(d)
        while hi - lo > 1e3:
            if fc <= fd:
                hi, d, fd = d, c, fc
                c = hi - phi * (hi - lo)
                fc = sse_at(c)
            else:
                lo, c, fc = c, d, fd
                d = lo + phi * (hi - lo)
                fd = sse_at(d)
        k_opt = c if fc <= fd else d
        if min(fc, fd) > best_sse:
            k_opt = best
        knots = sorted(knots + [float(k_opt)])
    return knots


def coarse_lag(a: TagStream, b: TagStream, search_window: float = SEARCH_WINDOW,
               coarse_bin: float = COARSE_BIN, max_span: float | None = 2.0):
    """Best coarse lag (ps) and its excess over the correlation floor in Poisson units.

    Unlike :func:`coarse_offset_search` this tolerates a peak smeared by
    clock drift over the analysed span.
    """
    if len(a) == 0 or len(b) == 0:
        raise SyncError("cannot synchronize an empty stream", significance=0.0)
    ta, tb = _leading(a.times, b.times, max_span)
    bin_ps = max(int(round(coarse_bin * PS)), 1)
    lag = _coarse_candidates(ta, tb, search_window * PS, bin_ps, 1)[0]
    lo = int(lag) - 64 * bin_ps
    hist = _histogram(ta, tb, lo, bin_ps, 128)
    return lo + (int(np.argmax(hist)) + 0.5) * bin_ps, _excess_z(hist)


@dataclass(frozen=True)
class DriftEstimate:
    offset_ps: float
    slope: float
    excess_z: float
    slope_step: float
    bin_ps: float


def drift_search(a: TagStream, b: TagStream, search_window: float = SEARCH_WINDOW,
                 max_drift: float = MAX_DRIFT, bin_width: float = STACK_BIN,
                 max_span: float | None = 2.0):
    """Joint offset and drift from segment correlations stacked along trial drifts.

    The span is cut into segments short enough that ``max_drift`` smears the
    peak by at most one bin. Each segment's cross-correlation is shifted by
    the delay a trial drift accumulates and the segments are summed, so the
    peak adds up coherently only near the true drift.

    Returns
    -------
    DriftEstimate
        Clock model coefficients (``delta = offset + slope t``), the excess
        of the stacked peak over the median in Poisson units and the slope
        grid step.
    """
    if len(a) == 0 or len(b) == 0:
        raise SyncError("cannot synchronize an empty stream", significance=0.0)
    ta, tb = _leading(a.times, b.times, max_span)
    w = max(int(round(bin_width * PS)), 1)
    n = max(int(round(w / max_drift)) // w, 1)  # bins per segment
    seg_ps = n * w
    lag_bins = int(math.ceil(search_window * PS / w))
    t0 = int(min(ta[0], tb[0]))
    t1 = int(max(ta[-1], tb[-1])) + 1
    n_seg = max(int(math.ceil((t1 - t0) / seg_ps)), 1)
    size = 1 << int(math.ceil(math.log2(n + 2 * lag_bins + 1)))
    if size > MAX_FFT_BINS:
        raise DomainError("segment correlation too large; enlarge the bin or max_drift")
    starts = t0 + np.arange(n_seg, dtype=np.int64) * seg_ps
    ia = np.searchsorted(ta, np.append(starts, t1))
    ib_lo = np.searchsorted(tb, starts - lag_bins * w)
    ib_hi = np.searchsorted(tb, starts + seg_ps + lag_bins * w)
    xc = np.zeros((n_seg, 2 * lag_bins + 1))
    for k, s0 in enumerate(starts):
        sa, sb = ta[ia[k]:ia[k + 1]], tb[ib_lo[k]:ib_hi[k]]
        if sa.size == 0 or sb.size == 0:
            continue
        ha = np.bincount((sa - s0) // w, minlength=n)
        hb = np.bincount((sb - (s0 - lag_bins * w)) // w, minlength=n + 2 * lag_bins)
        fa = np.fft.rfft(ha, size)
        fb = np.fft.rfft(hb, size)
        # xc[m] = sum_i ha[i] hb[i + m], lag m - lag_bins
        xc[k] = np.fft.irfft(np.conj(fa) * fb, size)[: 2 * lag_bins + 1]
    t_ref = t0 + 0.5 * n_seg * seg_ps
    rel = starts + 0.5 * seg_ps - t_ref
    step = w / max(float(n_seg * seg_ps), 1.0)
    drifts = np.arange(-max_drift, max_drift + 0.5 * step, step)
    max_shift = int(math.ceil(max_drift * np.abs(rel).max() / w)) if n_seg > 1 else 0
    lags = np.arange(max_shift, 2 * lag_bins + 1 - max_shift)
    if lags.size == 0:
        raise DomainError("search window too small for the drift range")
    rows = np.arange(n_seg)[:, None]
    best = None
    for d in drifts:
        shift = np.rint(d * rel / w).astype(np.int64)
        stacked = xc[rows, lags[None, :] + shift[:, None]].sum(axis=0)
        z = _excess_z(stacked)
        if best is None or z > best[2]:
            best = (d, int(lags[int(np.argmax(stacked))]), z)
    d, m, z = best
    delta_ref = (m - lag_bins) * w
    return DriftEstimate(float(delta_ref - d * t_ref), float(d), float(z), float(step), float(w))


def recover_clock(a: TagStream, b: TagStream, segment_length: float = SEGMENT_LENGTH,
                  search_window: float = SEARCH_WINDOW, coarse_bin: float = COARSE_BIN,
                  threshold: float = SIGNIFICANCE_THRESHOLD) -> ClockModel:
    """Offset search, drift tracking and a final significance check.

    If drift smears the uncorrected peak, the coarse lag seeds the drift
    tracker. If that is lost in the background, or the tracker finds no
    segment peak from it, a joint offset and drift search seeds a narrower
    tracking pass. The peak-over-median test is applied after correction.
    """
    try:
        offset0 = coarse_offset_search(a, b, search_window, coarse_bin, threshold=threshold).offset_ps
        z = math.inf
    except SyncError:
        offset0, z = coarse_lag(a, b, search_window, coarse_bin)
    model = None
    if z >= threshold:
        try:
            model = track_drift(a, b, offset0, segment_length, threshold=threshold)
        except SyncError:
            pass
    if model is None:
        est = drift_search(a, b, search_window)
        if est.excess_z < max(threshold, STACK_THRESHOLD):
            raise SyncError(f"no correlation peak (coarse excess {min(z, 1e3):.1f} sigma, "
                            f"drift-stacked {est.excess_z:.1f} sigma)", significance=0.0)
        # the joint estimate is good to a bin plus the slope step over the run
        span_ps = float(max(a.times[-1], b.times[-1]) - min(a.times[0], b.times[0]))
        search_ps = min(20e6, 8.0 * est.bin_ps + 2.0 * est.slope_step * span_ps)
        model = track_drift(a, b, est.offset_ps, segment_length, search_ps=search_ps, threshold=threshold,
                            initial_slope=est.slope)
    hist = correlation_histogram(a, b, model, 128 * FINEST_BIN, FINEST_BIN, fit=False)
    if hist.significance < threshold:
        raise SyncError(f"corrected correlation peak not significant ({hist.significance:.2f})",
                        significance=hist.significance)
    return model


# ---------------------------------------------------------------------------
# coincidences and histograms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairList:
    """Matched tags: indices into both streams and ``dt = t_b,ref - t_a`` (ps)."""

    index_a: np.ndarray
    index_b: np.ndarray
    dt_ps: np.ndarray
    t_ps: np.ndarray  # reference time of the A tag

    def __len__(self):
        return int(self.index_a.size)


def find_coincidences(a: TagStream, b: TagStream, clock: ClockModel, window: float) -> PairList:
    """Greedy one-to-one matching by smallest ``|dt|`` within ``|dt| <= window / 2``.

    Candidates come from a linear two-pointer sweep; ties in ``|dt|`` go to
    the earlier A tag. Output is sorted by reference time.
    """
    if window < 0:
        raise DomainError("window must be >= 0")
    tb_ref = clock.to_reference(b.times)
    if tb_ref.size > 1 and np.any(np.diff(tb_ref) < 0):
        raise DomainError("clock model does not preserve tag order")
    half = int(math.floor(window * PS / 2.0 + 1e-9))
    ii, jj, dd = _kernels.candidate_pairs(a.times, tb_ref, half)
    if ii.size == 0:
        e = np.empty(0, np.int64)
        return PairList(e, e, e, e)
    order = np.lexsort((jj, ii, np.abs(dd)))
    keep = _kernels.greedy_select(ii, jj, order, len(a), len(b))
    ii, jj, dd = ii[keep], jj[keep], dd[keep]
    o = np.lexsort((jj, ii))
    ii, jj, dd = ii[o], jj[o], dd[o]
    return PairList(ii, jj, dd, a.times[ii])


def correlation_histogram(a: TagStream, b: TagStream, clock: ClockModel, span: float,
                          bin_width: float, fit: bool = True) -> CorrelationHistogram:
    """Histogram of ``t_b,ref - t_a`` over about ``[-span/2, span/2)`` with a Gaussian fit."""
    if not bin_width > 0:
        raise DomainError("bin width must be > 0")
    if span < bin_width:
        raise DomainError("span must be at least one bin")
    b_ps = max(int(round(bin_width * PS)), 1)
    n = int(round(span / bin_width))
    lo = -(n // 2) * b_ps - b_ps // 2  # a bin centred on zero delay
    tb_ref = clock.to_reference(b.times)
    counts = _histogram(a.times, tb_ref, lo, b_ps, n)
    peak = int(np.argmax(counts))
    hist = CorrelationHistogram(float(b_ps), float(lo), counts, peak, _significance(counts))
    if fit:
        sigma, center = fit_gaussian(hist)
        hist = CorrelationHistogram(hist.bin_width_ps, hist.origin_ps, counts, peak,
                                    hist.significance, sigma, center)
    return hist


def fit_gaussian(hist: CorrelationHistogram):
    """Least-squares Gaussian plus constant; returns ``(sigma_ps, center_ps)``."""
    x = hist.centers_ps
    y = hist.counts.astype(float)
    if y.max() <= 0:
        return math.nan, math.nan
    bg0 = float(np.median(y))
    amp0 = y.max() - bg0
    above = x[y - bg0 > 0.5 * amp0]
    s0 = max((above.max() - above.min()) / 2.355, hist.bin_width_ps / 2) if above.size else hist.bin_width_ps
    c0 = x[hist.peak_index]

    def g(x, amp, c, s, bg):
        return amp * np.exp(-0.5 * ((x - c) / s) ** 2) + bg

    try:
        p, _ = curve_fit(g, x, y, p0=(amp0, c0, s0, bg0), sigma=np.sqrt(np.maximum(y, 1.0)),
                         maxfev=5000)
    except (RuntimeError, ValueError):
        return math.nan, math.nan
    return abs(float(p[2])), float(p[1])


PAIR_COLUMNS = ("t_corrected_ps", "channel_a", "channel_b", "dt_ps")
HIST_COLUMNS = ("bin_center_ps", "count")


def write_pairs_csv(fh, pairs: PairList, a: TagStream, b: TagStream):
    w = csv.writer(fh)
    w.writerow(PAIR_COLUMNS)
    ca = a.channels[pairs.index_a]
    cb = b.channels[pairs.index_b]
    for row in zip(pairs.t_ps.tolist(), ca.tolist(), cb.tolist(), pairs.dt_ps.tolist()):
        w.writerow(row)


def write_histogram_csv(fh, hist: CorrelationHistogram):
    w = csv.writer(fh)
    w.writerow(HIST_COLUMNS)
    for c, n in zip(hist.centers_ps.tolist(), hist.counts.tolist()):
        w.writerow((repr(c), n))
