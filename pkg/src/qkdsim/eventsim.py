"""Monte Carlo synthesis of two-party time-tag streams with ground truth.

Pair emission is a Poisson process at ``mu / window``. Only emissions that
reach at least one detector are materialized: by Poisson thinning, the
detected-in-both, A-only and B-only emissions are independent Poisson
processes, so arm A is drawn as one superposed stream (both, A-only, noise)
whose events are typed categorically, and arm B gets the "both" events plus
its own B-only and noise streams.

Per detector, registered tags obey non-paralyzable dead time exactly, on the
jittered time stamps. Registered photon tags (not noise) spawn an afterpulse
with probability ``afterpulse_prob`` on the same detector after
``dead_time + Exp(AFTERPULSE_MEAN_DELAY)``.

The timeline is cut into fixed blocks; block ``k`` draws from
``SeedSequence([seed, k])``, so output depends only on inputs and seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._workers import max_workers, ordered_map
from .errors import DomainError
from .link import LinkModel, arm_afterpulse_prob, arm_noise_rate
from .tags import TagStream

PS = 1e12
BLOCK_S = 0.1
AFTERPULSE_MEAN_DELAY = 100e-9
JITTER_GUARD_SIGMAS = 40.0
HEAP_CAPACITY = 1 << 16

BOTH, A_ONLY, B_ONLY, NOISE = 0, 1, 2, 3


@dataclass(frozen=True)
class Clocks:
    """Arm-B clock relative to arm A: ``t_b = t * (1 + drift) + offset``."""

    offset: float = 0.0  # seconds
    drift: float = 0.0

    def __post_init__(self):
        if self.drift <= -1.0:
            raise DomainError("drift must exceed -1")

    def to_b(self, t_ps):
        return t_ps * (1.0 + self.drift) + self.offset * PS


@dataclass
class TruthRecord:
    """Ground truth of a synthesized run.

    Per-pair arrays cover every emission detected by both arms before dead
    time; the remaining emissions are kept as counts only.
    """

    emission_ps: np.ndarray
    basis_a: np.ndarray
    outcome_a: np.ndarray
    basis_b: np.ndarray
    outcome_b: np.ndarray
    error: np.ndarray
    registered_a: np.ndarray
    registered_b: np.ndarray
    counts: dict = field(default_factory=dict)
    duration: float = 0.0

    @property
    def n_pairs(self) -> int:
        return int(self.emission_ps.size)

    def error_rate(self) -> float:
        return float(self.error.mean()) if self.error.size else 0.0


class _Buffer:
    """Append-only growable arrays."""

    def __init__(self, dtypes, capacity=1024):
        self._dtypes = dtypes
        self._arrays = [np.empty(max(capacity, 16), dtype=d) for d in dtypes]
        self.n = 0

    def extend(self, *cols):
        m = len(cols[0])
        need = self.n + m
        if need > self._arrays[0].size:
            cap = max(need, int(self._arrays[0].size * 1.5))
            for k, a in enumerate(self._arrays):
                b = np.empty(cap, dtype=a.dtype)
                b[: self.n] = a[: self.n]
                self._arrays[k] = b
        for a, c in zip(self._arrays, cols):
            a[self.n: need] = c
        self.n = need

    def finish(self):
        return [a[: self.n] for a in self._arrays]


def _sorted_uniform(rng, n, t0, t1):
    """``n`` sorted uniforms on ``[t0, t1)`` without a sort."""
    if n == 0:
        return np.empty(0)
    e = rng.standard_exponential(n + 1)
    c = np.cumsum(e)
    return t0 + (t1 - t0) * (c[:-1] / c[-1])


def _channels(rng, n, split):
    basis = (rng.random(n) >= split[0]).astype(np.int8)
    outcome = rng.integers(0, 2, n, dtype=np.int8)
    return basis, outcome


@dataclass(frozen=True)
class _Segment:
    index: int
    t0: float  # seconds
    t1: float
    link: LinkModel
    background_a: float | None = None
    background_b: float | None = None


def _arm_params(link: LinkModel):
    src = link.source
    eta_a = src.heralding_eff_a * link.arm_a.channel.transmission
    eta_b = src.heralding_eff_b * link.arm_b.channel.transmission
    w = link.window
    noise_a = arm_noise_rate(link.arm_a.detector, link.arm_a.channel.background_rate_per_detector, w)
    noise_b = arm_noise_rate(link.arm_b.detector, link.arm_b.channel.background_rate_per_detector, w)
    return eta_a, eta_b, noise_a, noise_b


def _draw_segment(seg: _Segment, seed: int, clocks: Clocks):
    """Candidate (pre-detector) events of one block for both arms."""
    link = seg.link
    rng = np.random.default_rng(np.random.SeedSequence([seed, seg.index]))
    P = link.source.pair_rate
    e_d = link.source.misalignment_error
    eta_a, eta_b, noise_a, noise_b = _arm_params(link)
    T = seg.t1 - seg.t0
    t0, t1 = seg.t0 * PS, seg.t1 * PS

    r_both = P * eta_a * eta_b
    r_a_only = P * eta_a * (1.0 - eta_b)
    r_b_only = P * (1.0 - eta_a) * eta_b
    total_a = r_both + r_a_only + noise_a

    # arm A: one superposed stream, typed per event
    n_a = int(rng.poisson(total_a * T))
    ta = _sorted_uniform(rng, n_a, t0, t1)
    if total_a > 0:
        kind_a = rng.choice(3, size=n_a, p=np.array([r_both, r_a_only, noise_a]) / total_a).astype(np.int8)
    else:
        kind_a = np.zeros(0, np.int8)
    ba, oa = _channels(rng, n_a, link.basis_split_a)
    noise_mask = kind_a == 2
    n_noise = int(noise_mask.sum())
    # noise lands on a uniformly random detector
    ba[noise_mask] = rng.integers(0, 2, n_noise, dtype=np.int8)
    kind_a = np.where(noise_mask, NOISE, kind_a).astype(np.int8)

    # "both" emissions: arm-B partner
    both_idx = np.flatnonzero(kind_a == BOTH)
    nb_pair = both_idx.size
    bb_pair = (rng.random(nb_pair) >= link.basis_split[0]).astype(np.int8)
    err = rng.random(nb_pair) < e_d
    match = bb_pair == ba[both_idx]
    ob_pair = np.where(match, (1 - oa[both_idx]) ^ err, rng.integers(0, 2, nb_pair)).astype(np.int8)

    # arm B: partners plus own single and noise streams
    n_b_only = int(rng.poisson(r_b_only * T))
    n_b_noise = int(rng.poisson(noise_b * T))
    t_b_only = rng.uniform(t0, t1, n_b_only)
    bb_only, ob_only = _channels(rng, n_b_only, link.basis_split)
    t_b_noise = rng.uniform(t0, t1, n_b_noise)
    bb_noise = rng.integers(0, 2, n_b_noise, dtype=np.int8)
    ob_noise = rng.integers(0, 2, n_b_noise, dtype=np.int8)

    tb = np.concatenate([ta[both_idx], t_b_only, t_b_noise])
    kind_b = np.concatenate([np.full(nb_pair, BOTH, np.int8), np.full(n_b_only, B_ONLY, np.int8),
                             np.full(n_b_noise, NOISE, np.int8)])
    chb = np.concatenate([2 * bb_pair + ob_pair, 2 * bb_only + ob_only, 2 * bb_noise + ob_noise]).astype(np.uint8)
    pid_b = np.concatenate([np.arange(nb_pair), np.full(n_b_only + n_b_noise, -1)])
    pid_a = np.full(n_a, -1)
    pid_a[both_idx] = np.arange(nb_pair)

    det_a = link.arm_a.detector
    det_b = link.arm_b.detector
    arm_a = _arm_candidates(rng, ta, (2 * ba + oa).astype(np.uint8), kind_a, pid_a, det_a,
                            arm_afterpulse_prob(det_a), presorted=True)
    tb_local = clocks.to_b(tb)
    arm_b = _arm_candidates(rng, tb_local, chb, kind_b, pid_b, det_b, arm_afterpulse_prob(det_b),
                            presorted=False)

    truth = dict(
        emission_ps=ta[both_idx],
        basis_a=ba[both_idx].copy(),
        outcome_a=oa[both_idx].copy(),
        basis_b=bb_pair,
        outcome_b=ob_pair,
        error=err,
        counts=dict(both=nb_pair, a_only=int((kind_a == A_ONLY).sum()), b_only=n_b_only,
                    noise_a=n_noise, noise_b=n_b_noise),
    )
    return arm_a, arm_b, truth


def _arm_candidates(rng, t_float, chans, kind, pid, det, p_ap, presorted):
    """Jitter, integer time stamps, sort and afterpulse draws for one arm."""
    n = t_float.size
    if det.jitter_sigma > 0 and n:
        t_float = t_float + rng.normal(0.0, det.jitter_sigma * PS, n)
    t = np.floor(t_float).astype(np.int64)
    if n and (det.jitter_sigma > 0 or not presorted):
        order = np.argsort(t, kind="stable")
        t, chans, kind, pid = t[order], chans[order], kind[order], pid[order]
    ap = np.full(n, -1, np.int64)
    if p_ap > 0 and n:
        photon = kind != NOISE
        fire = photon & (rng.random(n) < p_ap)
        k = int(fire.sum())
        delay = det.dead_time * PS + rng.exponential(AFTERPULSE_MEAN_DELAY * PS, k)
        ap[fire] = np.ceil(delay).astype(np.int64)
    return t, chans, ap, pid


class _ArmState:
    """Detector state carried across blocks for one arm."""

    def __init__(self, dead_ps, guard_ps, expected):
        self.dead = int(dead_ps)
        self.guard = int(guard_ps)
        self.last = np.full(4, _kernels.NO_TAG, np.int64)
        self.ht = np.empty(HEAP_CAPACITY, np.int64)
        self.hc = np.empty(HEAP_CAPACITY, np.uint8)
        self.hn = 0
        self.carry = None  # candidates held back for jitter reordering
        self.out = _Buffer((np.int64, np.uint8), capacity=int(expected))
        self.registered_pid = []

    def feed(self, cand, block_end_ps, final):
        t, c, ap, pid = cand
        if self.carry is not None:
            ct, cc, cap, cpid = self.carry
            t = np.concatenate([ct, t])
            order = np.argsort(t, kind="stable")
            t = t[order]
            c = np.concatenate([cc, c])[order]
            ap = np.concatenate([cap, ap])[order]
            pid = np.concatenate([cpid, pid])[order]
            self.carry = None
        keep = t >= 0
        if not keep.all():
            t, c, ap, pid = t[keep], c[keep], ap[keep], pid[keep]
        if final:
            boundary = np.iinfo(np.int64).max
            cut = t.size
        else:
            boundary = int(block_end_ps) - self.guard
            cut = int(np.searchsorted(t, boundary))
            if cut < t.size:
                self.carry = (t[cut:], c[cut:], ap[cut:], pid[cut:])
        t, c, ap, pid = t[:cut], c[:cut], ap[:cut], pid[:cut]
        cap_out = t.size + self.hn + 16
        out_t = np.empty(cap_out + int(ap.size and (ap >= 0).sum()), np.int64)
        out_c = np.empty(out_t.size, np.uint8)
        out_src = np.empty(out_t.size, np.int64)
        k, hn = _kernels.detect(t, c, ap, self.dead, boundary, self.last, self.ht, self.hc,
                                self.hn, out_t, out_c, out_src)
        if hn < 0:
            raise RuntimeError("afterpulse queue overflow")
        self.hn = hn
        self.out.extend(out_t[:k], out_c[:k])
        src = out_src[:k]
        reg = pid[src[src >= 0]]
        self.registered_pid.append(reg[reg >= 0])


def _segments_for(link, duration, profile=None, base_link=None):
    """Cut ``[0, duration)`` into blocks on a fixed grid (and at profile rows)."""
    cuts = set(np.round(np.arange(0.0, duration, BLOCK_S), 12).tolist())
    rows = []
    if profile is not None:
        for t, dt, loss, bg in profile.rows():
            if t < duration:
                cuts.add(round(t, 12))
            rows.append((t, loss, bg))
    edges = sorted(c for c in cuts if 0 <= c < duration) + [duration]
    segs = []
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if b <= a:
            continue
        seg_link = link
        if profile is not None:
            i = max(j for j, r in enumerate(rows) if r[0] <= a + 1e-12)
            _, loss, bg = rows[i]
            seg_link = base_link.with_total_loss(loss)
            if bg is not None:
                seg_link = seg_link.with_background(bg)
        segs.append(_Segment(k, a, b, seg_link))
    return segs


def _run(segments, duration, seed, clocks: Clocks):
    if not segments:
        none = np.empty(0, np.int64)
        truth = TruthRecord(none.astype(float), *(none.astype(np.int8) for _ in range(4)),
                            *(none.astype(bool) for _ in range(3)), counts={}, duration=0.0)
        return (TagStream(none, none, "A", (0.0, 0.0), {"duration": duration}),
                TagStream(none, none, "B", (clocks.offset, clocks.drift), {"duration": duration}),
                truth)
    first = segments[0].link

    det_a = first.arm_a.detector
    det_b = first.arm_b.detector
    eta_a, eta_b, noise_a, noise_b = _arm_params(first)
    P = first.source.pair_rate
    exp_a = (P * eta_a + noise_a) * duration * (1 + det_a.afterpulse_prob) * 1.05 + 1024
    exp_b = (P * eta_b + noise_b) * duration * (1 + det_b.afterpulse_prob) * 1.05 + 1024
    state_a = _ArmState(det_a.dead_time * PS, JITTER_GUARD_SIGMAS * det_a.jitter_sigma * PS, exp_a)
    state_b = _ArmState(det_b.dead_time * PS, JITTER_GUARD_SIGMAS * det_b.jitter_sigma * PS, exp_b)

    truth_parts = []
    pid_base = 0
    batch = max(1, max_workers())
    for start in range(0, len(segments), batch):
        chunk = segments[start: start + batch]
        drawn = ordered_map(lambda s: _draw_segment(s, seed, clocks), chunk)
        for seg, (cand_a, cand_b, tr) in zip(chunk, drawn):
            final = seg is segments[-1]
            n_pairs = tr["emission_ps"].size
            cand_a = cand_a[:3] + (np.where(cand_a[3] >= 0, cand_a[3] + pid_base, -1),)
            cand_b = cand_b[:3] + (np.where(cand_b[3] >= 0, cand_b[3] + pid_base, -1),)
            state_a.feed(cand_a, seg.t1 * PS, final)
            state_b.feed(cand_b, clocks.to_b(seg.t1 * PS), final)
            truth_parts.append(tr)
            pid_base += n_pairs

    ta, ca = state_a.out.finish()
    tb, cb = state_b.out.finish()
    reg_a = np.zeros(pid_base, bool)
    reg_b = np.zeros(pid_base, bool)
    reg_a[np.concatenate(state_a.registered_pid)] = True
    reg_b[np.concatenate(state_b.registered_pid)] = True

    def cat(key, dtype):
        return np.concatenate([p[key] for p in truth_parts]).astype(dtype)

    counts = {}
    for p in truth_parts:
        for k, v in p["counts"].items():
            counts[k] = counts.get(k, 0) + int(v)
    truth = TruthRecord(
        emission_ps=cat("emission_ps", np.float64),
        basis_a=cat("basis_a", np.int8),
        outcome_a=cat("outcome_a", np.int8),
        basis_b=cat("basis_b", np.int8),
        outcome_b=cat("outcome_b", np.int8),
        error=cat("error", bool),
        registered_a=reg_a,
        registered_b=reg_b,
        counts=counts,
        duration=duration,
    )
    stream_a = TagStream(ta, ca, "A", (0.0, 0.0), {"duration": duration})
    stream_b = TagStream(tb, cb, "B", (clocks.offset, clocks.drift), {"duration": duration})
    return stream_a, stream_b, truth


def synthesize(link: LinkModel, clocks=Clocks(), duration: float = 1.0, seed: int = 0):
    """Synthesize both arms' tag streams over ``[0, duration)`` seconds.

    Returns ``(stream_a, stream_b, truth)``. Times are integer picoseconds;
    arm B is expressed in its own clock (``clocks``), tags at negative local
    time are dropped.
    """
    if duration < 0:
        raise DomainError("duration must be >= 0")
    if not isinstance(clocks, Clocks):
        clocks = Clocks(*clocks)
    segs = _segments_for(link, duration) if duration > 0 else []
    return _run(segs, duration, int(seed), clocks)


def apply_pass_profile(link: LinkModel, profile, duration: float, seed: int = 0, clocks=Clocks()):
    """As :func:`synthesize` with loss (and background) following ``profile``."""
    if duration < 0:
        raise DomainError("duration must be >= 0")
    profile.check_coverage(duration)
    if not isinstance(clocks, Clocks):
        clocks = Clocks(*clocks)
    segs = _segments_for(link, duration, profile, link) if duration > 0 else []
    return _run(segs, duration, int(seed), clocks)


def block_count(duration: float) -> int:
    return int(math.ceil(duration / BLOCK_S - 1e-12))
