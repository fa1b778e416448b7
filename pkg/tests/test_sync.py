import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdsim.clock import ClockModel
from qkdsim.errors import DomainError, SyncError
from qkdsim.eventsim import Clocks, synthesize
from qkdsim.link import predict
from qkdsim.presets import terrestrial
from qkdsim.sync import (
    STACK_THRESHOLD,
    coarse_offset_search,
    drift_search,
    correlation_histogram,
    find_coincidences,
    recover_clock,
    track_drift,
)
from qkdsim.tags import TagStream, from_binary, to_binary

from conftest import OFFSET_S

PS = 1e12


def stream(times, channels=None):
    times = np.asarray(times, np.int64)
    if channels is None:
        channels = np.zeros(times.size, np.uint8)
    return TagStream(times, channels)


def poisson_stream(rng, rate, duration):
    n = rng.poisson(rate * duration)
    return stream(np.sort(rng.integers(0, int(duration * PS), n)), rng.integers(0, 4, n).astype(np.uint8))


def matching_oracle(ta, tb, half):
    """Greedy one-to-one by |dt|, ties to the earlier A then B index."""
    cand = [(abs(int(b) - int(a)), i, j, int(b) - int(a))
            for i, a in enumerate(ta) for j, b in enumerate(tb) if abs(int(b) - int(a)) <= half]
    cand.sort()
    used_a, used_b, out = set(), set(), []
    for _, i, j, d in cand:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            out.append((i, j, d))
    return sorted(out)


def test_identical_streams_zero_offset(rng):
    a = poisson_stream(rng, 1e5, 0.2)
    est = coarse_offset_search(a, a)
    assert abs(est.offset_ps) <= 1e-6 * PS


def test_offset_recovered_from_one_second(terrestrial_1s):
    _, a, b, _ = terrestrial_1s
    est = coarse_offset_search(a, b)
    assert abs(est.offset_ps - OFFSET_S * PS) <= 1000.0
    model = recover_clock(a, b)
    assert abs(model.offset_ps - OFFSET_S * PS) <= 1000.0


def test_independent_streams_fail(rng):
    a = poisson_stream(rng, 2e5, 1.0)
    b = poisson_stream(rng, 2e4, 1.0)
    with pytest.raises(SyncError) as info:
        recover_clock(a, b)
    assert info.value.significance is not None


def test_sparse_background_fluke_rejected(rng):
    # medians near one count make a peak-over-median ratio of 8 cheap
    a = poisson_stream(rng, 6.5e4, 2.0)
    b = poisson_stream(rng, 6.5e4, 2.0)
    with pytest.raises(SyncError):
        coarse_offset_search(a, b)


def test_drift_search_null(rng):
    a = poisson_stream(rng, 1e6, 2.0)
    b = poisson_stream(rng, 1e4, 2.0)
    assert drift_search(a, b).excess_z < STACK_THRESHOLD


@pytest.mark.slow
def test_drift_smeared_peak_recovered():
    # bright A, weak B: 1e-6 drift keeps the uncorrected peak near the noise
    a, b, _ = synthesize(terrestrial(), Clocks(OFFSET_S, 1e-6), 3.0, seed=21)
    est = drift_search(a, b)
    assert est.excess_z >= STACK_THRESHOLD
    assert abs(est.slope - 1e-6) <= est.slope_step
    model = recover_clock(a, b)
    assert model.slope == pytest.approx(1e-6, rel=0.01)
    assert abs(model.offset_ps - OFFSET_S * PS) <= 1000.0


def test_empty_stream_fails():
    with pytest.raises(SyncError):
        coarse_offset_search(TagStream.empty(), stream([1, 2]))


def test_zero_drift_slope():
    link = terrestrial(30.0)
    a, b, _ = synthesize(link, Clocks(OFFSET_S, 0.0), 2.0, seed=14)
    model = recover_clock(a, b)
    assert all(abs(s) < 1e-9 for _, s in model.segments)


def test_drift_recovered(low_loss_2s):
    _, a, b, _ = low_loss_2s
    model = recover_clock(a, b)
    assert model.slope == pytest.approx(1e-6, rel=0.01)
    assert abs(model.offset_ps - OFFSET_S * PS) <= 1000.0


def test_drift_step_recovered():
    link = terrestrial(30.0)
    a, b, _ = synthesize(link, Clocks(OFFSET_S, 0.0), 4.0, seed=15)
    knee = 2.3e12
    truth = ClockModel(0.0, ((0.0, 1e-6), (knee, -5e-7)))
    b_step = stream(np.rint(truth.apply(b.times.astype(float))), b.channels)
    model = recover_clock(a, b_step, segment_length=0.5)
    assert len(model.knots) == 1
    assert abs(model.knots[0] - knee) <= 0.5 * PS
    assert model.segments[0][1] == pytest.approx(1e-6, rel=0.02)
    assert model.segments[1][1] == pytest.approx(-5e-7, rel=0.02)


def test_track_drift_gap_on_empty_segment():
    rng = np.random.default_rng(0)
    t = np.sort(rng.integers(0, int(3 * PS), 300_000))
    t = t[(t < 1 * PS) | (t >= 2 * PS)]
    a = stream(t)
    b = stream(t + 5000)
    model = track_drift(a, b, 5000.0, segment_length=1.0)
    assert model.offset_ps == pytest.approx(5000.0, abs=100)


def test_single_pair():
    a = stream([1000])
    pairs = find_coincidences(a, a, ClockModel(), 1e-9)
    assert len(pairs) == 1 and pairs.dt_ps.tolist() == [0]


def test_window_zero_matches_only_equal_times():
    a = stream([100, 200, 300])
    b = stream([100, 201, 300])
    pairs = find_coincidences(a, b, ClockModel(), 0.0)
    assert pairs.index_a.tolist() == [0, 2]


def test_negative_window_rejected():
    with pytest.raises(DomainError):
        find_coincidences(stream([1]), stream([1]), ClockModel(), -1e-9)


@settings(max_examples=150)
@given(st.lists(st.integers(0, 5000), max_size=40), st.lists(st.integers(0, 5000), max_size=40),
       st.integers(0, 400))
def test_matching_is_greedy_one_to_one(ta, tb, half):
    ta, tb = sorted(ta), sorted(tb)
    pairs = find_coincidences(stream(ta), stream(tb), ClockModel(), 2 * half * 1e-12)
    got = sorted(zip(pairs.index_a.tolist(), pairs.index_b.tolist(), pairs.dt_ps.tolist()))
    assert len(set(pairs.index_a.tolist())) == len(pairs)
    assert len(set(pairs.index_b.tolist())) == len(pairs)
    assert got == matching_oracle(ta, tb, half)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=50), st.integers(0, 10**9))
def test_matching_shift_invariance(times, shift):
    rng = np.random.default_rng(len(times))
    ta = np.sort(np.array(times, np.int64))
    tb = np.sort(ta + rng.integers(-800, 800, ta.size))
    base = find_coincidences(stream(ta), stream(tb), ClockModel(), 1e-9)
    moved = find_coincidences(stream(ta), stream(tb + shift), ClockModel(float(shift)), 1e-9)
    assert np.array_equal(base.index_a, moved.index_a)
    assert np.array_equal(base.index_b, moved.index_b)
    assert np.array_equal(base.dt_ps, moved.dt_ps)


def test_coincidences_match_prediction(terrestrial_1s):
    link, a, b, _ = terrestrial_1s
    model = recover_clock(a, b)
    pairs = find_coincidences(a, b, model, link.window)
    expected = predict(link).coincidence_total
    assert abs(len(pairs) - expected) <= 3 * math.sqrt(expected)


def test_zero_jitter_single_bin_peak(low_loss_2s):
    _, a, b, _ = low_loss_2s
    model = recover_clock(a, b)
    h = correlation_histogram(a, b, model, 20e-9, 156e-12, fit=False)
    c = np.sort(h.counts)[::-1]
    assert c[0] > 20 * c[1]


def test_jitter_peak_width(micius_2s):
    link, a, b, _ = micius_2s
    model = recover_clock(a, b)
    h = correlation_histogram(a, b, model, 20e-9, 156e-12)
    # the preset splits a 770 ps histogram width evenly over the two arms
    combined = math.hypot(link.arm_a.detector.jitter_sigma, link.arm_b.detector.jitter_sigma) * PS
    assert combined == pytest.approx(770.0)
    assert h.fit_sigma_ps == pytest.approx(combined, rel=0.1)


def test_uniform_streams_flat_histogram(rng):
    a = poisson_stream(rng, 1e6, 0.5)
    b = poisson_stream(rng, 1e5, 0.5)
    h = correlation_histogram(a, b, ClockModel(), 20e-9, 156e-12, fit=False)
    assert h.counts.max() / np.median(h.counts) < 3


def test_histogram_counts_nonnegative(terrestrial_1s):
    _, a, b, _ = terrestrial_1s
    h = correlation_histogram(a, b, ClockModel.linear(OFFSET_S * PS), 20e-9, 156e-12, fit=False)
    assert h.counts.min() >= 0 and h.significance >= 1


def test_coincidence_throughput(terrestrial_1s):
    _, a, b, _ = terrestrial_1s
    data_a, data_b = to_binary(a), to_binary(b)
    model = ClockModel.linear(OFFSET_S * PS)
    find_coincidences(a, b, model, 1e-9)  # compile
    t0 = time.perf_counter()
    a2, b2 = from_binary(data_a), from_binary(data_b)
    find_coincidences(a2, b2, model, 1e-9)
    elapsed = time.perf_counter() - t0
    assert (len(a2) + len(b2)) / elapsed >= 1e7
