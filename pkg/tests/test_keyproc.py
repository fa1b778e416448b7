import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdsim.clock import ClockModel
from qkdsim.core import BasisStats, ProtocolParams
from qkdsim.errors import (
    ConventionError,
    DegenerateSampleError,
    DomainError,
    PipelineError,
    ReconciliationAbort,
    SyncError,
)
from qkdsim.eventsim import Clocks, synthesize
from qkdsim.keyproc import (
    DisclosedSample,
    OracleFull,
    SiftedKey,
    analyze,
    bits_to_hex,
    distill,
    estimate_qber,
    full_pipeline,
    hex_to_bits,
    leakage_bits,
    privacy_amplify,
    reconcile_oracle,
    sift,
    toeplitz_row,
)
from qkdsim.link import predict
from qkdsim.tags import TagStream

from conftest import REFERENCE_RUN
from test_eventsim import simple_link

PA_GOLDEN = "8218339fdf608dee"


def toeplitz_oracle(key, out_len, seed):
    n = len(key)
    r = toeplitz_row(n, out_len, seed)
    T = np.array([[r[i - j + n - 1] for j in range(n)] for i in range(out_len)], dtype=np.int64)
    return (T.reshape(out_len, n) @ np.asarray(key, np.int64)) % 2


def test_sift_all_matched():
    s = sift([0, 1, 1], [0, 1, 0], [0, 1, 1], [1, 0, 1])
    assert s.discarded == 0
    assert s.bits_a.tolist() == s.bits_b.tolist() == [0, 1, 0]


def test_sift_discards_half(rng):
    n = 100_000
    s = sift(rng.integers(0, 2, n), rng.integers(0, 2, n), rng.integers(0, 2, n), rng.integers(0, 2, n))
    assert abs(s.discarded / n - 0.5) <= 3 * math.sqrt(0.25 / n)
    assert len(s) + s.discarded == n


def test_sift_without_flip():
    s = sift([0], [1], [0], [1], flip_b=False)
    assert s.bits_b.tolist() == [1]


def test_ordered_groups_z_first():
    k = SiftedKey([1, 0, 1, 0], [1, 0, 1, 0], [1, 0, 1, 0]).ordered()
    assert k.basis.tolist() == [0, 0, 1, 1]


def test_qber_identical_keys():
    bits = np.array([0, 1, 1, 0, 1, 0], np.uint8)
    est = estimate_qber(SiftedKey(bits, bits, [0, 0, 0, 1, 1, 1]))
    assert est.stats.qber_z == 0 and est.stats.qber_x == 0


def test_qber_complementary_keys_flag_convention():
    bits = np.array([0, 1, 1, 0], np.uint8)
    with pytest.raises(ConventionError) as info:
        estimate_qber(SiftedKey(bits, 1 - bits, [0, 0, 1, 1]))
    assert info.value.qber_z == 1.0


def test_qber_empty_basis():
    with pytest.raises(DegenerateSampleError):
        estimate_qber(SiftedKey([0, 1], [0, 1], [0, 0]))


def test_disclosed_sample_is_unbiased(rng):
    n = 20_000
    a = rng.integers(0, 2, n).astype(np.uint8)
    b = a ^ (rng.random(n) < 0.05).astype(np.uint8)
    basis = rng.integers(0, 2, n)
    key = SiftedKey(a, b, basis)
    full = estimate_qber(key).stats.qber_z
    samples = [estimate_qber(key, DisclosedSample(0.1, s)).stats.qber_z for s in range(100)]
    m_z = int(np.count_nonzero(basis == 0))
    sigma = math.sqrt(full * (1 - full) / (0.1 * m_z)) / math.sqrt(100)
    assert abs(np.mean(samples) - full) <= 3 * sigma


def test_disclosed_bits_are_removed():
    n = 1000
    key = SiftedKey(np.zeros(n), np.zeros(n), np.arange(n) % 2)
    est = estimate_qber(key, DisclosedSample(0.1, 3))
    assert est.disclosed == 100
    assert len(est.key) == 900 == est.stats.n_sift_z + est.stats.n_sift_x


def test_leakage_values():
    assert reconcile_oracle(np.zeros(100), np.zeros(100))[1] == 0
    assert leakage_bits(10_000, 0.066, 1.2) == 4210
    a = np.zeros(10_000, np.uint8)
    b = a.copy()
    b[:660] = 1
    corrected, leak = reconcile_oracle(a, b, 1.2)
    assert leak == 4210
    assert np.array_equal(corrected, a)


def test_reconcile_abort():
    with pytest.raises(ReconciliationAbort):
        reconcile_oracle(np.zeros(4), np.array([1, 1, 0, 0]))


def test_privacy_amplify_empty_and_too_long():
    assert privacy_amplify(np.ones(10), 0).size == 0
    with pytest.raises(DomainError):
        privacy_amplify(np.ones(10), 11)


def test_privacy_amplify_golden():
    key = np.unpackbits(np.full(16, 0xFF, np.uint8))
    assert bits_to_hex(privacy_amplify(key, 64, 42)) == PA_GOLDEN


@settings(max_examples=40)
@given(st.integers(1, 60), st.data())
def test_privacy_amplify_matches_matrix(n, data):
    out = data.draw(st.integers(0, n))
    seed = data.draw(st.integers(0, 2**32))
    key = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), np.uint8)
    assert privacy_amplify(key, out, seed).tolist() == toeplitz_oracle(key, out, seed).tolist()


@given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16))
def test_privacy_amplify_linear(x, y):
    a = np.unpackbits(np.frombuffer(x, np.uint8))
    b = np.unpackbits(np.frombuffer(y, np.uint8))
    assert np.array_equal(privacy_amplify(a ^ b, 64, 7), privacy_amplify(a, 64, 7) ^ privacy_amplify(b, 64, 7))


def test_hex_roundtrip():
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1], np.uint8)
    assert hex_to_bits(bits_to_hex(bits), 9).tolist() == bits.tolist()


def test_analyze_reference_run(reference_stats):
    report = analyze(reference_stats, ProtocolParams(phase_error_mode="cross_basis_with_deviation"))
    assert report.skr == pytest.approx(REFERENCE_RUN["skr"], rel=0.05)
    assert report.final_length <= reference_stats.n_sift_z + reference_stats.n_sift_x - report.leakage_bits


def test_report_json_is_complete(reference_stats):
    d = json.loads(analyze(reference_stats).to_json())
    for key in ("n_sift_z", "qber_x", "leakage_bits", "final_length", "skr_bps", "aborted"):
        assert key in json.dumps(d)


def test_distill_respects_bound(rng):
    n = 4000
    a = rng.integers(0, 2, n).astype(np.uint8)
    b = a ^ (rng.random(n) < 0.03).astype(np.uint8)
    report = distill(SiftedKey(a, b, rng.integers(0, 2, n)), ProtocolParams(), 1.0)
    assert report.final_length == min(report.key_length.n_bits, n - report.leakage_bits)
    assert report.final_key.size == report.final_length


def test_noiseless_pipeline_keeps_every_sifted_bit():
    link = simple_link(2e5)
    a, b, _ = synthesize(link, Clocks(1e-4, 0.0), 0.5, seed=3)
    report = full_pipeline(a, b)
    assert report.stats.qber_z == 0 and report.stats.qber_x == 0
    n_sifted = report.stats.n_sift_z + report.stats.n_sift_x
    assert report.final_length == n_sifted
    assert report.n_discarded == pytest.approx(report.n_pairs / 2, rel=0.05)


def test_pipeline_qber_matches_model(terrestrial_1s):
    link, a, b, _ = terrestrial_1s
    report = full_pipeline(a, b, ProtocolParams())
    p = predict(link)
    n = report.stats.n_sift_z + report.stats.n_sift_x
    q = (report.stats.qber_z * report.stats.n_sift_z + report.stats.qber_x * report.stats.n_sift_x) / n
    assert abs(q - p.qber) <= 3 * math.sqrt(p.qber * (1 - p.qber) / n)


def test_pipeline_with_known_clock_matches_recovery(terrestrial_1s):
    _, a, b, _ = terrestrial_1s
    known = full_pipeline(a, b, clock=ClockModel.linear(478.12e-6 * 1e12))
    assert known.final_length > 0


def test_pipeline_labels_sync_failure(rng):
    n = 20_000
    a = TagStream(np.sort(rng.integers(0, 10**12, n)), rng.integers(0, 4, n))
    b = TagStream(np.sort(rng.integers(0, 10**12, n // 10)), rng.integers(0, 4, n // 10))
    with pytest.raises(PipelineError) as info:
        full_pipeline(a, b)
    assert info.value.stage == "sync"
    assert isinstance(info.value.cause, SyncError)


def test_pipeline_labels_convention_failure():
    link = simple_link(2e5)
    a, b, _ = synthesize(link, Clocks(), 0.2, seed=1)
    flipped = TagStream(b.times, b.channels ^ 1)
    with pytest.raises(PipelineError) as info:
        full_pipeline(a, flipped, clock=ClockModel())
    assert info.value.stage == "qber"
