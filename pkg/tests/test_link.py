import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdsim.core import ChannelParams, DetectorParams, ProtocolParams, SourceParams
from qkdsim.errors import DomainError
from qkdsim.link import Arm, LinkModel, SweepVariable, predict, sweep, write_sweep_csv
from qkdsim.presets import micius_dual, snspd_dual, terrestrial


def ideal_link(mu=0.01, loss_b=20.0, e_d=0.0):
    return LinkModel(SourceParams(mu / 1e-9, 1.0, 1.0, e_d), Arm(), Arm(ChannelParams(loss_b)),
                     ProtocolParams(1e-9), reference_loss_db=0.0)


def test_terrestrial_reference_point():
    p = predict(terrestrial(43.52, 0.0402))
    signal_a = 0.0402 / 1e-9 * 0.3142
    assert signal_a == pytest.approx(1.26e7, rel=0.01)
    # registered singles add 3% afterpulses and dark counts on top of the signal
    assert p.singles_a == pytest.approx(signal_a * 1.03 + 1000, rel=1e-3)
    assert p.true_coinc == pytest.approx(1.70e3, rel=0.01)
    assert p.accidental_coinc == pytest.approx(91, rel=0.2)
    assert p.qber == pytest.approx(0.057, abs=0.005)
    assert p.sifted_rate == pytest.approx(894, rel=0.02)


def test_accidentals_oracle():
    # every unpaired tag meets the other side with probability rate * window
    link = terrestrial(43.52, 0.0402)
    p = predict(link)
    acc = 1e-9 * (p.singles_a - p.true_coinc) * (p.singles_b - p.true_coinc)
    assert p.accidental_coinc == pytest.approx(acc, rel=1e-9)


def test_source_off_gives_pure_accidentals():
    p = predict(terrestrial(43.52, 0.0))
    assert p.true_coinc == 0.0
    assert p.qber_z == pytest.approx(0.5) and p.qber_x == pytest.approx(0.5)
    assert p.skr == 0.0


def test_opaque_channel_has_no_key():
    assert predict(terrestrial(200.0)).skr == 0.0


def test_ideal_link_closed_form():
    mu, loss = 0.01, 20.0
    p = predict(ideal_link(mu, loss))
    rate = mu / 1e-9
    assert p.singles_a == pytest.approx(rate)
    assert p.singles_b == pytest.approx(rate * 0.01)
    assert p.true_coinc == pytest.approx(rate * 0.01)
    # sifting keeps half the coincidences, split 0.4/0.6 between the bases
    assert p.sifted_rate_z == pytest.approx(0.5 * 0.4 * rate * 0.01, rel=1e-6)


def test_dead_time_saturation():
    det = DetectorParams(dead_time=50e-9)
    link = LinkModel(SourceParams(1e8), Arm(detector=det), Arm(detector=det), ProtocolParams(1e-9),
                     reference_loss_db=0.0)
    p = predict(link)
    r = 1e8 / 4  # per detector with uniform bases on A
    assert p.singles_a == pytest.approx(4 * r / (1 + r * 50e-9), rel=1e-9)


def test_jitter_capture():
    det = DetectorParams(jitter_sigma=500e-12)
    link = LinkModel(SourceParams(1e6), Arm(detector=det), Arm(detector=det), ProtocolParams(1e-9),
                     reference_loss_db=0.0)
    sigma = math.hypot(500e-12, 500e-12)
    assert predict(link).window_capture == pytest.approx(math.erf(0.5e-9 / (sigma * math.sqrt(2))))


def test_basis_stats_scale_with_duration():
    p = predict(terrestrial())
    s = p.basis_stats(15.0)
    assert s.n_sift_z == pytest.approx(15 * p.sifted_rate_z)
    assert s.qber_x == p.qber_x


def test_total_loss_moves_only_receiver():
    link = terrestrial(43.52)
    assert link.arm_b.channel.loss_db == pytest.approx(38.72)
    assert link.total_loss_db == pytest.approx(43.52)
    with pytest.raises(DomainError):
        link.with_total_loss(1.0)


def test_dual_total_loss_split_evenly():
    m = micius_dual(70.0)
    assert m.arm_a.channel.loss_db == pytest.approx(35.0) == m.arm_b.channel.loss_db
    assert m.with_total_loss(64.0).arm_b.channel.loss_db == pytest.approx(32.0)


def test_swapped_is_symmetric_for_dual():
    m = snspd_dual()
    a, b = predict(m), predict(m.swapped())
    assert a.skr == pytest.approx(b.skr, rel=1e-12)


def test_invalid_basis_split():
    with pytest.raises(DomainError):
        ideal_link().__class__(SourceParams(1.0), Arm(), Arm(), ProtocolParams(), basis_split=(0.5, 0.6))


def test_sweep_loss_strictly_decreasing():
    series = sweep(terrestrial(), SweepVariable.LOSS_DB_TOTAL, np.linspace(35, 55, 41))
    skr = np.array([p.skr for _, p in series])
    positive = skr[skr > 0]
    assert positive.size > 10
    assert np.all(np.diff(positive) < 0)


def test_sweep_mu_unimodal():
    grid = np.geomspace(1e-4, 1.0, 80)
    skr = np.array([p.skr for _, p in sweep(terrestrial(), "mu", grid)])
    k = int(np.argmax(skr))
    assert 0 < k < grid.size - 1
    assert np.all(np.diff(skr[: k + 1]) >= 0)
    assert np.all(np.diff(skr[k:]) <= 0)


def test_single_point_sweep_equals_predict():
    link = terrestrial()
    ((v, p),) = sweep(link, "mu", [0.03])
    assert p == predict(link.with_mu(0.03))


@pytest.mark.parametrize("grid", [[], [0.1, 0.05]])
def test_sweep_bad_grid(grid):
    with pytest.raises(DomainError):
        sweep(terrestrial(), "mu", grid)


def test_sweep_csv_columns():
    fh = io.StringIO()
    write_sweep_csv(fh, "loss_db_total", sweep(terrestrial(), "loss_db_total", [40.0, 45.0]))
    lines = fh.getvalue().splitlines()
    assert lines[0] == "loss_db_total,skr_bps,qber_z,qber_x,singles_a_cps,singles_b_cps,coinc_total_cps"
    assert len(lines) == 3


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-4, 0.5), st.floats(30, 60))
def test_prediction_invariants(mu, loss):
    p = predict(terrestrial(loss, mu))
    assert 0 <= p.qber_z <= 0.5 and 0 <= p.qber_x <= 0.5
    assert p.skr >= 0
    assert p.coincidence_total <= min(p.singles_a, p.singles_b) + 1e-9
    assert p.sifted_rate <= p.coincidence_total
