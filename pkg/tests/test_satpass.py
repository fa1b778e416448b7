import math

import numpy as np
import pytest

from qkdsim.errors import CoverageError, FormatError
from qkdsim.link import predict
from qkdsim.optimize import optimize_pair_rate
from qkdsim.presets import micius_dual
from qkdsim.satpass import (
    Fixed,
    PassProfile,
    TrackOptimum,
    constant_profile,
    elevation_profile,
    load_noise_profile,
    load_pass_profile,
    pass_skr,
    triangular_profile,
)


def test_flat_profile_fixed_at_optimum_equals_track():
    model = micius_dual(70.0)
    opt = optimize_pair_rate(model)
    prof = constant_profile(70.0, 5.0)
    fixed = pass_skr(prof, model, Fixed(opt.mu_opt))
    track = pass_skr(prof, model, TrackOptimum())
    assert fixed.total_bits == pytest.approx(track.total_bits, rel=1e-9)


def test_tracking_never_loses():
    model = micius_dual()
    prof = triangular_profile(80.0, 62.0, 20.0, 2.0)
    fixed = pass_skr(prof, model, Fixed(0.0492))
    track = pass_skr(prof, model, TrackOptimum())
    assert track.total_bits >= fixed.total_bits
    for f, t in zip(fixed.bins, track.bins):
        assert t.skr_bps >= f.skr_bps * (1 - 1e-9)


def test_concatenated_profiles_add():
    model = micius_dual()
    p1 = constant_profile(65.0, 3.0)
    p2 = triangular_profile(75.0, 68.0, 4.0)
    joined = pass_skr(p1.concat(p2), model, Fixed(0.05)).total_bits
    parts = pass_skr(p1, model, Fixed(0.05)).total_bits + pass_skr(p2, model, Fixed(0.05)).total_bits
    assert joined == pytest.approx(parts, rel=1e-12)


def test_bin_bits_are_rate_times_duration():
    model = micius_dual()
    res = pass_skr(constant_profile(70.0, 2.0, 0.5), model, Fixed(0.05))
    skr = predict(model.with_total_loss(70.0).with_mu(0.05)).skr
    assert res.total_bits == pytest.approx(2.0 * skr)
    assert res.duration == pytest.approx(2.0)


def test_elevation_profile_u_shape():
    prof = elevation_profile(60.0, 80.0, 100.0)
    k = int(np.argmin(prof.loss_db))
    assert abs(k - 50) <= 1
    assert np.all(np.diff(prof.loss_db[: k + 1]) <= 0)
    assert np.all(np.diff(prof.loss_db[k:]) >= 0)
    skr = [b.skr_bps for b in pass_skr(prof, micius_dual(), Fixed(0.05)).bins]
    assert int(np.argmax(skr)) == k


def test_noise_per_detector_and_summed(tmp_path):
    p = tmp_path / "noise.csv"
    p.write_text("t_s,counts_per_s\n0,450\n1,1800\n")
    per = load_noise_profile(p)
    summed = load_noise_profile(p, detectors_summed=True)
    assert per.at([0.5]).tolist() == [450.0]
    assert summed.at([0.5, 1.5]).tolist() == [112.5, 450.0]


def test_noise_lowers_rate(tmp_path):
    p = tmp_path / "noise.csv"
    p.write_text("t_s,counts_per_s\n0,0\n2,5000\n")
    prof = constant_profile(70.0, 4.0).with_noise(load_noise_profile(p))
    bins = pass_skr(prof, micius_dual(), Fixed(0.05)).bins
    assert bins[0].skr_bps > bins[3].skr_bps


def test_profile_csv(tmp_path):
    p = tmp_path / "pass.csv"
    p.write_text("t_s,loss_db,background_cps\n0,70,10\n1,68,12\n")
    prof = load_pass_profile(p)
    assert prof.loss_db.tolist() == [70.0, 68.0]
    assert prof.background_cps.tolist() == [10.0, 12.0]
    bad = tmp_path / "bad.csv"
    bad.write_text("t_s,loss\n0,70\n")
    with pytest.raises(FormatError):
        load_pass_profile(bad)


def test_profile_validation_and_coverage():
    with pytest.raises(FormatError):
        PassProfile(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    prof = PassProfile(np.array([0.0, 5.0]), np.array([60.0, 60.0]))
    with pytest.raises(CoverageError):
        prof.check_coverage(6.0)


def test_unreachable_bin_gives_zero_under_track():
    res = pass_skr(constant_profile(120.0, 1.0), micius_dual(), TrackOptimum())
    assert res.bins[0].skr_bps == 0.0 and math.isnan(res.bins[0].mu_used)


def test_dual_reference_point_positive():
    assert predict(micius_dual(70.0, 0.0492)).skr > 0


def test_opaque_arm_has_no_key():
    from dataclasses import replace

    m = micius_dual(70.0)
    m = replace(m, arm_b=m.arm_b.with_loss(300.0))
    assert predict(m).skr == 0.0


def test_single_downlink_tracking_beats_fixed_extremes():
    from qkdsim.presets import terrestrial

    model = terrestrial()
    prof = triangular_profile(45.0, 29.0, 30.0)
    track = pass_skr(prof, model, TrackOptimum()).total_bits
    for loss in (29.0, 45.0):
        mu = optimize_pair_rate(model.with_total_loss(loss)).mu_opt
        fixed = pass_skr(prof, model, Fixed(mu)).total_bits
        margin = track / fixed - 1.0
        print(f"tracking gain over fixed mu_opt({loss:g} dB): {100 * margin:.3f}%")
        assert margin > 1e-6


def test_empty_noise_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(FormatError):
        load_noise_profile(p)


def test_noise_file_validation(tmp_path):
    p = tmp_path / "noise.csv"
    p.write_text("t_s,counts_per_s\n0,10\n0,20\n")
    with pytest.raises(FormatError):
        load_noise_profile(p)
    p.write_text("t_s,counts_per_s\n0,-1\n")
    with pytest.raises(FormatError):
        load_noise_profile(p)


def test_constant_noise_equals_terrestrial_background(tmp_path):
    from qkdsim.presets import BACKGROUND_PER_DETECTOR

    p = tmp_path / "noise.csv"
    p.write_text("t_s,counts_per_s\n" + "".join(f"{t},450\n" for t in range(5)))
    assert np.all(load_noise_profile(p).at(np.arange(5.0)) == BACKGROUND_PER_DETECTOR)


def test_u_shaped_noise_with_spike_preserved(tmp_path):
    t = np.arange(11.0)
    c = 100 + 40 * (t - 5) ** 2
    c[3] = 5000  # a star crossing the field of view
    p = tmp_path / "noise.csv"
    p.write_text("t_s,counts_per_s\n" + "".join(f"{a},{b}\n" for a, b in zip(t, c)))
    got = load_noise_profile(p).at(t)
    assert got.tolist() == c.tolist()
    assert got[0] > got[5] < got[-1]
