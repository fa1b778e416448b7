"""Analytic forward model of a CW entangled-pair link.

Composition per detection module (four detectors, channel = 2*basis + outcome):

* signal clicks ``P * eta * p_basis / 2`` per detector, with ``P = mu / window``
  and ``eta`` the heralding efficiency times the channel transmission;
* afterpulses ``afterpulse_prob`` times the signal clicks, dark and background
  counts uniform over the four detectors (or a fixed ``noise_yield``);
* non-paralyzable dead time ``r' = r / (1 + r * dead_time)`` per detector;
* true coincidences ``P * eta_a * eta_b`` times the fraction of the
  two-detector jitter that falls inside the window;
* accidentals ``window * (R_a - true) * (R_b - true)``, i.e. every tag without
  a detected partner meets an uncorrelated tag of the other side with
  probability ``rate * window``. This is what one-to-one matching counts.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import core
from ._workers import ordered_map
from .core import (
    BasisStats,
    ChannelParams,
    DetectorParams,
    PhaseErrorMode,
    ProtocolParams,
    SourceParams,
)
from .errors import DomainError

N_DETECTORS = 4
ALICE_REFERENCE_LOSS_DB = 4.8


@dataclass(frozen=True)
class Arm:
    channel: ChannelParams = ChannelParams()
    detector: DetectorParams = DetectorParams()

    def with_loss(self, loss_db: float) -> "Arm":
        return replace(self, channel=replace(self.channel, loss_db=loss_db))

    def with_background(self, rate: float) -> "Arm":
        return replace(self, channel=replace(self.channel, background_rate_per_detector=rate))


def _check_split(split, name):
    p_z, p_x = split
    if p_z < 0 or p_x < 0 or abs(p_z + p_x - 1.0) > 1e-12:
        raise DomainError(f"{name} must be two non-negative probabilities summing to 1, got {split}")


@dataclass(frozen=True)
class LinkModel:
    """Source, two receiving arms and protocol constants.

    ``basis_split`` holds the receiver's (arm B) basis-choice probabilities
    ``(p_z, p_x)``; arm A chooses according to ``basis_split_a`` (uniform by
    default), so the basis-match probability stays 1/2 while the sifted key
    splits ``p_z : p_x`` between the bases.

    ``reference_loss_db`` is the part of arm A's loss that lives in its
    heralding efficiency but is still counted in the quoted total link loss.
    """

    source: SourceParams
    arm_a: Arm
    arm_b: Arm
    protocol: ProtocolParams
    basis_split: tuple = (0.4, 0.6)
    basis_split_a: tuple = (0.5, 0.5)
    reference_loss_db: float = ALICE_REFERENCE_LOSS_DB

    def __post_init__(self):
        _check_split(self.basis_split, "basis_split")
        _check_split(self.basis_split_a, "basis_split_a")

    @property
    def window(self) -> float:
        return self.protocol.coincidence_window

    @property
    def mu(self) -> float:
        return self.source.pair_rate * self.window

    def with_mu(self, mu: float) -> "LinkModel":
        if mu < 0:
            raise DomainError("mu must be >= 0")
        return replace(self, source=replace(self.source, pair_rate=mu / self.window))

    @property
    def total_loss_db(self) -> float:
        return self.arm_a.channel.loss_db + self.arm_b.channel.loss_db + self.reference_loss_db

    def with_total_loss(self, total_db: float) -> "LinkModel":
        """Set the quoted total loss by changing the receiver channel only."""
        loss_b = total_db - self.arm_a.channel.loss_db - self.reference_loss_db
        if loss_b < 0:
            raise DomainError(f"total loss {total_db} dB below the fixed arm-A share")
        return replace(self, arm_b=self.arm_b.with_loss(loss_b))

    def with_background(self, rate_per_detector: float) -> "LinkModel":
        """Set the ground-receiver background (arm B for a single link)."""
        return replace(self, arm_b=self.arm_b.with_background(rate_per_detector))

    def swapped(self) -> "LinkModel":
        src = replace(
            self.source,
            heralding_eff_a=self.source.heralding_eff_b,
            heralding_eff_b=self.source.heralding_eff_a,
        )
        return replace(
            self,
            source=src,
            arm_a=self.arm_b,
            arm_b=self.arm_a,
            basis_split=self.basis_split_a,
            basis_split_a=self.basis_split,
        )


@dataclass(frozen=True)
class RatePrediction:
    mu: float
    singles_a: float
    singles_b: float
    true_coinc: float
    accidental_coinc: float
    coincidence_total: float
    sifted_rate_z: float
    sifted_rate_x: float
    qber_z: float
    qber_x: float
    skr: float
    noise_yield_a: float = 0.0
    noise_yield_b: float = 0.0
    window_capture: float = 1.0

    @property
    def sifted_rate(self) -> float:
        return self.sifted_rate_z + self.sifted_rate_x

    @property
    def qber(self) -> float:
        s = self.sifted_rate
        if s <= 0:
            return 0.5
        return (self.qber_z * self.sifted_rate_z + self.qber_x * self.sifted_rate_x) / s

    def basis_stats(self, duration: float = 1.0) -> BasisStats:
        return BasisStats(
            self.sifted_rate_z * duration,
            self.sifted_rate_x * duration,
            self.qber_z,
            self.qber_x,
            duration,
        )


def arm_noise_rate(det: DetectorParams, background: float, window: float) -> float:
    """Total signal-independent click rate of one module (all four detectors)."""
    if det.noise_yield is not None:
        return det.noise_yield / window + N_DETECTORS * background
    return N_DETECTORS * (det.dark_rate + background)


def arm_afterpulse_prob(det: DetectorParams) -> float:
    # a fixed noise yield already contains the afterpulse contribution
    return 0.0 if det.noise_yield is not None else det.afterpulse_prob


class _ArmRates:
    """Per-detector rates of one module, indexed by channel 2*basis + outcome."""

    def __init__(self, pair_rate, eta, split, det: DetectorParams, background, window, mu):
        self.eta = eta
        p = np.array([split[0], split[0], split[1], split[1]]) / 2.0
        self.signal_share = p
        signal = pair_rate * eta * p
        noise_total = arm_noise_rate(det, background, window)
        afterpulse = arm_afterpulse_prob(det) * signal
        if det.noise_yield is not None:
            self.noise_yield = det.noise_yield + window * N_DETECTORS * background
        else:
            self.noise_yield = core.effective_noise_yield(
                mu, eta, det.afterpulse_prob, window, noise_total
            )
        raw = signal + afterpulse + noise_total / N_DETECTORS
        self.dead_factor = 1.0 / (1.0 + raw * det.dead_time)
        self.registered = raw * self.dead_factor

    def basis_dead_factor(self, b):
        # both outcome detectors of a basis see identical rates
        return self.dead_factor[2 * b]

    def basis_rate(self, b):
        return self.registered[2 * b] + self.registered[2 * b + 1]


def _window_capture(window, sigma_a, sigma_b):
    sigma = math.hypot(sigma_a, sigma_b)
    if sigma == 0:
        return 1.0
    return math.erf((window / 2.0) / (math.sqrt(2.0) * sigma))


def predict(link: LinkModel) -> RatePrediction:
    window = link.window
    mu = link.mu
    P = link.source.pair_rate
    src = link.source
    eta_a = src.heralding_eff_a * link.arm_a.channel.transmission
    eta_b = src.heralding_eff_b * link.arm_b.channel.transmission
    A = _ArmRates(P, eta_a, link.basis_split_a, link.arm_a.detector,
                  link.arm_a.channel.background_rate_per_detector, window, mu)
    B = _ArmRates(P, eta_b, link.basis_split, link.arm_b.detector,
                  link.arm_b.channel.background_rate_per_detector, window, mu)
    capture = _window_capture(window, link.arm_a.detector.jitter_sigma, link.arm_b.detector.jitter_sigma)

    base = P * eta_a * eta_b * capture
    true = np.empty((2, 2))
    for ba in (0, 1):
        for bb in (0, 1):
            true[ba, bb] = (base * link.basis_split_a[ba] * link.basis_split[bb]
                            * A.basis_dead_factor(ba) * B.basis_dead_factor(bb))
    true_all = float(true.sum())

    unpaired_a = [max(float(A.basis_rate(b) - true[b, :].sum()), 0.0) for b in (0, 1)]
    unpaired_b = [max(float(B.basis_rate(b) - true[:, b].sum()), 0.0) for b in (0, 1)]
    acc_all = float(window * sum(unpaired_a) * sum(unpaired_b))

    e_d = src.misalignment_error
    sifted = []
    qbers = []
    for b in (0, 1):
        acc_b = float(window * unpaired_a[b] * unpaired_b[b])
        s = float(true[b, b]) + acc_b
        sifted.append(s)
        qbers.append((e_d * float(true[b, b]) + 0.5 * acc_b) / s if s > 0 else 0.5)

    stats = BasisStats(sifted[0], sifted[1], qbers[0], qbers[1], 1.0)
    key = core.secure_key_length(stats, link.protocol.with_mode(PhaseErrorMode.SAME_BASIS_ASYMPTOTIC))

    return RatePrediction(
        mu=mu,
        singles_a=float(A.registered.sum()),
        singles_b=float(B.registered.sum()),
        true_coinc=true_all,
        accidental_coinc=acc_all,
        coincidence_total=true_all + acc_all,
        sifted_rate_z=sifted[0],
        sifted_rate_x=sifted[1],
        qber_z=qbers[0],
        qber_x=qbers[1],
        skr=float(key.rate),
        noise_yield_a=A.noise_yield,
        noise_yield_b=B.noise_yield,
        window_capture=capture,
    )


def skr_at(link: LinkModel, mu: float) -> float:
    return predict(link.with_mu(mu)).skr


class SweepVariable(str, enum.Enum):
    LOSS_DB_TOTAL = "loss_db_total"
    PAIR_RATE = "mu"


def sweep(link: LinkModel, variable, grid):
    """Evaluate :func:`predict` along a strictly increasing grid.

    Returns a list of ``(value, RatePrediction)``.
    """
    variable = SweepVariable(variable)
    values = [float(v) for v in grid]
    if not values:
        raise DomainError("sweep grid is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise DomainError("sweep grid must be strictly increasing")

    if variable is SweepVariable.LOSS_DB_TOTAL:
        def point(v):
            return v, predict(link.with_total_loss(v))
    else:
        def point(v):
            return v, predict(link.with_mu(v))
    return ordered_map(point, values)


SWEEP_COLUMNS = ("skr_bps", "qber_z", "qber_x", "singles_a_cps", "singles_b_cps", "coinc_total_cps")


def sweep_rows(variable, series):
    variable = SweepVariable(variable)
    header = (variable.value,) + SWEEP_COLUMNS
    rows = [
        (v, p.skr, p.qber_z, p.qber_x, p.singles_a, p.singles_b, p.coincidence_total)
        for v, p in series
    ]
    return header, rows


def write_sweep_csv(fh, variable, series):
    header, rows = sweep_rows(variable, series)
    w = csv.writer(fh)
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) for x in r])
