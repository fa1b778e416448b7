"""Parameter sets of the three reference scenarios.

``terrestrial``: the 143 km island-to-island link (Alice local, Bob over the
free-space channel). ``micius_dual``: symmetric dual downlink from a LEO
source with avalanche photodiodes. ``snspd_dual``: the same downlink with
superconducting nanowire detectors.
"""
from __future__ import annotations

import math

from .core import (
    ChannelParams,
    DetectorParams,
    PhaseErrorMode,
    ProtocolParams,
    SourceParams,
    pair_rate_per_window,
)
from .link import Arm, LinkModel

# terrestrial link, fixed measured values
TERRESTRIAL_HERALDING_A = 0.3142
TERRESTRIAL_SINGLES_A = 1.57e7
TERRESTRIAL_MISALIGNMENT = 0.033
TERRESTRIAL_NOISE_YIELD_A = 4.71e-4
TERRESTRIAL_NOISE_YIELD_B = 2.2e-6
TERRESTRIAL_WINDOW = 1e-9
BACKGROUND_PER_DETECTOR = 450.0
AFTERPULSE_PROB = 0.03
DARK_RATE_PER_MODULE = 1000.0

# dual downlink
MICIUS_WINDOW = 2.5e-9
MICIUS_MISALIGNMENT = 0.015
MICIUS_HISTOGRAM_SIGMA = 770e-12
MICIUS_SINGLES_A = 5.9e6
MICIUS_HERALDING = 0.30

SNSPD_WINDOW = 66.6e-12
SNSPD_NOISE_YIELD = 3.3e-9
SNSPD_DEAD_TIME = 25e-9
SNSPD_JITTER = 20e-12
SNSPD_TOTAL_LOSS = 70.0


def terrestrial_mu() -> float:
    """Pair rate per window implied by the measured singles and noise yield."""
    return pair_rate_per_window(
        TERRESTRIAL_SINGLES_A, TERRESTRIAL_NOISE_YIELD_A, TERRESTRIAL_WINDOW, TERRESTRIAL_HERALDING_A
    )


def micius_mu() -> float:
    return pair_rate_per_window(MICIUS_SINGLES_A, 0.0, MICIUS_WINDOW, MICIUS_HERALDING)


def terrestrial(total_loss_db: float = 43.52, mu: float | None = None,
                mode=PhaseErrorMode.SAME_BASIS_ASYMPTOTIC) -> LinkModel:
    if mu is None:
        mu = terrestrial_mu()
    window = TERRESTRIAL_WINDOW
    alice = Arm(
        ChannelParams(0.0, 0.0),
        DetectorParams(dark_rate=DARK_RATE_PER_MODULE / 4, afterpulse_prob=AFTERPULSE_PROB),
    )
    bob = Arm(
        ChannelParams(0.0, BACKGROUND_PER_DETECTOR),
        DetectorParams(dark_rate=50.0, afterpulse_prob=AFTERPULSE_PROB),
    )
    link = LinkModel(
        source=SourceParams(mu / window, TERRESTRIAL_HERALDING_A, 1.0, TERRESTRIAL_MISALIGNMENT),
        arm_a=alice,
        arm_b=bob,
        protocol=ProtocolParams(window, 1.2, 1e-5, mode),
        basis_split=(0.4, 0.6),
    )
    return link.with_total_loss(total_loss_db)


def _dual(total_loss_db, mu, window, misalignment, detector):
    from .satpass import DualLinkModel

    arm = Arm(ChannelParams(total_loss_db / 2.0, 0.0), detector)
    return DualLinkModel(
        source=SourceParams(mu / window, 1.0, 1.0, misalignment),
        arm_a=arm,
        arm_b=arm,
        protocol=ProtocolParams(window, 1.2, 1e-5),
        basis_split=(0.5, 0.5),
        reference_loss_db=0.0,
    )


def micius_dual(total_loss_db: float = 70.0, mu: float | None = None):
    if mu is None:
        mu = micius_mu()
    det = DetectorParams(
        dark_rate=DARK_RATE_PER_MODULE / 4,
        afterpulse_prob=AFTERPULSE_PROB,
        jitter_sigma=MICIUS_HISTOGRAM_SIGMA / math.sqrt(2.0),
    )
    return _dual(total_loss_db, mu, MICIUS_WINDOW, MICIUS_MISALIGNMENT, det)


def snspd_dual(total_loss_db: float = SNSPD_TOTAL_LOSS, mu: float = 0.05):
    det = DetectorParams(
        dead_time=SNSPD_DEAD_TIME,
        jitter_sigma=SNSPD_JITTER,
        noise_yield=SNSPD_NOISE_YIELD,
    )
    return _dual(total_loss_db, mu, SNSPD_WINDOW, MICIUS_MISALIGNMENT, det)


PRESETS = {
    "terrestrial": terrestrial,
    "micius": micius_dual,
    "snspd": snspd_dual,
}
