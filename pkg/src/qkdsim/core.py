"""Closed-form link and key-rate quantities.

Everything here is a pure function of its arguments. Rates are in counts per
second, times in seconds, losses in dB, and the pair rate ``mu`` is always the
dimensionless number of emitted pairs per coincidence window (pairs per second
is ``mu / window``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist

import numpy as np

from .errors import (
    AccidentalDominatedError,
    DegenerateSampleError,
    DomainError,
    NegativeSignalError,
)


class PhaseErrorMode(str, enum.Enum):
    SAME_BASIS_ASYMPTOTIC = "same_basis_asymptotic"
    SAME_BASIS_WITH_DEVIATION = "same_basis_with_deviation"
    CROSS_BASIS_WITH_DEVIATION = "cross_basis_with_deviation"

    @property
    def has_deviation(self) -> bool:
        return self is not PhaseErrorMode.SAME_BASIS_ASYMPTOTIC

    @property
    def cross_basis(self) -> bool:
        return self is PhaseErrorMode.CROSS_BASIS_WITH_DEVIATION


class DeviationBound(str, enum.Enum):
    NORMAL = "normal"
    SERFLING = "serfling"


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol constants entering the key-length bound.

    Attributes
    ----------
    coincidence_window : float
        Full width of the coincidence window in seconds. Two detections pair
        up when their corrected times differ by at most half of it.
    ec_efficiency : float
        Error-correction leakage relative to the Shannon limit (>= 1).
    phase_error_failure_prob : float
        Failure probability used by the statistical deviation on the phase error.
    phase_error_mode : PhaseErrorMode
        How the phase-error rate of each basis is obtained.
    deviation_bound : DeviationBound
        Which deviation formula the ``*_WITH_DEVIATION`` modes use.
    """

    coincidence_window: float = 1e-9
    ec_efficiency: float = 1.2
    phase_error_failure_prob: float = 1e-5
    phase_error_mode: PhaseErrorMode = PhaseErrorMode.SAME_BASIS_ASYMPTOTIC
    deviation_bound: DeviationBound = DeviationBound.NORMAL

    def __post_init__(self):
        if not self.coincidence_window > 0:
            raise DomainError(f"coincidence window must be > 0, got {self.coincidence_window}")
        if not self.ec_efficiency >= 1.0:
            raise DomainError(f"ec_efficiency must be >= 1, got {self.ec_efficiency}")
        if not 0 < self.phase_error_failure_prob < 1:
            raise DomainError(
                f"phase_error_failure_prob must be in (0, 1), got {self.phase_error_failure_prob}"
            )
        object.__setattr__(self, "phase_error_mode", PhaseErrorMode(self.phase_error_mode))
        object.__setattr__(self, "deviation_bound", DeviationBound(self.deviation_bound))

    def with_mode(self, mode) -> "ProtocolParams":
        return replace(self, phase_error_mode=PhaseErrorMode(mode))


@dataclass(frozen=True)
class BasisStats:
    n_sift_z: float
    n_sift_x: float
    qber_z: float
    qber_x: float
    duration: float = 1.0

    def __post_init__(self):
        if self.n_sift_z < 0 or self.n_sift_x < 0:
            raise DomainError("sifted counts must be >= 0")
        for name in ("qber_z", "qber_x"):
            q = getattr(self, name)
            if not 0.0 <= q <= 0.5:
                raise DomainError(f"{name} must be in [0, 0.5], got {q}")
        if not self.duration > 0:
            raise DomainError(f"duration must be > 0, got {self.duration}")

    @property
    def n_sifted(self) -> float:
        return self.n_sift_z + self.n_sift_x

    def to_dict(self) -> dict:
        return {
            "n_sift_z": self.n_sift_z,
            "n_sift_x": self.n_sift_x,
            "qber_z": self.qber_z,
            "qber_x": self.qber_x,
            "duration": self.duration,
        }


@dataclass(frozen=True)
class PhaseErrorEstimate:
    e_ph_z: float
    e_ph_x: float
    deviation_z: float = 0.0
    deviation_x: float = 0.0

    @property
    def deviation(self) -> float:
        return max(self.deviation_z, self.deviation_x)


@dataclass(frozen=True)
class SourceParams:
    """Photon-pair source.

    ``pair_rate`` is in pairs per second. The heralding efficiencies are the
    arm transmissions that are not part of the channel loss (for the
    terrestrial link Alice's whole arm, for Bob usually 1).
    """

    pair_rate: float
    heralding_eff_a: float = 1.0
    heralding_eff_b: float = 1.0
    misalignment_error: float = 0.0
    visibility: float | None = None

    def __post_init__(self):
        if self.pair_rate < 0:
            raise DomainError("pair_rate must be >= 0")
        for name in ("heralding_eff_a", "heralding_eff_b"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name} must be in (0, 1], got {v}")
        if not 0 <= self.misalignment_error <= 0.5:
            raise DomainError("misalignment_error must be in [0, 0.5]")
        if self.visibility is not None:
            object.__setattr__(self, "misalignment_error", visibility_to_error(self.visibility))

    def mu(self, window: float) -> float:
        return self.pair_rate * window


@dataclass(frozen=True)
class DetectorParams:
    """One detection module of four detectors (basis bit x outcome bit).

    ``dark_rate`` is per detector. When ``noise_yield`` (noise clicks per
    coincidence window for the whole module) is given, it replaces both the
    dark counts and the afterpulse contribution.
    """

    dark_rate: float = 0.0
    dead_time: float = 0.0
    afterpulse_prob: float = 0.0
    jitter_sigma: float = 0.0
    noise_yield: float | None = None

    def __post_init__(self):
        for name in ("dark_rate", "dead_time", "afterpulse_prob", "jitter_sigma"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.afterpulse_prob >= 1:
            raise DomainError("afterpulse_prob must be < 1")
        if self.noise_yield is not None and self.noise_yield < 0:
            raise DomainError("noise_yield must be >= 0")


@dataclass(frozen=True)
class ChannelParams:
    loss_db: float = 0.0
    background_rate_per_detector: float = 0.0

    def __post_init__(self):
        if not self.loss_db >= 0 or math.isnan(self.loss_db):
            raise DomainError(f"loss_db must be >= 0, got {self.loss_db}")
        if self.background_rate_per_detector < 0:
            raise DomainError("background_rate_per_detector must be >= 0")

    @property
    def transmission(self) -> float:
        return db_to_transmission(self.loss_db)


# ---------------------------------------------------------------------------
# entropy and phase error
# ---------------------------------------------------------------------------


def binary_entropy(p):
    """Binary Shannon entropy in bits, with H2(0) = H2(1) = 0.

    Accepts scalars or arrays; raises DomainError outside [0, 1].
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise DomainError(f"binary entropy argument outside [0, 1]: {p}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1.0 - arr) * np.log2(1.0 - arr)
    h = np.where((arr <= 0.0) | (arr >= 1.0), 0.0, h)
    if h.ndim == 0:
        return float(h)
    return h


def normal_quantile(eps: float) -> float:
    """One-sided standard normal quantile z with P(Z > z) = eps."""
    if not 0 < eps < 1:
        raise DomainError(f"eps must be in (0, 1), got {eps}")
    return NormalDist().inv_cdf(1.0 - eps)


def _normal_deviation(e, n_key, n_test, eps):
    z = normal_quantile(eps)
    return z * math.sqrt(e * (1.0 - e) * (1.0 / n_key + 1.0 / n_test))


def _serfling_deviation(e, n_key, n_test, eps):
    # sampling without replacement: n_test bits estimate the error rate of n_key bits
    return math.sqrt(
        (1.0 / n_key + 1.0 / n_test) * (n_test + 1) / (2.0 * n_test) * math.log(1.0 / eps)
    )


def phase_error_estimate(
    base_qber,
    n_z: float,
    n_x: float,
    eps: float = 1e-5,
    mode=PhaseErrorMode.SAME_BASIS_ASYMPTOTIC,
    bound=DeviationBound.NORMAL,
) -> PhaseErrorEstimate:
    """Estimate the phase-error rate of each basis.

    ``base_qber`` is either one QBER used for both bases or a
    ``(qber_z, qber_x)`` pair. In same-basis modes the phase error of a basis
    starts from that basis' QBER; in the cross-basis mode it starts from the
    conjugate basis' QBER. Deviation modes add a statistical term and the
    result is clamped to 0.5.
    """
    mode = PhaseErrorMode(mode)
    bound = DeviationBound(bound)
    if isinstance(base_qber, (tuple, list)):
        e_z, e_x = (float(v) for v in base_qber)
    else:
        e_z = e_x = float(base_qber)
    for e in (e_z, e_x):
        if not 0.0 <= e <= 0.5:
            raise DomainError(f"QBER must be in [0, 0.5], got {e}")

    if mode.cross_basis:
        base_for_z, base_for_x = e_x, e_z
    else:
        base_for_z, base_for_x = e_z, e_x

    if not mode.has_deviation:
        return PhaseErrorEstimate(base_for_z, base_for_x)

    if n_z <= 0 or n_x <= 0:
        raise DegenerateSampleError(
            f"deviation mode {mode.value} needs both sifted sets non-empty (n_z={n_z}, n_x={n_x})"
        )
    dev = _normal_deviation if bound is DeviationBound.NORMAL else _serfling_deviation
    # the z-basis phase error is tested on x bits in cross mode, and vice versa
    if mode.cross_basis:
        th_z = dev(base_for_z, n_z, n_x, eps)
        th_x = dev(base_for_x, n_x, n_z, eps)
    else:
        th_z = dev(base_for_z, n_z, n_x, eps)
        th_x = dev(base_for_x, n_x, n_z, eps)
    return PhaseErrorEstimate(
        min(base_for_z + th_z, 0.5),
        min(base_for_x + th_x, 0.5),
        th_z,
        th_x,
    )


# ---------------------------------------------------------------------------
# key length
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyLength:
    """Result of the key-length bound.

    ``bits`` is the (real-valued) bound, ``n_bits`` the integer key length that
    privacy amplification produces, ``rate`` bits per second.
    """

    bits: float
    term_z: float
    term_x: float
    phase: PhaseErrorEstimate
    duration: float
    aborted: bool

    @property
    def n_bits(self) -> int:
        return int(math.floor(self.bits))

    @property
    def rate(self) -> float:
        return self.bits / self.duration


def secure_key_length(stats: BasisStats, protocol: ProtocolParams) -> KeyLength:
    f = protocol.ec_efficiency
    phase = phase_error_estimate(
        (stats.qber_z, stats.qber_x),
        stats.n_sift_z,
        stats.n_sift_x,
        protocol.phase_error_failure_prob,
        protocol.phase_error_mode,
        protocol.deviation_bound,
    )
    raw_z = stats.n_sift_z * (1.0 - binary_entropy(phase.e_ph_z) - f * binary_entropy(stats.qber_z))
    raw_x = stats.n_sift_x * (1.0 - binary_entropy(phase.e_ph_x) - f * binary_entropy(stats.qber_x))
    # a basis without key cannot subtract key from the other one
    term_z = max(raw_z, 0.0)
    term_x = max(raw_x, 0.0)
    aborted = raw_z <= 0.0 and raw_x <= 0.0
    return KeyLength(term_z + term_x, term_z, term_x, phase, stats.duration, aborted)


# ---------------------------------------------------------------------------
# link relations
# ---------------------------------------------------------------------------


def db_to_transmission(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def transmission_to_db(eta: float) -> float:
    return -10.0 * math.log10(eta)


def pair_rate_per_window(r_singles_a: float, noise_yield_a: float, window: float, heralding_a: float) -> float:
    """Pairs per coincidence window from Alice's singles rate.

    Subtracts the noise clicks (``noise_yield_a`` per window) and divides by
    the heralding efficiency.
    """
    if not heralding_a > 0:
        raise DomainError("heralding efficiency must be > 0")
    if not window > 0:
        raise DomainError("window must be > 0")
    signal = r_singles_a * window - noise_yield_a
    if signal < 0:
        raise NegativeSignalError(
            f"singles per window {r_singles_a * window:g} below noise yield {noise_yield_a:g}"
        )
    return signal / heralding_a


def pairs_per_second(mu: float, window: float) -> float:
    return mu / window


def channel_attenuation_db(r_cc: float, r_a: float, r_b: float, window: float) -> float:
    """Bob-channel attenuation from coincidence and singles rates (dB)."""
    if not r_a > 0:
        raise DomainError("r_a must be > 0")
    if not window > 0:
        raise DomainError("window must be > 0")
    excess = r_cc - r_a * r_b * window
    if excess <= 0:
        raise AccidentalDominatedError(
            f"coincidence rate {r_cc:g} does not exceed accidentals {r_a * r_b * window:g}"
        )
    return -10.0 * math.log10(excess / r_a)


def coincidence_rate_for_loss(loss_db: float, r_a: float, r_b: float, window: float) -> float:
    """Inverse of :func:`channel_attenuation_db` in ``r_cc``."""
    return r_a * db_to_transmission(loss_db) + r_a * r_b * window


def effective_noise_yield(mu: float, overall_eff: float, afterpulse: float, window: float, dark_rate: float) -> float:
    """Noise clicks per coincidence window: afterpulses plus dark/background counts."""
    for name, v in (("mu", mu), ("overall_eff", overall_eff), ("afterpulse", afterpulse),
                    ("window", window), ("dark_rate", dark_rate)):
        if v < 0:
            raise DomainError(f"{name} must be >= 0, got {v}")
    return mu * overall_eff * afterpulse + window * dark_rate


def visibility_to_error(v: float) -> float:
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"visibility must be in [0, 1], got {v}")
    return (1.0 - v) / 2.0
