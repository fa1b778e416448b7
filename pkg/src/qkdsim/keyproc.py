"""BBM92 post-processing: sifting, QBER estimation, reconciliation and hashing."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .clock import ClockModel
from .core import BasisStats, KeyLength, ProtocolParams, PhaseErrorMode, binary_entropy, secure_key_length
from .errors import (
    ConventionError,
    DegenerateSampleError,
    DomainError,
    PipelineError,
    ReconciliationAbort,
    SyncError,
)
from .tags import TagStream

PS = 1e12
DEFAULT_PIPELINE_PROTOCOL = ProtocolParams(phase_error_mode=PhaseErrorMode.CROSS_BASIS_WITH_DEVIATION)


# ---------------------------------------------------------------------------
# sifting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SiftedKey:
    """Matched-basis bits of both parties, index-aligned.

    ``basis`` is 0 for z and 1 for x; Bob's bits already follow Alice's
    convention, so an ideal key has ``bits_a == bits_b``.
    """

    bits_a: np.ndarray
    bits_b: np.ndarray
    basis: np.ndarray
    discarded: int = 0

    def __post_init__(self):
        a = np.ascontiguousarray(self.bits_a, dtype=np.uint8)
        b = np.ascontiguousarray(self.bits_b, dtype=np.uint8)
        s = np.ascontiguousarray(self.basis, dtype=np.uint8)
        if not a.shape == b.shape == s.shape or a.ndim != 1:
            raise DomainError("sifted key arrays must be 1-d and of equal length")
        object.__setattr__(self, "bits_a", a)
        object.__setattr__(self, "bits_b", b)
        object.__setattr__(self, "basis", s)

    def __len__(self):
        return int(self.bits_a.size)

    def count(self, basis: int) -> int:
        return int(np.count_nonzero(self.basis == basis))

    def subset(self, mask) -> "SiftedKey":
        return SiftedKey(self.bits_a[mask], self.bits_b[mask], self.basis[mask], self.discarded)

    def ordered(self) -> "SiftedKey":
        """z bits first, then x bits, each in their original order."""
        order = np.argsort(self.basis, kind="stable")
        return SiftedKey(self.bits_a[order], self.bits_b[order], self.basis[order], self.discarded)


def sift(basis_a, outcome_a, basis_b, outcome_b, flip_b: bool = True) -> SiftedKey:
    """Keep matched-basis pairs.

    With ``flip_b`` Bob's outcome is inverted, since the shared state is
    anticorrelated in both bases.
    """
    ba = np.asarray(basis_a, dtype=np.uint8)
    bb = np.asarray(basis_b, dtype=np.uint8)
    oa = np.asarray(outcome_a, dtype=np.uint8)
    ob = np.asarray(outcome_b, dtype=np.uint8)
    if not ba.shape == bb.shape == oa.shape == ob.shape:
        raise DomainError("pair arrays must have equal length")
    keep = ba == bb
    bits_b = ob[keep] ^ np.uint8(1) if flip_b else ob[keep]
    return SiftedKey(oa[keep], bits_b, ba[keep], int(keep.size - np.count_nonzero(keep)))


def sift_pairs(pairs, a: TagStream, b: TagStream, flip_b: bool = True) -> SiftedKey:
    """:func:`sift` applied to a coincidence list of two tag streams."""
    ca = a.channels[pairs.index_a]
    cb = b.channels[pairs.index_b]
    return sift(ca >> 1, ca & 1, cb >> 1, cb & 1, flip_b)


# ---------------------------------------------------------------------------
# QBER estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleFull:
    """Compare the complete strings (available only in simulation)."""


@dataclass(frozen=True)
class DisclosedSample:
    """Reveal a random ``fraction`` of each basis, estimate from it and drop it."""

    fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise DomainError("disclosed fraction must be in (0, 1)")


@dataclass(frozen=True)
class QberEstimate:
    """Per-basis statistics plus the key that remains secret afterwards."""

    stats: BasisStats
    key: SiftedKey
    disclosed: int = 0


def _error_rate(a, b) -> float:
    return float(np.count_nonzero(a != b)) / a.size


def estimate_qber(sifted: SiftedKey, mode=OracleFull(), duration: float = 1.0) -> QberEstimate:
    """QBER of each basis and the retained key.

    Raises
    ------
    DegenerateSampleError
        A basis has no bits to estimate from.
    ConventionError
        An estimate exceeds one half, which means the outcome convention is inverted.
    """
    keep = np.ones(len(sifted), bool)
    qber = []
    for basis in (0, 1):
        idx = np.flatnonzero(sifted.basis == basis)
        if isinstance(mode, DisclosedSample):
            rng = np.random.default_rng(np.random.SeedSequence([mode.seed, basis]))
            k = int(round(mode.fraction * idx.size))
            sample = rng.choice(idx, size=k, replace=False) if k else idx[:0]
            keep[sample] = False
        elif isinstance(mode, OracleFull):
            sample = idx
        else:
            raise DomainError(f"unknown QBER estimation mode {mode!r}")
        if sample.size == 0:
            name = "zx"[basis]
            raise DegenerateSampleError(f"no {name}-basis bits to estimate the QBER from")
        qber.append(_error_rate(sifted.bits_a[sample], sifted.bits_b[sample]))
    if max(qber) > 0.5:
        raise ConventionError(
            f"QBER above 0.5 (z {qber[0]:.3f}, x {qber[1]:.3f}): outcome convention inverted",
            qber_z=qber[0], qber_x=qber[1],
        )
    key = sifted.subset(keep)
    stats = BasisStats(key.count(0), key.count(1), qber[0], qber[1], duration)
    return QberEstimate(stats, key, int(len(sifted) - len(key)))


# ---------------------------------------------------------------------------
# reconciliation and privacy amplification
# ---------------------------------------------------------------------------


def leakage_bits(n: int, qber: float, f: float) -> int:
    """Error-correction leakage ``ceil(f * H2(E) * n)``."""
    return int(math.ceil(f * float(binary_entropy(qber)) * n - 1e-9))


def reconcile_oracle(key_a, key_b, f: float = 1.2, qber: float | None = None):
    """Correct ``key_b`` to ``key_a`` and charge the leakage.

    ``qber`` defaults to the actual error rate of the two strings.
    Returns ``(corrected_key, leakage_bits)``.

    Raises
    ------
    ReconciliationAbort
        The error rate is 0.5 or more.
    """
    a = np.asarray(key_a, dtype=np.uint8)
    b = np.asarray(key_b, dtype=np.uint8)
    if a.shape != b.shape:
        raise DomainError("keys must have equal length")
    if f < 1.0:
        raise DomainError("f must be >= 1")
    e = (_error_rate(a, b) if a.size else 0.0) if qber is None else float(qber)
    if e >= 0.5:
        raise ReconciliationAbort(f"error rate {e:.3f} leaves nothing to reconcile", qber=e)
    return a.copy(), leakage_bits(a.size, e, f)


def toeplitz_row(n_in: int, out_len: int, seed) -> np.ndarray:
    """The ``n_in + out_len - 1`` random bits that define the hash matrix."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, n_in + out_len - 1, dtype=np.uint8)


def privacy_amplify(key, out_len: int, seed=0) -> np.ndarray:
    """Toeplitz hash of ``key`` to ``out_len`` bits.

    ``T[i, j] = r[i - j + n - 1]`` with ``r`` drawn from ``seed``; the product
    ``T @ key mod 2`` is computed as a convolution.
    """
    k = np.asarray(key, dtype=np.uint8)
    n = k.size
    if out_len < 0:
        raise DomainError("output length must be >= 0")
    if out_len > n:
        raise DomainError(f"output length {out_len} exceeds input length {n}")
    if out_len == 0:
        return np.zeros(0, np.uint8)
    r = toeplitz_row(n, out_len, seed)
    conv = fftconvolve(r.astype(float), k.astype(float))[n - 1: n - 1 + out_len]
    return (np.rint(conv).astype(np.int64) & 1).astype(np.uint8)


def bits_to_hex(bits) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def hex_to_bits(text: str, n_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes.fromhex(text), np.uint8))[:n_bits]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class KeyReport:
    """Outcome of key distillation, with every intermediate statistic."""

    stats: BasisStats
    key_length: KeyLength
    leakage_bits: int
    final_length: int
    skr: float
    aborted: bool
    n_tags_a: int | None = None
    n_tags_b: int | None = None
    n_pairs: int | None = None
    n_discarded: int | None = None
    n_disclosed: int | None = None
    clock: ClockModel | None = None
    final_key: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        kl = self.key_length
        d = {
            "basis_stats": self.stats.to_dict(),
            "phase_error": {
                "e_ph_z": kl.phase.e_ph_z,
                "e_ph_x": kl.phase.e_ph_x,
                "deviation_z": kl.phase.deviation_z,
                "deviation_x": kl.phase.deviation_x,
            },
            "term_z_bits": kl.term_z,
            "term_x_bits": kl.term_x,
            "bound_bits": kl.bits,
            "leakage_bits": self.leakage_bits,
            "final_length": self.final_length,
            "skr_bps": self.skr,
            "aborted": self.aborted,
        }
        for name in ("n_tags_a", "n_tags_b", "n_pairs", "n_discarded", "n_disclosed"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        if self.clock is not None:
            d["clock"] = self.clock.to_dict()
        if self.final_key is not None:
            d["final_key_hex"] = bits_to_hex(self.final_key)
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _total_leakage(stats: BasisStats, f: float) -> int:
    return (leakage_bits(int(stats.n_sift_z), stats.qber_z, f)
            + leakage_bits(int(stats.n_sift_x), stats.qber_x, f))


def analyze(stats: BasisStats, protocol: ProtocolParams = ProtocolParams()) -> KeyReport:
    """Key report from basis statistics alone (no bits)."""
    kl = secure_key_length(stats, protocol)
    leak = _total_leakage(stats, protocol.ec_efficiency)
    final = kl.n_bits
    return KeyReport(stats, kl, leak, final, final / stats.duration, final == 0)


def _stream_duration(a: TagStream, b: TagStream) -> float:
    d = a.meta.get("duration") if a.meta else None
    if d:
        return float(d)
    ends = [s.times[-1] for s in (a, b) if len(s)]
    starts = [s.times[0] for s in (a, b) if len(s)]
    if not ends:
        raise DomainError("cannot infer a duration from empty streams")
    return max((max(ends) - min(starts)) / PS, 1e-12)


def distill(sifted: SiftedKey, protocol: ProtocolParams, duration: float,
            qber_mode=OracleFull(), pa_seed=0) -> KeyReport:
    """QBER, reconciliation, key-length bound and hashing of a sifted key."""
    est = _stage("qber", estimate_qber, sifted, qber_mode, duration)
    key = est.key.ordered()
    f = protocol.ec_efficiency
    leak = 0
    corrected = []
    for basis, q in ((0, est.stats.qber_z), (1, est.stats.qber_x)):
        m = key.basis == basis
        c, l = _stage("reconcile", reconcile_oracle, key.bits_a[m], key.bits_b[m], f, q)
        corrected.append(c)
        leak += l
    kl = secure_key_length(est.stats, protocol)
    # the bound is the single source of the output length; the guard only
    # bites when a basis with zero key still leaks more than it holds
    final = max(min(kl.n_bits, len(key) - leak), 0)
    final_key = privacy_amplify(np.concatenate(corrected), final, pa_seed)
    return KeyReport(est.stats, kl, leak, final, final / duration, final == 0,
                     n_discarded=sifted.discarded, n_disclosed=est.disclosed, final_key=final_key)


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except (SyncError, ReconciliationAbort, ConventionError, DegenerateSampleError) as exc:
        raise PipelineError(name, exc) from exc


def full_pipeline(a: TagStream, b: TagStream, protocol: ProtocolParams = DEFAULT_PIPELINE_PROTOCOL,
                  qber_mode=OracleFull(), pa_seed=0, clock: ClockModel | None = None,
                  duration: float | None = None, sync_options: dict | None = None) -> KeyReport:
    """Tags to final key: sync, coincidences, sift, QBER, reconcile, bound, hash.

    ``clock`` skips clock recovery when given. Failures are raised as
    :class:`PipelineError` carrying the stage name and the original error.
    """
    from . import sync

    if duration is None:
        duration = _stream_duration(a, b)
    if clock is None:
        opts = sync_options or {}
        clock = _stage("sync", lambda: sync.recover_clock(a, b, **opts))
    pairs = sync.find_coincidences(a, b, clock, protocol.coincidence_window)
    sifted = sift_pairs(pairs, a, b)
    report = distill(sifted, protocol, duration, qber_mode, pa_seed)
    report.n_tags_a = len(a)
    report.n_tags_b = len(b)
    report.n_pairs = len(pairs)
    report.clock = clock
    return report
