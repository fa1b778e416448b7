"""Satellite-pass scenarios: dual downlinks, loss/noise profiles, pass totals."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._workers import ordered_map
from .errors import CoverageError, DomainError, FormatError, NoKeyError
from .link import N_DETECTORS, LinkModel, RatePrediction, predict
from .optimize import DEFAULT_MU_BOUNDS, optimize_pair_rate

DEFAULT_BIN_WIDTH = 1.0


@dataclass(frozen=True)
class DualLinkModel(LinkModel):
    """One source on the satellite feeding two ground arms.

    The quoted total loss is ``loss_a + loss_b``; there is no local arm, so
    ``reference_loss_db`` defaults to zero and both arms choose bases
    uniformly.
    """

    basis_split: tuple = (0.5, 0.5)
    reference_loss_db: float = 0.0

    def with_total_loss(self, total_db: float) -> "DualLinkModel":
        """Shift both arms by half the change, keeping any asymmetry."""
        delta = 0.5 * (total_db - self.total_loss_db)
        loss_a = self.arm_a.channel.loss_db + delta
        loss_b = self.arm_b.channel.loss_db + delta
        if loss_a < 0 or loss_b < 0:
            raise DomainError(f"total loss {total_db} dB too small for the arm asymmetry")
        return replace(self, arm_a=self.arm_a.with_loss(loss_a), arm_b=self.arm_b.with_loss(loss_b))

    def with_background(self, rate_per_detector: float) -> "DualLinkModel":
        return replace(
            self,
            arm_a=self.arm_a.with_background(rate_per_detector),
            arm_b=self.arm_b.with_background(rate_per_detector),
        )


def dual_predict(model: DualLinkModel) -> RatePrediction:
    """Rates between the two ground arms; same composition as :func:`predict`."""
    return predict(model)


@dataclass(frozen=True)
class PassProfile:
    """Piecewise-constant link conditions over a pass.

    Row ``i`` holds from ``t_s[i]`` to ``t_s[i + 1]``; the last row lasts
    ``bin_width``. ``loss_db`` is the total link loss, ``background_cps`` the
    per-detector background (``None`` keeps the model's own figure).
    """

    t_s: np.ndarray
    loss_db: np.ndarray
    background_cps: np.ndarray | None = None
    bin_width: float = DEFAULT_BIN_WIDTH
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.t_s, dtype=float)
        loss = np.asarray(self.loss_db, dtype=float)
        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "loss_db", loss)
        if t.ndim != 1 or t.size == 0:
            raise FormatError("profile needs at least one row")
        if loss.shape != t.shape:
            raise FormatError("t_s and loss_db lengths differ")
        if np.any(np.diff(t) <= 0):
            raise FormatError("profile times must be strictly increasing")
        if not np.all(np.isfinite(loss)) or np.any(loss < 0):
            raise FormatError("losses must be finite and non-negative")
        if not self.bin_width > 0:
            raise FormatError("bin_width must be positive")
        if self.background_cps is not None:
            bg = np.asarray(self.background_cps, dtype=float)
            if bg.shape != t.shape:
                raise FormatError("background_cps length differs from t_s")
            if np.any(bg < 0) or not np.all(np.isfinite(bg)):
                raise FormatError("background rates must be finite and non-negative")
            object.__setattr__(self, "background_cps", bg)

    def __len__(self):
        return self.t_s.size

    @property
    def durations(self) -> np.ndarray:
        return np.append(np.diff(self.t_s), self.bin_width)

    @property
    def t_end(self) -> float:
        return float(self.t_s[-1] + self.bin_width)

    def check_coverage(self, duration: float):
        """Raise :class:`CoverageError` unless ``[0, duration]`` is covered without gaps."""
        if self.t_s[0] > 0:
            raise CoverageError(f"profile starts at {self.t_s[0]} s, after 0")
        if self.t_end < duration - 1e-12:
            raise CoverageError(f"profile ends at {self.t_end} s, before {duration} s")
        steps = np.diff(self.t_s)
        gaps = np.nonzero(steps > self.bin_width * (1 + 1e-9))[0]
        if gaps.size:
            i = int(gaps[0])
            raise CoverageError(f"profile gap between {self.t_s[i]} s and {self.t_s[i + 1]} s")

    def rows(self):
        bg = self.background_cps
        for i in range(len(self)):
            yield (float(self.t_s[i]), float(self.durations[i]), float(self.loss_db[i]),
                   None if bg is None else float(bg[i]))

    def with_noise(self, noise: "NoiseProfile") -> "PassProfile":
        """Attach a background series, taking the latest sample at each row start."""
        return replace(self, background_cps=noise.at(self.t_s))

    def concat(self, other: "PassProfile") -> "PassProfile":
        shift = self.t_end - other.t_s[0]
        if (self.background_cps is None) != (other.background_cps is None):
            raise FormatError("cannot join profiles with and without background")
        bg = None
        if self.background_cps is not None:
            bg = np.concatenate([self.background_cps, other.background_cps])
        return PassProfile(
            np.concatenate([self.t_s, other.t_s + shift]),
            np.concatenate([self.loss_db, other.loss_db]),
            bg,
            self.bin_width,
            self.label,
        )


def constant_profile(loss_db: float, duration: float, bin_width: float = DEFAULT_BIN_WIDTH) -> PassProfile:
    n = max(int(math.ceil(duration / bin_width - 1e-9)), 1)
    return PassProfile(np.arange(n) * bin_width, np.full(n, float(loss_db)), None, bin_width, "constant")


def triangular_profile(edge_db: float, peak_db: float, duration: float,
                       bin_width: float = DEFAULT_BIN_WIDTH) -> PassProfile:
    """Loss ramping linearly ``edge -> peak -> edge`` (bin-centre sampled)."""
    n = max(int(math.ceil(duration / bin_width - 1e-9)), 1)
    t = np.arange(n) * bin_width
    x = (t + 0.5 * bin_width) / (n * bin_width)
    loss = edge_db + (peak_db - edge_db) * (1.0 - np.abs(2.0 * x - 1.0))
    return PassProfile(t, loss, None, bin_width, "triangular")


def elevation_profile(min_db: float, max_db: float, duration: float,
                      bin_width: float = DEFAULT_BIN_WIDTH) -> PassProfile:
    """Horizon-to-horizon pass: loss ``max - (max - min) * sin(pi t / T)``."""
    n = max(int(math.ceil(duration / bin_width - 1e-9)), 1)
    t = np.arange(n) * bin_width
    x = (t + 0.5 * bin_width) / (n * bin_width)
    loss = max_db - (max_db - min_db) * np.sin(math.pi * x)
    return PassProfile(t, loss, None, bin_width, "elevation")


def load_pass_profile(path, bin_width: float = DEFAULT_BIN_WIDTH) -> PassProfile:
    """Read ``t_s,loss_db[,background_cps]`` CSV."""
    cols = _read_csv_columns(path, ("t_s", "loss_db"), optional=("background_cps",))
    return PassProfile(cols["t_s"], cols["loss_db"], cols.get("background_cps"), bin_width, str(path))


@dataclass(frozen=True)
class NoiseProfile:
    t_s: np.ndarray
    counts_per_s: np.ndarray  # per detector

    def at(self, t) -> np.ndarray:
        """Step lookup: value of the latest sample at or before ``t``."""
        idx = np.searchsorted(self.t_s, np.asarray(t, dtype=float), side="right") - 1
        return self.counts_per_s[np.clip(idx, 0, self.t_s.size - 1)]


def load_noise_profile(path, detectors_summed: bool = False) -> NoiseProfile:
    """Read a ``t_s,counts_per_s`` background series.

    Counts are taken per detector; with ``detectors_summed`` they are divided
    evenly over the four detectors. Samples are kept as given, spikes included.
    """
    cols = _read_csv_columns(path, ("t_s", "counts_per_s"))
    t, c = cols["t_s"], cols["counts_per_s"]
    if np.any(np.diff(t) <= 0):
        raise FormatError(f"{path}: time column must be strictly increasing")
    if np.any(c < 0):
        raise FormatError(f"{path}: negative count rate")
    if detectors_summed:
        c = c / N_DETECTORS
    return NoiseProfile(t, c)


def _read_csv_columns(path, required, optional=()):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        wanted = [c for c in tuple(required) + tuple(optional) if c in header]
        data = {c: [] for c in wanted}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            try:
                for c in wanted:
                    data[c].append(float(row[header.index(c)]))
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
    if not data[required[0]]:
        raise FormatError(f"{path}: no data rows")
    out = {c: np.array(v) for c, v in data.items()}
    for c, v in out.items():
        if not np.all(np.isfinite(v)):
            raise FormatError(f"{path}: non-finite value in column {c}")
    return out


@dataclass(frozen=True)
class Fixed:
    mu: float


@dataclass(frozen=True)
class TrackOptimum:
    mu_bounds: tuple = DEFAULT_MU_BOUNDS


@dataclass(frozen=True)
class PassBin:
    t_s: float
    duration: float
    loss_db: float
    mu_used: float
    skr_bps: float

    @property
    def bits(self) -> float:
        return self.skr_bps * self.duration


@dataclass
class PassResult:
    bins: list = field(default_factory=list)

    @property
    def total_bits(self) -> float:
        return float(sum(b.bits for b in self.bins))

    @property
    def duration(self) -> float:
        return float(sum(b.duration for b in self.bins))

    def to_dict(self) -> dict:
        return {
            "n_bins": len(self.bins),
            "duration_s": self.duration,
            "total_bits": self.total_bits,
            "mean_skr_bps": self.total_bits / self.duration if self.duration > 0 else 0.0,
        }


def bin_link(model: LinkModel, loss_db: float, background=None) -> LinkModel:
    link = model.with_total_loss(loss_db)
    if background is not None:
        link = link.with_background(background)
    return link


def pass_skr(profile: PassProfile, model: LinkModel, policy) -> PassResult:
    """Key rate in every profile bin under a fixed or tracked pair rate."""
    if not isinstance(policy, (Fixed, TrackOptimum)):
        raise DomainError(f"unknown pair-rate policy {policy!r}")

    def evaluate(row):
        t, dt, loss, bg = row
        link = bin_link(model, loss, bg)
        if isinstance(policy, Fixed):
            return PassBin(t, dt, loss, policy.mu, predict(link.with_mu(policy.mu)).skr)
        try:
            opt = optimize_pair_rate(link, policy.mu_bounds)
        except NoKeyError:
            return PassBin(t, dt, loss, math.nan, 0.0)
        return PassBin(t, dt, loss, opt.mu_opt, opt.skr_max)

    return PassResult(ordered_map(evaluate, list(profile.rows())))


PASS_COLUMNS = ("t_s", "loss_db", "mu_used", "skr_bps")


def write_pass_csv(fh, result: PassResult):
    w = csv.writer(fh)
    w.writerow(PASS_COLUMNS)
    for b in result.bins:
        w.writerow([repr(float(x)) for x in (b.t_s, b.loss_db, b.mu_used, b.skr_bps)])
