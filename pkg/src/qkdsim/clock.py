"""Relative clock model between two time-tag streams."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class ClockModel:
    """Maps a reference (A) time to the other party's (B) clock reading.

    ``B(t) = t + offset_ps + integral_0^t slope(u) du`` with ``slope`` piecewise
    constant. ``segments`` holds ``(t_start_ps, slope)``; the first slope also
    applies before its start time, each later one from its start onwards, so
    the mapping is continuous and piecewise linear.
    """

    offset_ps: float = 0.0
    segments: tuple = ((0.0, 0.0),)
    residual_ps: float = 0.0
    gaps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        segs = tuple((float(t), float(s)) for t, s in self.segments) or ((0.0, 0.0),)
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise DomainError("clock segments must be time-ordered")
        if any(s <= -1.0 for _, s in segs):
            raise DomainError("clock slope must exceed -1")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def linear(cls, offset_ps: float, drift: float = 0.0) -> "ClockModel":
        return cls(offset_ps, ((0.0, drift),))

    @property
    def slope(self) -> float:
        """Slope of the first segment (the whole model if linear)."""
        return self.segments[0][1]

    @property
    def knots(self) -> np.ndarray:
        return np.array([t for t, _ in self.segments[1:]], dtype=float)

    def _tables(self):
        slopes = np.array([s for _, s in self.segments])
        knots = self.knots
        # offset accumulated at every knot
        starts = np.concatenate([[0.0], knots])
        ends = np.concatenate([knots, [np.inf]])
        widths = np.diff(np.concatenate([[0.0], knots]))
        delta_at = self.offset_ps + np.concatenate([[0.0], np.cumsum(slopes[:-1] * widths)])
        return slopes, starts, ends, delta_at

    def delta(self, t_ps) -> np.ndarray:
        """``B(t) - t`` at reference times ``t``."""
        t = np.asarray(t_ps, dtype=float)
        slopes, starts, _, delta_at = self._tables()
        i = np.searchsorted(self.knots, t, side="right")
        return delta_at[i] + slopes[i] * (t - starts[i])

    def apply(self, t_ps) -> np.ndarray:
        t = np.asarray(t_ps, dtype=float)
        return t + self.delta(t)

    def invert(self, tb_ps) -> np.ndarray:
        """Reference time whose B reading is ``tb``."""
        tb = np.asarray(tb_ps, dtype=float)
        slopes, starts, _, delta_at = self._tables()
        knots_b = self.knots + delta_at[1:]
        i = np.searchsorted(knots_b, tb, side="right")
        # tb = starts + delta_at + (t - starts) * (1 + slope)
        return starts[i] + (tb - starts[i] - delta_at[i]) / (1.0 + slopes[i])

    def to_reference(self, tb_ps) -> np.ndarray:
        """Integer-picosecond reference times of B tags."""
        return np.rint(self.invert(tb_ps)).astype(np.int64)

    def shifted(self, d_ps: float) -> "ClockModel":
        return ClockModel(self.offset_ps + d_ps, self.segments, self.residual_ps, self.gaps)

    def to_dict(self) -> dict:
        return {
            "offset_ps": self.offset_ps,
            "segments": [{"t_start_ps": t, "slope": s} for t, s in self.segments],
            "residual_ps": self.residual_ps,
            "gaps": [list(g) for g in self.gaps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClockModel":
        return cls(
            float(d["offset_ps"]),
            tuple((s["t_start_ps"], s["slope"]) for s in d.get("segments", [])),
            float(d.get("residual_ps", 0.0)),
            tuple(tuple(g) for g in d.get("gaps", [])),
        )
