"""Pair-rate optimization of the predicted secure key rate."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ._workers import ordered_map
from .errors import DomainError, NoKeyError
from .link import LinkModel, predict

DEFAULT_MU_BOUNDS = (1e-5, 1.0)
BAND_FRACTION = 0.9
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Optimum:
    mu_opt: float
    pair_rate_opt: float
    skr_max: float
    band_lo: float
    band_hi: float
    loss_db: float | None = None

    def to_dict(self) -> dict:
        return {
            "loss_db": self.loss_db,
            "mu_opt": self.mu_opt,
            "pair_rate_opt": self.pair_rate_opt,
            "skr_max": self.skr_max,
            "band_lo": self.band_lo,
            "band_hi": self.band_hi,
        }


def golden_section_max(f, a: float, b: float, tol: float):
    """Maximize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    On ties the left (smaller) point is kept, so plateaus resolve to their
    lower end.
    """
    if b < a:
        a, b = b, a
    best_x, best_f = a, f(a)
    fb = f(b)
    if fb > best_f:
        best_x, best_f = b, fb
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    for x, fx in sorted(((c, fc), (d, fd))):
        if fx > best_f or (fx == best_f and x < best_x):
            best_x, best_f = x, fx
    return best_x, best_f


def optimize_pair_rate(link: LinkModel, mu_bounds=DEFAULT_MU_BOUNDS, rel_tol: float = 1e-4,
                       n_grid: int = 64) -> Optimum:
    lo, hi = (float(v) for v in mu_bounds)
    if not (0 < lo < hi):
        raise DomainError(f"mu bounds must satisfy 0 < lo < hi, got {mu_bounds}")

    def skr(log_mu):
        return predict(link.with_mu(math.exp(log_mu))).skr

    log_grid = np.linspace(math.log(lo), math.log(hi), n_grid)
    values = np.array([skr(x) for x in log_grid])
    i = int(np.argmax(values))  # first maximum: smallest mu on ties
    if values[i] <= 0:
        raise NoKeyError(
            f"no positive key for mu in [{lo:g}, {hi:g}] at {link.total_loss_db:.2f} dB total loss",
            loss_db=link.total_loss_db,
        )
    left = log_grid[max(i - 1, 0)]
    right = log_grid[min(i + 1, n_grid - 1)]
    x_opt, f_opt = golden_section_max(skr, left, right, math.log1p(rel_tol))
    if values[i] > f_opt:
        x_opt, f_opt = log_grid[i], values[i]
    mu_opt = math.exp(x_opt)
    target = BAND_FRACTION * f_opt

    def excess(log_mu):
        return skr(log_mu) - target

    # band edges: bracket between the last sub-target grid point and the optimum
    below = [k for k in range(n_grid) if log_grid[k] < x_opt and values[k] < target]
    if below:
        band_lo = math.exp(brentq(excess, log_grid[below[-1]], x_opt, xtol=1e-14, rtol=1e-12))
    else:
        band_lo = lo
    above = [k for k in range(n_grid) if log_grid[k] > x_opt and values[k] < target]
    if above:
        band_hi = math.exp(brentq(excess, x_opt, log_grid[above[0]], xtol=1e-14, rtol=1e-12))
    else:
        band_hi = hi

    return Optimum(
        mu_opt=mu_opt,
        pair_rate_opt=mu_opt / link.window,
        skr_max=f_opt,
        band_lo=min(band_lo, mu_opt),
        band_hi=max(band_hi, mu_opt),
        loss_db=link.total_loss_db,
    )


def optimum_vs_loss(link: LinkModel, loss_grid, mu_bounds=DEFAULT_MU_BOUNDS):
    """One optimum per total loss; unreachable losses map to ``None``."""
    losses = [float(v) for v in loss_grid]
    if not losses:
        raise DomainError("loss grid is empty")
    if any(b <= a for a, b in zip(losses, losses[1:])):
        raise DomainError("loss grid must be strictly increasing")

    def point(loss):
        try:
            return loss, optimize_pair_rate(link.with_total_loss(loss), mu_bounds)
        except NoKeyError:
            return loss, None

    return ordered_map(point, losses)


OPTIMUM_COLUMNS = ("loss_db", "mu_opt", "pair_rate_opt_pps", "skr_max_bps", "band_lo", "band_hi")


def write_optimum_csv(fh, series):
    w = csv.writer(fh)
    w.writerow(OPTIMUM_COLUMNS)
    for loss, opt in series:
        if opt is None:
            w.writerow([repr(loss), "nan", "nan", "0.0", "nan", "nan"])
        else:
            w.writerow([repr(float(x)) for x in (loss, opt.mu_opt, opt.pair_rate_opt,
                                                 opt.skr_max, opt.band_lo, opt.band_hi)])
