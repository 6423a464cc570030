"""One-dimensional first-passage laws for a single absorbing point.

A particle starts a distance ell from an absorbing point and diffuses with
coefficient D, optionally with signed drift v (positive = toward the
boundary). Without drift the hitting time follows the heavy-tailed one-sided
stable law of index 1/2; with drift it follows the inverse-Gaussian law. The
exponential reweighting factor connecting the two,

    ig_pdf(t) = levy_pdf(t) * exp( v ell / (2 D) - v^2 t / (4 D) ),

is an algebraic identity (complete the square in the exponent), which makes
this module a machine-precision consistency check for the same measure-change
step used by the 3-D channel: the 1-D factor equals the 3-D drift factor for
an axial hit with y - x0 = -ell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .quadrature import integrate_interval


@dataclass(frozen=True)
class OneDimChannel:
    """Absorbing point a distance ell away; drift v > 0 points toward it."""

    ell: float
    D: float
    v: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.ell) and self.ell > 0):
            raise DomainError(f"distance must be positive, got {self.ell}")
        if not (math.isfinite(self.D) and self.D > 0):
            raise DomainError(f"diffusivity must be positive, got {self.D}")
        if not math.isfinite(self.v):
            raise DomainError(f"drift must be finite, got {self.v}")


def _check_time(t) -> np.ndarray:
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0):
        raise DomainError("time must be positive")
    return t_arr


def levy_pdf(ch: OneDimChannel, t):
    """Drift-free hitting-time density ell/sqrt(4 pi D t^3) e^{-ell^2/(4Dt)}.

    Vectorized over t > 0; underflows to 0 as t -> 0+.
    """
    t_arr = _check_time(t)
    with np.errstate(under="ignore"):
        out = (
            ch.ell
            / np.sqrt(4.0 * math.pi * ch.D * t_arr**3)
            * np.exp(-(ch.ell**2) / (4.0 * ch.D * t_arr))
        )
    return float(out) if np.ndim(t) == 0 else out


def girsanov_factor_1d(ch: OneDimChannel, t):
    """Reweighting factor exp(v ell/(2D) - v^2 t/(4D)); 1 identically at v=0."""
    t_arr = _check_time(t)
    with np.errstate(under="ignore"):
        out = np.exp(
            ch.v * ch.ell / (2.0 * ch.D) - ch.v * ch.v * t_arr / (4.0 * ch.D)
        )
    return float(out) if np.ndim(t) == 0 else out


def ig_pdf(ch: OneDimChannel, t):
    """Inverse-Gaussian density ell/sqrt(4 pi D t^3) e^{-(ell - v t)^2/(4Dt)}.

    Written in completed-square form; equals levy_pdf * girsanov_factor_1d
    to the last bit (same exponent, evaluated once).
    """
    t_arr = _check_time(t)
    with np.errstate(under="ignore"):
        out = (
            ch.ell
            / np.sqrt(4.0 * math.pi * ch.D * t_arr**3)
            * np.exp(-((ch.ell - ch.v * t_arr) ** 2) / (4.0 * ch.D * t_arr))
        )
    return float(out) if np.ndim(t) == 0 else out


def ig_mass(ch: OneDimChannel, rel_tol: float = 1e-10) -> float:
    """Total hitting probability: integral of ig_pdf over all time.

    The t^{-3/2} tail converges too slowly for direct quadrature; folding it
    with w = 1/sqrt(t) gives a smooth integrand on [0, 1] for every drift
    (at v = 0 the fold is exactly Gaussian). Equals 1 for v >= 0 and
    exp(v ell / D) for v < 0.
    """
    head = integrate_interval(
        lambda ts: ig_pdf(ch, ts), 1e-12, 1.0, rel_tol=rel_tol, abs_tol=1e-14
    )
    tail = integrate_interval(
        lambda ws: ig_pdf(ch, 1.0 / (ws * ws)) * 2.0 / ws**3,
        1e-12,
        1.0,
        rel_tol=rel_tol,
        abs_tol=1e-14,
    )
    return head + tail


def ig_mean(ch: OneDimChannel, rel_tol: float = 1e-10) -> float:
    """First moment of the hitting time (ell / v for v > 0), same tail fold."""
    if ch.v <= 0:
        raise DomainError("mean hitting time requires drift toward the boundary")
    head = integrate_interval(
        lambda ts: ts * ig_pdf(ch, ts), 1e-12, 1.0, rel_tol=rel_tol, abs_tol=1e-14
    )
    tail = integrate_interval(
        lambda ws: ig_pdf(ch, 1.0 / (ws * ws)) * 2.0 / ws**5,
        1e-12,
        1.0,
        rel_tol=rel_tol,
        abs_tol=1e-14,
    )
    return head + tail
