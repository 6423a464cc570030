"""Quadrature rules for the hitting-time series.

Two integration surfaces appear in the density evaluators:

* a Gaussian-damped half-line integral over the radial frequency,
      integral_0^inf g(lambda) exp(-lambda^2 t / 2) dlambda,
  truncated where the damping factor pushes the tail below the absolute
  tolerance and refined adaptively with 15-point Gauss-Kronrod panels;
* a sphere-surface integral, evaluated with a product rule that is
  Gauss-Legendre in the polar cosine and trapezoidal (exact for the periodic
  direction) in azimuth.

All routines are deterministic: fixed node orderings, fixed reduction order,
no randomness, so repeated calls with the same inputs are bit-identical.
Integrands must accept an ndarray of abscissae and return an ndarray.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, DomainError, NonConvergenceError

# Evaluation times below this are refused: the integrand needs O(1/sqrt(t))
# oscillation periods and the panel budget would be spent silently losing
# accuracy instead of failing loudly.
T_MIN = 1e-4

# 15-point Kronrod extension of the 7-point Gauss rule (positive abscissae;
# the rule is symmetric). Values are the published QUADPACK dqk15 constants,
# pinned by a polynomial-exactness test.
_XGK = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144838258730,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.0,
    ]
)
_WGK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)
_WG = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
)

# Full 15-node layout, left to right.
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_W_KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
_W_GAUSS = np.zeros(15)
_W_GAUSS[1:8:2] = _WG
_W_GAUSS[9:15:2] = _WG[2::-1]


def gk15(f: Callable[[np.ndarray], np.ndarray], a: float, b: float):
    """One Gauss-Kronrod panel on [a, b]: returns (integral, error estimate)."""
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    fx = np.asarray(f(c + h * _NODES), dtype=np.float64)
    val_k = h * float(fx @ _W_KRONROD)
    val_g = h * float(fx @ _W_GAUSS)
    return val_k, abs(val_k - val_g)


def gk15_nodes(a: float, b: float):
    """Kronrod nodes and weights mapped onto [a, b], for shared-node rules."""
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    return c + h * _NODES, h * _W_KRONROD


_ROUNDOFF = 50.0 * np.finfo(np.float64).eps


def _adapt(panel_eval, edges, rel_tol: float, abs_tol: float, max_subdivisions: int):
    """Refine panels by bisection until the summed error estimate passes.

    panel_eval(a, b) -> (value, error). Worst panel first; the final sum runs
    left to right so the reduction order never depends on refinement history.
    The tolerance is floored at roundoff of the panel-magnitude sum, so heavy
    cancellation (a result many orders below the integrand scale) terminates
    instead of exhausting the budget chasing noise.
    """
    panels = []
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = panel_eval(a, b)
        panels.append([a, b, val, err])
    n_splits = 0
    while True:
        total = sum(p[2] for p in panels)
        err_total = sum(p[3] for p in panels)
        floor = _ROUNDOFF * sum(abs(p[2]) for p in panels)
        tol = max(abs_tol, rel_tol * abs(total), floor)
        if err_total <= tol:
            break
        if n_splits >= max_subdivisions:
            raise NonConvergenceError(
                f"subdivision budget {max_subdivisions} exhausted: "
                f"error estimate {err_total:.3e} > tolerance {tol:.3e}"
            )
        worst = max(range(len(panels)), key=lambda i: panels[i][3])
        a, b, _, _ = panels.pop(worst)
        mid = 0.5 * (a + b)
        for lo, hi in ((a, mid), (mid, b)):
            val, err = panel_eval(lo, hi)
            panels.append([lo, hi, val, err])
        n_splits += 1
    panels.sort(key=lambda p: p[0])
    return math.fsum(p[2] for p in panels)


def integrate_interval(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-14,
    max_subdivisions: int = 2000,
) -> float:
    """Adaptive Gauss-Kronrod integral of a vectorized integrand on [a, b]."""
    if not (math.isfinite(a) and math.isfinite(b)) or b < a:
        raise DomainError(f"bad interval [{a}, {b}]")
    if b == a:
        return 0.0
    return _adapt(lambda lo, hi: gk15(f, lo, hi), [a, b], rel_tol, abs_tol, max_subdivisions)


@dataclass(frozen=True)
class LambdaIntegralConfig:
    """Tolerances and budgets for the damped radial-frequency integral."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    cutoff_factor: float = 1.5
    max_subdivisions: int = 2000

    def validate(self) -> "LambdaIntegralConfig":
        if not (0 < self.rel_tol < 1) or self.abs_tol <= 0:
            raise ConfigError("tolerances must be positive (rel_tol < 1)")
        if self.cutoff_factor < 1.0:
            raise ConfigError("cutoff_factor must be >= 1")
        if self.max_subdivisions < 1:
            raise ConfigError("max_subdivisions must be >= 1")
        return self


def integrate_lambda(
    integrand: Callable[[np.ndarray], np.ndarray],
    t: float,
    cfg: LambdaIntegralConfig = LambdaIntegralConfig(),
    max_panel_width: float | None = None,
) -> float:
    """integral_0^inf integrand(lambda) * exp(-lambda^2 t / 2) dlambda.

    The damping factor is applied here, not by the caller, so the truncation
    point lambda_max = cutoff_factor * sqrt(2 ln(S / abs_tol) / t) can be set
    from a probe of the undamped integrand's scale S. Callers whose integrand
    oscillates can cap the initial panel width at a fraction of the local
    oscillation wavelength via max_panel_width.

    Raises DomainError for t <= 0 and NonConvergenceError for 0 < t < T_MIN
    (unsupported: accuracy cannot be certified there) or an exhausted
    subdivision budget.
    """
    cfg.validate()
    if not math.isfinite(t) or t <= 0:
        raise DomainError(f"time must be positive, got {t}")
    if t < T_MIN:
        raise NonConvergenceError(
            f"time {t} below supported minimum {T_MIN}; refusing to evaluate"
        )

    def damped(lam: np.ndarray) -> np.ndarray:
        return np.asarray(integrand(lam), dtype=np.float64) * np.exp(
            -0.5 * lam * lam * t
        )

    # Probe the undamped scale on a provisional range (S = 1), then set the
    # final truncation point from it. The log term is clamped below so a
    # negligible integrand still gets a short but nonempty range.
    lam_provisional = cfg.cutoff_factor * math.sqrt(
        2.0 * math.log(1.0 / cfg.abs_tol) / t
    )
    probe = np.linspace(lam_provisional / 16.0, lam_provisional, 16)
    scale = float(np.max(np.abs(integrand(probe))))
    log_term = math.log(scale / cfg.abs_tol) if scale > 0 else 1.0
    lam_max = cfg.cutoff_factor * math.sqrt(2.0 * max(log_term, 1.0) / t)

    width = lam_max / 4.0
    if max_panel_width is not None:
        if max_panel_width <= 0:
            raise DomainError("max_panel_width must be positive")
        width = min(width, max_panel_width)
    n_panels = max(4, math.ceil(lam_max / width))
    edges = np.linspace(0.0, lam_max, n_panels + 1)
    return _adapt(
        lambda lo, hi: gk15(damped, lo, hi),
        list(edges),
        cfg.rel_tol,
        cfg.abs_tol,
        cfg.max_subdivisions,
    )


@dataclass(frozen=True)
class SphereQuadratureConfig:
    """Product-rule orders for sphere-surface integrals."""

    polar_order: int = 64
    azimuthal_order: int = 128

    def validate(self) -> "SphereQuadratureConfig":
        if self.polar_order < 4 or self.azimuthal_order < 4:
            raise ConfigError("quadrature orders must be >= 4")
        return self


def sphere_nodes(r: float, cfg: SphereQuadratureConfig = SphereQuadratureConfig()):
    """Quadrature nodes and weights on the sphere of radius r about the origin.

    Returns (points, weights) with points of shape (n, 3), polar-major
    ordering, and weights summing to the sphere area 4 pi r^2.
    """
    cfg.validate()
    if not math.isfinite(r) or r <= 0:
        raise DomainError(f"radius must be positive, got {r}")
    cos_theta, w_theta = leggauss(cfg.polar_order)
    phi = 2.0 * math.pi * np.arange(cfg.azimuthal_order) / cfg.azimuthal_order
    w_phi = 2.0 * math.pi / cfg.azimuthal_order
    sin_theta = np.sqrt(1.0 - cos_theta * cos_theta)
    x = np.outer(sin_theta, np.cos(phi)).ravel()
    y = np.outer(sin_theta, np.sin(phi)).ravel()
    z = np.repeat(cos_theta, cfg.azimuthal_order)
    points = r * np.column_stack([x, y, z])
    weights = (r * r * w_phi) * np.repeat(w_theta, cfg.azimuthal_order)
    return points, weights


def integrate_sphere(
    f,
    r: float,
    cfg: SphereQuadratureConfig = SphereQuadratureConfig(),
    vectorized: bool = False,
) -> float:
    """Surface integral of f over the sphere of radius r about the origin.

    With vectorized=True, f receives the full (n, 3) node array and must
    return (n,) values; otherwise it is called once per surface point with a
    shape-(3,) position.
    """
    points, weights = sphere_nodes(r, cfg)
    if vectorized:
        values = np.asarray(f(points), dtype=np.float64)
        if values.shape != (points.shape[0],):
            raise DomainError("vectorized integrand returned a bad shape")
    else:
        values = np.fromiter(
            (f(points[i]) for i in range(points.shape[0])),
            dtype=np.float64,
            count=points.shape[0],
        )
    return float(values @ weights)
