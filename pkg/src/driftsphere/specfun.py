"""Legendre polynomials and spherical Bessel functions for the hitting-time series.

Half-integer-order cylinder functions enter the hitting-time densities only through
the combinations

    J_{m+1/2}(x) = sqrt(2x/pi) j_m(x),      Y_{m+1/2}(x) = sqrt(2x/pi) y_m(x),
    I_{m+1/2}(x) = sqrt(2x/pi) i_m(x),

so everything here is evaluated through the spherical counterparts j_m, y_m, i_m
with elementary closed forms at orders 0 and 1 and three-term recurrences above.
Recurrence direction follows stability: upward for y_m always and for j_m while
the order stays below the argument, downward (continued-fraction ratios, Miller
normalization) for j_m and i_m in the evanescent regime.

All functions accept scalars or ndarrays for the argument and are vectorized
along it; the order is always a scalar int.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

# Hard cap on the order; the series evaluators stay far below this.
MAX_ORDER = 200

# Extra orders above the target for downward-ratio starts.
_MILLER_PAD = 20

# |x| may exceed 1 by at most this much before legendre_p refuses to clamp.
_LEGENDRE_CLAMP = 5e-12


def _check_order(m: int) -> int:
    if not isinstance(m, (int, np.integer)):
        raise DomainError(f"order must be an integer, got {m!r}")
    if m < 0 or m > MAX_ORDER:
        raise DomainError(f"order must be in [0, {MAX_ORDER}], got {m}")
    return int(m)


def _as_array(x, name: str, min_allowed: float, strict: bool):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if strict:
        if np.any(arr <= min_allowed):
            raise DomainError(f"{name} must be > {min_allowed}")
    elif np.any(arr < min_allowed):
        raise DomainError(f"{name} must be >= {min_allowed}")
    return arr


def _scalar_like(value: np.ndarray, template) -> "np.ndarray | float":
    if np.isscalar(template) or getattr(template, "ndim", 1) == 0:
        return float(value)
    return value


# ==== Legendre ====


def legendre_p(m: int, x):
    """Legendre polynomial P_m(x) on [-1, 1] by the Bonnet recurrence.

    Arguments within 5e-12 of the endpoints are clamped (quadrature nodes and
    rounded cosines land there); anything further outside raises DomainError.
    """
    m = _check_order(m)
    return _scalar_like(legendre_table(m, x)[m], x)


def legendre_table(m_max: int, x) -> np.ndarray:
    """All orders P_0..P_{m_max} at once; returns shape (m_max+1,) + shape(x)."""
    m_max = _check_order(m_max)
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("legendre argument must be finite")
    if np.any(np.abs(arr) > 1.0 + _LEGENDRE_CLAMP):
        raise DomainError(
            f"legendre argument outside [-1, 1] by more than {_LEGENDRE_CLAMP}"
        )
    arr = np.clip(arr, -1.0, 1.0)
    out = np.empty((m_max + 1,) + arr.shape, dtype=np.float64)
    out[0] = 1.0
    if m_max >= 1:
        out[1] = arr
    for l in range(1, m_max):
        out[l + 1] = ((2 * l + 1) * arr * out[l] - l * out[l - 1]) / (l + 1)
    return out


# ==== spherical Bessel j, y ====


def _j0(x: np.ndarray) -> np.ndarray:
    # sin(x)/x with the series below x ~ 1e-4 to dodge 0/0.
    out = np.empty_like(x)
    small = x < 1e-4
    xs = x[small]
    out[small] = 1.0 - xs * xs / 6.0 * (1.0 - xs * xs / 20.0)
    xl = x[~small]
    out[~small] = np.sin(xl) / xl
    return out


def _j1(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    small = x < 1e-3
    xs = x[small]
    x2 = xs * xs
    out[small] = xs / 3.0 * (1.0 - x2 / 10.0 * (1.0 - x2 / 28.0))
    xl = x[~small]
    out[~small] = np.sin(xl) / (xl * xl) - np.cos(xl) / xl
    return out


def _j_ratios(m_max: int, x: np.ndarray, l_top: int) -> np.ndarray:
    """Ratios rho[l] = j_l(x)/j_{l-1}(x) for l = 1..m_max by downward descent.

    Started at l_top with the asymptotic ratio; by the time the descent reaches
    the stored orders the starting error has decayed away (Miller's principle).
    """
    rho_store = np.empty((m_max + 1, x.shape[0]), dtype=np.float64)
    rho = x / (2 * l_top + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(l_top, 0, -1):
            rho = x / ((2 * l + 1.0) - x * rho)
            if l <= m_max:
                rho_store[l] = rho
    rho_store[0] = np.nan  # never used; j_0 comes from the closed form
    return rho_store


def _jy_tables(m_max: int, x: np.ndarray):
    """j_l and y_l for l = 0..m_max over an argument vector, x > 0.

    y: upward recurrence (y is the dominant solution for growing order, so the
    sweep is stable; overflow to inf at extreme order/argument combinations is
    left in place for the caller to interpret as an evanescent underflow).
    j: upward while the order stays below the argument, downward ratios above,
    re-anchored on whichever of the last two upward values is larger so that a
    near-zero anchor cannot poison the evanescent tail.
    """
    n = x.shape[0]
    j = np.empty((m_max + 1, n), dtype=np.float64)
    y = np.empty((m_max + 1, n), dtype=np.float64)

    sin_x, cos_x = np.sin(x), np.cos(x)
    j[0] = _j0(x)
    y[0] = -cos_x / x
    if m_max == 0:
        return j, y
    j[1] = _j1(x)
    y[1] = -cos_x / (x * x) - sin_x / x

    with np.errstate(over="ignore", invalid="ignore"):
        for l in range(1, m_max):
            c = (2 * l + 1.0) / x
            j[l + 1] = c * j[l] - j[l - 1]
            y[l + 1] = c * y[l] - y[l - 1]

    # Orders above the argument: replace the (unstable) upward j values.
    needs_fix = x < m_max
    if np.any(needs_fix):
        xf = x[needs_fix]
        l_top = max(m_max + _MILLER_PAD, math.ceil(1.5 * float(np.max(xf))))
        rho = _j_ratios(m_max, xf, l_top)
        jf = j[:, needs_fix]
        anchor = np.minimum(np.floor(xf).astype(np.int64), m_max)
        pick_prev = (anchor >= 1) & (
            np.abs(jf[np.maximum(anchor - 1, 0), np.arange(xf.shape[0])])
            > np.abs(jf[anchor, np.arange(xf.shape[0])])
        )
        anchor = np.where(pick_prev, anchor - 1, anchor)
        for l in range(1, m_max + 1):
            above = l > anchor
            jf[l, above] = jf[l - 1, above] * rho[l, above]
        j[:, needs_fix] = jf
    return j, y


def sph_bessel_j(m: int, x):
    """Spherical Bessel function of the first kind, j_m(x) for x >= 0."""
    m = _check_order(m)
    arr = _as_array(x, "argument of j", 0.0, strict=False)
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    zero = flat == 0.0
    out[zero] = 1.0 if m == 0 else 0.0
    pos = ~zero
    if np.any(pos):
        out[pos] = _jy_tables(m, flat[pos])[0][m]
    return _scalar_like(out.reshape(np.shape(arr)), x)


def sph_bessel_y(m: int, x):
    """Spherical Bessel function of the second kind, y_m(x) for x > 0."""
    m = _check_order(m)
    arr = _as_array(x, "argument of y", 0.0, strict=True)
    flat = np.atleast_1d(arr).ravel()
    out = _jy_tables(m, flat)[1][m]
    return _scalar_like(out.reshape(np.shape(arr)), x)


# ==== modified spherical Bessel i ====


def _i0(x: np.ndarray, scaled: bool) -> np.ndarray:
    out = np.empty_like(x)
    small = x < 1e-4
    xs = x[small]
    series = 1.0 + xs * xs / 6.0 * (1.0 + xs * xs / 20.0)
    out[small] = series * np.exp(-xs) if scaled else series
    xl = x[~small]
    if scaled:
        # e^{-x} sinh(x)/x, written to stay finite for large x.
        out[~small] = -np.expm1(-2.0 * xl) / (2.0 * xl)
    else:
        out[~small] = np.sinh(xl) / xl
    return out


def _i_ratios(m_max: int, x: np.ndarray, l_top: int) -> np.ndarray:
    """Ratios i_l(x)/i_{l-1}(x) for l = 1..m_max; all terms positive, stable."""
    rho_store = np.empty((m_max + 1, x.shape[0]), dtype=np.float64)
    rho = x / (2 * l_top + 1.0 + x)
    for l in range(l_top, 0, -1):
        rho = x / ((2 * l + 1.0) + x * rho)
        if l <= m_max:
            rho_store[l] = rho
    rho_store[0] = np.nan
    return rho_store


def mod_sph_bessel_i_table(m_max: int, x, scaled: bool = False) -> np.ndarray:
    """i_l(x) (or e^{-x} i_l(x) if scaled) for l = 0..m_max, x >= 0."""
    m_max = _check_order(m_max)
    arr = _as_array(x, "argument of i", 0.0, strict=False)
    flat = np.atleast_1d(arr).ravel()
    out = np.empty((m_max + 1, flat.shape[0]), dtype=np.float64)
    out[0] = _i0(flat, scaled)
    if m_max >= 1:
        pos = flat > 0.0
        xf = flat[pos]
        if xf.size:
            l_top = max(m_max + _MILLER_PAD, math.ceil(1.5 * float(np.max(xf))))
            rho = _i_ratios(m_max, xf, l_top)
            for l in range(1, m_max + 1):
                out[l, pos] = out[l - 1, pos] * rho[l]
        out[1:, ~pos] = 0.0
    return out.reshape((m_max + 1,) + np.shape(arr))


def mod_sph_bessel_i(m: int, x, scaled: bool = False):
    """Modified spherical Bessel function of the first kind, i_m(x) for x >= 0.

    With scaled=True returns e^{-x} i_m(x); the series evaluator uses that form
    and keeps the +x in its log-space exponent ledger instead.
    """
    m = _check_order(m)
    return _scalar_like(mod_sph_bessel_i_table(m, x, scaled=scaled)[m], x)


def exp_tail(m: int, x):
    """Exponential remainder sum_{k >= m} x^k / k!, i.e. e^x minus its first
    m Taylor terms, summed directly from the k = m term.

    Direct summation keeps full relative accuracy where the remainder is many
    orders below e^x, which naive subtraction destroys; projections of e^{c.y}
    onto a degree-m surface mode live entirely in this remainder.
    """
    m = _check_order(m)
    x_arr = np.asarray(x, dtype=np.float64)
    if m == 0:
        return _scalar_like(np.exp(x_arr), x)
    term = np.ones_like(x_arr)
    for k in range(1, m + 1):
        term = term * x_arr / k
    total = term.copy()
    scale = np.abs(term)
    for k in range(m + 1, m + 400):
        term = term * x_arr / k
        total += term
        scale = np.maximum(scale, np.abs(term))
        if np.all(np.abs(term) <= 1e-20 * np.maximum(scale, 1e-300)):
            return _scalar_like(total, x)
    raise DomainError(
        f"exp_tail did not converge for order {m}; largest |x| was "
        f"{float(np.max(np.abs(x_arr)))}"
    )


# ==== cross-product ratio ====


def cross_product_ratio(m: int, a: float, b):
    """Radial kernel sqrt(a) [j_m(ab) y_m(b) - j_m(b) y_m(ab)] / (j_m(b)^2 + y_m(b)^2).

    This is the half-integer Bessel cross-product Z_{m+1/2}(a, b) over the
    squared modulus J_{m+1/2}^2(b) + Y_{m+1/2}^2(b), reduced to spherical
    functions (the sqrt(2b/pi) prefactors cancel).

    Parameters
    ----------
    m : int
        Mode order.
    a : float
        Radius ratio (source distance over absorber radius), a >= 1.
    b : float or ndarray
        Scaled radial frequency, b >= 0. The b -> 0+ limit is 0 and is returned
        exactly; order/argument combinations whose y_m overflows double range
        correspond to kernel values far below double underflow and come back 0.
    """
    m = _check_order(m)
    return _scalar_like(cross_product_ratio_table(m, a, b)[m], b)


def cross_product_ratio_table(m_max: int, a: float, b) -> np.ndarray:
    """Kernel values for all orders 0..m_max at once (shared Bessel tables)."""
    m_max = _check_order(m_max)
    a = float(a)
    if not math.isfinite(a) or a < 1.0:
        raise DomainError(f"radius ratio must be >= 1, got {a}")
    arr = _as_array(b, "argument b", 0.0, strict=False)
    flat = np.atleast_1d(arr).ravel()
    out = np.zeros((m_max + 1, flat.shape[0]), dtype=np.float64)
    pos = flat > 0.0
    bf = flat[pos]
    if bf.size:
        # One table call covers both arguments b and a*b.
        stacked = np.concatenate([bf, a * bf])
        j, y = _jy_tables(m_max, stacked)
        n = bf.shape[0]
        j_b, j_ab = j[:, :n], j[:, n:]
        y_b, y_ab = y[:, :n], y[:, n:]
        with np.errstate(over="ignore", invalid="ignore"):
            num = j_ab * y_b - j_b * y_ab
            den = j_b * j_b + y_b * y_b
            val = math.sqrt(a) * num / den
        # Non-finite intermediates only arise when y has overflown, i.e. deep in
        # the evanescent regime where the true kernel underflows double: take 0.
        out[:, pos] = np.where(np.isfinite(val), val, 0.0)
    return out.reshape((m_max + 1,) + np.shape(arr))
