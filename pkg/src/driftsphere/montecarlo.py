"""Particle-based validation harness for the absorbing-sphere channel.

Paths follow the Euler scheme X <- X + v dt + sigma sqrt(dt) xi with a
standard 3-D normal xi, absorbed when |X| <= r. Two estimators of the same
histogram:

  * direct: step with the physical drift, every hit counts 1.
  * girsanov-reweight: step with zero drift, weight each hit by the channel
    drift factor exp(v.(y - x0)/sigma^2 - |v|^2 T/(2 sigma^2)). One drift-free
    path ensemble then serves any drift vector.

Discrete-time checking misses sub-step excursions through the sphere, which
biases hitting times upward; with intrastep_correction a surviving step whose
endpoints sit d1 and d2 above the surface is additionally absorbed with the
half-space bridge probability exp(-2 d1 d2 / (sigma^2 dt)). Hit times land on
the step midpoint; hit positions are the nearer endpoint projected to the
sphere.

Determinism: each particle owns an independent xoshiro256++ stream whose state
is splitmix64-expanded from seed + (index + 1) * golden-gamma, and writes only
its own output slot; the histogram reduction is a single ordered bincount.
Results therefore depend on (seed, config) alone, not on thread count or
scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.stats import chi2 as chi2_dist

from .channel import (
    ChannelGeometry,
    CirCurve,
    DriftSpec,
    SeriesConfig,
    cir_curve,
    drift_factor,
)
from .errors import ConfigError, DomainError, GridMismatchError
from .quadrature import T_MIN

MODE_DIRECT = "direct"
MODE_GIRSANOV = "girsanov-reweight"

RECORD_DTYPE = np.dtype(
    [
        ("T_s", np.float64),
        ("y_x_um", np.float64),
        ("y_y_um", np.float64),
        ("y_z_um", np.float64),
        ("weight", np.float64),
    ]
)


@dataclass(frozen=True)
class McConfig:
    """Particle count, stepping, binning, seeding, and estimator mode."""

    n_particles: int = 1_000_000
    dt_sim: float = 1e-5
    t_max: float = 2.0
    bin_width: float = 5e-5
    seed: int = 0
    mode: str = MODE_DIRECT
    intrastep_correction: bool = True

    def validate(self) -> "McConfig":
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if not 0 < self.dt_sim <= self.bin_width:
            raise ConfigError("dt_sim must satisfy 0 < dt_sim <= bin_width")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        n_bins = self.t_max / self.bin_width
        if abs(n_bins - round(n_bins)) > 1e-9 * max(n_bins, 1.0):
            raise ConfigError("t_max must be a whole number of bins")
        if self.mode not in (MODE_DIRECT, MODE_GIRSANOV):
            raise ConfigError(f"unknown mode {self.mode!r}")
        return self

    @property
    def n_bins(self) -> int:
        return int(round(self.t_max / self.bin_width))

    @property
    def n_steps(self) -> int:
        # Horizon truncated to whole steps; exact for the supported defaults.
        return int(math.floor(self.t_max / self.dt_sim + 1e-9))


@dataclass
class HitHistogram:
    """Per-bin absorption counts (direct) or summed weights (girsanov)."""

    bin_edges: np.ndarray
    weights: np.ndarray
    n_released: int
    n_absorbed_effective: float
    mode: str

    def __post_init__(self):
        if self.bin_edges.size != self.weights.size + 1:
            raise ConfigError("bin_edges must have one more entry than weights")
        if np.any(self.weights < 0):
            raise ConfigError("histogram bins must be nonnegative")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


# ==== per-particle RNG: splitmix64 seeding, xoshiro256++ stream ====

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _splitmix64(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _next_u53(s0, s1, s2, s3):
    """One xoshiro256++ step; returns a uniform in [0, 1) and the new state."""
    t0 = s0 + s3
    res = ((t0 << np.uint64(23)) | (t0 >> np.uint64(41))) + s0
    tt = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= tt
    s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    return float(res >> np.uint64(11)) * _INV53, s0, s1, s2, s3


@njit(cache=True, inline="always")
def _next_normal(s0, s1, s2, s3, have_spare, spare):
    """Standard normal via the polar method, banking the paired deviate."""
    if have_spare:
        return spare, s0, s1, s2, s3, False, 0.0
    while True:
        u1, s0, s1, s2, s3 = _next_u53(s0, s1, s2, s3)
        u2, s0, s1, s2, s3 = _next_u53(s0, s1, s2, s3)
        a = 2.0 * u1 - 1.0
        b = 2.0 * u2 - 1.0
        s = a * a + b * b
        if 0.0 < s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            return a * f, s0, s1, s2, s3, True, b * f


@njit(cache=True, fastmath=True, parallel=True)
def _run_particles(
    seed,
    n_particles,
    x0x,
    x0y,
    x0z,
    vx,
    vy,
    vz,
    r,
    sigma,
    dt,
    n_steps,
    use_bridge,
    hit_step,
    hit_px,
    hit_py,
    hit_pz,
):
    r2 = r * r
    sd = sigma * math.sqrt(dt)
    sig2dt = sigma * sigma * dt
    # Bridge skip layer: both endpoints beyond it give d1*d2 >= 20 sigma^2 dt,
    # i.e. absorption probability under exp(-40); skip the uniform draw there.
    layer = r + 4.4721359549995793 * sd
    layer2 = layer * layer
    for i in prange(n_particles):
        sm = np.uint64(seed) + (np.uint64(i) + np.uint64(1)) * _GOLDEN
        sm, s0 = _splitmix64(sm)
        sm, s1 = _splitmix64(sm)
        sm, s2 = _splitmix64(sm)
        sm, s3 = _splitmix64(sm)

        x = x0x
        y = x0y
        z = x0z
        p2 = x * x + y * y + z * z
        have_spare = False
        spare = 0.0
        hit_step[i] = -1
        for k in range(n_steps):
            n0, s0, s1, s2, s3, have_spare, spare = _next_normal(
                s0, s1, s2, s3, have_spare, spare
            )
            n1, s0, s1, s2, s3, have_spare, spare = _next_normal(
                s0, s1, s2, s3, have_spare, spare
            )
            n2, s0, s1, s2, s3, have_spare, spare = _next_normal(
                s0, s1, s2, s3, have_spare, spare
            )
            px = x
            py = y
            pz = z
            x += vx * dt + sd * n0
            y += vy * dt + sd * n1
            z += vz * dt + sd * n2
            q2 = x * x + y * y + z * z
            if q2 <= r2:
                scale = r / math.sqrt(q2)
                hit_step[i] = k
                hit_px[i] = x * scale
                hit_py[i] = y * scale
                hit_pz[i] = z * scale
                break
            if use_bridge and (q2 < layer2 or p2 < layer2):
                d1 = math.sqrt(p2) - r
                d2 = math.sqrt(q2) - r
                u, s0, s1, s2, s3 = _next_u53(s0, s1, s2, s3)
                if u < math.exp(-2.0 * d1 * d2 / sig2dt):
                    if p2 < q2:
                        scale = r / math.sqrt(p2)
                        hit_px[i] = px * scale
                        hit_py[i] = py * scale
                        hit_pz[i] = pz * scale
                    else:
                        scale = r / math.sqrt(q2)
                        hit_px[i] = x * scale
                        hit_py[i] = y * scale
                        hit_pz[i] = z * scale
                    hit_step[i] = k
                    break
            p2 = q2


def simulate(
    geom: ChannelGeometry,
    drift: DriftSpec,
    cfg: McConfig = McConfig(),
    collect_records: bool = False,
):
    """Run the particle ensemble and bin absorption times.

    Returns a HitHistogram, or (HitHistogram, records) with collect_records,
    where records is a structured array of per-hit (T_s, y_*_um, weight) rows
    in particle order. In girsanov-reweight mode the paths are stepped without
    drift and each hit carries the channel drift factor as its weight.
    """
    cfg.validate()
    girsanov = cfg.mode == MODE_GIRSANOV
    v_eff = (0.0, 0.0, 0.0) if girsanov else drift.v
    n = cfg.n_particles
    hit_step = np.empty(n, dtype=np.int64)
    hit_px = np.zeros(n)
    hit_py = np.zeros(n)
    hit_pz = np.zeros(n)
    _run_particles(
        np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF),
        n,
        geom.x0[0],
        geom.x0[1],
        geom.x0[2],
        v_eff[0],
        v_eff[1],
        v_eff[2],
        geom.r,
        geom.sigma,
        cfg.dt_sim,
        cfg.n_steps,
        cfg.intrastep_correction,
        hit_step,
        hit_px,
        hit_py,
        hit_pz,
    )
    mask = hit_step >= 0
    t_hit = (hit_step[mask] + 0.5) * cfg.dt_sim
    pts = np.column_stack([hit_px[mask], hit_py[mask], hit_pz[mask]])
    if girsanov and not drift.is_zero:
        weights = drift_factor(geom, drift, pts, t_hit)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    else:
        weights = np.ones(t_hit.size)
    bin_idx = np.minimum(
        (t_hit / cfg.bin_width).astype(np.int64), cfg.n_bins - 1
    )
    binned = np.bincount(bin_idx, weights=weights, minlength=cfg.n_bins)
    edges = np.arange(cfg.n_bins + 1) * cfg.bin_width
    hist = HitHistogram(
        bin_edges=edges,
        weights=binned,
        n_released=n,
        n_absorbed_effective=float(weights.sum()),
        mode=cfg.mode,
    )
    if not collect_records:
        return hist
    records = np.empty(t_hit.size, dtype=RECORD_DTYPE)
    records["T_s"] = t_hit
    records["y_x_um"] = pts[:, 0]
    records["y_y_um"] = pts[:, 1]
    records["y_z_um"] = pts[:, 2]
    records["weight"] = weights
    return hist, records


def write_records_csv(path, records: np.ndarray) -> None:
    """Write hit records as CSV with full-precision floats and LF endings."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(RECORD_DTYPE.names) + "\n")
        for row in records:
            fh.write(",".join(repr(float(row[name])) for name in RECORD_DTYPE.names))
            fh.write("\n")


# ==== histogram-vs-curve comparison ====


def curve_on_centers(
    geom: ChannelGeometry,
    drift: DriftSpec,
    centers,
    cfg: SeriesConfig = SeriesConfig(),
) -> CirCurve:
    """Analytic density curve aligned to histogram bin centers.

    Centers below the series evaluator's minimum time get value 0: the density
    there sits thousands of orders below double-precision underflow for any
    geometry this package accepts, and the evaluator refuses such times rather
    than return noise. Remaining centers go through cir_curve unchanged.
    """
    t = np.asarray(centers, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise DomainError("centers must be non-empty")
    if drift.is_zero:
        return cir_curve(geom, drift, t, cfg)
    k = int(np.searchsorted(t, T_MIN))
    if k == t.size:
        raise DomainError(
            f"no bin center reaches the supported minimum time {T_MIN}"
        )
    body = cir_curve(geom, drift, t[k:], cfg)
    return CirCurve(
        t=t.copy(),
        values=np.concatenate([np.zeros(k), body.values]),
        provenance=body.provenance,
        n_clamped=body.n_clamped,
    )


@dataclass
class ComparisonReport:
    """Pooled chi-square comparison of a histogram against expected counts."""

    chi2: float
    dof: int
    p_value: float
    max_abs_z: float
    z_scores: np.ndarray
    pooled_expected: np.ndarray
    pooled_observed: np.ndarray

    def passes(self, alpha: float = 0.01) -> bool:
        return self.p_value >= alpha


def _pool_bins(observed: np.ndarray, expected: np.ndarray, min_expected: float):
    """Merge adjacent bins until each pooled bin expects >= min_expected.

    A trailing remainder below the threshold folds into the previous pool, so
    every count participates exactly once. If no pool ever reaches the
    threshold the result is empty: a chi-square over such cells is undefined.
    """
    pooled_obs = []
    pooled_exp = []
    acc_o = 0.0
    acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += float(o)
        acc_e += float(e)
        if acc_e >= min_expected:
            pooled_obs.append(acc_o)
            pooled_exp.append(acc_e)
            acc_o = 0.0
            acc_e = 0.0
    if acc_e > 0 and pooled_exp:
        pooled_obs[-1] += acc_o
        pooled_exp[-1] += acc_e
    return np.array(pooled_obs), np.array(pooled_exp)


def chi_square_compare(
    hist: HitHistogram,
    curve: CirCurve,
    min_expected: float = 5.0,
) -> ComparisonReport:
    """Chi-square of the histogram against n_released * f(t) * bin_width.

    The curve must be sampled on the histogram's bin centers. Adjacent bins
    pool until each pooled cell expects at least min_expected counts; the
    reference curve is fully specified (nothing fitted), so dof equals the
    number of pooled cells.
    """
    centers = hist.centers
    if curve.t.shape != centers.shape or not np.allclose(
        curve.t, centers, rtol=0.0, atol=1e-12
    ):
        raise GridMismatchError(
            "curve times do not match histogram bin centers"
        )
    bin_width = float(hist.bin_edges[1] - hist.bin_edges[0])
    expected = curve.counts_per_bin(hist.n_released, bin_width)
    observed, exp_pooled = _pool_bins(hist.weights, expected, min_expected)
    if exp_pooled.size == 0:
        raise GridMismatchError("no bins reach the pooling threshold")
    z = (observed - exp_pooled) / np.sqrt(exp_pooled)
    chi2 = float(np.sum(z * z))
    dof = int(exp_pooled.size)
    p = float(chi2_dist.sf(chi2, dof))
    return ComparisonReport(
        chi2=chi2,
        dof=dof,
        p_value=p,
        max_abs_z=float(np.max(np.abs(z))),
        z_scores=z,
        pooled_expected=exp_pooled,
        pooled_observed=observed,
    )


def sample_histogram_from_curve(
    curve: CirCurve,
    n_released: int,
    bin_width: float,
    seed: int,
) -> HitHistogram:
    """Multinomial draw from an analytic curve: the self-consistency null.

    Each particle is absorbed in bin j with probability f(t_j) * bin_width,
    or never; used to calibrate chi_square_compare against a histogram that
    is by construction drawn from the reference density.
    """
    p = curve.values * bin_width
    p_none = max(0.0, 1.0 - float(p.sum()))
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(n_released, np.append(p, p_none))
    edges = np.arange(p.size + 1) * bin_width
    counts = draws[:-1].astype(np.float64)
    return HitHistogram(
        bin_edges=edges,
        weights=counts,
        n_released=n_released,
        n_absorbed_effective=float(counts.sum()),
        mode=MODE_DIRECT,
    )
