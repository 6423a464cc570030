"""Command-line front end: curves, particle runs, comparisons, and sweeps.

Commands
    cir       evaluate the analytic density on a time grid
    mc        run the particle simulator and bin absorption times
    compare   simulate, overlay the analytic curve, report a chi-square verdict
    validate  run the built-in correctness checks
    sweep     peak metrics along a drift-speed or radius axis
    peaks     peak metrics for a single configuration

Configuration is layered: built-in defaults (the reference geometry r=10 um,
|x0|=20 um, D=80 um^2/s), then an optional flat key=value file (--config),
then explicit flags. Keys in the file use the flag spelling with either '-'
or '_'. The drift goes in exactly one way: magnitude --speed-ums plus angle
--psi-deg (degrees, 180 pointing at the receiver), or a raw vector
--drift-ums vx,vy,vz.

Output files are deterministic for a fixed configuration: full-precision
repr floats, LF line endings, sorted JSON keys, no timestamps. Exit codes:
0 success, 1 a validation or comparison check failed, 2 configuration
error, 3 numerical failure.
"""
import argparse
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .channel import (
    ChannelGeometry,
    DriftSpec,
    SeriesConfig,
    cir_curve,
    cir_drift,
    cir_nodrift_closed,
    cir_via_marginalization,
    hitting_probability,
    zero_drift,
)
from .errors import (
    ConfigError,
    DomainError,
    EvaluationOverflowError,
    GridMismatchError,
    NonConvergenceError,
    NotUnimodalError,
    WindowError,
)
from .metrics import find_peak, sweep_radius, sweep_velocity
from .montecarlo import (
    MODE_DIRECT,
    MODE_GIRSANOV,
    McConfig,
    chi_square_compare,
    curve_on_centers,
    sample_histogram_from_curve,
    simulate,
    write_records_csv,
)
from .onedim import OneDimChannel, girsanov_factor_1d, ig_mass, ig_pdf, levy_pdf
from .quadrature import integrate_sphere
from .specfun import exp_tail, legendre_p, mod_sph_bessel_i

_CONFIG_EXIT = 2
_NUMERICAL_EXIT = 3

_CONFIG_ERRORS = (ConfigError, DomainError, GridMismatchError)
_NUMERICAL_ERRORS = (
    NonConvergenceError,
    NotUnimodalError,
    WindowError,
    EvaluationOverflowError,
    OverflowError,
    FloatingPointError,
)


# ==== run configuration ====


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, merged from defaults, file, and flags.

    speed_ums / psi_deg stay None while unset so a vector drift can be told
    apart from an explicit polar one; resolution happens in drift().
    """

    r_um: float = 10.0
    x0_um: float = 20.0
    d_um2s: float = 80.0
    speed_ums: float = None
    psi_deg: float = None
    drift_ums: str = ""
    m_order: int = 30
    ntx: int = 1_000_000
    dt_bin_s: float = 5e-5
    dt_sim_s: float = 1e-5
    t_max_s: float = 2.0
    seed: int = 0
    mode: str = "direct"
    bridge: bool = True
    t_lo_s: float = 1e-3
    t_hi_s: float = 1.0
    n_t: int = 400
    log_grid: bool = True
    alpha: float = 0.01
    window_lo_s: float = 1e-3
    window_hi_s: float = 2.0
    axis: str = "velocity"
    values: str = ""
    psis_deg: str = "0,90,180"
    records: str = ""
    out: str = ""

    @classmethod
    def build(cls, config_path, cli_overrides: dict) -> "RunConfig":
        merged = {}
        if config_path:
            merged.update(_coerce_entries(_read_config_file(config_path)))
        merged.update(cli_overrides)
        return cls(**merged)

    def geometry(self) -> ChannelGeometry:
        return ChannelGeometry(
            r=self.r_um, x0=(0.0, 0.0, self.x0_um), D=self.d_um2s
        )

    def drift(self, geom: ChannelGeometry) -> DriftSpec:
        vector_given = bool(self.drift_ums.strip())
        polar_given = self.speed_ums is not None or self.psi_deg is not None
        if vector_given and polar_given:
            raise ConfigError(
                "drift given both as --drift-ums and as --speed-ums/--psi-deg; "
                "pick one"
            )
        if vector_given:
            return DriftSpec(_parse_vec3(self.drift_ums))
        speed = 0.0 if self.speed_ums is None else self.speed_ums
        psi_deg = 180.0 if self.psi_deg is None else self.psi_deg
        if speed == 0.0:
            return zero_drift()
        return DriftSpec.from_speed_psi(geom, speed, math.radians(psi_deg))

    def series(self) -> SeriesConfig:
        return SeriesConfig(max_order=self.m_order).validate()

    def mc(self) -> McConfig:
        mode_map = {
            "direct": MODE_DIRECT,
            "girsanov": MODE_GIRSANOV,
            MODE_GIRSANOV: MODE_GIRSANOV,
        }
        if self.mode not in mode_map:
            raise ConfigError(
                f"mode must be 'direct' or 'girsanov', got {self.mode!r}"
            )
        return McConfig(
            n_particles=self.ntx,
            dt_sim=self.dt_sim_s,
            t_max=self.t_max_s,
            bin_width=self.dt_bin_s,
            seed=self.seed,
            mode=mode_map[self.mode],
            intrastep_correction=self.bridge,
        ).validate()

    def search_window(self) -> tuple:
        return (self.window_lo_s, self.window_hi_s)

    def canonical(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stem(self, default: str) -> str:
        return self.out if self.out else default


_FLOAT_KEYS = {
    "r_um", "x0_um", "d_um2s", "speed_ums", "psi_deg", "dt_bin_s",
    "dt_sim_s", "t_max_s", "t_lo_s", "t_hi_s", "alpha",
    "window_lo_s", "window_hi_s",
}
_INT_KEYS = {"m_order", "ntx", "seed", "n_t"}
_BOOL_KEYS = {"bridge", "log_grid"}
_STR_KEYS = {
    "drift_ums", "mode", "axis", "values", "psis_deg", "records", "out",
}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _BOOL_KEYS | _STR_KEYS


def _read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    entries = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def _coerce_entries(entries: dict) -> dict:
    out = {}
    for key, text in entries.items():
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key in _FLOAT_KEYS:
                out[key] = float(text)
            elif key in _INT_KEYS:
                out[key] = int(text)
            elif key in _BOOL_KEYS:
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    out[key] = True
                elif low in ("0", "false", "no", "off"):
                    out[key] = False
                else:
                    raise ValueError(f"not a boolean: {text!r}")
            else:
                out[key] = text
        except ValueError as err:
            raise ConfigError(f"config key {key}: {err}") from err
    return out


def _parse_vec3(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"drift vector needs three components, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as err:
        raise ConfigError(f"bad drift vector {text!r}: {err}") from err


def _parse_float_list(text: str, what: str) -> list:
    if not text.strip():
        raise ConfigError(f"{what} must be a comma-separated list of numbers")
    try:
        return [float(p) for p in text.split(",")]
    except ValueError as err:
        raise ConfigError(f"bad {what} {text!r}: {err}") from err


# ==== file writers ====


def _write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_meta(path, cfg: RunConfig, command: str, payload: dict) -> None:
    doc = {
        "tool": "driftsphere",
        "version": __version__,
        "command": command,
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "payload": payload,
    }
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _csv_lines(header: str, columns) -> str:
    rows = ["\n".join(
        ",".join(repr(float(col[i])) for col in columns)
        for i in range(len(columns[0]))
    )]
    return header + "\n" + rows[0] + "\n"


_PLOT_CURVE = '''#!/usr/bin/env python3
"""Plot the analytic density written next to this script."""
import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open({csv!r}) as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t_s"]) for r in rows]
f = [float(r["f_per_s"]) for r in rows]
plt.figure(figsize=(5.0, 3.4))
plt.plot(t, f, lw=1.3)
plt.xlabel("t [s]")
plt.ylabel("f(t) [1/s]")
plt.tight_layout()
plt.savefig({png!r}, dpi=150)
print("wrote", {png!r})
'''

_PLOT_COMPARE = '''#!/usr/bin/env python3
"""Overlay the simulated histogram on the analytic expectation."""
import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open({hist_csv!r}) as fh:
    hrows = list(csv.DictReader(fh))
with open({curve_csv!r}) as fh:
    crows = list(csv.DictReader(fh))
th = [float(r["t_s"]) for r in hrows]
w = [float(r["weight"]) for r in hrows]
tc = [float(r["t_s"]) for r in crows]
e = [float(r["scaled_count"]) for r in crows]
plt.figure(figsize=(5.0, 3.4))
plt.step(th, w, where="mid", lw=0.7, alpha=0.7, label="simulated")
plt.plot(tc, e, lw=1.3, label="analytic")
plt.xlabel("t [s]")
plt.ylabel("absorbed per bin")
plt.legend(frameon=False)
plt.tight_layout()
plt.savefig({png!r}, dpi=150)
print("wrote", {png!r})
'''

_PLOT_SWEEP = '''#!/usr/bin/env python3
"""Plot peak time and peak count against the sweep axis, one line per angle."""
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open({csv!r}) as fh:
    rows = list(csv.DictReader(fh))
by_psi = defaultdict(list)
for r in rows:
    by_psi[float(r["psi_deg"])].append(r)
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
for psi in sorted(by_psi):
    rs = by_psi[psi]
    x = [float(r["axis_value"]) for r in rs]
    ax1.plot(x, [float(r["t_peak_s"]) for r in rs], "o-", ms=3,
             label="psi=%g deg" % psi)
    ax2.plot(x, [float(r["peak_count_per_bin"]) for r in rs], "o-", ms=3,
             label="psi=%g deg" % psi)
ax1.set_xlabel({axis_label!r})
ax1.set_ylabel("t_peak [s]")
ax2.set_xlabel({axis_label!r})
ax2.set_ylabel("peak count per bin")
ax2.legend(frameon=False, fontsize=8)
fig.tight_layout()
fig.savefig({png!r}, dpi=150)
print("wrote", {png!r})
'''


# ==== commands ====


def cmd_cir(cfg: RunConfig, args) -> int:
    geom = cfg.geometry()
    drift = cfg.drift(geom)
    if not cfg.t_lo_s < cfg.t_hi_s:
        raise ConfigError("need t_lo_s < t_hi_s")
    if cfg.n_t < 2:
        raise ConfigError("need at least two grid points")
    if cfg.log_grid:
        t = np.geomspace(cfg.t_lo_s, cfg.t_hi_s, cfg.n_t)
    else:
        t = np.linspace(cfg.t_lo_s, cfg.t_hi_s, cfg.n_t)
    curve = cir_curve(geom, drift, t, cfg.series())
    counts = curve.counts_per_bin(cfg.ntx, cfg.dt_bin_s)
    stem = cfg.stem("cir")
    csv_path = stem + ".csv"
    _write_text(
        csv_path,
        _csv_lines("t_s,f_per_s,scaled_count", (curve.t, curve.values, counts)),
    )
    _write_meta(stem + ".meta.json", cfg, "cir", {
        "provenance": curve.provenance,
        "n_clamped": curve.n_clamped,
        "n_points": int(curve.t.size),
        "speed_ums": drift.speed,
        "psi_deg": math.degrees(drift.psi(geom)),
    })
    if args.plot_script:
        _write_text(stem + "_plot.py",
                    _PLOT_CURVE.format(csv=csv_path, png=stem + ".png"))
    print(f"wrote {csv_path} ({curve.t.size} points, {curve.provenance})")
    return 0


def cmd_mc(cfg: RunConfig, args) -> int:
    geom = cfg.geometry()
    drift = cfg.drift(geom)
    mc_cfg = cfg.mc()
    want_records = bool(cfg.records)
    result = simulate(geom, drift, mc_cfg, collect_records=want_records)
    hist = result[0] if want_records else result
    stem = cfg.stem("mc")
    csv_path = stem + ".csv"
    _write_text(csv_path, _csv_lines("t_s,weight", (hist.centers, hist.weights)))
    _write_meta(stem + ".meta.json", cfg, "mc", {
        "mode": hist.mode,
        "n_released": hist.n_released,
        "n_absorbed_effective": hist.n_absorbed_effective,
        "absorbed_fraction": hist.n_absorbed_effective / hist.n_released,
    })
    if want_records:
        write_records_csv(cfg.records, result[1])
    print(
        f"wrote {csv_path} ({hist.mode}, "
        f"{hist.n_absorbed_effective:.6g} of {hist.n_released} absorbed)"
    )
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    geom = cfg.geometry()
    drift = cfg.drift(geom)
    mc_cfg = cfg.mc()
    curve_drift = drift
    if args.against_psi_deg is not None:
        # Mismatch control: reference curve at a deliberately different
        # approach angle, so the test statistic's power is observable.
        curve_drift = DriftSpec.from_speed_psi(
            geom, drift.speed, math.radians(args.against_psi_deg)
        )
    edges = np.arange(mc_cfg.n_bins + 1) * mc_cfg.bin_width
    centers = 0.5 * (edges[:-1] + edges[1:])
    curve = curve_on_centers(geom, curve_drift, centers, cfg.series())
    if args.self_sample:
        # Null calibration: histogram drawn from the curve itself.
        hist = sample_histogram_from_curve(
            curve, mc_cfg.n_particles, mc_cfg.bin_width, mc_cfg.seed
        )
    else:
        hist = simulate(geom, drift, mc_cfg)
    report = chi_square_compare(hist, curve)
    passed = report.passes(cfg.alpha)
    stem = cfg.stem("compare")
    _write_text(stem + "_hist.csv",
                _csv_lines("t_s,weight", (hist.centers, hist.weights)))
    _write_text(
        stem + "_curve.csv",
        _csv_lines("t_s,f_per_s,scaled_count",
                   (curve.t, curve.values,
                    curve.counts_per_bin(hist.n_released, mc_cfg.bin_width))),
    )
    _write_meta(stem + "_report.json", cfg, "compare", {
        "chi2": report.chi2,
        "dof": report.dof,
        "p_value": report.p_value,
        "max_abs_z": report.max_abs_z,
        "alpha": cfg.alpha,
        "passed": passed,
        "n_absorbed_effective": hist.n_absorbed_effective,
        "curve_psi_deg": args.against_psi_deg,
        "self_sample": bool(args.self_sample),
    })
    if args.plot_script:
        _write_text(
            stem + "_plot.py",
            _PLOT_COMPARE.format(hist_csv=stem + "_hist.csv",
                                 curve_csv=stem + "_curve.csv",
                                 png=stem + ".png"),
        )
    print(
        f"chi2/dof = {report.chi2 / max(report.dof, 1):.4f} "
        f"(dof {report.dof}), p = {report.p_value:.4g}, "
        f"max|z| = {report.max_abs_z:.2f} -> "
        f"{'PASS' if passed else 'FAIL'} at alpha={cfg.alpha:g}"
    )
    return 0 if passed else 1


# ==== validate: the built-in correctness checks ====


def _check_appendix() -> dict:
    """1-D factorization: drifted density == drift-free density x weight.

    Draws are parameterized by the dimensionless pair u = ell/sqrt(4 D t)
    and w = v ell/(2 D) so every factor stays inside the normal double
    range; once any side falls into subnormal territory the comparison
    measures exp() granularity, not the identity.
    """
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        ell = math.exp(rng.uniform(math.log(0.5), math.log(50.0)))
        d = math.exp(rng.uniform(math.log(1.0), math.log(500.0)))
        u = rng.uniform(0.5, 12.0)
        w = rng.uniform(-12.0, 12.0)
        ch = OneDimChannel(ell=ell, D=d, v=2.0 * d * w / ell)
        t = ell * ell / (4.0 * d * u * u)
        direct = ig_pdf(ch, t)
        factored = levy_pdf(ch, t) * girsanov_factor_1d(ch, t)
        worst = max(worst, abs(direct - factored) / direct)
    worst_mass = 0.0
    for ell, d, v in ((1.0, 10.0, 2.0), (10.0, 80.0, 5.0), (30.0, 80.0, 10.0),
                      (5.0, 200.0, 0.5), (2.0, 50.0, 20.0)):
        mass = ig_mass(OneDimChannel(ell=ell, D=d, v=v))
        worst_mass = max(worst_mass, abs(mass - 1.0))
    passed = worst <= 1e-13 and worst_mass <= 1e-8
    return {"name": "appendix-identity", "passed": passed,
            "max_rel_error": worst, "tolerance": 1e-13,
            "max_mass_error": worst_mass, "mass_tolerance": 1e-8}


def _lemma1_directions() -> list:
    """Three off-axis unit vectors whose polar cosines avoid every Legendre
    zero through order 10 (min_m |P_m(cos)| >= 0.028), keeping per-cell
    relative comparison meaningful."""
    dirs = []
    for cos_psi, az in ((0.70, 0.3), (0.90, 2.1), (0.55, 4.0)):
        s = math.sqrt(1.0 - cos_psi * cos_psi)
        dirs.append(np.array([s * math.cos(az), s * math.sin(az), cos_psi]))
    return dirs


def _lemma1_pair(m: int, c: np.ndarray, r: float, x0_hat: np.ndarray) -> tuple:
    """(quadrature, closed form) for the degree-m surface projection of e^(c.y).

    Taylor terms of e^(c.y) below degree m integrate to exactly zero against
    a degree-m mode, so the quadrature runs on the exponential remainder
    exp_tail(m, c.y) instead of e^(c.y) itself: same integral, but evaluated
    at the remainder's own scale so relative accuracy survives even where the
    projection is twenty orders below the integrand.
    """

    def integrand(pts):
        return exp_tail(m, pts @ c) * legendre_p(m, (pts @ x0_hat) / r)

    lhs = integrate_sphere(integrand, r, vectorized=True)
    cr = float(np.linalg.norm(c)) * r
    i_half = mod_sph_bessel_i(m, cr) * math.sqrt(2.0 * cr / math.pi)
    rhs = (
        2.0 * (r * math.pi) ** 1.5 / math.sqrt(cr / (2.0 * r))
        * i_half * legendre_p(m, float((c / np.linalg.norm(c)) @ x0_hat))
    )
    return lhs, rhs


def _check_lemma1() -> dict:
    """Sphere integral of e^(c.y) P_m(cos angle(x0, y)) vs its closed form."""
    r = 10.0
    x0_hat = np.array([0.0, 0.0, 1.0])
    worst = 0.0
    for m in range(11):
        for cr in (0.1, 0.5, 1.0, 2.0, 5.0):
            for direction in _lemma1_directions():
                lhs, rhs = _lemma1_pair(m, (cr / r) * direction, r, x0_hat)
                worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return {"name": "plane-wave-mode-integral", "passed": worst <= 1e-8,
            "max_rel_error": worst, "tolerance": 1e-8}


def _check_marginalization(geom: ChannelGeometry, cfg: SeriesConfig) -> dict:
    """Series density vs direct surface integration of the joint density.

    Both routes run with a generous mode cap so the tail criterion, not the
    cap, ends each sum; the comparison then isolates the plane-wave collapse
    rather than shared truncation artifacts.
    """
    full = SeriesConfig(
        max_order=max(60, cfg.max_order), lambda_cfg=cfg.lambda_cfg
    )
    worst = 0.0
    for speed in (5.0, 10.0):
        for psi_deg in (0.0, 90.0, 180.0):
            drift = DriftSpec.from_speed_psi(geom, speed, math.radians(psi_deg))
            for t in (0.05, 0.2, 1.0):
                series = cir_drift(geom, drift, t, full)
                surface = cir_via_marginalization(geom, drift, t, full)
                worst = max(worst, abs(series - surface) / abs(surface))
    return {"name": "surface-marginalization", "passed": worst <= 1e-4,
            "max_rel_error": worst, "tolerance": 1e-4}


def _check_limit(geom: ChannelGeometry, cfg: SeriesConfig) -> dict:
    """Series at |v| = 1e-3 um/s against the drift-free closed form."""
    drift = DriftSpec.from_speed_psi(geom, 1e-3, math.pi)
    t = np.geomspace(0.01, 2.0, 50)
    closed = cir_nodrift_closed(geom, t)
    series = np.array([cir_drift(geom, drift, ti, cfg) for ti in t])
    worst = float(np.max(np.abs(series - closed) / closed))
    ell = geom.d0 - geom.r
    t_star = ell * ell / (6.0 * geom.D)
    f_star = float(cir_nodrift_closed(geom, np.array([t_star]))[0])
    mass = hitting_probability(geom, drift, cfg)
    mass_ref = geom.r / geom.d0
    passed = (
        worst <= 1e-4
        and abs(mass - mass_ref) <= 2e-3
    )
    return {"name": "zero-drift-limit", "passed": passed,
            "max_rel_error": worst, "tolerance": 1e-4,
            "t_peak_closed_form": t_star, "f_peak_closed_form": f_star,
            "total_mass": mass, "mass_reference": mass_ref,
            "mass_tolerance": 2e-3}


def cmd_validate(cfg: RunConfig, args) -> int:
    selected = [
        name for name, flag in (
            ("appendix", args.appendix),
            ("lemma1", args.lemma1),
            ("marginalization", args.marginalization),
            ("limit", args.limit),
        ) if flag
    ]
    if not selected:
        selected = ["appendix", "lemma1", "marginalization", "limit"]
    geom = cfg.geometry()
    series = cfg.series()
    runners = {
        "appendix": _check_appendix,
        "lemma1": _check_lemma1,
        "marginalization": lambda: _check_marginalization(geom, series),
        "limit": lambda: _check_limit(geom, series),
    }
    results = [runners[name]() for name in selected]
    for res in results:
        verdict = "PASS" if res["passed"] else "FAIL"
        print(
            f"{res['name']}: {verdict} "
            f"(max rel err {res['max_rel_error']:.3e}, "
            f"tol {res['tolerance']:.0e})"
        )
    all_passed = all(res["passed"] for res in results)
    if cfg.out:
        _write_meta(cfg.out, cfg, "validate",
                    {"checks": results, "passed": all_passed})
    return 0 if all_passed else 1


def cmd_sweep(cfg: RunConfig, args) -> int:
    geom = cfg.geometry()
    if cfg.drift_ums.strip():
        raise ConfigError(
            "sweeps are parameterized by speed and angle; --drift-ums "
            "does not apply"
        )
    values = _parse_float_list(cfg.values, "--values")
    psis = _parse_float_list(cfg.psis_deg, "--psis-deg")
    series = cfg.series()
    if cfg.axis == "velocity":
        table = sweep_velocity(
            geom, values, psis_deg=psis, cfg=series, dt_bin=cfg.dt_bin_s,
            n_tx=cfg.ntx, search_window=cfg.search_window(),
        )
        axis_label = "drift speed [um/s]"
    elif cfg.axis == "radius":
        speed = 10.0 if cfg.speed_ums is None else cfg.speed_ums
        table = sweep_radius(
            geom, values, speed=speed, psis_deg=psis, cfg=series,
            dt_bin=cfg.dt_bin_s, n_tx=cfg.ntx,
            search_window=cfg.search_window(),
        )
        axis_label = "receiver radius [um]"
    else:
        raise ConfigError(f"axis must be 'velocity' or 'radius', got {cfg.axis!r}")
    stem = cfg.stem("sweep")
    csv_path = stem + ".csv"
    table.to_csv(csv_path)
    _write_meta(stem + ".meta.json", cfg, "sweep", {
        "axis_name": table.axis_name,
        "n_rows": len(table.rows),
    })
    if args.plot_script:
        _write_text(
            stem + "_plot.py",
            _PLOT_SWEEP.format(csv=csv_path, png=stem + ".png",
                               axis_label=axis_label),
        )
    print(f"wrote {csv_path} ({len(table.rows)} rows along {table.axis_name})")
    return 0


def cmd_peaks(cfg: RunConfig, args) -> int:
    geom = cfg.geometry()
    drift = cfg.drift(geom)
    metrics = find_peak(
        geom, drift, cfg.series(), search_window=cfg.search_window(),
        n_tx=cfg.ntx, dt_bin=cfg.dt_bin_s,
    )
    payload = {
        "t_peak_s": metrics.t_peak,
        "f_peak_per_s": metrics.f_peak,
        "peak_count_per_bin": metrics.peak_count_per_bin,
        "bracket_lo_s": metrics.bracket[0],
        "bracket_hi_s": metrics.bracket[1],
        "solver_iterations": metrics.solver_iterations,
    }
    if cfg.out:
        _write_meta(cfg.out, cfg, "peaks", payload)
    print(
        f"t_peak = {metrics.t_peak!r} s, f_peak = {metrics.f_peak!r} /s, "
        f"count/bin = {metrics.peak_count_per_bin!r}"
    )
    return 0


# ==== argument parsing and dispatch ====


def _add_shared(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", help="flat key=value config file; flags win")
    ap.add_argument("--r-um", dest="r_um", type=float,
                    help="receiver radius [um]")
    ap.add_argument("--x0-um", dest="x0_um", type=float,
                    help="release distance from the center [um], on the +z axis")
    ap.add_argument("--d-um2s", dest="d_um2s", type=float,
                    help="diffusion coefficient [um^2/s]")
    ap.add_argument("--speed-ums", dest="speed_ums", type=float,
                    help="drift magnitude [um/s]; 0 selects the closed form")
    ap.add_argument("--psi-deg", dest="psi_deg", type=float,
                    help="drift angle from the release direction [deg]; "
                         "180 points at the receiver")
    ap.add_argument("--drift-ums", dest="drift_ums",
                    help="drift vector vx,vy,vz [um/s]")
    ap.add_argument("--m-order", dest="m_order", type=int,
                    help="series truncation order")
    ap.add_argument("--dt-bin-s", dest="dt_bin_s", type=float,
                    help="histogram bin width [s]")
    ap.add_argument("--ntx", dest="ntx", type=int,
                    help="released particle count")
    ap.add_argument("--seed", dest="seed", type=int, help="simulation seed")
    ap.add_argument("--out", dest="out", help="output stem or report path")


def _add_mc_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--dt-sim-s", dest="dt_sim_s", type=float,
                    help="integrator step [s]")
    ap.add_argument("--t-max-s", dest="t_max_s", type=float,
                    help="simulation horizon [s]")
    ap.add_argument("--mode", dest="mode",
                    help="'direct' or 'girsanov' (reweighted drift-free paths)")
    ap.add_argument("--no-bridge", action="store_true",
                    help="disable the intra-step absorption correction")


def _add_window_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--window-lo-s", dest="window_lo_s", type=float,
                    help="peak search window start [s]")
    ap.add_argument("--window-hi-s", dest="window_hi_s", type=float,
                    help="peak search window end [s]")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="driftsphere",
        description="Hitting-time densities on an absorbing sphere "
                    "under uniform drift: analytic curves, particle "
                    "simulation, and peak metrics.",
    )
    ap.add_argument("--version", action="version",
                    version=f"driftsphere {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cir", help="evaluate the analytic density on a grid")
    _add_shared(p)
    p.add_argument("--t-lo-s", dest="t_lo_s", type=float,
                   help="first grid time [s]")
    p.add_argument("--t-hi-s", dest="t_hi_s", type=float,
                   help="last grid time [s]")
    p.add_argument("--n-t", dest="n_t", type=int, help="grid point count")
    p.add_argument("--linear-grid", action="store_true",
                   help="linear instead of log spacing")
    p.add_argument("--plot-script", action="store_true",
                   help="also write a matplotlib script next to the CSV")
    p.set_defaults(func=cmd_cir)

    p = sub.add_parser("mc", help="run the particle simulator")
    _add_shared(p)
    _add_mc_flags(p)
    p.add_argument("--records", dest="records",
                   help="also write per-hit records to this CSV path")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("compare",
                       help="simulate and chi-square against the curve")
    _add_shared(p)
    _add_mc_flags(p)
    p.add_argument("--alpha", dest="alpha", type=float,
                   help="chi-square significance level")
    p.add_argument("--against-psi-deg", type=float, default=None,
                   help="evaluate the reference curve at this approach angle "
                        "instead of the simulated one (mismatch control)")
    p.add_argument("--self-sample", action="store_true",
                   help="draw the histogram from the reference curve instead "
                        "of simulating (null calibration)")
    p.add_argument("--plot-script", action="store_true",
                   help="also write an overlay plot script")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="run the built-in correctness checks")
    _add_shared(p)
    p.add_argument("--appendix", action="store_true",
                   help="1-D density factorization identity")
    p.add_argument("--lemma1", action="store_true",
                   help="sphere-integral closed form")
    p.add_argument("--marginalization", action="store_true",
                   help="series vs surface integration")
    p.add_argument("--limit", action="store_true",
                   help="vanishing-drift limit")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="peak metrics along an axis")
    _add_shared(p)
    _add_window_flags(p)
    p.add_argument("--axis", dest="axis", help="'velocity' or 'radius'")
    p.add_argument("--values", dest="values",
                   help="comma-separated axis values")
    p.add_argument("--psis-deg", dest="psis_deg",
                   help="comma-separated drift angles [deg]")
    p.add_argument("--plot-script", action="store_true",
                   help="also write a two-panel plot script")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("peaks", help="peak metrics for one configuration")
    _add_shared(p)
    _add_window_flags(p)
    p.set_defaults(func=cmd_peaks)

    return ap


def _overrides_from_args(args: argparse.Namespace) -> dict:
    out = {}
    for key in _ALL_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    if getattr(args, "no_bridge", False):
        out["bridge"] = False
    if getattr(args, "linear_grid", False):
        out["log_grid"] = False
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = RunConfig.build(args.config, _overrides_from_args(args))
        return args.func(cfg, args)
    except _NUMERICAL_ERRORS as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return _NUMERICAL_EXIT
    except _CONFIG_ERRORS as err:
        print(f"config error: {err}", file=sys.stderr)
        return _CONFIG_EXIT


if __name__ == "__main__":
    sys.exit(main())
