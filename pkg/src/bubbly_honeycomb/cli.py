"""Command-line front-end.

Commands: ``bands``, ``dirac``, ``capacitance``, ``probe-green``, ``selftest``.
Exit codes: 0 success, 1 self-test failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import greens as gr
from .bands import band_sweep, cone_fit, default_omega_max
from .capacitance import (
    asymptotic_bands,
    capacitance,
    dirac_data,
    dirac_gradient_c,
    rotation_covariance_residual,
)
from .errors import BubblyError, ConfigError
from .lattice import LatticeGeometry, build_geometry, k_path, named_point
from .operators import (
    CrystalConfig,
    TruncationParams,
    assemble_single_layer,
    assemble_trace,
    free_symbols,
    mode_index,
    volume_consistency_check,
)
from .specfun import bessel_jy

log = logging.getLogger("bubbly_honeycomb")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
OUTPUT_ENV = "BUBBLY_HONEYCOMB_OUTPUT_DIR"
DILUTE_RADIUS = 0.05


@dataclass(frozen=True)
class RunConfig:
    """All tunables of a run; ``None`` fields take radius-dependent defaults."""

    radius: float = 0.02
    delta: float = 1.0 / 9000.0
    v: float = 1.0
    vb: float = 1.0
    lattice_constant: float = 2.0 * math.sqrt(3.0)
    multipole_order: int | None = None
    quadrature_points: int | None = None
    n_scan: int = 120
    points_per_segment: int = 30
    greens_tol: float = 1e-12
    gamma_offset: float | None = None
    cone_window: float | None = None
    output_path: str = "."
    workers: int | None = None

    def __post_init__(self):
        for name in ("radius", "v", "vb", "lattice_constant", "greens_tol"):
            if not (np.isfinite(getattr(self, name)) and getattr(self, name) > 0):
                raise ConfigError(f"{name} must be positive")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError("delta must be non-negative")
        for name in ("gamma_offset", "cone_window"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_scan < 50:
            raise ConfigError("n_scan must be >= 50")
        if self.points_per_segment < 2:
            raise ConfigError("points_per_segment must be >= 2")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def dilute(self) -> bool:
        return self.radius <= DILUTE_RADIUS

    def geometry(self) -> LatticeGeometry:
        return build_geometry(self.lattice_constant)

    def crystal(self) -> CrystalConfig:
        cfg = CrystalConfig(self.radius, self.delta, self.v, self.vb)
        cfg.check_geometry(self.geometry())
        return cfg

    def truncation(self) -> TruncationParams:
        kw = {"greens_tol": self.greens_tol}
        if self.multipole_order is not None:
            kw["multipole_order"] = self.multipole_order
        if self.quadrature_points is not None:
            kw["quadrature_points"] = self.quadrature_points
        return TruncationParams.default_for(self.radius, **kw)

    def resolved_gamma_offset(self, g: LatticeGeometry) -> float:
        return self.gamma_offset if self.gamma_offset is not None else g.default_gamma_offset

    def output_dir(self) -> Path:
        p = Path(self.output_path)
        p.mkdir(parents=True, exist_ok=True)
        return p


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"multipole_order", "quadrature_points", "n_scan", "points_per_segment", "workers"}
_STR_FIELDS = {"output_path"}


def _convert(name: str, raw: str):
    try:
        if name in _STR_FIELDS:
            return raw
        if name in _INT_FIELDS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {name}") from None


def _canonical(key: str) -> str:
    key = key.strip().replace("-", "_")
    # camelCase spellings are accepted too
    out = "".join("_" + c.lower() if c.isupper() else c for c in key)
    return out.lstrip("_")


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment; unknown keys are errors."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = _canonical(key)
        if name not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[name] = _convert(name, raw)
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < output-directory env var < command-line flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    env = os.environ.get(OUTPUT_ENV)
    if env:
        values["output_path"] = env
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def parse_point(g: LatticeGeometry, token: str) -> np.ndarray:
    """``G``, ``K``, ``M`` or explicit ``x:y`` coordinates."""
    token = token.strip()
    if ":" in token:
        try:
            x, y = (float(s) for s in token.split(":"))
        except ValueError:
            raise ConfigError(f"malformed coordinate {token!r}; expected x:y") from None
        return np.array([x, y])
    return named_point(g, token)


def parse_path(g: LatticeGeometry, spec: str) -> list[np.ndarray]:
    tokens = [t for t in spec.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("empty path")
    return [parse_point(g, t) for t in tokens]


def _warn(msg: str) -> None:
    print(f"WARN {msg}", file=sys.stderr)


def _fmt(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_bands(rc: RunConfig, path_spec: str) -> int:
    g = rc.geometry()
    cfg, trunc = rc.crystal(), rc.truncation()
    nodes = parse_path(g, path_spec)
    path = k_path(g, nodes, rc.points_per_segment, rc.resolved_gamma_offset(g))
    omega_max = default_omega_max(g, cfg, trunc)
    pts = band_sweep(g, cfg, trunc, path.points, omega_max, rc.n_scan, path.arclength, rc.workers)
    out = rc.output_dir()
    csv_path = out / "bands.csv"
    failed = 0
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arclength", "alpha_x", "alpha_y", "band_index", "omega", "sigma_min", "multiplicity"])
        for i, p in enumerate(pts):
            for d in p.diagnostics:
                if d.startswith("error") or d == "no roots found":
                    _warn(f"point {i} alpha=({p.alpha[0]:.6g},{p.alpha[1]:.6g}): {d}")
            if not p.ok or len(p.band_values()) < 2:
                failed += 1
                if p.ok:
                    _warn(f"point {i}: found {len(p.band_values())} band values")
            for b, omega, s, m in p.band_rows():
                w.writerow([_fmt(p.arclength), _fmt(p.alpha[0]), _fmt(p.alpha[1]), b, _fmt(omega), _fmt(s), m])
    _write_gnuplot(out / "bands.gp", csv_path.name, path.node_arclength, path_spec)
    print(f"wrote {csv_path} ({len(pts)} points)")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _write_gnuplot(path: Path, csv_name: str, node_s, path_spec: str) -> None:
    labels = [t.strip() for t in path_spec.split(",") if t.strip()]
    tics = ", ".join(f'"{("Γ" if l.upper() == "G" else l)}" {float(s)!r}' for l, s in zip(labels, node_s))
    lines = [
        "set datafile separator ','",
        "set key off",
        "set xlabel 'Bloch vector'",
        "set ylabel 'omega'",
        f"set xtics ({tics})",
        "set grid xtics",
        f"plot for [b=1:2] '{csv_name}' using 1:($4==b ? $5 : 1/0) every ::1 with linespoints pt 7 ps 0.5",
        "",
    ]
    path.write_text("\n".join(lines))


def cmd_dirac(rc: RunConfig) -> int:
    if rc.delta == 0:
        raise ConfigError("delta = 0 has no subwavelength resonance; choose delta > 0")
    g = rc.geometry()
    cfg, trunc = rc.crystal(), rc.truncation()
    dd = dirac_data(g, cfg, trunc)
    window = rc.cone_window if rc.cone_window is not None else 0.05 * float(np.linalg.norm(g.k_point))
    cf = cone_fit(g, cfg, trunc, window, n_samples=6, omega_max=3 * dd.omega_star, n_scan=rc.n_scan)
    slope_tol = 0.05 if rc.dilute else 0.15
    gap_rel = cf.degeneracy_gap / cf.omega_star_fit
    slope_rel = abs(cf.lambda_fit - dd.slope_lambda) / dd.slope_lambda
    report = {
        "omega_star_asymptotic": dd.omega_star,
        "omega_star_fit": cf.omega_star_fit,
        "lambda_asymptotic": dd.slope_lambda,
        "lambda_fit": cf.lambda_fit,
        "c_abs": abs(dd.c_constant),
        "linear_residual": cf.linear_residual,
        "degeneracy_gap": cf.degeneracy_gap,
        "lambda_plus": cf.lambda_plus,
        "lambda_minus": cf.lambda_minus,
        "lambda_relative_difference": slope_rel,
        "slope_tolerance": slope_tol,
        "regime": "dilute" if rc.dilute else "non-dilute (relaxed slope tolerance)",
    }
    ok = gap_rel < 1e-6 and slope_rel < slope_tol
    report["passed"] = ok
    out = rc.output_dir() / "dirac.json"
    out.write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    if not ok:
        _warn(f"cone checks failed: gap {gap_rel:.2e}, slope difference {slope_rel:.2%} (tolerance {slope_tol:.0%})")
        return EXIT_NUMERICAL
    return EXIT_OK


def _grid_points(g: LatticeGeometry, n: int, gamma_offset: float) -> list[np.ndarray]:
    s = (np.arange(n) + 0.5) / n - 0.5
    pts = []
    for a in s:
        for b in s:
            p = a * g.alpha1 + b * g.alpha2
            if np.linalg.norm(p) >= gamma_offset:
                pts.append(p)
    return pts


def cmd_capacitance(rc: RunConfig, path_spec: str | None, grid: int | None) -> int:
    g = rc.geometry()
    cfg, trunc = rc.crystal(), rc.truncation()
    off = rc.resolved_gamma_offset(g)
    if grid is not None:
        if grid < 1:
            raise ConfigError("grid size must be >= 1")
        pts = _grid_points(g, grid, off)
    else:
        pts = list(k_path(g, parse_path(g, path_spec or "M,G,K,M"), rc.points_per_segment, off).points)
    out = rc.output_dir() / "capacitance.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha_x", "alpha_y", "c11", "re_c12", "im_c12", "lambda1", "lambda2", "omega1_asym", "omega2_asym"])
        for p in pts:
            C = capacitance(g, cfg, trunc, p)
            l1, l2 = C.eigenvalues
            o1, o2 = asymptotic_bands(g, cfg, trunc, p)
            w.writerow([_fmt(p[0]), _fmt(p[1]), _fmt(C.c11.real), _fmt(C.c12.real), _fmt(C.c12.imag),
                        _fmt(l1), _fmt(l2), _fmt(o1), _fmt(o2)])
    print(f"wrote {out} ({len(pts)} rows)")
    return EXIT_OK


def cmd_probe_green(rc: RunConfig, alpha: str, k: float, x: str) -> int:
    g = rc.geometry()
    a = parse_point(g, alpha)
    try:
        xv = np.array([float(s) for s in x.split(":")])
    except ValueError:
        raise ConfigError(f"malformed point {x!r}; expected x:y") from None
    if xv.shape != (2,):
        raise ConfigError("point must have two coordinates")
    params = gr.EwaldParams(target_tol=rc.greens_tol, gamma_offset=rc.gamma_offset)
    ev = gr.make_evaluator(g, a, k, params)
    ev2 = gr.make_evaluator(g, a, k, dataclasses.replace(params, eta=2 * ev.eta))
    val = ev.green(xv)
    resid = abs(ev2.green(xv) - val)
    print(f"G = {val.real:.16e} {val.imag:+.16e}i")
    print(f"eta_residual = {resid:.3e}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# self-test
# ----------------------------------------------------------------------------


def selftest_checks(rc: RunConfig):
    """Yield ``(name, passed, detail)`` for the invariant suite."""
    g = rc.geometry()
    cfg, trunc = rc.crystal(), rc.truncation()
    tol = rc.greens_tol
    K, M = g.k_point, g.m_point
    alphas = {"K": K, "M": M, "KM": 0.5 * (K + M)}
    N = trunc.multipole_order
    rng = np.random.default_rng(20240601)

    # cylinder-function Wronskians
    worst = 0.0
    for z in np.geomspace(1e-3, 1e2, 25):
        t = bessel_jy(32, z)
        w = t.values_j * t.deriv_y - t.deriv_j * t.values_y
        ok = np.isfinite(w)
        worst = max(worst, float(np.max(np.abs(w[ok] * np.pi * z / 2 - 1))))
    yield "bessel wronskian", worst <= 1e-11, worst

    worst = 0.0
    for ksq in (0.0, 0.05**2, 0.2**2, 1.0):
        s, ti, te = free_symbols(ksq, cfg.radius, N)
        worst = max(worst, float(np.abs(te - ti - 1).max()))
    yield "free-space symbol wronskian", worst <= 1e-11, worst

    jump = zero = herm = 0.0
    top_eig = -np.inf
    for a in alphas.values():
        for k in (0.0, 0.05, 0.2):
            ti = assemble_trace(g, cfg, trunc, a, k, "interior")
            te = assemble_trace(g, cfg, trunc, a, k, "exterior")
            jump = max(jump, float(np.abs(te - ti - np.eye(len(ti))).max()))
        ti = assemble_trace(g, cfg, trunc, a, 0.0, "interior")
        rows = [mode_index(trunc, 1, 0), mode_index(trunc, 2, 0)]
        zero = max(zero, float(np.abs(ti[rows]).max()))
        S = assemble_single_layer(g, cfg, trunc, a, 0.0)
        herm = max(herm, float(np.abs(S - S.conj().T).max() / np.abs(S).max()))
        top_eig = max(top_eig, float(np.linalg.eigvalsh(0.5 * (S + S.conj().T)).max()))
    yield "jump identity", jump <= 1e-10, jump
    yield "zero rows of interior trace at k=0", zero <= 1e-10, zero
    yield "single layer hermitian at k=0", herm <= 1e-10, herm
    yield "single layer negative definite at k=0", top_eig < 0, top_eig

    scale = 1 / (2 * np.pi)
    pts = rng.uniform(-1.0, 1.0, size=(20, 2)) * np.array([3.0, 1.7])
    params = gr.EwaldParams(target_tol=tol)
    eta0 = params.resolved_eta(g)
    eta_res = qp_res = conj_res = 0.0
    for k in (0.0, 0.1, 0.4):
        vals = [gr.make_evaluator(g, K, k, dataclasses.replace(params, eta=e)).green(pts)
                for e in (eta0 / 2, eta0, 2 * eta0)]
        ref = np.maximum(np.abs(vals[1]), scale)
        eta_res = max(eta_res, float(max(np.max(np.abs(v - vals[1]) / ref) for v in vals)))
        ev = gr.make_evaluator(g, K, k, params)
        v0 = ev.green(pts)
        qp_res = max(qp_res, float(np.max(np.abs(ev.green(pts + g.l1) - np.exp(1j * K @ g.l1) * v0) / ref)))
        conj_res = max(conj_res, float(np.max(np.abs(np.conj(v0) - ev.green(-pts)) / ref)))
    yield "green eta independence", eta_res <= 10 * tol, eta_res
    yield "green quasi-periodicity", qp_res <= 10 * tol, qp_res
    yield "green conjugate symmetry", conj_res <= 10 * tol, conj_res

    rot = 0.0
    cap_h = cap_d = 0.0
    for a in (M, 0.5 * (K + M), np.array([0.31, 0.52])):
        r1, r2 = rotation_covariance_residual(g, cfg, trunc, a)
        rot = max(rot, r1, r2)
        C = capacitance(g, cfg, trunc, a)
        cap_h = max(cap_h, C.hermitian_residual)
        cap_d = max(cap_d, abs(C.c11 - C.c22))
    CK = capacitance(g, cfg, trunc, K)
    yield "capacitance rotation covariance", rot <= 1e-8, rot
    yield "capacitance hermitian", cap_h <= 1e-9, cap_h
    yield "capacitance equal diagonal", cap_d <= 1e-9, cap_d
    yield "capacitance diagonal at K", abs(CK.c12) <= 1e-8 * CK.c11.real, abs(CK.c12) / CK.c11.real

    vol = max(volume_consistency_check(g, cfg, trunc, K), volume_consistency_check(g, cfg, trunc, M))
    yield "volume consistency", vol <= 1e-5, vol


def cmd_selftest(rc: RunConfig) -> int:
    failed = 0
    for name, ok, detail in selftest_checks(rc):
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail:.3e})")
        failed += not ok
    print(f"{'PASS' if not failed else 'FAIL'} selftest: {failed} failure(s)")
    return EXIT_OK if not failed else EXIT_SELFTEST


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file; flags override its values")
    p.add_argument("--radius", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--v", type=float)
    p.add_argument("--vb", type=float)
    p.add_argument("--lattice-constant", dest="lattice_constant", type=float)
    p.add_argument("--multipole-order", dest="multipole_order", type=int)
    p.add_argument("--quadrature-points", dest="quadrature_points", type=int)
    p.add_argument("--n-scan", dest="n_scan", type=int)
    p.add_argument("--points-per-segment", dest="points_per_segment", type=int)
    p.add_argument("--greens-tol", dest="greens_tol", type=float)
    p.add_argument("--gamma-offset", dest="gamma_offset", type=float)
    p.add_argument("--cone-window", dest="cone_window", type=float)
    p.add_argument("--output", dest="output_path", help=f"output directory (env {OUTPUT_ENV} also works)")
    p.add_argument("--workers", type=int, help="processes for band sweeps")
    p.add_argument("-v", "--verbose", action="count", default=0)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubbly-honeycomb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("bands", help="band structure along a path (CSV + gnuplot script)")
    _common(p)
    p.add_argument("--path", default="M,G,K,M", help="comma-separated G/K/M symbols or x:y coordinates")
    p = sub.add_parser("dirac", help="Dirac-point diagnostics (JSON)")
    _common(p)
    p = sub.add_parser("capacitance", help="capacitance matrix along a path or on a grid (CSV)")
    _common(p)
    p.add_argument("--path", default=None)
    p.add_argument("--grid", type=int, default=None, help="n x n grid over the reciprocal cell")
    p = sub.add_parser("probe-green", help="evaluate the Green's function at one point")
    _common(p)
    p.add_argument("--alpha", default="K", help="G/K/M or x:y")
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--x", default="0.3:0.1", help="evaluation point x:y")
    p = sub.add_parser("selftest", help="run the invariant suite")
    _common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = build_run_config(args)
        if args.command == "bands":
            return cmd_bands(rc, args.path)
        if args.command == "dirac":
            return cmd_dirac(rc)
        if args.command == "capacitance":
            return cmd_capacitance(rc, args.path, args.grid)
        if args.command == "probe-green":
            return cmd_probe_green(rc, args.alpha, args.k, args.x)
        return cmd_selftest(rc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BubblyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
