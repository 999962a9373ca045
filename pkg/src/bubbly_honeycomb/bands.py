"""Bloch resonant frequencies as characteristic values of the block operator.

Roots are located on the real frequency axis by scanning the smallest
singular value, refining each local minimum by golden-section search and
resolving near-degenerate pairs with a local fine scan.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .capacitance import capacitance
from .errors import BubblyError, ConeMissingError, ConfigError, ResonanceError
from .lattice import LatticeGeometry
from .operators import CrystalConfig, OperatorAssembler, TruncationParams, get_assembler

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
REFINE_WIDTH = 1e-11
ROOT_REL = 1e-6
SCAN_REL = 0.1
MERGE_REL = 1e-9
#: a separate grid covers the range below the light line if it spans fewer cells
LIGHT_CELLS = 10
SUB_SCAN = 40


@dataclass(frozen=True)
class BandPoint:
    """Roots of the characteristic equation at one Bloch vector.

    ``frequencies`` are distinct roots; a root of multiplicity two carries
    ``multiplicity_flags == 2`` and is counted twice by :meth:`band_values`.
    """

    alpha: np.ndarray
    arclength: float
    frequencies: list[float]
    sigma_min_at_roots: list[float]
    multiplicity_flags: list[int]
    root_threshold: float = 0.0
    diagnostics: list[str] = field(default_factory=list)

    def band_values(self) -> list[float]:
        out: list[float] = []
        for w, m in zip(self.frequencies, self.multiplicity_flags):
            out.extend([w] * m)
        return out

    def band_rows(self) -> list[tuple[int, float, float, int]]:
        """``(band_index, omega, sigma_min, multiplicity)`` per band value, 1-based index."""
        rows = []
        b = 1
        for w, s, m in zip(self.frequencies, self.sigma_min_at_roots, self.multiplicity_flags):
            for _ in range(m):
                rows.append((b, w, s, m))
                b += 1
        return rows

    @property
    def ok(self) -> bool:
        return not any(d.startswith("error") for d in self.diagnostics)


@dataclass(frozen=True)
class ConeFit:
    """Fit of the two bands around the Dirac point.

    ``lambda_fit`` is the through-origin least-squares slope of the half
    splitting.  ``lambda_plus``/``lambda_minus`` are the one-sided slopes at
    ``t -> 0`` of each branch about ``omega_at_k``; the ``*_linear`` variants
    are plain through-origin fits about ``omega_star_fit``.
    ``degeneracy_gap`` is the absolute splitting of the two lowest band
    values at ``K``.
    """

    omega_star_fit: float
    lambda_fit: float
    lambda_plus: float
    lambda_minus: float
    linear_residual: float
    window: float
    lambda_by_direction: tuple[float, ...]
    degeneracy_gap: float
    omega_at_k: float
    lambda_plus_linear: float
    lambda_minus_linear: float
    radii: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    @property
    def direction_spread(self) -> float:
        """Relative spread of the per-direction slopes."""
        lam = np.array(self.lambda_by_direction)
        return float((lam.max() - lam.min()) / lam.mean())

    @property
    def branch_asymmetry(self) -> float:
        return float(abs(self.lambda_plus - self.lambda_minus) / (0.5 * (self.lambda_plus + self.lambda_minus)))


# ----------------------------------------------------------------------------
# singular-value evaluation
# ----------------------------------------------------------------------------


def _singular_values(asm: OperatorAssembler, cfg: CrystalConfig, omega: float) -> np.ndarray:
    A = asm.block_operator(cfg, omega).matrix
    return np.linalg.svd(A, compute_uv=False)[::-1]


def sigma_min(g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams, alpha, omega: float) -> float:
    """Smallest singular value of the block operator at ``(alpha, omega)``."""
    return float(_singular_values(get_assembler(g, cfg, trunc, alpha), cfg, omega)[0])


class _Scanner:
    """Singular values along the frequency axis at fixed ``alpha``."""

    def __init__(self, asm: OperatorAssembler, cfg: CrystalConfig):
        self.asm = asm
        self.cfg = cfg
        self.evals = 0

    def guarded(self, omega: float) -> bool:
        try:
            k, kb = self.cfg.wavenumbers(omega)
            self.asm.check_wavenumber(k * k)
            self.asm.check_wavenumber(kb * kb)
        except ResonanceError:
            return True
        return False

    def sv(self, omega: float) -> np.ndarray:
        self.evals += 1
        try:
            return _singular_values(self.asm, self.cfg, omega)
        except ResonanceError:
            return np.full(2, np.inf)

    def smin(self, omega: float) -> float:
        return float(self.sv(omega)[0])

    def golden(self, a: float, b: float, width: float = REFINE_WIDTH) -> float:
        """Minimiser of the smallest singular value on ``[a, b]``."""
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = self.smin(c), self.smin(d)
        while b - a > width:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = self.smin(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = self.smin(d)
        return 0.5 * (a + b)

    def scan(self, grid: np.ndarray) -> np.ndarray:
        return np.array([np.inf if self.guarded(w) else self.smin(w) for w in grid])


def _local_minima(values: np.ndarray) -> list[int]:
    idx = []
    n = len(values)
    for i in range(n):
        v = values[i]
        if not np.isfinite(v):
            continue
        left = values[i - 1] if i > 0 else np.inf
        right = values[i + 1] if i < n - 1 else np.inf
        if v <= left and v < right or (v < left and v <= right):
            idx.append(i)
    return idx


def _dip_estimate(grid: np.ndarray, vals: np.ndarray, i: int) -> float:
    """Depth of the dip at local minimum ``i``.

    Near a simple root the smallest singular value is ``s |omega - omega_0|``;
    the secants through the two samples on either side of ``i`` meet close
    to the root, so their intersection estimates the depth between samples.
    """
    v = vals[i]
    if i < 2 or i > len(vals) - 3 or not np.all(np.isfinite(vals[i - 2 : i + 3])):
        return float(v)
    sl = (vals[i - 1] - vals[i - 2]) / (grid[i - 1] - grid[i - 2])
    sr = (vals[i + 2] - vals[i + 1]) / (grid[i + 2] - grid[i + 1])
    if not (sl < 0 < sr):
        return float(v)
    # lines  v_{i-1} + sl (w - w_{i-1})  and  v_{i+1} + sr (w - w_{i+1})
    w = (vals[i + 1] - vals[i - 1] + sl * grid[i - 1] - sr * grid[i + 1]) / (sl - sr)
    return float(min(v, vals[i - 1] + sl * (w - grid[i - 1])))


def _roots_in_window(
    sc: _Scanner, lo: float, hi: float, n_scan: int, mergetol: float, light: float = 0.0
) -> tuple[list[tuple[float, np.ndarray]], float, list[str]]:
    """Refined roots with their singular values and the root threshold.

    ``light`` is the lowest empty-lattice frequency; when the window below it
    spans only a few scan cells it gets its own uniform grid, because the
    acoustic band near Gamma lives there.
    """
    grid = np.linspace(lo, hi, n_scan + 1)[1:] if lo == 0 else np.linspace(lo, hi, n_scan)
    vals = sc.scan(grid)
    diag: list[str] = []
    finite = vals[np.isfinite(vals)]
    if finite.size == 0:
        return [], 0.0, ["error: every scan point sits in a resonance guard band"]
    skipped = int(np.sum(~np.isfinite(vals)))
    if skipped:
        diag.append(f"skipped {skipped} scan points inside empty-lattice guard bands")
    med = float(np.median(finite))
    root_thr = ROOT_REL * med
    scan_thr = SCAN_REL * med
    step = grid[1] - grid[0]

    if lo < light < lo + LIGHT_CELLS * step:
        sub = np.linspace(lo, light, SUB_SCAN + 1)[1:-1]
        grid = np.concatenate([sub, grid[grid > light]])
        vals = np.concatenate([sc.scan(sub), vals[len(vals) - (len(grid) - len(sub)) :]])

    cands = [i for i in _local_minima(vals) if _dip_estimate(grid, vals, i) < scan_thr]
    roots: list[tuple[float, np.ndarray]] = []

    def refine(a: float, b: float):
        a = max(a, lo if lo > 0 else 0.5 * grid[0])
        w = sc.golden(a, b)
        return w, sc.sv(w)

    for i in cands:
        left = grid[i - 1] if i > 0 else grid[i] - step
        right = grid[i + 1] if i + 1 < len(grid) else grid[i] + step
        w, sv = refine(left, right)
        roots.append((w, sv))

    # near-degenerate partners hide inside one scan cell: the second singular
    # value at a root is small when another root is close by
    extra = []
    for w, sv in roots:
        if not (root_thr < sv[1] < scan_thr):
            continue
        s_lo = sc.smin(w - 1e-6 * step)
        s_hi = sc.smin(w + 1e-6 * step)
        slope = max(abs(s_lo - sv[0]), abs(s_hi - sv[0])) / (1e-6 * step)
        if slope <= 0:
            continue
        dhat = sv[1] / slope
        if dhat < mergetol:
            continue
        half = min(3 * dhat, 2 * step)
        fine = np.linspace(w - half, w + half, 31)
        fine = fine[fine > 0]
        fv = sc.scan(fine)
        fstep = fine[1] - fine[0]
        for j in _local_minima(fv):
            if abs(fine[j] - w) > 2 * fstep:
                extra.append(refine(fine[j] - fstep, fine[j] + fstep))
    roots.extend(extra)

    roots = [(w, sv) for w, sv in roots if sv[0] <= root_thr]
    roots.sort(key=lambda r: r[0])
    merged: list[tuple[float, np.ndarray]] = []
    for w, sv in roots:
        if merged and abs(w - merged[-1][0]) < mergetol:
            if sv[0] < merged[-1][1][0]:
                merged[-1] = (w, sv)
            continue
        merged.append((w, sv))
    return merged, root_thr, diag


def find_bands(
    g: LatticeGeometry,
    cfg: CrystalConfig,
    trunc: TruncationParams,
    alpha,
    omega_max: float,
    n_scan: int = 120,
    arclength: float = 0.0,
    omega_min: float = 0.0,
    max_bands: int | None = 2,
    strict_guard: bool = False,
) -> BandPoint:
    """Characteristic values in ``(omega_min, omega_max]`` at ``alpha``.

    Parameters
    ----------
    max_bands : int or None
        Keep only the lowest band values (counting multiplicity); ``None``
        keeps all roots.
    strict_guard : bool
        Reject windows that reach the first empty-lattice resonance instead of
        skipping the scan points inside its guard band.
    """
    if n_scan < 50:
        raise ConfigError("n_scan must be >= 50")
    if not (np.isfinite(omega_max) and omega_max > omega_min >= 0):
        raise ConfigError("need 0 <= omega_min < omega_max")
    alpha = np.asarray(alpha, dtype=float)
    asm = get_assembler(g, cfg, trunc, alpha)
    if strict_guard:
        first = min(cfg.v, cfg.vb) * asm.gamma_distance
        if omega_max >= first:
            raise ConfigError(f"omega_max = {omega_max:g} reaches the empty-lattice resonance at {first:g}")
    sc = _Scanner(asm, cfg)
    mergetol = MERGE_REL * cfg.v / g.a
    light = min(cfg.v, cfg.vb) * asm.gamma_distance
    roots, thr, diag = _roots_in_window(sc, omega_min, omega_max, n_scan, mergetol, light)

    freqs, sig, mult = [], [], []
    count = 0
    for w, sv in roots:
        m = int(np.sum(sv <= thr))
        if max_bands is not None and count >= max_bands:
            diag.append(f"dropped root at omega={w:.10g} above the lowest {max_bands} bands")
            continue
        if max_bands is not None:
            m = min(m, max_bands - count)
        freqs.append(float(w))
        sig.append(float(sv[0]))
        mult.append(max(m, 1))
        count += max(m, 1)
    if not freqs:
        diag.append("no roots found")
    log.debug("alpha=%s: roots %s (%d evaluations)", alpha, freqs, sc.evals)
    return BandPoint(alpha.copy(), float(arclength), freqs, sig, mult, thr, diag)


def default_omega_max(g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams) -> float:
    """Three times the leading-order crossing frequency."""
    c11 = capacitance(g, cfg, trunc, g.k_point).c11.real
    return 3.0 * math.sqrt(cfg.delta * c11 / (np.pi * cfg.radius**2)) * cfg.vb


# ----------------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------------


def _sweep_one(args) -> BandPoint:
    g, cfg, trunc, alpha, s, omega_max, n_scan = args
    try:
        return find_bands(g, cfg, trunc, alpha, omega_max, n_scan, arclength=s)
    except BubblyError as exc:
        return BandPoint(np.asarray(alpha, float), float(s), [], [], [], 0.0, [f"error: {exc}"])


def band_sweep(
    g: LatticeGeometry,
    cfg: CrystalConfig,
    trunc: TruncationParams,
    path: Sequence,
    omega_max: float,
    n_scan: int = 120,
    arclength: Sequence[float] | None = None,
    workers: int | None = None,
) -> list[BandPoint]:
    """:func:`find_bands` along ``path``; output ordered like ``path``.

    ``workers`` > 1 uses a process pool; results are collected by index so the
    output does not depend on scheduling.  Errors at individual points are
    recorded in the point's diagnostics.
    """
    pts = [np.asarray(p, dtype=float) for p in path]
    if arclength is None:
        arclength = np.concatenate([[0.0], np.cumsum([np.linalg.norm(b - a) for a, b in zip(pts[:-1], pts[1:])])])
    jobs = [(g, cfg, trunc, p, s, omega_max, n_scan) for p, s in zip(pts, arclength)]
    if workers is None:
        workers = min(os.cpu_count() or 1, len(jobs))
    if workers <= 1 or len(jobs) <= 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ----------------------------------------------------------------------------
# cone fit
# ----------------------------------------------------------------------------


def _pair_near(g, cfg, trunc, alpha, center: float, half: float, n_scan: int) -> tuple[float, float]:
    bp = find_bands(g, cfg, trunc, alpha, center + half, n_scan, omega_min=center - half, max_bands=None)
    vals = bp.band_values()
    if len(vals) < 2:
        raise ConeMissingError(f"fewer than two bands near {center:.6g} at alpha={alpha}")
    # the two band values closest to the crossing frequency
    vals = sorted(sorted(vals, key=lambda w: abs(w - center))[:2])
    return vals[0], vals[1]


def cone_fit(
    g: LatticeGeometry,
    cfg: CrystalConfig,
    trunc: TruncationParams,
    window: float | None = None,
    n_samples: int = 6,
    omega_max: float | None = None,
    n_scan: int = 120,
) -> ConeFit:
    """Fit ``omega = omega* -+ lambda t`` along the unit ``alpha1`` and ``alpha2`` directions from ``K``."""
    K = g.k_point
    kn = float(np.linalg.norm(K))
    if window is None:
        window = 0.05 * kn
    if not (0 < window <= 0.05 * kn * (1 + 1e-12)):
        raise ConfigError("cone window must lie in (0, 0.05|K|]")
    if n_samples < 5:
        raise ConfigError("cone fit needs at least 5 radii")
    if omega_max is None:
        omega_max = default_omega_max(g, cfg, trunc)

    at_k = find_bands(g, cfg, trunc, K, omega_max, n_scan)
    double = [w for w, m in zip(at_k.frequencies, at_k.multiplicity_flags) if m >= 2]
    if not double:
        raise ConeMissingError(f"no double root at K (roots {at_k.frequencies}, multiplicities {at_k.multiplicity_flags})")
    w0 = double[0]
    vals = at_k.band_values()
    gap = float(max(vals[:2]) - min(vals[:2])) if len(vals) >= 2 else float("nan")

    radii = window * np.arange(1, n_samples + 1) / n_samples
    dirs = [g.alpha1 / np.linalg.norm(g.alpha1), g.alpha2 / np.linalg.norm(g.alpha2)]
    half = 0.5 * w0
    lower = np.empty((len(dirs), n_samples))
    upper = np.empty((len(dirs), n_samples))
    for a, d in enumerate(dirs):
        for i, t in enumerate(radii):
            lower[a, i], upper[a, i] = _pair_near(g, cfg, trunc, K + t * d, w0, half, n_scan)

    t2 = float(np.sum(radii**2))
    half_sep = 0.5 * (upper - lower)
    lam_dir = tuple(float(np.sum(radii * h) / t2) for h in half_sep)
    lam = float(np.sum(half_sep * radii[None]) / (len(dirs) * t2))
    resid = float(np.max(np.abs(half_sep - lam * radii[None]) / (lam * radii[None])))
    w_star = float(np.mean(0.5 * (upper[:, 0] + lower[:, 0])))
    # one-sided slopes at t -> 0: each branch is fitted by lambda t + mu t^2
    # about the double root at K, so the curvature of the band pair allowed by
    # the [1 + O(t)] correction does not leak into the slope
    design = np.tile(np.column_stack([radii, radii**2]), (len(dirs), 1))
    lam_plus = float(np.linalg.lstsq(design, (upper - w0).ravel(), rcond=None)[0][0])
    lam_minus = float(np.linalg.lstsq(design, (w0 - lower).ravel(), rcond=None)[0][0])
    lin_plus = float(np.sum((upper - w_star) * radii[None]) / (len(dirs) * t2))
    lin_minus = float(np.sum((w_star - lower) * radii[None]) / (len(dirs) * t2))
    return ConeFit(
        omega_star_fit=w_star,
        lambda_fit=lam,
        lambda_plus=max(lam_plus, 0.0),
        lambda_minus=max(lam_minus, 0.0),
        linear_residual=resid,
        window=float(window),
        lambda_by_direction=lam_dir,
        degeneracy_gap=gap,
        omega_at_k=float(w0),
        lambda_plus_linear=lin_plus,
        lambda_minus_linear=lin_minus,
        radii=radii,
        lower=lower,
        upper=upper,
    )
