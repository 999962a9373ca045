"""Quasi-periodic Green's function of the Helmholtz and Laplace operators.

The lattice sum

    G(x) = (1/|Y|) sum_q exp(i p.x) / (k^2 - |p|^2),    p = alpha + q,

is evaluated by an Ewald split of ``1/(k^2 - |p|^2) = -int_0^inf exp((k^2 - |p|^2) t) dt``
at ``t = 1/(4 eta^2)``.  The long-time piece stays in reciprocal space and the
short-time piece is Poisson-summed to the direct lattice:

    G = (1/|Y|) sum_q exp(i p.x) exp((k^2 - p^2)/(4 eta^2)) / (k^2 - p^2)
        - (1/4 pi) sum_n exp(i alpha.n) sum_j (k^2/(4 eta^2))^j / j! E_{j+1}(eta^2 |x - n|^2).

Both pieces are entire in ``k^2``, so the same code serves ``k > 0``,
``k = 0`` and ``k^2 < 0`` (used for derivatives in ``k^2`` at zero).
The free-space kernel ``G0`` is ``-(i/4) H_0(k r)``, ``(1/2 pi) ln r`` or
``-(1/2 pi) K_0(kappa r)`` respectively, and ``G - G0`` is smooth near 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from .errors import (
    ConfigError,
    ConvergenceError,
    GammaPointError,
    ResonanceError,
    SingularityError,
)
from .lattice import LatticeGeometry

log = logging.getLogger(__name__)

EULER_GAMMA = float(np.euler_gamma)
#: ``E_n(u) < exp(-u)/u`` is negligible beyond this
U_CUTOFF = 50.0
#: relative slack so points placed exactly on the guard circle are accepted
GUARD_SLACK = 1.0 - 1e-9
#: below this radius the regular part uses its analytic limit at the origin
R_SMALL = 1e-9
_SCALE = 1.0 / (2.0 * np.pi)
_CHUNK = 2048


@dataclass(frozen=True)
class EwaldParams:
    """Splitting and truncation controls.

    Parameters
    ----------
    eta : float, optional
        Splitting parameter; ``None`` means ``sqrt(pi)/a``.
    target_tol : float
        Truncation tolerance relative to ``1/(2 pi)``.
    guard_tol : float
        Relative width of the excluded band around ``k = |alpha + q|``.
    max_shells : int
        Hard cap on lattice rings in either sum.
    spectral_cutoff, spatial_cutoff : int, optional
        Fixed ring counts; ``None`` selects them adaptively.
    gamma_offset : float, optional
        Minimum ``|alpha|`` for ``k = 0``; ``None`` means ``1e-2 |alpha1|``.
    """

    eta: float | None = None
    target_tol: float = 1e-12
    guard_tol: float = 1e-8
    max_shells: int = 64
    spectral_cutoff: int | None = None
    spatial_cutoff: int | None = None
    gamma_offset: float | None = None

    def __post_init__(self):
        if self.eta is not None and not (np.isfinite(self.eta) and self.eta > 0):
            raise ConfigError(f"eta must be positive, got {self.eta!r}")
        if not (1e-14 <= self.target_tol <= 1e-1):
            raise ConfigError(f"target_tol must lie in [1e-14, 1e-1], got {self.target_tol!r}")
        if not (0 < self.guard_tol < 1):
            raise ConfigError("guard_tol must lie in (0, 1)")
        if self.max_shells < 1:
            raise ConfigError("max_shells must be >= 1")
        for name in ("spectral_cutoff", "spatial_cutoff"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.gamma_offset is not None and not self.gamma_offset > 0:
            raise ConfigError("gamma_offset must be positive")

    def resolved_eta(self, g: LatticeGeometry) -> float:
        return float(self.eta) if self.eta is not None else math.sqrt(math.pi) / g.a


# ----------------------------------------------------------------------------
# kernel pieces shared with the operator assembler
# ----------------------------------------------------------------------------


def ring_indices(m: int) -> np.ndarray:
    """Integer pairs ``(i, j)`` with ``max(|i|, |j|) = m``."""
    if m == 0:
        return np.zeros((1, 2), dtype=int)
    r = np.arange(-m, m + 1)
    top = np.column_stack([r, np.full_like(r, m)])
    bot = np.column_stack([r, np.full_like(r, -m)])
    s = np.arange(-m + 1, m)
    left = np.column_stack([np.full_like(s, -m), s])
    right = np.column_stack([np.full_like(s, m), s])
    return np.concatenate([top, bot, left, right])


def series_coefficients(ksq: float, eta: float, rel: float = 1e-18) -> np.ndarray:
    """``c_j = (k^2/(4 eta^2))^j / j!`` until ``|c_j|/j`` drops below ``rel``."""
    z = ksq / (4.0 * eta * eta)
    c = [1.0]
    j = 0
    while True:
        j += 1
        c.append(c[-1] * z / j)
        if abs(c[-1]) / j < rel and j >= 1:
            break
        if j > 400:
            raise ConvergenceError("k^2/(4 eta^2) too large for the direct-lattice series")
    return np.array(c)


def expn_table(jmax: int, u: np.ndarray) -> np.ndarray:
    """``E_j(u)`` for ``j = 0..jmax`` by upward recurrence from ``E_1``.

    The recurrence amplifies rounding for ``u > j`` but every use weights
    ``E_{j+1}`` by ``(k^2/4 eta^2)^j/j!``, which keeps the weighted sum
    accurate to rounding level.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty((jmax + 1,) + u.shape)
    eu = np.exp(-u)
    out[0] = eu / u
    if jmax >= 1:
        out[1] = sp.exp1(u)
    for j in range(1, jmax):
        out[j + 1] = (eu - u * out[j]) / j
    return out


def free_space(r, ksq: float):
    """Free-space kernel ``G0(r)`` matching the singularity of ``G``."""
    r = np.asarray(r, dtype=float)
    if ksq > 0:
        k = math.sqrt(ksq)
        return -0.25j * sp.hankel1(0, k * r)
    if ksq == 0:
        return (_SCALE * np.log(r)).astype(complex)
    kappa = math.sqrt(-ksq)
    return (-_SCALE * sp.k0(kappa * r)).astype(complex)


def free_space_dr(r, ksq: float):
    """Radial derivative ``dG0/dr``."""
    r = np.asarray(r, dtype=float)
    if ksq > 0:
        k = math.sqrt(ksq)
        return 0.25j * k * sp.hankel1(1, k * r)
    if ksq == 0:
        return (_SCALE / r).astype(complex)
    kappa = math.sqrt(-ksq)
    return (_SCALE * kappa * sp.k1(kappa * r)).astype(complex)


def regular_core_limit(ksq: float, eta: float, cj: np.ndarray) -> complex:
    """Limit at ``r = 0`` of the origin image term minus ``G0``."""
    j = np.arange(1, len(cj))
    tail = float(np.sum(cj[1:] / j)) if len(j) else 0.0
    if ksq > 0:
        k = math.sqrt(ksq)
        return 0.25j - _SCALE * (math.log(k / (2 * eta)) + EULER_GAMMA / 2) - tail / (4 * np.pi)
    if ksq == 0:
        return complex((EULER_GAMMA + 2 * math.log(eta)) / (4 * np.pi))
    kappa = math.sqrt(-ksq)
    return complex(-_SCALE * (math.log(kappa / (2 * eta)) + EULER_GAMMA / 2) - tail / (4 * np.pi))


def regular_core(r, ksq: float, eta: float, cj: np.ndarray, etab: np.ndarray | None = None):
    """Origin image of the direct-lattice sum minus ``G0``, a smooth even function of ``r``.

    ``etab`` may hold a precomputed ``expn_table(len(cj), eta^2 r^2)``.
    """
    r = np.asarray(r, dtype=float)
    out = np.empty(r.shape, dtype=complex)
    small = r < R_SMALL
    out[small] = regular_core_limit(ksq, eta, cj)
    big = ~small
    if np.any(big):
        rb = r[big]
        e = etab[:, big] if etab is not None else expn_table(len(cj), eta * eta * rb * rb)
        s = np.tensordot(cj, e[1 : len(cj) + 1], axes=1)
        out[big] = -s / (4 * np.pi) - free_space(rb, ksq)
    return out


def regular_core_dr(r, ksq: float, eta: float, cj: np.ndarray, etab: np.ndarray | None = None):
    """Radial derivative of :func:`regular_core` (zero at the origin)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape, dtype=complex)
    big = r >= R_SMALL
    if np.any(big):
        rb = r[big]
        e = etab[:, big] if etab is not None else expn_table(len(cj), eta * eta * rb * rb)
        # d/dr E_{j+1}(eta^2 r^2) = -2 eta^2 r E_j
        s = np.tensordot(cj, e[: len(cj)], axes=1)
        out[big] = eta * eta * rb * s / (2 * np.pi) - free_space_dr(rb, ksq)
    return out


def spectral_coefficients(p2: np.ndarray, ksq: float, eta: float, area: float) -> np.ndarray:
    """Reciprocal-space weights ``exp((k^2 - p^2)/(4 eta^2)) / (|Y| (k^2 - p^2))``."""
    d = ksq - p2
    return np.exp(d / (4 * eta * eta)) / (area * d)


def _cell_radius(g: LatticeGeometry) -> float:
    # points handled un-reduced satisfy |x| < min lattice distance; reduced ones
    # lie in the centred parallelogram
    half_diag = 0.5 * max(np.linalg.norm(g.l1 + g.l2), np.linalg.norm(g.l1 - g.l2))
    return float(max(half_diag, g.min_lattice_distance))


def spectral_vectors(
    g: LatticeGeometry,
    alpha: np.ndarray,
    ksq: float,
    eta: float,
    tol: float,
    max_shells: int = 64,
    fixed: int | None = None,
) -> np.ndarray:
    """Shifted dual vectors ``alpha + q`` over enough rings for ``tol``.

    The ring bound is ``sum |w_q| max(1, |p|)``, covering values and gradients.
    """
    thr = 0.1 * tol * _SCALE
    blocks = []
    for m in range(max_shells + 1):
        ij = ring_indices(m)
        p = alpha + ij @ np.stack([g.alpha1, g.alpha2])
        blocks.append(p)
        if fixed is not None:
            if m >= fixed:
                break
            continue
        if m >= 1:
            p2 = np.einsum("ij,ij->i", p, p)
            # a resonant term gives an infinite bound here; the caller's guard reports it
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.abs(spectral_coefficients(p2, ksq, eta, g.cell_area))
            bound = float(np.sum(w * np.maximum(1.0, np.sqrt(p2))))
            if bound < thr:
                break
    else:
        raise ConvergenceError(f"spectral sum not converged within {max_shells} shells")
    return np.concatenate(blocks)


def spatial_vectors(
    g: LatticeGeometry,
    cj: np.ndarray,
    eta: float,
    tol: float,
    max_shells: int = 64,
    fixed: int | None = None,
    radius: float | None = None,
) -> np.ndarray:
    """Direct lattice vectors over enough rings for points with ``|x| <= radius``."""
    rx = _cell_radius(g) if radius is None else radius
    thr = 0.1 * tol * _SCALE
    ac = np.abs(cj)
    blocks = []
    for m in range(max_shells + 1):
        ij = ring_indices(m)
        n = ij @ np.stack([g.l1, g.l2])
        blocks.append(n)
        if fixed is not None:
            if m >= fixed:
                break
            continue
        if m >= 1:
            rn = np.linalg.norm(n, axis=1)
            rlo = np.maximum(rn - rx, 0.0)
            if np.all(rlo > 0):
                u = eta * eta * rlo * rlo
                e = expn_table(len(cj), np.minimum(u, 700.0))
                val = np.tensordot(ac, e[1:], axes=1) / (4 * np.pi)
                grad = eta * eta * (rn + rx) * np.tensordot(ac, e[:-1], axes=1) / (2 * np.pi)
                if float(np.sum(val + grad)) < thr:
                    break
    else:
        raise ConvergenceError(f"direct-lattice sum not converged within {max_shells} shells")
    return np.concatenate(blocks)


# ----------------------------------------------------------------------------
# evaluator
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GreensEvaluator:
    """Immutable evaluator of ``G^{alpha,k}`` and its regular part.

    Build with :func:`make_evaluator`.  Methods accept a single point of shape
    ``(2,)`` or a batch ``(..., 2)``.
    """

    geometry: LatticeGeometry
    alpha: np.ndarray
    k: float
    params: EwaldParams
    ksq: float
    eta: float
    _p: np.ndarray = field(repr=False)
    _w: np.ndarray = field(repr=False)
    _n: np.ndarray = field(repr=False)
    _nphase: np.ndarray = field(repr=False)
    _cj: np.ndarray = field(repr=False)
    _origin: int = field(repr=False)

    # -- internals -----------------------------------------------------------
    def _spectral(self, x: np.ndarray, grad: bool):
        val = np.empty(len(x), dtype=complex)
        gr = np.empty((len(x), 2), dtype=complex) if grad else None
        for s in range(0, len(x), _CHUNK):
            e = np.exp(1j * (x[s : s + _CHUNK] @ self._p.T)) * self._w
            val[s : s + _CHUNK] = e.sum(axis=1)
            if grad:
                gr[s : s + _CHUNK] = 1j * (e @ self._p)
        return val, gr

    def _spatial(self, x: np.ndarray, grad: bool, skip_origin: bool):
        eta2 = self.eta * self.eta
        nj = len(self._cj)
        val = np.zeros(len(x), dtype=complex)
        gr = np.zeros((len(x), 2), dtype=complex) if grad else None
        for idx in range(len(self._n)):
            if skip_origin and idx == self._origin:
                continue
            d = x - self._n[idx]
            u = eta2 * np.einsum("ij,ij->i", d, d)
            mask = u < U_CUTOFF
            if not np.any(mask):
                continue
            e = expn_table(nj, u[mask])
            ph = self._nphase[idx]
            val[mask] += ph * (self._cj @ e[1:])
            if grad:
                gr[mask] += (ph * (self._cj @ e[:-1]))[:, None] * d[mask]
        val *= -1.0 / (4 * np.pi)
        if grad:
            gr *= eta2 / (2 * np.pi)
        return val, gr

    def _reduce(self, x: np.ndarray):
        g = self.geometry
        m = np.round(g.direct_coordinates(x))
        shift = m @ np.stack([g.l1, g.l2])
        xr = x - shift
        if np.any(np.einsum("ij,ij->i", xr, xr) < 1e-24):
            raise SingularityError("Green's function evaluated at a lattice point")
        return xr, np.exp(1j * (shift @ self.alpha))

    @staticmethod
    def _as_batch(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2:
            raise ConfigError("points must have a trailing dimension of size 2")
        return x.reshape(-1, 2), x.shape[:-1]

    def _full(self, x, grad: bool):
        xb, shape = self._as_batch(x)
        xr, ph = self._reduce(xb)
        v1, g1 = self._spectral(xr, grad)
        v2, g2 = self._spatial(xr, grad, skip_origin=False)
        if grad:
            return ((g1 + g2) * ph[:, None]).reshape(shape + (2,))
        return ((v1 + v2) * ph).reshape(shape)

    def _regular(self, x, grad: bool):
        xb, shape = self._as_batch(x)
        r = np.linalg.norm(xb, axis=1)
        if np.any(r >= self.geometry.min_lattice_distance):
            raise ConfigError("regular part is only defined for |x| below the lattice spacing")
        v1, g1 = self._spectral(xb, grad)
        v2, g2 = self._spatial(xb, grad, skip_origin=True)
        if grad:
            dr = regular_core_dr(r, self.ksq, self.eta, self._cj)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[:, None] > 0, xb / r[:, None], 0.0)
            return (g1 + g2 + dr[:, None] * unit).reshape(shape + (2,))
        f = regular_core(r, self.ksq, self.eta, self._cj)
        return (v1 + v2 + f).reshape(shape)

    # -- public ----------------------------------------------------------------
    def green(self, x):
        out = self._full(x, grad=False)
        return out[()] if out.ndim == 0 else out

    def green_grad(self, x):
        return self._full(x, grad=True)

    def green_regular(self, x):
        out = self._regular(x, grad=False)
        return out[()] if out.ndim == 0 else out

    def green_regular_grad(self, x):
        return self._regular(x, grad=True)

    def free_space(self, x):
        """Singular part ``G0(|x|)`` subtracted by :meth:`green_regular`."""
        xb, shape = self._as_batch(x)
        out = free_space(np.linalg.norm(xb, axis=1), self.ksq).reshape(shape)
        return out[()] if out.ndim == 0 else out

    @property
    def n_spectral(self) -> int:
        return len(self._p)

    @property
    def n_spatial(self) -> int:
        return len(self._n)


def check_resonance(p2: np.ndarray, ksq: float, guard_tol: float) -> None:
    """Raise :class:`ResonanceError` if ``k^2`` is within the guard band of some ``|p|^2``."""
    near = np.abs(ksq - p2) < guard_tol * p2
    if np.any(near):
        pk = float(np.sqrt(p2[near][0]))
        raise ResonanceError(f"k^2 = {ksq:.12g} sits on the empty-lattice resonance |alpha+q| = {pk:.12g}")


def make_evaluator_ksq(
    g: LatticeGeometry, alpha, ksq: float, params: EwaldParams | None = None
) -> GreensEvaluator:
    """Evaluator parametrised by ``k^2`` (negative values give the Yukawa kernel)."""
    params = params or EwaldParams()
    alpha = np.asarray(alpha, dtype=float).copy()
    if alpha.shape != (2,) or not np.all(np.isfinite(alpha)):
        raise ConfigError("alpha must be a finite 2-vector")
    ksq = float(ksq)
    eta = params.resolved_eta(g)
    gamma_offset = params.gamma_offset if params.gamma_offset is not None else g.default_gamma_offset
    tol = params.target_tol

    p = spectral_vectors(g, alpha, ksq, eta, tol, params.max_shells, params.spectral_cutoff)
    p2 = np.einsum("ij,ij->i", p, p)
    if ksq <= 0 and float(np.sqrt(p2.min())) < gamma_offset * GUARD_SLACK:
        if ksq == 0:
            raise GammaPointError(
                f"|alpha| = {np.sqrt(p2.min()):.3g} (mod dual lattice) is below the Gamma offset {gamma_offset:.3g}"
            )
    check_resonance(p2, ksq, params.guard_tol)
    w = spectral_coefficients(p2, ksq, eta, g.cell_area)

    cj = series_coefficients(ksq, eta)
    n = spatial_vectors(g, cj, eta, tol, params.max_shells, params.spatial_cutoff)
    origin = int(np.argmin(np.einsum("ij,ij->i", n, n)))
    nphase = np.exp(1j * (n @ alpha))
    k = math.sqrt(ksq) if ksq >= 0 else float("nan")
    log.debug("green evaluator: %d spectral, %d spatial terms, eta=%.4g", len(p), len(n), eta)
    return GreensEvaluator(g, alpha, k, params, ksq, eta, p, w, n, nphase, cj, origin)


def make_evaluator(
    g: LatticeGeometry, alpha, k: float, params: EwaldParams | None = None
) -> GreensEvaluator:
    """Build an evaluator for ``G^{alpha,k}`` with real ``k >= 0``.

    Raises
    ------
    GammaPointError
        ``k = 0`` and ``alpha`` within the Gamma offset of the dual lattice.
    ResonanceError
        ``k`` within the guard band of ``|alpha + q|`` for some ``q``.
    """
    if not (np.isfinite(k) and k >= 0):
        raise ConfigError(f"wavenumber must be real and non-negative, got {k!r}")
    ev = make_evaluator_ksq(g, alpha, float(k) * float(k), params)
    return ev


def green(ev: GreensEvaluator, x):
    """``G^{alpha,k}(x)``."""
    return ev.green(x)


def green_grad(ev: GreensEvaluator, x):
    """``grad_x G^{alpha,k}(x)``."""
    return ev.green_grad(x)


def green_regular(ev: GreensEvaluator, x):
    """``G^{alpha,k}(x) - G0(|x|)`` for ``|x|`` below the lattice spacing."""
    return ev.green_regular(x)


def green_regular_grad(ev: GreensEvaluator, x):
    """Gradient of :func:`green_regular`."""
    return ev.green_regular_grad(x)
