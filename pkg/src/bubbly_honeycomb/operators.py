"""Galerkin matrices of the single layer, its conormal traces and the block operator.

Densities on the circle ``|x - c_j| = R`` are expanded in the orthonormal basis
``e_{j,n} = exp(i n theta) / sqrt(2 pi R)``, ``|n| <= N``.  On each circle the
free-space part of the kernel is diagonal with closed-form symbols; everything
else is smooth and integrated with the ``M``-point trapezoidal rule, projected
to Fourier modes by FFT.

Assembly is split into an ``alpha``-dependent, ``k``-independent cache
(:class:`OperatorAssembler`) and a cheap per-wavenumber step:

* the reciprocal-space part of the Ewald sum is separable in ``x`` and ``y``,
  so only the mode projections of the plane waves are stored;
* the direct-lattice part is a power series in ``k^2`` whose coefficient
  matrices are computed once;
* the image of the origin on the same circle depends on ``theta_a - theta_b``
  only and becomes a diagonal after one FFT.
"""

from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import greens as gr
from .errors import ConfigError, DiscretizationError, GammaPointError, NumericalError
from .lattice import LatticeGeometry
from .specfun import bessel_jy, modified_bessel_ik

log = logging.getLogger(__name__)

ROLES = ("phi", "psi")
#: highest power of k^2/(4 eta^2) kept in the direct-lattice series
J_CAP = 24


@dataclass(frozen=True)
class CrystalConfig:
    """Bubble radius, density contrast and wave speeds.

    ``delta = 0`` is accepted so that the decoupled limit can be assembled.
    """

    radius: float
    delta: float
    v: float = 1.0
    vb: float = 1.0

    def __post_init__(self):
        for name in ("radius", "v", "vb"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be positive, got {val!r}")
        if not self.radius < 1:
            raise ConfigError(f"radius must be below 1, got {self.radius!r}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError(f"delta must be non-negative, got {self.delta!r}")

    def wavenumbers(self, omega: float) -> tuple[float, float]:
        """``(k, k_b) = (omega / v, omega / v_b)``."""
        return omega / self.v, omega / self.vb

    def check_geometry(self, g: LatticeGeometry) -> None:
        if not 2 * self.radius < g.nearest_neighbor_distance:
            raise ConfigError(
                f"bubbles of radius {self.radius} overlap (centre distance {g.nearest_neighbor_distance:.4g})"
            )


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@dataclass(frozen=True)
class TruncationParams:
    """Multipole order ``N``, quadrature size ``M`` and Green's function tolerance.

    ``eta`` is the Ewald parameter used by the fast assembler; ``None`` means
    ``4 sqrt(pi) / a``.
    """

    multipole_order: int = 3
    quadrature_points: int = 64
    greens_tol: float = 1e-12
    eta: float | None = None

    def __post_init__(self):
        n, m = self.multipole_order, self.quadrature_points
        if int(n) != n or n < 0:
            raise ConfigError(f"multipole order must be a non-negative integer, got {n!r}")
        if int(m) != m or m < 8 * (n + 1) or (m & (m - 1)) != 0:
            raise ConfigError(
                f"quadrature points must be a power of two >= 8(N+1) = {8 * (n + 1)}, got {m!r}"
            )
        if not (1e-14 <= self.greens_tol <= 1e-1):
            raise ConfigError(f"greens_tol must lie in [1e-14, 1e-1], got {self.greens_tol!r}")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")

    @classmethod
    def default_for(cls, radius: float, **kw) -> "TruncationParams":
        """``N = 3`` for dilute bubbles (``R <= 0.05``), else ``N = 8``; ``M >= 64``."""
        n = kw.pop("multipole_order", 3 if radius <= 0.05 else 8)
        m = kw.pop("quadrature_points", max(64, _next_pow2(8 * (n + 1))))
        return cls(multipole_order=n, quadrature_points=m, **kw)

    @property
    def block_size(self) -> int:
        return 2 * self.multipole_order + 1

    def resolved_eta(self, g: LatticeGeometry) -> float:
        return float(self.eta) if self.eta is not None else 4.0 * math.sqrt(math.pi) / g.a

    def ewald(self) -> gr.EwaldParams:
        """Parameters for point evaluators consistent with this truncation."""
        return gr.EwaldParams(target_tol=self.greens_tol)


@dataclass(frozen=True)
class BlockOperatorMatrix:
    """Dense Galerkin matrix of the block operator.

    Rows and columns are ordered by ``(role, boundary, n)`` with role in
    ``("phi", "psi")``, boundary in ``(1, 2)`` and ``n = -N..N`` varying fastest.
    """

    matrix: np.ndarray
    multipole_order: int

    @property
    def shape(self):
        return self.matrix.shape

    def index(self, role: str, boundary: int, n: int) -> int:
        N = self.multipole_order
        if role not in ROLES or boundary not in (1, 2) or abs(n) > N:
            raise ConfigError(f"invalid block label ({role!r}, {boundary!r}, {n!r})")
        return (ROLES.index(role) * 2 + boundary - 1) * (2 * N + 1) + n + N

    @property
    def labels(self) -> list[tuple[str, int, int]]:
        N = self.multipole_order
        return [(r, b, n) for r in ROLES for b in (1, 2) for n in range(-N, N + 1)]

    def block(self, row_role: str, col_role: str) -> np.ndarray:
        d = 2 * (2 * self.multipole_order + 1)
        i, j = ROLES.index(row_role), ROLES.index(col_role)
        return self.matrix[i * d : (i + 1) * d, j * d : (j + 1) * d]


def mode_index(trunc: TruncationParams, boundary: int, n: int) -> int:
    """Position of ``e_{boundary,n}`` in a single-layer sized matrix."""
    N = trunc.multipole_order
    return (boundary - 1) * (2 * N + 1) + n + N


# ----------------------------------------------------------------------------
# free-space symbols
# ----------------------------------------------------------------------------


def free_symbols(ksq: float, R: float, N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal free-space symbols ``(single, interior, exterior)`` for ``n = -N..N``.

    ``single[n]`` is the eigenvalue of the free-space single layer on ``e_n``;
    ``interior``/``exterior`` are those of its conormal traces from inside and
    outside the circle.
    """
    n = np.arange(-N, N + 1)
    an = np.abs(n)
    if ksq > 0:
        k = math.sqrt(ksq)
        t = bessel_jy(N, k * R)
        j, y, jp, yp = t.values_j[an], t.values_y[an], t.deriv_j[an], t.deriv_y[an]
        h, hp = j + 1j * y, jp + 1j * yp
        s = -0.5j * np.pi * R * j * h
        ti = -0.5j * np.pi * k * R * jp * h
        te = -0.5j * np.pi * k * R * j * hp
    elif ksq == 0:
        with np.errstate(divide="ignore"):
            s = np.where(an == 0, R * math.log(R), -R / (2.0 * np.maximum(an, 1))).astype(complex)
        ti = np.where(an == 0, 0.0, -0.5).astype(complex)
        te = np.where(an == 0, 1.0, 0.5).astype(complex)
    else:
        kappa = math.sqrt(-ksq)
        iv, kv, ip, kp = modified_bessel_ik(N, kappa * R)
        iv, kv, ip, kp = iv[an], kv[an], ip[an], kp[an]
        s = (-R * iv * kv).astype(complex)
        ti = (-kappa * R * ip * kv).astype(complex)
        te = (-kappa * R * iv * kp).astype(complex)
    return s, ti, te


# ----------------------------------------------------------------------------
# per-alpha assembler
# ----------------------------------------------------------------------------


@dataclass
class _Pieces:
    single: np.ndarray
    interior: np.ndarray
    exterior: np.ndarray


class OperatorAssembler:
    """Cached assembly of boundary operators at fixed ``alpha``.

    Instances are immutable after construction and safe to share between
    threads; every method is a pure function of its arguments.
    """

    def __init__(self, g: LatticeGeometry, radius: float, trunc: TruncationParams, alpha):
        self.geometry = g
        self.radius = R = float(radius)
        self.trunc = trunc
        self.alpha = alpha = np.asarray(alpha, dtype=float).copy()
        if alpha.shape != (2,) or not np.all(np.isfinite(alpha)):
            raise ConfigError("alpha must be a finite 2-vector")
        if not 2 * R < g.nearest_neighbor_distance:
            raise ConfigError("bubbles overlap")
        N, M = trunc.multipole_order, trunc.quadrature_points
        self.N, self.M = N, M
        self.eta = eta = trunc.resolved_eta(g)
        tol = trunc.greens_tol
        area = g.cell_area
        self._modes = np.arange(-N, N + 1) % M

        theta = 2 * np.pi * np.arange(M) / M
        nu = np.column_stack([np.cos(theta), np.sin(theta)])
        centers = g.centers
        nodes = [c + R * nu for c in centers]
        self._theta = theta

        # reciprocal space: plane-wave projections on both circles (k-independent)
        # a tenfold margin covers the growth of the weights with k^2 in the subwavelength range
        p = gr.spectral_vectors(g, alpha, 0.0, eta, 0.1 * tol)
        # the ring search covers a parallelogram; drop the corner terms whose
        # combined bound stays below the tolerance
        p2 = np.einsum("ij,ij->i", p, p)
        bound = np.exp(-p2 / (4 * eta * eta)) / (area * np.maximum(p2, 1e-300)) * np.maximum(1.0, np.sqrt(p2))
        order = np.argsort(bound)
        drop = order[np.cumsum(bound[order]) < 0.01 * tol / (2 * np.pi)]
        p = np.delete(p, drop, axis=0)
        self._p2 = np.einsum("ij,ij->i", p, p)
        self.gamma_distance = float(np.sqrt(self._p2.min()))
        P, Pg = [], []
        for x in nodes:
            e = np.exp(1j * (x @ p.T))  # (M, Q)
            P.append(self._project_rows(e))
            Pg.append(self._project_rows(1j * (nu @ p.T) * e))
        self._P = np.vstack(P)
        self._PH = self._P.conj().T
        self._Pg = np.vstack(Pg)

        # direct lattice: coefficient matrices of sum_j c_j(k) F_j for every block pair
        cj_ref = np.ones(J_CAP + 1)
        span = float(np.linalg.norm(centers[1] - centers[0])) + 2 * R
        nvec = gr.spatial_vectors(g, cj_ref / np.array([math.factorial(j) for j in range(J_CAP + 1)]),
                                  eta, tol, radius=span)
        nphase = np.exp(1j * (nvec @ alpha))
        origin = int(np.argmin(np.einsum("ij,ij->i", nvec, nvec)))
        eta2 = eta * eta
        d = 2 * N + 1
        self._FS = np.zeros((J_CAP + 1, 2 * d, 2 * d), dtype=complex)
        self._FG = np.zeros((J_CAP + 1, 2 * d, 2 * d), dtype=complex)
        for i in range(2):
            for j in range(2):
                diff = nodes[i][:, None, :] - nodes[j][None, :, :]  # (M, M, 2)
                S = np.zeros((J_CAP + 1, M, M), dtype=complex)
                G = np.zeros((J_CAP + 1, M, M), dtype=complex)
                for idx in range(len(nvec)):
                    if i == j and idx == origin:
                        continue
                    dn = diff - nvec[idx]
                    u = eta2 * np.einsum("abk,abk->ab", dn, dn)
                    mask = u < gr.U_CUTOFF
                    if not np.any(mask):
                        continue
                    e = gr.expn_table(J_CAP + 1, u[mask])
                    ndot = np.einsum("abk,ak->ab", dn, nu)[mask]
                    S[:, mask] += nphase[idx] * e[1:]
                    G[:, mask] += nphase[idx] * e[:-1] * ndot
                S *= -1.0 / (4 * np.pi)
                G *= eta2 / (2 * np.pi)
                for jj in range(J_CAP + 1):
                    self._FS[jj, i * d : (i + 1) * d, j * d : (j + 1) * d] = self._project(S[jj])
                    self._FG[jj, i * d : (i + 1) * d, j * d : (j + 1) * d] = self._project(G[jj])

        # image of the origin on the same circle: circulant in a - b
        rd = 2 * R * np.abs(np.sin(np.pi * np.arange(M) / M))
        self._rd = rd
        self._rd_table = np.zeros((J_CAP + 2, M))
        self._rd_table[:, 1:] = gr.expn_table(J_CAP + 1, eta2 * rd[1:] ** 2)
        self._n_spectral = len(p)
        self._n_spatial = len(nvec)
        log.debug("assembler alpha=%s: %d plane waves, %d images", alpha, len(p), len(nvec))

    # -- projections -------------------------------------------------------------
    def _project_rows(self, f: np.ndarray) -> np.ndarray:
        """``(1/M) sum_a exp(-i m theta_a) f[a, ...]`` for ``m = -N..N``."""
        return np.fft.fft(f, axis=0)[self._modes] / self.M

    def _project(self, kern: np.ndarray) -> np.ndarray:
        """Galerkin matrix ``2 pi R / M^2 sum_ab exp(-i m theta_a) K[a,b] exp(i n theta_b)``."""
        rows = np.fft.fft(kern, axis=0)[self._modes] / self.M
        both = np.fft.ifft(rows, axis=1)[:, self._modes]
        return 2 * np.pi * self.radius * both

    def _circulant_symbol(self, f: np.ndarray) -> np.ndarray:
        return 2 * np.pi * self.radius * np.fft.fft(f)[self._modes] / self.M

    # -- checks ----------------------------------------------------------------------
    def check_wavenumber(self, ksq: float) -> None:
        if ksq == 0 and self.gamma_distance < self.geometry.default_gamma_offset * gr.GUARD_SLACK:
            raise GammaPointError("alpha too close to the dual lattice for the Laplace kernel")
        if ksq > 0:
            gr.check_resonance(self._p2, ksq, gr.EwaldParams().guard_tol)

    # -- assembly --------------------------------------------------------------------
    def pieces(self, ksq: float) -> _Pieces:
        """Single layer and both conormal traces at wavenumber squared ``ksq``."""
        ksq = float(ksq)
        self.check_wavenumber(ksq)
        eta, R, N = self.eta, self.radius, self.N
        d = 2 * N + 1
        w = gr.spectral_coefficients(self._p2, ksq, eta, self.geometry.cell_area)
        Pw = self._P * w
        S = 2 * np.pi * R * (Pw @ self._PH)
        T = 2 * np.pi * R * ((self._Pg * w) @ self._PH)

        cj = gr.series_coefficients(ksq, eta)
        if len(cj) > J_CAP + 1:
            raise NumericalError(f"k^2 = {ksq:g} exceeds the range of the cached direct-lattice series")
        ncj = len(cj)
        S += np.tensordot(cj, self._FS[:ncj], axes=1)
        T += np.tensordot(cj, self._FG[:ncj], axes=1)

        f = gr.regular_core(self._rd, ksq, eta, cj, etab=self._rd_table)
        fp = gr.regular_core_dr(self._rd, ksq, eta, cj, etab=self._rd_table)
        s0, ti, te = free_symbols(ksq, R, N)
        diag_s = self._circulant_symbol(f) + s0
        diag_t = self._circulant_symbol(fp * self._rd / (2 * R))
        idx = np.arange(d)
        for b in range(2):
            S[b * d + idx, b * d + idx] += diag_s
            T[b * d + idx, b * d + idx] += diag_t
        Ti = T.copy()
        Te = T
        for b in range(2):
            Ti[b * d + idx, b * d + idx] += ti
            Te[b * d + idx, b * d + idx] += te
        return _Pieces(S, Ti, Te)

    def single_layer(self, k: float) -> np.ndarray:
        return self.pieces(k * k).single

    def trace(self, k: float, side: str) -> np.ndarray:
        pc = self.pieces(k * k)
        if side == "interior":
            return pc.interior
        if side == "exterior":
            return pc.exterior
        raise ConfigError(f"side must be 'interior' or 'exterior', got {side!r}")

    def block_operator(self, cfg: CrystalConfig, omega: float) -> BlockOperatorMatrix:
        if not (np.isfinite(omega) and omega >= 0):
            raise ConfigError(f"omega must be real and non-negative, got {omega!r}")
        k, kb = cfg.wavenumbers(omega)
        inner = self.pieces(kb * kb)
        outer = inner if kb == k else self.pieces(k * k)
        A = np.block(
            [
                [inner.single, -outer.single],
                [inner.interior, -cfg.delta * outer.exterior],
            ]
        )
        return BlockOperatorMatrix(A, self.N)

    @property
    def n_spectral(self) -> int:
        return self._n_spectral

    @property
    def n_spatial(self) -> int:
        return self._n_spatial


_CACHE: OrderedDict = OrderedDict()
_CACHE_LOCK = threading.Lock()
_CACHE_SIZE = 16


def get_assembler(g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams, alpha) -> OperatorAssembler:
    """Shared :class:`OperatorAssembler` for ``(geometry, radius, truncation, alpha)``."""
    cfg.check_geometry(g)
    alpha = np.asarray(alpha, dtype=float)
    key = (g.a, cfg.radius, trunc, alpha.tobytes())
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
        if hit is not None:
            _CACHE.move_to_end(key)
            return hit
    asm = OperatorAssembler(g, cfg.radius, trunc, alpha)
    with _CACHE_LOCK:
        _CACHE[key] = asm
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    return asm


def assemble_single_layer(g, cfg: CrystalConfig, trunc: TruncationParams, alpha, k: float) -> np.ndarray:
    """Galerkin matrix of the quasi-periodic single layer at wavenumber ``k``."""
    _check_k(k)
    return get_assembler(g, cfg, trunc, alpha).single_layer(k)


def assemble_trace(g, cfg: CrystalConfig, trunc: TruncationParams, alpha, k: float, side: str) -> np.ndarray:
    """Galerkin matrix of the interior (``-1/2 + K*``) or exterior (``1/2 + K*``) trace."""
    _check_k(k)
    return get_assembler(g, cfg, trunc, alpha).trace(k, side)


def assemble_A(g, cfg: CrystalConfig, trunc: TruncationParams, alpha, omega: float) -> BlockOperatorMatrix:
    """Block operator ``[[S(k_b), -S(k)], [T_int(k_b), -delta T_ext(k)]]``."""
    return get_assembler(g, cfg, trunc, alpha).block_operator(cfg, omega)


def _check_k(k):
    if not (np.isfinite(k) and k >= 0):
        raise ConfigError(f"wavenumber must be real and non-negative, got {k!r}")


def check_quadrature(g, cfg: CrystalConfig, trunc: TruncationParams, alpha, k: float) -> float:
    """Largest entry change of the single layer and traces when ``M`` doubles.

    Raises :class:`DiscretizationError` if it exceeds ``100 * greens_tol`` in
    units of the largest entry.
    """
    fine = TruncationParams(trunc.multipole_order, 2 * trunc.quadrature_points, trunc.greens_tol, trunc.eta)
    a = OperatorAssembler(g, cfg.radius, trunc, alpha).pieces(k * k)
    b = OperatorAssembler(g, cfg.radius, fine, alpha).pieces(k * k)
    worst = 0.0
    for x, y in ((a.single, b.single), (a.interior, b.interior), (a.exterior, b.exterior)):
        worst = max(worst, float(np.abs(x - y).max() / max(np.abs(y).max(), 1e-300)))
    if worst > 100 * trunc.greens_tol:
        raise DiscretizationError(f"quadrature with M = {trunc.quadrature_points} under-resolved ({worst:.2e})")
    return worst


# ----------------------------------------------------------------------------
# volume identity for the k^2-derivative of the trace
# ----------------------------------------------------------------------------

#: central-difference step in k^2
VOLUME_DK2 = 1e-4


def _disk_rule(R: float, n_rad: int = 24, n_ang: int = 48):
    """Polar Gauss-Legendre x trapezoid rule on the disk of radius ``R`` at the origin."""
    t, w = np.polynomial.legendre.leggauss(n_rad)
    rho = 0.5 * R * (t + 1)
    wr = 0.5 * R * w * rho
    th = 2 * np.pi * np.arange(n_ang) / n_ang
    pts = (rho[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]).reshape(-1, 2)
    wts = np.repeat(wr, n_ang) * (2 * np.pi / n_ang)
    return pts, wts


def volume_consistency_check(
    g, cfg: CrystalConfig, trunc: TruncationParams, alpha, density=None, n_boundary: int = 64
) -> float:
    """Residual of ``d/dk^2 int_{dD_j} T_int[phi] = -int_{D_j} S^{alpha,0}[phi]`` at ``k = 0``.

    The left side uses the assembled interior trace at ``k^2 = +-1e-4``; the
    right side integrates the single-layer field over each disk with a polar
    rule, evaluating the Green's function pointwise.  ``density`` holds the
    basis coefficients (default ``e_{1,0}``); the maximum over both disks is
    returned.
    """
    cfg.check_geometry(g)
    R, N = cfg.radius, trunc.multipole_order
    d = 2 * N + 1
    if density is None:
        density = np.zeros(2 * d, dtype=complex)
        density[mode_index(trunc, 1, 0)] = 1.0
    density = np.asarray(density, dtype=complex)
    if density.shape != (2 * d,):
        raise ConfigError(f"density must have {2 * d} coefficients")

    asm = get_assembler(g, cfg, trunc, alpha)
    h = VOLUME_DK2
    tp = asm.pieces(h).interior @ density
    tm = asm.pieces(-h).interior @ density
    mass = math.sqrt(2 * np.pi * R)
    lhs = np.array([mass * (tp[mode_index(trunc, j, 0)] - tm[mode_index(trunc, j, 0)]) / (2 * h) for j in (1, 2)])

    ev = gr.make_evaluator(g, alpha, 0.0, trunc.ewald())
    theta = 2 * np.pi * np.arange(n_boundary) / n_boundary
    unit = np.column_stack([np.cos(theta), np.sin(theta)])
    modes = np.arange(-N, N + 1)
    basis = np.exp(1j * np.outer(theta, modes)) / math.sqrt(2 * np.pi * R)
    ys = [c + R * unit for c in g.centers]
    phis = [basis @ density[b * d : (b + 1) * d] for b in range(2)]
    dsig = 2 * np.pi * R / n_boundary
    pts, wts = _disk_rule(R)

    rhs = np.zeros(2, dtype=complex)
    for j in range(2):
        xs = g.centers[j] + pts
        total = 0.0 + 0.0j
        for b in range(2):
            diff = (xs[:, None, :] - ys[b][None, :, :]).reshape(-1, 2)
            if b == j:
                kern = ev.green_regular(diff)
            else:
                kern = ev.green(diff)
            field = kern.reshape(len(xs), n_boundary) @ phis[b] * dsig
            total += wts @ field
        # free-space part of the own circle: only the constant mode survives the disk integral
        c0 = density[j * d + N]
        total += np.pi * R * R * R * math.log(R) * c0 / math.sqrt(2 * np.pi * R)
        rhs[j] = -total
    return float(np.max(np.abs(lhs - rhs)))
