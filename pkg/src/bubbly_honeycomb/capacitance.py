"""Quasi-periodic capacitance matrix and the leading-order Dirac cone.

``C_ij = -int_{dD_i} psi_j`` with ``psi_j`` the Laplace single-layer density
whose potential equals 1 on ``dD_j`` and 0 on the other boundary.  Its
eigenvalues ``lambda = C11 -+ |C12|`` give the asymptotic bands
``omega = sqrt(delta lambda / (pi R^2)) v_b``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, NumericalError, StepError
from .lattice import LatticeGeometry, rotate_dual
from .operators import CrystalConfig, TruncationParams, get_assembler, mode_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CapacitanceMatrix:
    """2x2 capacitance matrix at one Bloch vector."""

    c11: complex
    c12: complex
    c21: complex
    c22: complex

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.c11, self.c12], [self.c21, self.c22]])

    @property
    def hermitian_residual(self) -> float:
        m = self.matrix
        return float(np.abs(m - m.conj().T).max())

    @property
    def eigenvalues(self) -> tuple[float, float]:
        """``(C11 - |C12|, C11 + |C12|)`` using the real part of the diagonal."""
        base = 0.5 * (self.c11.real + self.c22.real)
        off = abs(self.c12)
        return base - off, base + off


@dataclass(frozen=True)
class DiracGradient:
    """Finite-difference gradient data of ``C`` at the Dirac point."""

    c: complex
    structure_residual: float
    grad_c11: np.ndarray
    grad_c11_norm: float
    richardson_change: float


@dataclass(frozen=True)
class DiracData:
    """Leading-order crossing frequency and cone slope."""

    omega_star: float
    slope_lambda: float
    c_constant: complex
    c11_at_k: float


def _default_trunc(cfg: CrystalConfig, trunc: TruncationParams | None) -> TruncationParams:
    return trunc if trunc is not None else TruncationParams.default_for(cfg.radius)


def capacitance(
    g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams | None, alpha
) -> CapacitanceMatrix:
    """Capacitance matrix from the Galerkin Laplace single layer at ``alpha``."""
    trunc = _default_trunc(cfg, trunc)
    S = get_assembler(g, cfg, trunc, alpha).single_layer(0.0)
    mass = math.sqrt(2 * np.pi * cfg.radius)
    i0 = [mode_index(trunc, 1, 0), mode_index(trunc, 2, 0)]
    rhs = np.zeros((S.shape[0], 2), dtype=complex)
    rhs[i0[0], 0] = mass
    rhs[i0[1], 1] = mass
    try:
        lu = sla.lu_factor(S, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"single-layer system not solvable: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.abs(S).max():
        raise NumericalError("single-layer matrix is numerically singular")
    X = sla.lu_solve(lu, rhs)
    C = -mass * X[i0, :]
    return CapacitanceMatrix(complex(C[0, 0]), complex(C[0, 1]), complex(C[1, 0]), complex(C[1, 1]))


def rotation_covariance_residual(
    g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams | None, alpha
) -> tuple[float, float]:
    """``(|C11(R a) - C11(a)|, |C12(R^2 a) - exp(i a.l1) C12(a)|)``."""
    alpha = np.asarray(alpha, dtype=float)
    c0 = capacitance(g, cfg, trunc, alpha)
    ra = rotate_dual(g, alpha)
    c1 = capacitance(g, cfg, trunc, ra)
    c2 = capacitance(g, cfg, trunc, rotate_dual(g, ra))
    r1 = abs(c1.c11 - c0.c11)
    r2 = abs(c2.c12 - np.exp(1j * alpha @ g.l1) * c0.c12)
    return float(r1), float(r2)


def _central(g, cfg, trunc, base, direction, h):
    cp = capacitance(g, cfg, trunc, base + h * direction)
    cm = capacitance(g, cfg, trunc, base - h * direction)
    return (cp.c12 - cm.c12) / (2 * h), (cp.c11 - cm.c11) / (2 * h)


def dirac_gradient_c(
    g: LatticeGeometry,
    cfg: CrystalConfig,
    trunc: TruncationParams | None = None,
    h: float | None = None,
    tol: float = 1e-6,
) -> DiracGradient:
    """Gradient of ``C12`` and ``C11`` at ``K`` by Richardson-extrapolated central differences.

    Steps ``h`` and ``h/2`` give the extrapolated value; a second pair
    ``h/2, h/4`` is compared against it and a disagreement above
    ``tol * |c|`` raises :class:`StepError`.
    """
    scale = float(np.linalg.norm(g.alpha1))
    if h is None:
        h = 1e-3 * scale
    if not (1e-6 * scale <= h <= 1e-2 * scale):
        raise ConfigError(f"step must lie in [1e-6, 1e-2]*|alpha1|, got {h!r}")
    K = g.k_point
    e = np.eye(2)
    der = {}
    for axis in range(2):
        der[axis] = [_central(g, cfg, trunc, K, e[axis], s) for s in (h, h / 2, h / 4)]

    def richardson(vals, which, first):
        a, b = vals[first][which], vals[first + 1][which]
        return (4 * b - a) / 3

    d12 = [richardson(der[ax], 0, 0) for ax in range(2)]
    d11 = [richardson(der[ax], 1, 0) for ax in range(2)]
    check = [richardson(der[ax], 0, 1) for ax in range(2)]
    c = complex(d12[0])
    change = float(max(abs(check[ax] - d12[ax]) for ax in range(2)))
    if abs(c) > 0 and change > tol * abs(c):
        raise StepError(f"Richardson estimates disagree by {change:.2e} (|c| = {abs(c):.3e}); adjust the step")
    grad11 = np.array([d11[0].real, d11[1].real])
    return DiracGradient(
        c=c,
        structure_residual=float(abs(d12[1] + 1j * c)),
        grad_c11=grad11,
        grad_c11_norm=float(np.hypot(abs(d11[0]), abs(d11[1]))),
        richardson_change=change,
    )


def _omega(cfg: CrystalConfig, lam: float) -> float:
    val = cfg.delta * lam / (np.pi * cfg.radius**2)
    return float(math.sqrt(max(val, 0.0)) * cfg.vb)


def asymptotic_bands(
    g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams | None, alpha
) -> tuple[float, float]:
    """Leading-order band frequencies ``sqrt(delta lambda_j / (pi R^2)) v_b``, ascending."""
    if cfg.delta == 0:
        return 0.0, 0.0
    lo, hi = capacitance(g, cfg, trunc, alpha).eigenvalues
    return _omega(cfg, lo), _omega(cfg, hi)


def dirac_data(
    g: LatticeGeometry, cfg: CrystalConfig, trunc: TruncationParams | None = None, h: float | None = None
) -> DiracData:
    """Asymptotic crossing frequency and slope at ``K``."""
    C = capacitance(g, cfg, trunc, g.k_point)
    c11 = C.c11.real
    grad = dirac_gradient_c(g, cfg, trunc, h)
    D = np.pi * cfg.radius**2
    omega_star = float(math.sqrt(cfg.delta * c11 / D) * cfg.vb)
    slope = 0.5 * math.sqrt(cfg.delta / (D * c11)) * cfg.vb * abs(grad.c)
    log.info("dirac data: omega*=%.10g lambda=%.10g |c|=%.6g", omega_star, slope, abs(grad.c))
    return DiracData(omega_star, float(slope), grad.c, float(c11))
