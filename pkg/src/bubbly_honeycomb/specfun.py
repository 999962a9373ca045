"""Cylinder functions and the auxiliary functions used by the Ewald split.

Values come from ``scipy.special`` (AMOS / Cephes); this module adds the
domain checks, the order tables with recurrence-based derivatives and the
negative-order reflection used by the boundary operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from .errors import SpecialFunctionDomainError, SpecialFunctionRangeError

MAX_ORDER = 128
MAX_ARGUMENT = 1e4


@dataclass(frozen=True)
class CylinderFunctionTable:
    """``J_n(z)`` and ``Y_n(z)`` for ``n = 0..max_order`` plus derivatives.

    Index with :meth:`j`, :meth:`y`, :meth:`jp`, :meth:`yp` for signed orders.
    """

    max_order: int
    argument: float
    values_j: np.ndarray
    values_y: np.ndarray
    deriv_j: np.ndarray
    deriv_y: np.ndarray

    @staticmethod
    def _signed(arr: np.ndarray, n):
        n = np.asarray(n)
        sign = np.where((n < 0) & (np.abs(n) % 2 == 1), -1.0, 1.0)
        return sign * arr[np.abs(n)]

    def j(self, n):
        return self._signed(self.values_j, n)

    def y(self, n):
        return self._signed(self.values_y, n)

    def jp(self, n):
        return self._signed(self.deriv_j, n)

    def yp(self, n):
        return self._signed(self.deriv_y, n)

    def h(self, n):
        """Hankel function of the first kind ``H_n = J_n + i Y_n``."""
        return self.j(n) + 1j * self.y(n)

    def hp(self, n):
        return self.jp(n) + 1j * self.yp(n)


def _check_argument(z: float) -> float:
    z = float(z)
    if not np.isfinite(z) or z <= 0.0 or z > MAX_ARGUMENT:
        raise SpecialFunctionDomainError(
            f"cylinder function argument must lie in (0, {MAX_ARGUMENT:g}], got {z!r}"
        )
    return z


def _recurrence_derivative(f: np.ndarray) -> np.ndarray:
    """``f_n' = (f_{n-1} - f_{n+1}) / 2`` with ``f_{-1} = -f_1`` for an order table ``0..N+1``."""
    d = np.empty(len(f) - 1)
    d[0] = -f[1]
    d[1:] = 0.5 * (f[:-2] - f[2:])
    return d


def bessel_jy(max_order: int, z: float) -> CylinderFunctionTable:
    """Tabulate ``J_n(z)``, ``Y_n(z)`` and their derivatives for ``0 <= n <= max_order``.

    Raises
    ------
    SpecialFunctionDomainError
        For ``z`` outside ``(0, 1e4]`` or an order outside ``[0, 128]``.
    SpecialFunctionRangeError
        If ``Y_n(z)`` overflows (large order, tiny argument).
    """
    if not (0 <= int(max_order) <= MAX_ORDER) or int(max_order) != max_order:
        raise SpecialFunctionDomainError(f"max_order must be an integer in [0, {MAX_ORDER}]")
    z = _check_argument(z)
    n = np.arange(int(max_order) + 2)
    jv = sp.jv(n, z)
    with np.errstate(over="ignore"):
        yv = sp.yv(n, z)
    if not np.all(np.isfinite(yv[:-1])):
        raise SpecialFunctionRangeError(f"Y_n({z:g}) overflows for n <= {max_order}")
    # the helper order N+1 only feeds the top derivative; fall back to Y_N' = Y_{N-1} - (N/z) Y_N
    if not np.isfinite(yv[-1]):
        yv[-1] = 2 * n[-2] / z * yv[-2] - (yv[-3] if len(n) > 2 else -yv[1])
    dj = _recurrence_derivative(jv)
    dy = _recurrence_derivative(yv)
    if not np.all(np.isfinite(dy)):
        raise SpecialFunctionRangeError(f"Y_n'({z:g}) overflows for n <= {max_order}")
    return CylinderFunctionTable(int(max_order), z, jv[:-1], yv[:-1], dj, dy)


def hankel1(n, z):
    """``H_n^{(1)}(z) = J_n(z) + i Y_n(z)`` for integer ``n`` and real ``z > 0``.

    Accepts arrays (broadcast).  The imaginary part is ``Y_n`` exactly.
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr <= 0) or np.any(z_arr > MAX_ARGUMENT):
        raise SpecialFunctionDomainError("hankel1 argument must lie in (0, 1e4]")
    with np.errstate(over="ignore"):
        yv = sp.yv(n, z_arr)
    if np.any(~np.isfinite(yv)):
        raise SpecialFunctionRangeError("hankel1 overflows")
    out = sp.jv(n, z_arr) + 1j * yv
    return out[()] if np.ndim(out) == 0 else out


def modified_bessel_ik(max_order: int, z: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(I_n, K_n, I_n', K_n')`` for ``n = 0..max_order`` at real ``z > 0``.

    Used for the Yukawa (imaginary wavenumber) kernel that appears when the
    single layer is differentiated in ``k**2`` at ``k = 0``.
    """
    z = _check_argument(z)
    n = np.arange(int(max_order) + 2)
    iv = sp.iv(n, z)
    kv = sp.kv(n, z)
    if not np.all(np.isfinite(kv)):
        raise SpecialFunctionRangeError(f"K_n({z:g}) overflows")
    ip = np.empty(len(n) - 1)
    kp = np.empty(len(n) - 1)
    ip[0] = iv[1]
    kp[0] = -kv[1]
    ip[1:] = 0.5 * (iv[:-2] + iv[2:])
    kp[1:] = -0.5 * (kv[:-2] + kv[2:])
    return iv[:-1], kv[:-1], ip, kp


_AUX_KINDS = ("expn", "exp1", "erfc", "erfcx")


def ewald_aux(kind: str, argument, order: int = 1):
    """Auxiliary transcendental functions of the Ewald split.

    Parameters
    ----------
    kind : {"expn", "exp1", "erfc", "erfcx"}
        ``expn`` is the generalized exponential integral ``E_order(x)`` for
        ``x > 0`` (``order = 0`` gives ``exp(-x)/x``); ``exp1`` is ``E_1``;
        ``erfc`` and the scaled ``erfcx`` accept any real argument.
    argument : float or array
    order : int
        Order of ``E_n`` (``kind="expn"`` only).
    """
    x = np.asarray(argument, dtype=float)
    if kind in ("expn", "exp1"):
        if np.any(~np.isfinite(x)) or np.any(x <= 0):
            raise SpecialFunctionDomainError("exponential integrals need a positive argument")
        if kind == "exp1":
            out = sp.exp1(x)
        elif order == 0:
            out = np.exp(-x) / x
        elif order > 0 and int(order) == order:
            out = sp.expn(int(order), x)
        else:
            raise SpecialFunctionDomainError(f"E_n order must be a non-negative integer, got {order!r}")
    elif kind == "erfc":
        out = sp.erfc(x)
    elif kind == "erfcx":
        out = sp.erfcx(x)
    else:
        raise SpecialFunctionDomainError(f"unknown auxiliary kind {kind!r}; expected one of {_AUX_KINDS}")
    return out[()] if np.ndim(out) == 0 else out
