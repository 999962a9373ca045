"""Honeycomb lattice geometry, reciprocal lattice and Brillouin-zone paths.

Bloch vectors are plain ``numpy`` arrays of shape ``(2,)``.  The direct lattice
is generated by ``l1 = a(sqrt(3)/2, 1/2)`` and ``l2 = a(sqrt(3)/2, -1/2)``; the
two bubbles of the dimer sit at ``x1 = (l1 + l2)/3`` and ``x2 = 2(l1 + l2)/3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError

SQRT3 = np.sqrt(3.0)
DEFAULT_LATTICE_CONSTANT = 2.0 * SQRT3

# rotation by -2*pi/3 about the origin
_ROT = np.array(
    [[np.cos(-2 * np.pi / 3), -np.sin(-2 * np.pi / 3)],
     [np.sin(-2 * np.pi / 3), np.cos(-2 * np.pi / 3)]]
)


@dataclass(frozen=True)
class LatticeGeometry:
    """Direct and reciprocal honeycomb lattice data for lattice constant ``a``."""

    a: float
    l1: np.ndarray
    l2: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    cell_area: float
    x1: np.ndarray
    x2: np.ndarray
    gamma_point: np.ndarray = field(repr=False)
    k_point: np.ndarray = field(repr=False)
    m_point: np.ndarray = field(repr=False)

    @property
    def centers(self) -> np.ndarray:
        """Bubble centres stacked as a ``(2, 2)`` array (row ``j`` = bubble ``j+1``)."""
        return np.stack([self.x1, self.x2])

    @property
    def direct_basis(self) -> np.ndarray:
        """Columns are ``l1`` and ``l2``."""
        return np.column_stack([self.l1, self.l2])

    @property
    def dual_basis(self) -> np.ndarray:
        """Columns are ``alpha1`` and ``alpha2``."""
        return np.column_stack([self.alpha1, self.alpha2])

    @property
    def default_gamma_offset(self) -> float:
        return 1e-2 * float(np.linalg.norm(self.alpha1))

    @property
    def nearest_neighbor_distance(self) -> float:
        """Smallest distance between a bubble centre and any translate of the other."""
        d = self.x2 - self.x1
        best = np.inf
        for i in range(-2, 3):
            for j in range(-2, 3):
                best = min(best, np.linalg.norm(d - i * self.l1 - j * self.l2))
        return float(best)

    @property
    def min_lattice_distance(self) -> float:
        """Length of the shortest non-zero direct lattice vector."""
        best = np.inf
        for i in range(-2, 3):
            for j in range(-2, 3):
                if i or j:
                    best = min(best, np.linalg.norm(i * self.l1 + j * self.l2))
        return float(best)

    def dual_coordinates(self, v) -> np.ndarray:
        """Coordinates ``(s, t)`` with ``v = s*alpha1 + t*alpha2``."""
        return np.linalg.solve(self.dual_basis, np.asarray(v, dtype=float))

    def direct_coordinates(self, x) -> np.ndarray:
        """Coordinates of (an array of) points in the ``l1, l2`` basis."""
        x = np.asarray(x, dtype=float)
        # alpha_i . l_j = 2 pi delta_ij
        return x @ self.dual_basis / (2 * np.pi)

    def reduce_to_zone(self, v) -> np.ndarray:
        """Representative of ``v`` in the parallelogram ``{s alpha1 + t alpha2 : 0 <= s, t < 1}``."""
        st = self.dual_coordinates(v)
        st = st - np.floor(st + 1e-12)
        return self.dual_basis @ st

    def same_modulo_dual(self, u, v, tol: float = 1e-10) -> bool:
        """True if ``u - v`` is a reciprocal lattice vector (within ``tol`` in dual coordinates)."""
        st = self.dual_coordinates(np.asarray(u, float) - np.asarray(v, float))
        return bool(np.all(np.abs(st - np.round(st)) <= tol))


def build_geometry(a: float = DEFAULT_LATTICE_CONSTANT) -> LatticeGeometry:
    """Build the honeycomb geometry for lattice constant ``a``.

    >>> g = build_geometry(2 * np.sqrt(3))
    >>> np.round(g.l1, 12).tolist()
    [3.0, 1.732050807569]
    """
    if not np.isfinite(a) or a <= 0:
        raise ConfigError(f"lattice constant must be positive, got {a!r}")
    a = float(a)
    l1 = a * np.array([SQRT3 / 2, 0.5])
    l2 = a * np.array([SQRT3 / 2, -0.5])
    alpha1 = (2 * np.pi / a) * np.array([1 / SQRT3, 1.0])
    alpha2 = (2 * np.pi / a) * np.array([1 / SQRT3, -1.0])
    area = abs(l1[0] * l2[1] - l1[1] * l2[0])
    return LatticeGeometry(
        a=a,
        l1=l1,
        l2=l2,
        alpha1=alpha1,
        alpha2=alpha2,
        cell_area=float(area),
        x1=(l1 + l2) / 3,
        x2=2 * (l1 + l2) / 3,
        gamma_point=np.zeros(2),
        k_point=(2 * alpha1 + alpha2) / 3,
        m_point=alpha1 / 2,
    )


def symmetry_points(g: LatticeGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(Gamma, K, M)``."""
    return g.gamma_point.copy(), g.k_point.copy(), g.m_point.copy()


def rotate_dual(g: LatticeGeometry, v) -> np.ndarray:
    """Rotate a Bloch vector by ``-2 pi / 3`` about the origin."""
    return _ROT @ np.asarray(v, dtype=float)


def named_point(g: LatticeGeometry, name: str) -> np.ndarray:
    table = {"G": g.gamma_point, "GAMMA": g.gamma_point, "K": g.k_point, "M": g.m_point}
    try:
        return table[name.strip().upper()].copy()
    except KeyError:
        raise ConfigError(
            f"unknown symmetry point {name!r}; valid symbols are G, K, M"
        ) from None


@dataclass(frozen=True)
class KPath:
    """Sampled Brillouin-zone path.

    ``points[i]`` is the Bloch vector of sample ``i`` and ``arclength[i]`` its
    cumulative distance along the unmodified node polyline.
    """

    points: np.ndarray
    arclength: np.ndarray
    node_arclength: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]


def _circle_hits(p0, p1, radius):
    """Parameters ``t`` in [0, 1] where the segment ``p0 + t(p1 - p0)`` has norm ``radius``."""
    d = p1 - p0
    aa = d @ d
    if aa == 0.0:
        return []
    bb = 2 * p0 @ d
    cc = p0 @ p0 - radius**2
    disc = bb * bb - 4 * aa * cc
    if disc < 0:
        return []
    r = np.sqrt(disc)
    return [t for t in ((-bb - r) / (2 * aa), (-bb + r) / (2 * aa)) if -1e-15 <= t <= 1 + 1e-15]


def k_path(
    g: LatticeGeometry,
    nodes: Sequence,
    points_per_segment: int,
    gamma_offset: float | None = None,
) -> KPath:
    """Piecewise-linear sampling of the polyline through ``nodes``.

    Each segment gets ``points_per_segment`` samples including both ends; shared
    nodes appear once.  Samples closer than ``gamma_offset`` to the origin are
    moved to the nearest point of the path on the circle ``|alpha| = gamma_offset``.
    """
    if len(nodes) == 0:
        raise ConfigError("k_path needs at least one node")
    if points_per_segment < 2:
        raise ConfigError("points_per_segment must be >= 2")
    if gamma_offset is None:
        gamma_offset = g.default_gamma_offset
    if gamma_offset <= 0:
        raise ConfigError("gamma_offset must be positive")
    nodes = [np.asarray(n, dtype=float) for n in nodes]

    seg_len = [float(np.linalg.norm(b - a)) for a, b in zip(nodes[:-1], nodes[1:])]
    node_s = np.concatenate([[0.0], np.cumsum(seg_len)])

    pts = [nodes[0]]
    arc = [0.0]
    for k, (a, b) in enumerate(zip(nodes[:-1], nodes[1:])):
        for t in np.linspace(0.0, 1.0, points_per_segment)[1:]:
            pts.append(a + t * (b - a))
            arc.append(node_s[k] + t * seg_len[k])
    if len(nodes) == 1:
        pts = [nodes[0]] * points_per_segment
        arc = [0.0] * points_per_segment

    # candidate replacement points on |alpha| = gamma_offset, with their arclength
    hits = []
    for k, (a, b) in enumerate(zip(nodes[:-1], nodes[1:])):
        for t in _circle_hits(a, b, gamma_offset):
            hits.append((a + t * (b - a), node_s[k] + t * seg_len[k]))

    out_p, out_s = [], []
    for p, s in zip(pts, arc):
        if np.linalg.norm(p) < gamma_offset:
            if not hits:
                raise ConfigError("path stays inside the Gamma exclusion disk")
            # nearest in alpha-space, ties broken by the smaller arclength
            best = min(hits, key=lambda h: (round(float(np.linalg.norm(h[0] - p)), 12), h[1]))
            p = best[0]
            s = best[1]
        out_p.append(p)
        out_s.append(s)
    return KPath(np.array(out_p), np.array(out_s), node_s)
