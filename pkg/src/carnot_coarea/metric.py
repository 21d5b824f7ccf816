"""Quasi-norm, horizontal curve length, box quadrature and the covering estimator.

The Carnot-Caratheodory distance is never computed.  Its stand-in is the
homogeneous quasi-norm ``max_k |x^(k)|^(1/k)`` where ``x^(k)`` is the block of
coordinates in stratum ``k``; it is exactly homogeneous under dilations and
agrees with horizontal length to first order along horizontal curves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .group import CarnotGroup, Point, as_group

BETA_1 = 2.0
TAU_H = 1e-6
_CHUNK = 1 << 16


@dataclass(frozen=True)
class QuasiNormConfig:
    style: str = "max"
    power: float = 4.0

    def __post_init__(self):
        if self.style not in ("max", "power"):
            raise ValueError(f"unknown quasi-norm style {self.style!r}")


@dataclass(frozen=True)
class HausdorffConfig:
    eps: float
    beta_1: float = BETA_1

    def __post_init__(self):
        if self.beta_1 != BETA_1:
            raise ValueError("beta_1 is fixed to 2")
        if not self.eps > 0:
            raise ValueError("covering radius must be positive")


class Estimate(NamedTuple):
    value: float
    err: float


def stratum_norms(group, x):
    """Euclidean norm of each stratum block; shape ``(..., m)``."""
    x = np.asarray(x, dtype=float)
    return np.stack([np.linalg.norm(x[..., sl], axis=-1)
                     for sl in group.schema.stratum_slices()], axis=-1)


def quasi_norm_array(group, x, config=QuasiNormConfig()):
    group = as_group(group)
    blocks = stratum_norms(group, x)
    k = np.arange(1, blocks.shape[-1] + 1, dtype=float)
    if config.style == "max":
        return np.max(blocks ** (1.0 / k), axis=-1)
    q = config.power
    return np.sum(blocks ** (q / k), axis=-1) ** (1.0 / q)


def quasi_norm(x, config=QuasiNormConfig()):
    """Homogeneous quasi-norm of a :class:`Point` (or ``(group, array)`` pair)."""
    if isinstance(x, Point):
        return float(quasi_norm_array(x.schema, x.coords, config))
    group, coords = x
    return quasi_norm_array(group, coords, config)


def quasi_distance(group, x, y, config=QuasiNormConfig()):
    """Left-invariant quasi-distance ``|x^-1 y|``; broadcasts."""
    group = as_group(group)
    return quasi_norm_array(group, group.mul(group.inv(x), y), config)


@dataclass(frozen=True, eq=False)
class PolyCurve:
    """Sampled curve.

    ``tangents`` (one per segment, algebra coefficients) and ``dt`` are
    optional; without them the segment increments ``x_k^-1 x_{k+1}`` serve as
    tangents with unit time step.
    """

    group: CarnotGroup
    points: np.ndarray
    tangents: np.ndarray | None = None
    dt: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "group", as_group(self.group))
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[-1] != self.group.N:
            raise ValueError("point dimension does not match the group")
        if len(pts) > 1 and np.any(np.all(pts[1:] == pts[:-1], axis=-1)):
            raise ValueError("consecutive curve points must be distinct")
        object.__setattr__(self, "points", pts)
        if self.tangents is not None:
            t = np.asarray(self.tangents, dtype=float).reshape(-1, self.group.N)
            if len(t) != max(len(pts) - 1, 0):
                raise ValueError("need one tangent per segment")
            object.__setattr__(self, "tangents", t)
            dt = np.ones(len(t)) if self.dt is None else np.asarray(self.dt, dtype=float)
            object.__setattr__(self, "dt", dt)

    def __len__(self):
        return len(self.points)

    def increments(self):
        g = self.group
        return g.mul(g.inv(self.points[:-1]), self.points[1:])

    def concat(self, other):
        if not np.array_equal(self.points[-1], other.points[0]):
            raise ValueError("curves do not share an endpoint")
        pts = np.concatenate([self.points, other.points[1:]])
        if self.tangents is not None and other.tangents is not None:
            return PolyCurve(self.group, pts, np.concatenate([self.tangents, other.tangents]),
                             np.concatenate([self.dt, other.dt]))
        return PolyCurve(self.group, pts)

    def densified(self, spacing):
        """Points with extra linear interpolants so no chord exceeds ``spacing``."""
        pts = self.points
        if len(pts) < 2:
            return pts
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
        out = [pts[:1]]
        for a, b, s in zip(pts[:-1], pts[1:], seg):
            k = max(int(math.ceil(s / spacing)), 1)
            t = (np.arange(1, k + 1) / k)[:, None]
            out.append(a + t * (b - a))
        return np.concatenate(out)


class HorizontalityError(ValueError):
    pass


def horizontal_length(curve, tau_h=TAU_H):
    """Sum of horizontal tangent norms times time steps.

    Raises :class:`HorizontalityError` if a tangent has a vertical part larger
    than ``tau_h`` relative to its horizontal part.  For chord-derived
    tangents the tolerance is ``max(tau_h, chord)`` since chords of curved
    horizontal curves pick up vertical parts of second order.
    """
    if len(curve) < 2:
        return 0.0
    g = curve.group
    if curve.tangents is not None:
        tan, dt, tol = curve.tangents, curve.dt, tau_h
    else:
        tan = curve.increments()
        dt = np.ones(len(tan))
        tol = None
    h = np.linalg.norm(tan[:, : g.n1], axis=-1)
    rest = np.linalg.norm(tan[:, g.n1:], axis=-1)
    if tol is None:
        tol = np.maximum(tau_h, h)
    bad = rest > tol * h
    if np.any(bad):
        k = int(np.argmax(bad))
        raise HorizontalityError(
            f"segment {k} is not horizontal: vertical {rest[k]:.3g} vs horizontal {h[k]:.3g}")
    return math.fsum(h * dt)


def _pairwise_dist(group, centre, pts, config):
    return quasi_norm_array(group, group.mul(group.inv(centre), pts), config)


def _one_centre_radius(group, pts, config):
    """Smallest max-distance from one of ``pts`` to all of them."""
    if len(pts) < 2:
        return 0.0
    d = quasi_distance(group, pts[:, None, :], pts[None, :, :], config)
    return float(np.min(np.max(d, axis=1)))


def hausdorff1_eps(points, eps, group=None, config=QuasiNormConfig()):
    """Greedy estimate of the 1-dimensional spherical epsilon-measure.

    ``points`` is a dense sample of the set (array ``(M, N)`` or list of
    :class:`Point`).  Balls have radius at most ``eps`` and are centred at
    sample points; each ball is shrunk to the largest distance it actually
    needs and moved to the sample point minimising that distance, then
    widened by half the gap to the nearest uncovered sample when that gap is
    below ``eps`` (the sampled set is assumed to continue across it).
    Returns ``beta_1 * sum r_k``.
    """
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], Point):
        group = points[0].schema
        points = np.stack([p.coords for p in points])
    hc = HausdorffConfig(eps)
    if points is None or len(points) == 0:
        return 0.0
    group = as_group(group)
    pts = np.asarray(points, dtype=float)
    M = len(pts)
    covered = np.zeros(M, dtype=bool)
    radii = []
    # start from an extreme point of the cloud
    a = int(np.argmax(_pairwise_dist(group, pts[0], pts, config)))
    while True:
        d_a = _pairwise_dist(group, pts[a], pts, config)
        cand = np.flatnonzero(~covered & (d_a <= hc.eps))
        c = int(cand[np.argmax(d_a[cand])])
        d_c = _pairwise_dist(group, pts[c], pts, config)
        ball = ~covered & (d_c <= hc.eps)
        r = _one_centre_radius(group, pts[ball], config)
        covered |= ball
        left = np.flatnonzero(~covered)
        if left.size == 0:
            radii.append(r)
            break
        # the set continues between samples: reach half way to the next one
        gap = float(np.min(quasi_distance(group, pts[ball][:, None, :], pts[left][None, :, :], config)))
        radii.append(r + 0.5 * gap if gap <= hc.eps else r)
        a = int(left[np.argmin(d_c[left])])
    return hc.beta_1 * math.fsum(radii)


@dataclass(frozen=True)
class QuadratureConfig:
    """``kind`` is ``"grid"`` (midpoint, ``n`` nodes per axis) or ``"mc"`` (``n`` samples)."""

    kind: str = "grid"
    n: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("grid", "mc"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("quadrature resolution must be positive")

    @classmethod
    def parse(cls, text, seed=0):
        """Parse ``grid:64`` or ``mc:100000``."""
        kind, _, n = str(text).partition(":")
        return cls(kind=kind.strip(), n=int(n), seed=seed)

    def as_dict(self):
        return {"kind": self.kind, "n": self.n, "seed": self.seed}


def _box(box):
    b = np.asarray(box, dtype=float).reshape(-1, 2)
    if np.any(~(b[:, 1] > b[:, 0])):
        raise ValueError(f"degenerate box {b.tolist()}")
    return b


def midpoint_nodes(box, n):
    """Midpoint grid nodes (flattened, C order) and the cell volume."""
    b = _box(box)
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in b]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    return nodes, float(np.prod((b[:, 1] - b[:, 0]) / n))


def _sum_values(f, nodes):
    partial = []
    for start in range(0, len(nodes), _CHUNK):
        v = np.asarray(f(nodes[start:start + _CHUNK]), dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("integrand returned non-finite values")
        partial.append(float(np.sum(v)))
    return math.fsum(partial)


def midpoint_sum(f, box, n):
    nodes, cell = midpoint_nodes(box, n)
    return _sum_values(f, nodes) * cell


def lebesgue_box_integral(f, box, config=QuadratureConfig()):
    """Integrate a vectorised ``f((M, N) array) -> (M,)`` over a coordinate box.

    Grid: midpoint rule with error proxy ``|I_n - I_{n/2}|``.
    MC: sample mean with its standard error.
    """
    b = _box(box)
    vol = float(np.prod(b[:, 1] - b[:, 0]))
    if config.kind == "grid":
        fine = midpoint_sum(f, b, config.n)
        coarse = midpoint_sum(f, b, max(config.n // 2, 1)) if config.n > 1 else fine
        return Estimate(fine, abs(fine - coarse))
    rng = np.random.default_rng(config.seed)
    x = b[:, 0] + rng.random((config.n, len(b))) * (b[:, 1] - b[:, 0])
    vals = np.concatenate([np.asarray(f(x[s:s + _CHUNK]), dtype=float)
                           for s in range(0, config.n, _CHUNK)])
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand returned non-finite values")
    mean = math.fsum(vals) / config.n
    sd = float(np.std(vals, ddof=1)) if config.n > 1 else 0.0
    return Estimate(vol * mean, vol * sd / math.sqrt(config.n))
