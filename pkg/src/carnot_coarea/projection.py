"""Projections along horizontal flows and the Fubini-type decomposition.

Every ``x`` factors uniquely as ``x = p . exp(x_j X_j)`` with ``p`` in the
vertical hyperplane ``Pi_j = {x_j = 0}``.  Hyperplane points are stored with
the j-th coordinate deleted; :func:`embed` puts the zero back.
Horizontal indices ``j`` are 1-based in the public API, as in the CLI.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .group import Point, as_group
from .metric import Estimate, QuadratureConfig, lebesgue_box_integral, midpoint_nodes


def _check_j(group, j):
    if not 1 <= int(j) <= group.n1:
        raise ValueError(f"horizontal index j={j} outside 1..{group.n1}")
    return int(j) - 1


@dataclass(frozen=True, eq=False)
class HyperplanePoint:
    j: int
    coords: np.ndarray
    schema: object

    def __post_init__(self):
        g = as_group(self.schema)
        _check_j(g, self.j)
        c = np.array(self.coords, dtype=float)
        if c.shape != (g.N - 1,):
            raise ValueError(f"hyperplane point needs {g.N - 1} coordinates")
        object.__setattr__(self, "coords", c)

    def embed(self):
        return Point(embed(self.schema, self.coords, self.j), self.schema)


def embed(group, p, j):
    """Insert a zero j-th coordinate: ``(..., N-1) -> (..., N)``."""
    group = as_group(group)
    jj = _check_j(group, j)
    p = np.asarray(p, dtype=float)
    return np.insert(p, jj, 0.0, axis=-1)


def project_array(group, x, j):
    """Array form of the projection: ``x . exp(-x_j X_j)`` with x_j deleted."""
    group = as_group(group)
    jj = _check_j(group, j)
    x = np.asarray(x, dtype=float)
    p = group.mul(x, group.exp_horizontal(jj, -x[..., jj]))
    return np.delete(p, jj, axis=-1)


def proj_P(x, j):
    return HyperplanePoint(j, project_array(x.schema, x.coords, j), x.schema)


def proj_scalar(x, j):
    jj = _check_j(as_group(x.schema), j)
    return float(x.coords[jj])


def recompose(group, p, t, j):
    """``p . exp(t X_j)`` for hyperplane coordinates ``p``."""
    group = as_group(group)
    jj = _check_j(group, j)
    return group.mul(embed(group, p, j), group.exp_horizontal(jj, t))


def conjugation_identity_defect(x, y, j):
    """Max coordinate gap between Pr(x.y) and Pr(x) exp(x_j X_j) Pr(y) exp(-x_j X_j).

    Coordinates rather than the quasi-norm: the quasi-norm takes roots of
    higher-stratum parts and would turn 1e-16 roundoff into 1e-8.
    """
    g = as_group(x.schema)
    jj = _check_j(g, j)
    lhs = embed(g, project_array(g, g.mul(x.coords, y.coords), j), j)
    e = g.exp_horizontal(jj, x.coords[jj])
    rhs = g.mul(g.mul(g.mul(embed(g, project_array(g, x.coords, j), j), e),
                      embed(g, project_array(g, y.coords, j), j)), -e)
    return float(np.max(np.abs(lhs - rhs)))


def decomposition_jacobian(group, p, t, j, h=1e-6):
    """Central-difference Jacobian determinant of ``(p, t) -> p . exp(t X_j)``.

    ``t`` takes the j-th slot, so the variables are ordered like the
    coordinates they replace and the determinant is +1, not just +-1.
    """
    group = as_group(group)
    jj = _check_j(group, j)
    p = np.asarray(p, dtype=float)
    n = group.N
    cols = []
    for k in range(n):
        dp = np.zeros(n - 1)
        dt = 0.0
        if k < n - 1:
            dp[k] = h
        else:
            dt = h
        cols.append((recompose(group, p + dp, t + dt, j) - recompose(group, p - dp, t - dt, j)) / (2 * h))
    cols.insert(jj, cols.pop())
    return float(np.linalg.det(np.stack(cols, axis=-1)))


class _Iv:
    """Minimal interval arithmetic on numpy arrays (outward rounding omitted; bounds are padded)."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    def __add__(self, o):
        if isinstance(o, _Iv):
            return _Iv(self.lo + o.lo, self.hi + o.hi)
        return _Iv(self.lo + o, self.hi + o)

    def __neg__(self):
        return _Iv(-self.hi, -self.lo)

    def __sub__(self, o):
        return self + (-o)

    def __mul__(self, o):
        if isinstance(o, _Iv):
            c = np.stack([self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
            return _Iv(c.min(axis=0), c.max(axis=0))
        o = float(o)
        return _Iv(np.minimum(self.lo * o, self.hi * o), np.maximum(self.lo * o, self.hi * o))

    __rmul__ = __mul__


def _iv_bracket(group, u, v):
    n = group.N
    out = [_Iv(0.0, 0.0) for _ in range(n)]
    for i, j, k, c in zip(group._bi, group._bj, group._bk, group._bv):
        out[k] = out[k] + (u[i] * v[j]) * c
    return out


def _iv_mul(group, x, y):
    add = lambda a, b: [p + q for p, q in zip(a, b)]  # noqa: E731
    scale = lambda a, s: [p * s for p in a]  # noqa: E731
    z = add(x, y)
    if group.step >= 2:
        xy = _iv_bracket(group, x, y)
        z = add(z, scale(xy, 0.5))
        if group.step >= 3:
            xxy = _iv_bracket(group, x, xy)
            yyx = scale(_iv_bracket(group, y, xy), -1.0)
            z = add(z, scale(add(xxy, yyx), 1 / 12))
            if group.step >= 4:
                z = add(z, scale(_iv_bracket(group, y, _iv_bracket(group, x, xxy)), -1 / 24))
    return z


def projected_box(group, box, j, pad=1e-9):
    """Interval enclosure of ``Pr_j(box)`` in hyperplane coordinates, shape ``(N-1, 2)``.

    The box is split into 4 pieces per axis before evaluation to tighten the
    natural interval extension.
    """
    group = as_group(group)
    jj = _check_j(group, j)
    b = np.asarray(box, dtype=float).reshape(-1, 2)
    k = 4
    edges = [np.linspace(lo, hi, k + 1) for lo, hi in b]
    lo_m = np.meshgrid(*[e[:-1] for e in edges], indexing="ij")
    hi_m = np.meshgrid(*[e[1:] for e in edges], indexing="ij")
    x = [_Iv(lo.ravel(), hi.ravel()) for lo, hi in zip(lo_m, hi_m)]
    e = [_Iv(0.0, 0.0) for _ in range(group.N)]
    e[jj] = -x[jj]
    p = _iv_mul(group, x, e)
    out = np.array([[np.min(p[i].lo), np.max(p[i].hi)] for i in range(group.N) if i != jj])
    width = np.maximum(out[:, 1] - out[:, 0], 1.0)
    out[:, 0] -= pad * width
    out[:, 1] += pad * width
    return out


def in_box(x, box):
    b = np.asarray(box, dtype=float).reshape(-1, 2)
    return np.all((x >= b[:, 0]) & (x <= b[:, 1]), axis=-1)


def fubini_check(f, box, j, group, quadrature=QuadratureConfig(kind="grid", n=64)):
    """Compare the iterated integral over ``Pi_j x R`` with the plain integral over ``box``.

    ``f`` takes an ``(M, N)`` array of group coordinates.  On the
    ``(p, t)`` side ``f`` is extended by zero outside ``box``.  Returns
    ``(lhs, rhs, relative_gap)`` with ``lhs``/``rhs`` as :class:`Estimate`.
    """
    group = as_group(group)
    jj = _check_j(group, j)
    b = np.asarray(box, dtype=float).reshape(-1, 2)
    if len(b) != group.N:
        raise ValueError("box dimension does not match the group")
    pbox = projected_box(group, b, j)
    pt_box = np.concatenate([pbox, b[jj:jj + 1]])

    def pulled(pt):
        x = recompose(group, pt[:, :-1], pt[:, -1], j)
        return np.where(in_box(x, b), f(x), 0.0)

    rhs = lebesgue_box_integral(f, b, quadrature)
    lhs = lebesgue_box_integral(pulled, pt_box, quadrature)
    gap = abs(lhs.value - rhs.value) / max(abs(rhs.value), 1e-300)
    return lhs, rhs, gap


def fubini_integrand(name, box):
    """Named test integrands: ``one``, ``x2sq`` (x_2^2) and ``half``
    (indicator of the lower half of the box in the first coordinate)."""
    b = np.asarray(box, dtype=float).reshape(-1, 2)
    mid = 0.5 * (b[0, 0] + b[0, 1])
    table = {
        "one": lambda x: np.ones(x.shape[:-1]),
        "x2sq": lambda x: x[..., 1] ** 2,
        "half": lambda x: (x[..., 0] < mid).astype(float),
    }
    if name not in table:
        raise ValueError(f"unknown integrand {name!r}; known: {', '.join(table)}")
    return table[name]


FUBINI_INTEGRANDS = ("one", "x2sq", "half")


__all__ = [
    "fubini_integrand", "FUBINI_INTEGRANDS",
    "HyperplanePoint", "embed", "project_array", "proj_P", "proj_scalar", "recompose",
    "conjugation_identity_defect", "decomposition_jacobian", "projected_box", "fubini_check",
    "in_box", "Estimate", "midpoint_nodes",
]
