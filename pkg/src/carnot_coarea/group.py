"""Group law, inverse, dilations and brackets in exponential coordinates.

Two layers live here.  :class:`CarnotGroup` works on plain arrays of shape
``(..., N)`` and is what the numerical code uses.  :class:`Point` and
:class:`AlgebraVector` carry a schema reference and are checked for
schema mismatch; the module-level functions accept either.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .schema import GroupSchema, resolve_schema

# ad/(1 - exp(-ad)) expansion: 1 + ad/2 + ad^2/12 + 0*ad^3 - ad^4/720
_LEFT_FIELD_COEFFS = (1.0, 0.5, 1.0 / 12.0, 0.0)


class SchemaMismatch(ValueError):
    pass


class CarnotGroup:
    """Array-level operations for one schema.  Instances are immutable."""

    def __init__(self, schema):
        self.schema = resolve_schema(schema)
        s = self.schema
        self.N = s.N
        self.n1 = s.n1
        self.step = s.step
        self.sigma = s.sigma
        self._C = s.C
        # pairs with nonzero constants, for a sparse bracket
        idx = np.nonzero(self._C)
        self._bi, self._bj, self._bk = idx
        self._bv = self._C[idx]

    def __repr__(self):
        return f"CarnotGroup({self.schema.name})"

    def bracket(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        shape = np.broadcast_shapes(u.shape, v.shape)
        out = np.zeros(shape)
        if self._bv.size == 0:
            return out
        terms = u[..., self._bi] * v[..., self._bj] * self._bv
        # fixed accumulation order per output index
        for k in np.unique(self._bk):
            sel = self._bk == k
            out[..., k] = terms[..., sel].sum(axis=-1)
        return out

    def mul(self, x, y):
        """BCH product truncated at the step; exact for nilpotent algebras."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = x + y
        if self.step >= 2:
            xy = self.bracket(x, y)
            z = z + 0.5 * xy
            if self.step >= 3:
                xxy = self.bracket(x, xy)
                yyx = -self.bracket(y, xy)
                z = z + (xxy + yyx) / 12.0
                if self.step >= 4:
                    z = z - self.bracket(y, self.bracket(x, xxy)) / 24.0
        return z

    def inv(self, x):
        return -np.asarray(x, dtype=float)

    def dilate(self, lam, x):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0):
            raise ValueError("dilation factor must be positive")
        return np.asarray(x, dtype=float) * np.power(lam[..., None], self.sigma)

    def exp_horizontal(self, j, t):
        """Coordinates of exp(t X_j) for 0-based horizontal index ``j``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.N,))
        out[..., j] = t
        return out

    def left_field(self, x, v):
        """Value at ``x`` of the left-invariant field with algebra coefficients ``v``.

        d/dt (x . exp(tV)) at t = 0, i.e. sum_k b_k ad_x^k V.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        out = v + 0.0 * x
        term = v
        for k in range(1, self.step):
            term = self.bracket(x, term)
            c = _LEFT_FIELD_COEFFS[k]
            if c:
                out = out + c * term
        return out

    def horizontal(self, x):
        return np.asarray(x)[..., : self.n1]

    def is_horizontal(self, v, tol=0.0):
        v = np.asarray(v, dtype=float)
        h = np.linalg.norm(v[..., : self.n1], axis=-1)
        rest = np.linalg.norm(v[..., self.n1:], axis=-1)
        return rest <= tol * np.maximum(h, 1.0) if tol else rest == 0

    def random_points(self, rng, size, low=-2.0, high=2.0):
        return rng.uniform(low, high, size=(size, self.N))


@lru_cache(maxsize=None)
def _group_for(schema):
    return CarnotGroup(schema)


def as_group(schema):
    if isinstance(schema, CarnotGroup):
        return schema
    return _group_for(resolve_schema(schema))


@dataclass(frozen=True, eq=False)
class Point:
    """Group element in exponential coordinates of the first kind."""

    coords: np.ndarray
    schema: GroupSchema

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        c.setflags(write=False)
        if c.shape != (self.schema.N,):
            raise ValueError(f"expected {self.schema.N} coordinates, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "coords", c)

    @classmethod
    def origin(cls, schema):
        return cls(np.zeros(schema.N), schema)

    def __mul__(self, other):
        return group_mul(self, other)

    def __eq__(self, other):
        return (isinstance(other, Point) and other.schema.signature == self.schema.signature
                and np.array_equal(self.coords, other.coords))

    def __repr__(self):
        return f"Point({self.coords.tolist()}, {self.schema.name})"


@dataclass(frozen=True, eq=False)
class AlgebraVector:
    """Lie algebra element in the graded basis."""

    coeffs: np.ndarray
    schema: GroupSchema

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        if c.shape != (self.schema.N,):
            raise ValueError(f"expected {self.schema.N} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def horizontal(self):
        return not np.any(self.coeffs[self.schema.n1:])

    def __repr__(self):
        return f"AlgebraVector({self.coeffs.tolist()}, {self.schema.name})"


def _check(a, b):
    if a.schema is not b.schema and a.schema.signature != b.schema.signature:
        raise SchemaMismatch(f"schema mismatch: {a.schema.name} vs {b.schema.name}")


def group_mul(x, y):
    _check(x, y)
    return Point(as_group(x.schema).mul(x.coords, y.coords), x.schema)


def inverse(x):
    return Point(-x.coords, x.schema)


def dilate(lam, x):
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    return Point(as_group(x.schema).dilate(lam, x.coords), x.schema)


def bracket(u, v):
    _check(u, v)
    return AlgebraVector(as_group(u.schema).bracket(u.coeffs, v.coeffs), u.schema)


def selftest(schema, samples=10_000, seed=0, lam=2.0, fd_step=2.0 ** -10, dyadic=True):
    """Invariant defects on random points of ``[-2, 2]^N``.

    Keys: ``associativity`` (max |(xy)z - x(yz)|), ``inverse``
    (max |x x^-1|), ``dilation`` (max |d(xy) - d(x)d(y)|, relative to the
    largest coordinate), ``jacobi``, ``antisymmetry`` and ``left_field``
    (left-invariant field against a Richardson central difference of
    ``x exp(tV)``, which is exact for the polynomial group law up to roundoff).

    With ``dyadic`` the points are rounded to multiples of 2^-20; together
    with the power-of-two defaults for ``lam`` and ``fd_step`` this makes
    linear (abelian) laws give defects of exactly 0.
    """
    g = as_group(schema)
    rng = np.random.default_rng(seed)
    q = 2.0 ** 20
    x, y, z = (g.random_points(rng, samples) for _ in range(3))
    if dyadic:
        x, y, z = (np.round(a * q) / q for a in (x, y, z))
    assoc = np.abs(g.mul(g.mul(x, y), z) - g.mul(x, g.mul(y, z)))
    inv = np.abs(g.mul(x, g.inv(x)))
    dxy = g.dilate(lam, g.mul(x, y))
    dil = np.abs(dxy - g.mul(g.dilate(lam, x), g.dilate(lam, y))) / np.maximum(1.0, np.abs(dxy).max())
    jac = np.abs(g.bracket(x, g.bracket(y, z)) + g.bracket(y, g.bracket(z, x))
                 + g.bracket(z, g.bracket(x, y)))
    anti = np.abs(g.bracket(x, y) + g.bracket(y, x))
    m = min(samples, 1000)
    xm, vm = x[:m], y[:m]
    cd = lambda h: (g.mul(xm, h * vm) - g.mul(xm, -h * vm)) / (2 * h)  # noqa: E731
    fd = (4.0 * cd(fd_step / 2) - cd(fd_step)) / 3.0
    lf = np.abs(fd - g.left_field(xm, vm))
    worst = lambda a: float(a.max()) if a.size else 0.0  # noqa: E731
    return {
        "schema": g.schema.name,
        "N": g.N,
        "step": g.step,
        "nu": g.schema.nu,
        "samples": samples,
        "seed": seed,
        "dyadic": bool(dyadic),
        "associativity": worst(assoc),
        "inverse": worst(inv),
        "dilation": worst(dil),
        "jacobi": worst(jac),
        "antisymmetry": worst(anti),
        "left_field": worst(lf),
    }
