"""Carnot group presentations: graded basis, structure constants, bracket table.

A schema is validated on construction.  Any invariant failure raises
:class:`SchemaError` naming the invariant and the offending indices.
Indices are 1-based in files and messages, 0-based internally.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from math import comb

import numpy as np
import yaml

MAX_STEP = 4


class SchemaError(ValueError):
    """A group schema violates one of its invariants."""

    def __init__(self, invariant, message):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


def _frac(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**12)
    return Fraction(str(value).strip())


@dataclass(frozen=True, eq=False)
class GroupSchema:
    """Graded presentation of a Carnot group in exponential coordinates.

    ``structure_constants`` maps ``(i, j, k)`` (0-based) to the rational
    coefficient of ``X_k`` in ``[X_i, X_j]``; both orientations must be given.
    ``bracket_table`` is a list of ``(k, a, b)`` entries asserting
    ``X_k = [X_a, X_b]``; several entries may target the same ``k``.
    """

    degrees: tuple[int, ...]
    structure_constants: dict = field(default_factory=dict)
    bracket_table: tuple = ()
    name: str = "custom"
    strata_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
        sc = {tuple(int(t) for t in key): _frac(v)
              for key, v in dict(self.structure_constants).items() if _frac(v) != 0}
        object.__setattr__(self, "structure_constants", sc)
        object.__setattr__(self, "bracket_table",
                           tuple(tuple(int(t) for t in e) for e in self.bracket_table))
        dims = tuple(self.degrees.count(k) for k in range(1, max(self.degrees, default=0) + 1))
        if self.strata_dims is None:
            object.__setattr__(self, "strata_dims", dims)
        else:
            object.__setattr__(self, "strata_dims", tuple(int(d) for d in self.strata_dims))
            if self.strata_dims != dims:
                raise SchemaError("strata_dims",
                                  f"declared {list(self.strata_dims)} but degrees give {list(dims)}")
        validate(self)

    @property
    def N(self):
        return len(self.degrees)

    @property
    def step(self):
        return max(self.degrees)

    @property
    def n1(self):
        return self.strata_dims[0]

    @property
    def nu(self):
        """Homogeneous dimension."""
        return sum(self.degrees)

    @cached_property
    def signature(self):
        """Structural identity: degrees and exact constants, ignoring the name."""
        return (self.degrees, tuple(sorted(self.structure_constants.items())))

    @cached_property
    def sigma(self):
        return np.asarray(self.degrees, dtype=float)

    @cached_property
    def C(self):
        """Dense structure tensor, ``C[i, j, k]`` = c_ij^k as float."""
        c = np.zeros((self.N, self.N, self.N))
        for (i, j, k), v in self.structure_constants.items():
            c[i, j, k] = float(v)
        return c

    def stratum_slices(self):
        out, start = [], 0
        for d in self.strata_dims:
            out.append(slice(start, start + d))
            start += d
        return out

    def __repr__(self):
        return f"GroupSchema({self.name!r}, N={self.N}, degrees={self.degrees})"

    def to_dict(self):
        return {
            "name": self.name,
            "N": self.N,
            "degrees": list(self.degrees),
            "strata_dims": list(self.strata_dims),
            "structure_constants": [
                [i + 1, j + 1, k + 1, str(v)]
                for (i, j, k), v in sorted(self.structure_constants.items())
            ],
            "bracket_table": [[k + 1, a + 1, b + 1] for k, a, b in self.bracket_table],
        }


def _exact_bracket(schema_sc, N, u, v):
    out = [Fraction(0)] * N
    for (i, j, k), c in schema_sc.items():
        if u[i] and v[j]:
            out[k] += c * u[i] * v[j]
    return out


def _rank(rows):
    """Exact rank of a list of Fraction vectors (Gaussian elimination)."""
    m = [list(r) for r in rows if any(r)]
    rank, col = 0, 0
    ncols = len(m[0]) if m else 0
    while rank < len(m) and col < ncols:
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            col += 1
            continue
        m[rank], m[piv] = m[piv], m[rank]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col] / m[rank][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
        col += 1
    return rank


def validate(schema):
    """Check every schema invariant; raise :class:`SchemaError` on the first failure."""
    deg = schema.degrees
    N = len(deg)
    if N == 0:
        raise SchemaError("dimension", "empty basis")
    if deg[0] != 1 or any(d < 1 for d in deg):
        raise SchemaError("degrees", "degrees must be positive and start at 1")
    for i in range(N - 1):
        if deg[i + 1] < deg[i]:
            raise SchemaError("degrees", f"degrees not nondecreasing at index {i + 2}")
    if any(d == 0 for d in schema.strata_dims):
        raise SchemaError("degrees", "empty stratum between populated strata")
    if max(deg) > MAX_STEP:
        raise SchemaError("step", f"step {max(deg)} exceeds supported maximum {MAX_STEP}")

    sc = schema.structure_constants
    for (i, j, k), v in sc.items():
        if not (0 <= i < N and 0 <= j < N and 0 <= k < N):
            raise SchemaError("index", f"structure constant ({i + 1},{j + 1},{k + 1}) out of range")
    for (i, j, k), v in sorted(sc.items()):
        if sc.get((j, i, k), Fraction(0)) != -v:
            raise SchemaError("antisymmetry",
                              f"c_({i + 1},{j + 1})^{k + 1} = {v} but c_({j + 1},{i + 1})^{k + 1} = "
                              f"{sc.get((j, i, k), Fraction(0))}")
    for (i, j, k), v in sorted(sc.items()):
        if deg[k] != deg[i] + deg[j]:
            raise SchemaError("grading",
                              f"c_({i + 1},{j + 1})^{k + 1} = {v} with degrees "
                              f"{deg[i]}+{deg[j]} != {deg[k]}")

    basis = [[Fraction(int(a == b)) for b in range(N)] for a in range(N)]
    br = lambda u, v: _exact_bracket(sc, N, u, v)  # noqa: E731
    for a, b, c in itertools.combinations(range(N), 3):
        x, y, z = basis[a], basis[b], basis[c]
        t1 = br(x, br(y, z))
        t2 = br(y, br(z, x))
        t3 = br(z, br(x, y))
        if any(p + q + r != 0 for p, q, r in zip(t1, t2, t3)):
            raise SchemaError("jacobi", f"Jacobi identity fails on ({a + 1},{b + 1},{c + 1})")

    first = [i for i in range(N) if deg[i] == 1]
    for s in range(1, max(deg)):
        upper = [i for i in range(N) if deg[i] == s]
        target = [i for i in range(N) if deg[i] == s + 1]
        rows = [br(basis[i], basis[u]) for i in first for u in upper]
        if _rank(rows) != len(target):
            raise SchemaError("generation",
                              f"[V_1, V_{s}] has rank {_rank(rows)} but dim V_{s + 1} = {len(target)}")

    covered = set()
    for k, a, b in schema.bracket_table:
        if not (0 <= k < N and 0 <= a < N and 0 <= b < N):
            raise SchemaError("bracket_table", f"entry ({k + 1},{a + 1},{b + 1}) out of range")
        if deg[k] == 1 or deg[a] >= deg[k] or deg[b] >= deg[k]:
            raise SchemaError("bracket_table",
                              f"entry ({k + 1},{a + 1},{b + 1}) must express a higher vector "
                              "through lower-stratum vectors")
        if br(basis[a], basis[b]) != basis[k]:
            raise SchemaError("bracket_table",
                              f"[X_{a + 1}, X_{b + 1}] != X_{k + 1}")
        covered.add(k)
    missing = [k + 1 for k in range(N) if deg[k] > 1 and k not in covered]
    if missing:
        raise SchemaError("bracket_table", f"no bracket expression for basis vectors {missing}")


def _default_table(degrees, sc):
    """Pick, for every higher basis vector, all pairs (a, b) with [X_a, X_b] = X_k."""
    N = len(degrees)
    table = []
    for k in range(N):
        if degrees[k] == 1:
            continue
        for a in range(N):
            for b in range(N):
                if a >= b or degrees[a] + degrees[b] != degrees[k]:
                    continue
                col = {kk: v for (i, j, kk), v in sc.items() if (i, j) == (a, b)}
                if col == {k: Fraction(1)}:
                    table.append((k, a, b))
    return table


def abelian(n):
    return GroupSchema(degrees=(1,) * n, name=f"abelian({n})")


def heisenberg(n=1):
    """Basis X_1..X_n, Y_1..Y_n, Z with [X_i, Y_i] = Z."""
    N = 2 * n + 1
    z = N - 1
    sc = {}
    for i in range(n):
        sc[(i, n + i, z)] = Fraction(1)
        sc[(n + i, i, z)] = Fraction(-1)
    table = [(z, i, n + i) for i in range(n)]
    return GroupSchema(degrees=(1,) * (2 * n) + (2,), structure_constants=sc,
                       bracket_table=table, name=f"heisenberg({n})")


def free_step2(n):
    """Free step-2 nilpotent group on ``n`` generators; V_2 has C(n, 2) vectors."""
    pairs = list(itertools.combinations(range(n), 2))
    sc, table = {}, []
    for idx, (a, b) in enumerate(pairs):
        k = n + idx
        sc[(a, b, k)] = Fraction(1)
        sc[(b, a, k)] = Fraction(-1)
        table.append((k, a, b))
    assert len(pairs) == comb(n, 2)
    return GroupSchema(degrees=(1,) * n + (2,) * len(pairs), structure_constants=sc,
                       bracket_table=table, name=f"free_step2({n})")


def engel():
    """Step-3 Engel group: [X1, X2] = X3, [X1, X3] = X4."""
    sc = {(0, 1, 2): 1, (1, 0, 2): -1, (0, 2, 3): 1, (2, 0, 3): -1}
    return GroupSchema(degrees=(1, 1, 2, 3), structure_constants=sc,
                       bracket_table=[(2, 0, 1), (3, 0, 2)], name="engel")


_BUILTINS = {
    "abelian": abelian,
    "heisenberg": heisenberg,
    "free_step2": free_step2,
    "engel": engel,
}
_NAME_RE = re.compile(r"^\s*([a-z_0-9]+?)\s*(?:\(\s*(\d+)\s*\)|:(\d+))?\s*$")


def builtin_schema(name):
    """Return a named schema (cached, so equal names give the same object).

    Names: ``abelian(n)``, ``heisenberg(n)``, ``free_step2(n)``, ``engel``.
    """
    m = _NAME_RE.match(str(name))
    if not m:
        raise ValueError(f"unknown builtin schema {name!r}")
    return _builtin(m.group(1), m.group(2) or m.group(3))


@lru_cache(maxsize=None)
def _builtin(base, arg):
    """Build a named schema: ``abelian(n)``, ``heisenberg(n)``, ``free_step2(n)``, ``engel``."""
    if base not in _BUILTINS:
        raise ValueError(f"unknown builtin schema {base!r}; "
                         f"known: {', '.join(sorted(_BUILTINS))}")
    if base == "engel":
        if arg is not None:
            raise ValueError("engel takes no parameter")
        return engel()
    if arg is None:
        if base != "heisenberg":
            raise ValueError(f"{base} needs a dimension, e.g. {base}(3)")
        arg = 1
    n = int(arg)
    if n < 1 or (base == "free_step2" and n < 2):
        raise ValueError(f"invalid dimension {n} for {base}")
    return _BUILTINS[base](n)


def schema_from_dict(data):
    if not isinstance(data, dict):
        raise SchemaError("format", "schema document must be a mapping")
    for key in ("degrees",):
        if key not in data:
            raise SchemaError("format", f"missing key {key!r}")
    degrees = [int(d) for d in data["degrees"]]
    if "N" in data and int(data["N"]) != len(degrees):
        raise SchemaError("dimension", f"N = {data['N']} but {len(degrees)} degrees given")
    sc = {}
    for entry in data.get("structure_constants") or []:
        if len(entry) != 4:
            raise SchemaError("format", f"structure constant entry {entry!r} needs (i, j, k, value)")
        i, j, k, v = entry
        key = (int(i) - 1, int(j) - 1, int(k) - 1)
        try:
            sc[key] = sc.get(key, Fraction(0)) + _frac(v)
        except (ValueError, ZeroDivisionError) as exc:
            raise SchemaError("format", f"bad rational {v!r}: {exc}") from None
    table = data.get("bracket_table")
    if table is None:
        table = _default_table(degrees, sc)
    else:
        table = [(int(k) - 1, int(a) - 1, int(b) - 1) for k, a, b in table]
    return GroupSchema(degrees=degrees, structure_constants=sc, bracket_table=table,
                       name=str(data.get("name", "custom")),
                       strata_dims=data.get("strata_dims"))


def load_schema(path):
    """Read a YAML schema file.  Parse errors carry line/column."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise SchemaError("parse", f"{getattr(exc, 'problem', exc)}{where}") from None
    return schema_from_dict(data)


def dump_schema(schema, path=None):
    text = yaml.safe_dump(schema.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def resolve_schema(spec):
    """Accept a schema object, a builtin name, or a path to a YAML file."""
    if isinstance(spec, GroupSchema):
        return spec
    try:
        return builtin_schema(spec)
    except ValueError:
        return load_schema(spec)
