"""Builtin contact maps, addressed as ``name:key=value,key=value``.

Generic (any schema): ``identity``, ``translate:g=a;b;c``, ``dilation:lam=2``,
``degenerate``.  Heisenberg ``H^1`` only: ``anisotropic:lam=2,mu=3``,
``rotation:theta=0.3``, ``shear:a=0.5``, ``fold:a=0.3333``.
"""
from __future__ import annotations

import numpy as np

from .group import as_group
from .pansu import ContactMap, complete_hom


def _box_grid(box, n=9):
    b = np.asarray(box, dtype=float).reshape(-1, 2)
    axes = [np.linspace(lo, hi, n) for lo, hi in b]
    return np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)


def _sampled_lipschitz(differential):
    """Max spectral norm of the horizontal block over a grid of the box."""
    def lip(box):
        if box is None:
            raise ValueError("a region is needed to bound the Lipschitz constant")
        B = differential(_box_grid(box))
        return float(np.max(np.linalg.norm(B, ord=2, axis=(-2, -1))))
    return lip


def homomorphism(group, block, name="homomorphism", params=None):
    """The group homomorphism whose differential has the given horizontal block."""
    group = as_group(group)
    L = complete_hom(block, group).matrix
    block = np.array(block, dtype=float)
    return ContactMap(
        group,
        lambda x: x @ L.T,
        name=name,
        differential=lambda x: np.broadcast_to(block, np.shape(x)[:-1] + block.shape).copy(),
        lipschitz=float(np.linalg.norm(block, ord=2)),
        params=dict(params or {}),
    )


def identity(group):
    return homomorphism(group, np.eye(as_group(group).n1), "identity")


def translate(group, g):
    group = as_group(group)
    g = np.asarray(g, dtype=float)
    if g.shape != (group.N,):
        raise ValueError(f"translation needs {group.N} coordinates")
    eye = np.eye(group.n1)
    return ContactMap(
        group, lambda x: group.mul(g, x), name="translate",
        differential=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + eye.shape).copy(),
        lipschitz=1.0, params={"g": g.tolist()})


def dilation(group, lam=2.0):
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    group = as_group(group)
    return homomorphism(group, lam * np.eye(group.n1), "dilation", {"lam": lam})


def degenerate(group):
    """Rank-one homomorphism ``x -> (x_1, 0, ..., 0)``."""
    group = as_group(group)
    B = np.zeros((group.n1, group.n1))
    B[0, 0] = 1.0
    return homomorphism(group, B, "degenerate")


def _require_h1(group):
    group = as_group(group)
    if group.schema.signature != as_group("heisenberg(1)").schema.signature:
        raise ValueError("this builtin map is defined on heisenberg(1) only")
    return group


def anisotropic(group, lam=2.0, mu=3.0):
    """``(x, y, z) -> (lam x, mu y, lam mu z)``."""
    group = _require_h1(group)
    return homomorphism(group, np.diag([lam, mu]), "anisotropic", {"lam": lam, "mu": mu})


def rotation(group, theta=0.3):
    """Rotation of the horizontal plane about the vertical axis."""
    group = _require_h1(group)
    c, s = np.cos(theta), np.sin(theta)
    return homomorphism(group, np.array([[c, -s], [s, c]]), "rotation", {"theta": theta})


def shear(group, a=0.5):
    """``(x, y, z) -> (x, y + a x^2, z + a x^3 / 6)``: contact with J_h = 1."""
    group = _require_h1(group)

    def fwd(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return np.stack([x, y + a * x ** 2, z + a * x ** 3 / 6.0], axis=-1)

    def diff(p):
        x = p[..., 0]
        B = np.zeros(np.shape(p)[:-1] + (2, 2))
        B[..., 0, 0] = 1.0
        B[..., 1, 0] = 2.0 * a * x
        B[..., 1, 1] = 1.0
        return B

    return ContactMap(group, fwd, name="shear", differential=diff,
                      lipschitz=_sampled_lipschitz(diff), params={"a": a})


def fold(group, a=1.0 / 3.0):
    """Contact map whose horizontal Jacobian ``1 - 3 a u^2`` changes sign.

    With ``u = z + x y / 2`` and ``g(u) = u - a u^3``:
    ``(x, y, z) -> (g'(u) x, y, g(u) - g'(u) x y / 2)``.
    The fold is the surface ``u = 1/sqrt(3a)``.
    """
    group = _require_h1(group)

    def fwd(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        u = z + 0.5 * x * y
        gu = u - a * u ** 3
        dg = 1.0 - 3.0 * a * u ** 2
        return np.stack([dg * x, y, gu - 0.5 * dg * x * y], axis=-1)

    def diff(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        u = z + 0.5 * x * y
        B = np.zeros(np.shape(p)[:-1] + (2, 2))
        B[..., 0, 0] = 1.0 - 3.0 * a * u ** 2
        B[..., 0, 1] = -6.0 * a * u * x ** 2
        B[..., 1, 1] = 1.0
        return B

    return ContactMap(group, fwd, name="fold", differential=diff,
                      lipschitz=_sampled_lipschitz(diff), params={"a": a})


def fold_surface_point(x, y, a=1.0 / 3.0):
    """A point of the fold surface above ``(x, y)``."""
    return np.array([x, y, 1.0 / np.sqrt(3.0 * a) - 0.5 * x * y])


BUILTIN_MAPS = {
    "identity": identity,
    "translate": translate,
    "dilation": dilation,
    "degenerate": degenerate,
    "anisotropic": anisotropic,
    "rotation": rotation,
    "shear": shear,
    "fold": fold,
}

# maps that are finite-codistortion by construction (nonsingular or identically degenerate)
FINITE_CODISTORTION = {"identity", "translate", "dilation", "anisotropic", "rotation",
                       "shear", "degenerate"}


def _parse_value(text):
    if ";" in text:
        return [float(t) for t in text.split(";") if t.strip()]
    return float(text)


def parse_map_spec(spec):
    """``"shear:a=0.5"`` -> ``("shear", {"a": 0.5})``."""
    name, _, rest = str(spec).partition(":")
    name = name.strip()
    if name not in BUILTIN_MAPS:
        raise ValueError(f"unknown map {name!r}; known: {', '.join(sorted(BUILTIN_MAPS))}")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"map parameter {item!r} must look like key=value")
        try:
            params[key.strip()] = _parse_value(val.strip())
        except ValueError:
            raise ValueError(f"map parameter {item!r} is not numeric") from None
    return name, params


def builtin_map(spec, group):
    name, params = parse_map_spec(spec)
    try:
        return BUILTIN_MAPS[name](group, **params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for map {name!r}: {exc}") from None
