"""Pansu differentials, graded homomorphisms, adjugates and coarea factors.

All array routines broadcast over leading axes: a batch of points ``(M, N)``
gives blocks ``(M, n1, n1)`` and homomorphisms ``(M, N, N)``.  Column ``i``
of a matrix is the image of basis vector ``X_i``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .group import CarnotGroup, as_group
from .metric import QuasiNormConfig, quasi_norm_array

FD_STEPS = (1e-3, 5e-4, 2.5e-4)
FD_TOL = 1e-6
TAU_HOM = 1e-8
TAU_DET = 1e-9
TAU_ADJ = 1e-8


class DifferentialError(RuntimeError):
    """Finite-difference differential did not converge or could not be evaluated."""


class CompletionError(ValueError):
    """A horizontal block does not extend to a graded homomorphism."""


@dataclass(frozen=True, eq=False)
class GradedHom:
    """Block-diagonal matrix of a graded Lie algebra homomorphism.

    ``residual`` is the bracket-compatibility defect
    ``max |L[X_i, X_j] - [L X_i, L X_j]|`` measured at construction.
    """

    matrix: np.ndarray
    group: CarnotGroup
    residual: float = 0.0

    @property
    def horizontal_block(self):
        n1 = self.group.n1
        return self.matrix[..., :n1, :n1]

    def det(self):
        return np.linalg.det(self.matrix)

    def apply(self, v):
        return np.einsum("...ij,...j->...i", self.matrix, v)


def bracket_residual(group, L):
    """Max over basis pairs of ``|L[X_i,X_j] - [L X_i, L X_j]|``, relative to ``max(1, |L|^2)``."""
    group = as_group(group)
    L = np.asarray(L, dtype=float)
    worst = np.zeros(L.shape[:-2])
    for i, j in itertools.combinations(range(group.N), 2):
        lhs = np.einsum("...kl,l->...k", L, group.schema.C[i, j])
        rhs = group.bracket(L[..., :, i], L[..., :, j])
        worst = np.maximum(worst, np.max(np.abs(lhs - rhs), axis=-1))
    scale = np.maximum(1.0, np.max(np.abs(L), axis=(-2, -1)) ** 2)
    return worst / scale


def complete_hom(block, group, tau_hom=TAU_HOM):
    """Extend an ``n1 x n1`` horizontal block to the whole algebra.

    Higher basis vectors are mapped through the first bracket expression listed
    for them; all other pairs are then checked, and the worst mismatch is kept
    as ``residual``.  Raises :class:`CompletionError` if it exceeds ``tau_hom``.
    """
    group = as_group(group)
    block = np.asarray(block, dtype=float)
    n1, N = group.n1, group.N
    if block.shape[-2:] != (n1, n1):
        raise ValueError(f"horizontal block must be {n1}x{n1}")
    L = np.zeros(block.shape[:-2] + (N, N))
    L[..., :n1, :n1] = block
    chosen = {}
    for k, a, b in group.schema.bracket_table:
        chosen.setdefault(k, (a, b))
    for k in sorted(chosen, key=lambda k: (group.schema.degrees[k], k)):
        a, b = chosen[k]
        L[..., :, k] = group.bracket(L[..., :, a], L[..., :, b])
    res = bracket_residual(group, L)
    worst = float(np.max(res)) if res.size else 0.0
    if worst > tau_hom:
        raise CompletionError(f"block is not a graded homomorphism: residual {worst:.3g}")
    return GradedHom(L, group, worst)


def adjugate(L):
    """Transposed cofactor matrix; defined for singular input too."""
    if isinstance(L, GradedHom):
        L = L.matrix
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    if n == 1:
        return np.ones_like(L)
    idx = np.arange(n)
    minors = np.empty(L.shape[:-2] + (n, n, n - 1, n - 1))
    for i in range(n):
        rows = idx[idx != i]
        for j in range(n):
            cols = idx[idx != j]
            minors[..., i, j, :, :] = L[..., rows[:, None], cols[None, :]]
    cof = np.linalg.det(minors)
    sign = (-1.0) ** (idx[:, None] + idx[None, :])
    return np.swapaxes(cof * sign, -1, -2)


def adjugate_defect(L):
    """Relative defect of ``L adj L = adj L L = det L * Id``."""
    if isinstance(L, GradedHom):
        L = L.matrix
    L = np.asarray(L, dtype=float)
    A = adjugate(L)
    d = np.linalg.det(L)[..., None, None] * np.eye(L.shape[-1])
    e1 = np.max(np.abs(L @ A - d), axis=(-2, -1))
    e2 = np.max(np.abs(A @ L - d), axis=(-2, -1))
    scale = np.maximum(np.linalg.norm(L, ord=2, axis=(-2, -1)) ** L.shape[-1], 1e-300)
    return np.maximum(e1, e2) / scale


# --- contact maps -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ContactMap:
    """A map of a Carnot group to itself.

    ``forward`` maps ``(..., N)`` arrays.  ``differential`` optionally returns
    the analytic horizontal block ``(..., n1, n1)`` (column i = horizontal
    image of X_i).  ``lipschitz`` is a number or a callable taking a box.
    """

    group: CarnotGroup
    forward: object
    name: str = "map"
    differential: object = None
    lipschitz: object = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "group", as_group(self.group))

    def __call__(self, x):
        return self.forward(np.asarray(x, dtype=float))

    def lipschitz_bound(self, box=None):
        if self.lipschitz is None:
            return None
        if callable(self.lipschitz):
            return float(self.lipschitz(box))
        return float(self.lipschitz)

    def compose_left_translation(self, g):
        """``x -> phi(g . x)``; the differential is unchanged up to the base point."""
        grp = self.group
        g = np.asarray(g, dtype=float)
        diff = None
        if self.differential is not None:
            diff = lambda x: self.differential(grp.mul(g, x))  # noqa: E731
        return ContactMap(grp, lambda x: self.forward(grp.mul(g, x)),
                          name=f"{self.name}∘l_g", differential=diff,
                          lipschitz=self.lipschitz, params={**self.params, "g": g.tolist()})


def horizontal_block_fd(phi, x, steps=FD_STEPS, tol=FD_TOL):
    """Central differences along ``exp(+-t X_i)`` with two Richardson levels.

    Raises :class:`DifferentialError` if the last two extrapolants differ by
    more than ``tol`` (relative to ``max(1, |block|)``) anywhere in the batch.
    """
    g = phi.group
    x = np.asarray(x, dtype=float)
    n1 = g.n1
    ests = []
    for t in steps:
        cols = []
        for i in range(n1):
            e = g.exp_horizontal(i, t)
            fp = phi(g.mul(x, e))[..., :n1]
            fm = phi(g.mul(x, -e))[..., :n1]
            cols.append((fp - fm) / (2.0 * t))
        ests.append(np.stack(cols, axis=-1))
    if not all(np.all(np.isfinite(e)) for e in ests):
        raise DifferentialError("map evaluation produced non-finite values")
    # central differences have even error expansion; steps halve
    r1 = [(4.0 * ests[k + 1] - ests[k]) / 3.0 for k in range(len(ests) - 1)]
    if len(r1) < 2:
        return r1[0] if r1 else ests[0]
    r2 = (16.0 * r1[1] - r1[0]) / 15.0
    scale = np.maximum(1.0, np.max(np.abs(r2), axis=(-2, -1)))
    gap = np.max(np.abs(r2 - r1[1]), axis=(-2, -1)) / scale
    if np.any(gap > tol):
        raise DifferentialError(f"Richardson extrapolation did not settle (gap {np.max(gap):.3g})")
    return r2


def horizontal_block(phi, x, method="auto", steps=FD_STEPS):
    """Horizontal block of the Pansu differential at ``x``.

    ``method``: ``"fd"`` (finite differences), ``"analytic"`` (the map's own
    differential), or ``"auto"`` (analytic when available).
    """
    if method == "analytic" or (method == "auto" and phi.differential is not None):
        if phi.differential is None:
            raise DifferentialError(f"{phi.name} has no analytic differential")
        return np.asarray(phi.differential(np.asarray(x, dtype=float)), dtype=float)
    if method not in ("fd", "auto"):
        raise ValueError(f"unknown differential method {method!r}")
    return horizontal_block_fd(phi, x, steps)


def pansu_differential(phi, x, method="auto", tau_hom=TAU_HOM):
    return complete_hom(horizontal_block(phi, x, method), phi.group, tau_hom)


def adj_column(group, L, j):
    """Horizontal part of ``adj L <X_j>`` (1-based ``j``)."""
    group = as_group(group)
    A = adjugate(L)
    return A[..., : group.n1, j - 1]


def coarea_factor(phi, x, j, method="auto"):
    """``|adj D phi(x) <X_j>|`` in the Lebesgue normalisation."""
    g = phi.group
    if not 1 <= j <= g.n1:
        raise ValueError(f"horizontal index j={j} outside 1..{g.n1}")
    L = pansu_differential(phi, x, method)
    return np.linalg.norm(adj_column(g, L.matrix, j), axis=-1)


def unit_ball_samples(group, count, grid=8):
    """Deterministic dyadic lattice points of the closed unit quasi-ball.

    Points are multiples of ``1/grid``; taking ``grid`` a power of two keeps
    the sample coordinates exactly representable.
    """
    group = as_group(group)
    axis = np.arange(-grid, grid + 1) / grid
    pts = np.array(list(itertools.product(axis, repeat=group.N)))
    pts = pts[quasi_norm_array(group, pts) <= 1.0]
    if len(pts) > count:
        pts = pts[np.linspace(0, len(pts) - 1, count).round().astype(int)]
    return pts


def pansu_residual(phi, x, r, samples=256, L=None, method="auto", config=QuasiNormConfig()):
    """Max over unit-ball samples of ``| L(xi)^-1 . delta_{1/r}(phi(x)^-1 phi(x delta_r xi)) |``."""
    g = phi.group
    x = np.asarray(x, dtype=float)
    if L is None:
        L = pansu_differential(phi, x, method)
    Lm = L.matrix if isinstance(L, GradedHom) else np.asarray(L, dtype=float)
    xi = unit_ball_samples(g, samples)
    fx = phi(x)
    moved = phi(g.mul(x, g.dilate(r, xi)))
    q = g.dilate(1.0 / r, g.mul(g.inv(fx), moved))
    lin = xi @ Lm.T
    return float(np.max(quasi_norm_array(g, g.mul(g.inv(lin), q), config)))


def finite_codistortion_defect(phi, samples, tau_det=TAU_DET, tau_adj=TAU_ADJ, method="auto"):
    """Largest ``|adj D phi|`` among samples where ``|det D phi| < tau_det``."""
    L = pansu_differential(phi, samples, method).matrix
    det = np.linalg.det(L)
    A = adjugate(L)
    sing = np.abs(det) < tau_det
    defect = float(np.max(np.abs(A[sing]))) if np.any(sing) else 0.0
    return {
        "samples": int(len(det)),
        "singular": int(np.sum(sing)),
        "max_adj": defect,
        "tau_det": tau_det,
        "tau_adj": tau_adj,
        "vacuous": not bool(np.any(sing)),
        "ok": defect <= tau_adj,
    }
