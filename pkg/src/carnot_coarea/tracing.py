"""Level sets of ``Pr_j . phi``: seed scan, Gauss-Newton polishing, curve tracing.

Everything is batched: many hyperplane targets ``p`` are handled at once, and
each curve's arithmetic is elementwise so a curve's result does not depend
on which other curves share its batch.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .group import as_group
from .metric import PolyCurve
from .pansu import DifferentialError, adj_column, complete_hom, horizontal_block
from .projection import project_array

TAU_SEED = 1e-4
TAU_TRACK = 1e-7
TAU_ADJ = 1e-8

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class TraceConfig:
    """Tolerances and ODE settings for the tracer; lengths are in box units."""

    tau_seed: float = TAU_SEED
    tau_track: float = TAU_TRACK
    tau_adj: float = TAU_ADJ
    atol: float = 1e-9
    h_max_frac: float = 1 / 16
    h_min_frac: float = 1e-9
    max_iter: int = 20000
    max_length_frac: float = 100.0
    fd_step: float = 1e-6
    polish_iters: int = 30
    method: str = "auto"

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class Region:
    """Coordinate box, optionally left-translated: ``A = offset . box``."""

    box: np.ndarray
    group: object
    offset: np.ndarray | None = None

    def __post_init__(self):
        g = as_group(self.group)
        object.__setattr__(self, "group", g)
        b = np.asarray(self.box, dtype=float).reshape(-1, 2)
        if b.shape != (g.N, 2):
            raise ValueError(f"region box needs {g.N} intervals")
        if np.any(~(b[:, 1] > b[:, 0])) or not np.all(np.isfinite(b)):
            raise ValueError("region box must be nonempty and finite")
        object.__setattr__(self, "box", b)
        if self.offset is not None:
            object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))

    @property
    def volume(self):
        return float(np.prod(self.box[:, 1] - self.box[:, 0]))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))

    def to_chart(self, u):
        """Box coordinates -> group coordinates."""
        if self.offset is None:
            return np.asarray(u, dtype=float)
        return self.group.mul(self.offset, u)

    def from_chart(self, x):
        if self.offset is None:
            return np.asarray(x, dtype=float)
        return self.group.mul(-self.offset, x)

    def contains(self, x, slack=0.0):
        u = self.from_chart(x)
        w = (self.box[:, 1] - self.box[:, 0]) * slack
        return np.all((u >= self.box[:, 0] - w) & (u <= self.box[:, 1] + w), axis=-1)

    def translated(self, g):
        """``g . A``."""
        g = np.asarray(g, dtype=float)
        off = g if self.offset is None else self.group.mul(g, self.offset)
        return Region(self.box, self.group, off)

    def as_dict(self):
        d = {"box": self.box.tolist()}
        if self.offset is not None:
            d["offset"] = self.offset.tolist()
        return d


class LevelSetProblem:
    """Level sets of ``F = Pr_j . phi`` restricted to a region."""

    def __init__(self, phi, region, j, config=TraceConfig()):
        self.phi = phi
        self.group = phi.group
        self.region = region
        self.j = int(j)
        if not 1 <= self.j <= self.group.n1:
            raise ValueError(f"horizontal index j={j} outside 1..{self.group.n1}")
        self.config = config
        self._scans = {}

    def F(self, x):
        return project_array(self.group, self.phi(x), self.j)

    def DF(self, x):
        """Euclidean Jacobian of F by central differences, shape ``(..., N-1, N)``."""
        return self._jac(self.F, x)

    def _jac(self, fn, x):
        x = np.asarray(x, dtype=float)
        N = self.group.N
        h = self.config.fd_step * max(1.0, self.region.diameter)
        e = np.eye(N) * h
        xs = np.concatenate([x[None] + e[:, None, :], x[None] - e[:, None, :]])
        f = fn(xs.reshape(-1, N)).reshape(2 * N, *x.shape[:-1], N - 1)
        d = (f[:N] - f[N:]) / (2 * h)
        return np.moveaxis(d, 0, -1)

    def F_box(self, u):
        """F in box coordinates of the region."""
        return self.F(self.region.to_chart(u))

    def adj_field(self, x):
        """Horizontal part of ``adj D phi(x) <X_j>`` and its norm."""
        B = horizontal_block(self.phi, x, self.config.method)
        L = complete_hom(B, self.group).matrix
        v = adj_column(self.group, L, self.j)
        return v, np.linalg.norm(v, axis=-1)

    def _gn_u(self, u, p, free=None):
        r = self.F_box(u) - p
        J = self._jac(self.F_box, u)
        if free is not None:
            J = J * free[..., None, :]
        JJt = J @ np.swapaxes(J, -1, -2)
        mu = 1e-14 * np.trace(JJt, axis1=-2, axis2=-1)[..., None, None] + 1e-300
        JJt = JJt + mu * np.eye(JJt.shape[-1])
        y = np.linalg.solve(JJt, r[..., None])[..., 0]
        return u - np.einsum("...ki,...k->...i", J, y)

    def gn_step(self, x, p):
        """One damped Gauss-Newton (minimum-norm) correction toward ``F(x) = p``."""
        u = self.region.from_chart(x)
        return self.region.to_chart(self._gn_u(u, p))

    def residual(self, x, p):
        return np.linalg.norm(self.F(x) - p, axis=-1)

    def _constrained_step(self, u, p):
        """Gauss-Newton step that pins coordinates which would leave the box to the face."""
        lo, hi = self.region.box[:, 0], self.region.box[:, 1]
        free = np.ones(u.shape, dtype=float)
        base = u.copy()
        cand = self._gn_u(base, p)
        for _ in range(u.shape[-1]):
            out = (cand < lo) | (cand > hi)
            if not np.any(out):
                break
            rows = np.any(out, axis=-1)
            free[rows] = np.where(out[rows], 0.0, free[rows])
            base[rows] = np.clip(np.where(out[rows], cand[rows], base[rows]), lo, hi)
            cand[rows] = self._gn_u(base[rows], p[rows], free[rows])
        return np.clip(cand, lo, hi)

    def polish(self, x, p):
        """Damped Gauss-Newton restricted to the region.

        Coordinates that a step would push through a face are pinned to that
        face and the step is recomputed, so seeds near faces converge to the
        level set inside the region.  Returns ``(x, residual)``.
        """
        u = np.array(self.region.from_chart(x), dtype=float)
        res = np.linalg.norm(self.F_box(u) - p, axis=-1)
        for _ in range(self.config.polish_iters):
            active = res > 1e-13 * (1.0 + np.linalg.norm(p, axis=-1))
            if not np.any(active):
                break
            ua, pa, ra = u[active], p[active], res[active]
            step = 1.0
            cand = self._constrained_step(ua, pa)
            rc = np.linalg.norm(self.F_box(cand) - pa, axis=-1)
            # backtrack where the full step does not reduce the residual
            for _ in range(8):
                worse = ~(rc < ra)
                if not np.any(worse):
                    break
                step *= 0.5
                cand[worse] = ua[worse] + step * (cand[worse] - ua[worse])
                rc[worse] = np.linalg.norm(self.F_box(cand[worse]) - pa[worse], axis=-1)
            improved = rc < ra
            if not np.any(improved):
                break
            idx = np.flatnonzero(active)[improved]
            u[idx] = cand[improved]
            res[idx] = rc[improved]
        return self.region.to_chart(u), res

    # --- scanning -------------------------------------------------------

    def scan(self, n):
        """Grid (faces included) over the region with F values, cached per resolution."""
        if n in self._scans:
            return self._scans[n]
        b = self.region.box
        axes = [np.linspace(lo, hi, n) for lo, hi in b]
        u = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
        x = self.region.to_chart(u)
        fx = np.concatenate([self.F(x[s:s + 65536]) for s in range(0, len(x), 65536)])
        shape = (n,) * self.group.N
        grid_f = fx.reshape(shape + (fx.shape[-1],))
        # per-axis Lipschitz bound of F on the grid (in box coordinates)
        slopes = []
        for ax in range(self.group.N):
            h = (b[ax, 1] - b[ax, 0]) / (n - 1)
            d = np.diff(grid_f, axis=ax)
            slopes.append(float(np.max(np.linalg.norm(d, axis=-1))) / h if d.size else 0.0)
        spacing = (b[:, 1] - b[:, 0]) / (n - 1)
        # a level point lies within half a cell diagonal of some node
        reach = 0.5 * math.sqrt(sum((s * h) ** 2 for s, h in zip(slopes, spacing)) * self.group.N)
        band = 1.25 * reach + 1e-12 * (1.0 + float(np.max(np.abs(fx))))
        scan = _Scan(n=n, x=x, fx=fx, tree=cKDTree(fx), band=band, spacing=spacing,
                     cell=float(np.max(spacing)))
        self._scans[n] = scan
        return scan

    def window(self, n):
        """Box in hyperplane coordinates that contains ``F(A)``."""
        s = self.scan(n)
        lo = s.fx.min(axis=0) - s.band
        hi = s.fx.max(axis=0) + s.band
        width = hi - lo
        floor = 1e-6 * (1.0 + np.abs(lo) + np.abs(hi))
        pad = np.maximum(0.02 * width, floor)
        return np.stack([lo - pad, hi + pad], axis=-1)

    def candidates(self, n, p):
        """Grid-local minima of ``|F(x) - p|`` inside the band, per target.

        Returns a list (one entry per row of ``p``) of node-index arrays sorted
        by residual.
        """
        s = self.scan(n)
        N = self.group.N
        hits = s.tree.query_ball_point(p, s.band)
        owner = np.concatenate([np.full(len(h), i, dtype=np.int64) for i, h in enumerate(hits)]
                               or [np.zeros(0, dtype=np.int64)])
        node = np.concatenate([np.sort(np.asarray(h, dtype=np.int64)) for h in hits]
                              or [np.zeros(0, dtype=np.int64)])
        out = [np.zeros(0, dtype=np.int64) for _ in range(len(p))]
        if node.size == 0:
            return out
        offsets = np.array([o for o in itertools.product((-1, 0, 1), repeat=N) if any(o)])
        multi = np.stack(np.unravel_index(node, (n,) * N), axis=-1)
        res = np.linalg.norm(s.fx[node] - p[owner], axis=-1)
        keep = np.ones(node.size, dtype=bool)
        for o in offsets:
            nb = multi + o
            valid = np.all((nb >= 0) & (nb < n), axis=-1)
            flat = np.ravel_multi_index(np.clip(nb, 0, n - 1).T, (n,) * N)
            rn = np.linalg.norm(s.fx[flat] - p[owner], axis=-1)
            # ties broken by node index so a flat plateau keeps one node
            keep &= ~valid | (res < rn) | ((res == rn) & (node <= flat))
        owner, node, res = owner[keep], node[keep], res[keep]
        order = np.lexsort((node, res, owner))
        owner, node = owner[order], node[order]
        bounds = np.searchsorted(owner, np.arange(len(p) + 1))
        for i in range(len(p)):
            out[i] = node[bounds[i]:bounds[i + 1]]
        return out

    def band_points(self, n, p):
        """All scan nodes whose residual is within the band of a single target ``p``."""
        s = self.scan(n)
        idx = np.sort(np.asarray(s.tree.query_ball_point(p, s.band), dtype=np.int64))
        return s.x[idx]


@dataclass
class _Scan:
    n: int
    x: np.ndarray
    fx: np.ndarray
    tree: cKDTree
    band: float
    spacing: np.ndarray
    cell: float


@dataclass
class TracedCurve:
    curve: PolyCurve
    length: float
    status: str
    max_residual: float


@dataclass
class LevelSetResult:
    """All components found for one target ``p``."""

    p: np.ndarray
    curves: list = field(default_factory=list)
    candidates: int = 0
    seeds_dropped: int = 0
    seeds_merged: int = 0
    seeds_critical: int = 0

    @property
    def length(self):
        return math.fsum(c.length for c in self.curves)

    @property
    def flags(self):
        flags = {c.status for c in self.curves} - {"boundary"}
        if self.seeds_critical:
            flags.add("critical")
        return sorted(flags)

    def as_dict(self):
        return {
            "p": self.p.tolist(),
            "candidates": self.candidates,
            "seeds_dropped": self.seeds_dropped,
            "seeds_merged": self.seeds_merged,
            "seeds_critical": self.seeds_critical,
            "curves": len(self.curves),
            "length": self.length,
            "flags": self.flags,
            "max_residual": max((c.max_residual for c in self.curves), default=0.0),
        }


def _trace(problem, x0, p, sign):
    """Integrate the normalised adjugate field from each seed until it leaves the region.

    Returns per-curve ``(points, tangents, dts, status, max_residual)``.
    """
    cfg = problem.config
    g = problem.group
    n1 = g.n1
    diam = problem.region.diameter
    h_max = cfg.h_max_frac * diam
    h_min = cfg.h_min_frac * diam
    L_max = cfg.max_length_frac * diam
    S = len(x0)

    def velocity(x, sgn):
        v, nv = problem.adj_field(x)
        w = np.zeros(x.shape)
        ok = nv > cfg.tau_adj
        w[ok, :n1] = v[ok] / nv[ok, None] * sgn[ok, None]
        return g.left_field(x, w), w, nv

    x = np.array(x0, dtype=float)
    h = np.full(S, h_max / 4)
    length = np.zeros(S)
    status = np.array(["running"] * S, dtype=object)
    maxres = problem.residual(x, p)
    pts_log = [(np.arange(S), x.copy())]
    tan_log, dt_log = [], []
    alive = np.ones(S, dtype=bool)
    _, _, nv0 = velocity(x, sign)
    stalled = nv0 <= cfg.tau_adj
    status[stalled] = "stall"
    alive &= ~stalled

    for _ in range(cfg.max_iter):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xa, ha, sa, pa = x[idx], h[idx], sign[idx], p[idx]
        k = []
        w0 = None
        nv_stage = np.full(idx.size, np.inf)
        try:
            for st in range(7):
                xs = xa.copy()
                for m, a in enumerate(_A[st]):
                    if a:
                        xs = xs + ha[:, None] * a * k[m]
                kv, w, nv = velocity(xs, sa)
                if st == 0:
                    w0 = w
                nv_stage = np.minimum(nv_stage, nv)
                k.append(kv)
        except DifferentialError:
            status[idx] = "diff_fail"
            alive[idx] = False
            continue
        K = np.stack(k)
        x_new = xa + ha[:, None] * np.einsum("s,s...->...", _B5, K)
        err = np.max(np.abs(ha[:, None] * np.einsum("s,s...->...", _E, K)), axis=-1)
        err_ratio = err / cfg.atol
        stall = nv_stage <= cfg.tau_adj
        # reproject onto the level set
        x_new = problem.gn_step(x_new, pa)
        inside = problem.region.contains(x_new)
        ok_err = err_ratio <= 1.0
        accept = ok_err & inside & ~stall
        # step-size update from the error estimate
        fac = np.where(err_ratio > 0, 0.9 * np.power(np.maximum(err_ratio, 1e-300), -0.2), 5.0)
        fac = np.clip(fac, 0.2, 5.0)
        h_next = np.minimum(ha * fac, h_max)
        # leaving the region: bisect toward the boundary
        exiting = ok_err & ~inside & ~stall
        h_next = np.where(exiting, ha * 0.5, h_next)
        done_boundary = exiting & (ha <= h_min)
        # stall on the way: shrink to locate it, stop once tiny
        h_next = np.where(stall, ha * 0.5, h_next)
        done_stall = stall & (ha <= h_min)

        if np.any(accept):
            ai = idx[accept]
            x[ai] = x_new[accept]
            length[ai] += ha[accept]
            pts_log.append((ai, x_new[accept].copy()))
            tan_log.append((ai, w0[accept].copy()))
            dt_log.append((ai, ha[accept].copy()))
            r = problem.residual(x_new[accept], pa[accept])
            maxres[ai] = np.maximum(maxres[ai], r)
        h[idx] = h_next
        stop_b = idx[done_boundary]
        status[stop_b] = "boundary"
        alive[stop_b] = False
        stop_s = idx[done_stall]
        status[stop_s] = "stall"
        alive[stop_s] = False
        long = alive & (length > L_max)
        status[long] = "escape"
        alive &= ~long
    status[alive] = "escape"

    order_pts = _collect(pts_log, S)
    order_tan = _collect(tan_log, S)
    order_dt = _collect(dt_log, S)
    out = []
    for i in range(S):
        out.append((order_pts[i], order_tan[i], order_dt[i], status[i], float(maxres[i])))
    return out


def _collect(log, S):
    if not log:
        return [np.zeros((0,)) for _ in range(S)]
    owners = np.concatenate([o for o, _ in log])
    vals = np.concatenate([v for _, v in log])
    order = np.argsort(owners, kind="stable")
    owners, vals = owners[order], vals[order]
    bounds = np.searchsorted(owners, np.arange(S + 1))
    return [vals[bounds[i]:bounds[i + 1]] for i in range(S)]


def trace_from_seeds(problem, seeds, p):
    """Trace both directions through each seed; returns one :class:`TracedCurve` per seed."""
    S = len(seeds)
    if S == 0:
        return []
    x0 = np.concatenate([seeds, seeds])
    pp = np.concatenate([p, p])
    sign = np.concatenate([np.ones(S), -np.ones(S)])
    raw = _trace(problem, x0, pp, sign)
    curves = []
    for i in range(S):
        fpts, ftan, fdt, fst, fres = raw[i]
        bpts, btan, bdt, bst, bres = raw[S + i]
        # backward branch reversed, then forward branch
        pts = np.concatenate([bpts[::-1], fpts[1:]])
        tan = np.concatenate([-btan[::-1], ftan]) if len(btan) + len(ftan) else None
        dts = np.concatenate([bdt[::-1], fdt])
        if len(pts) > 1 and tan is not None and len(tan) == len(pts) - 1:
            curve = PolyCurve(problem.group, pts, tan, dts)
        else:
            curve = PolyCurve(problem.group, pts[:1])
        worst = [s for s in (fst, bst) if s != "boundary"]
        curves.append(TracedCurve(curve, math.fsum(dts), worst[0] if worst else "boundary",
                                  max(fres, bres)))
    return curves


def _near_curves(pt, curves, radius):
    for c in curves:
        dens = c.curve.densified(radius / 2)
        if np.min(np.linalg.norm(dens - pt, axis=-1)) < radius:
            return True
    return False


def level_sets(problem, p, scan_n):
    """Find and trace every component of ``F^-1(p) ∩ A`` for each row of ``p``."""
    cfg = problem.config
    p = np.atleast_2d(np.asarray(p, dtype=float))
    scan = problem.scan(scan_n)
    cands = problem.candidates(scan_n, p)
    results = [LevelSetResult(p[i], candidates=len(c)) for i, c in enumerate(cands)]
    owner = np.concatenate([np.full(len(c), i, dtype=np.int64) for i, c in enumerate(cands)])
    nodes = np.concatenate(cands) if cands else np.zeros(0, dtype=np.int64)
    if nodes.size == 0:
        return results
    seeds, res = problem.polish(scan.x[nodes], p[owner])
    good = (res <= cfg.tau_seed) & problem.region.contains(seeds)
    for i in owner[~good]:
        results[i].seeds_dropped += 1
    # a seed where the adjugate field vanishes has no tangent to follow
    _, nv = problem.adj_field(seeds)
    critical = good & (nv <= cfg.tau_adj)
    for i in owner[critical]:
        results[i].seeds_critical += 1
    good &= ~critical
    pending = {}
    for i, s in zip(owner[good], seeds[good]):
        pending.setdefault(int(i), []).append(s)
    dup_radius = max(3 * cfg.tau_track, 0.5 * scan.cell)
    while pending:
        batch = sorted(pending)
        first = np.stack([pending[i].pop(0) for i in batch])
        traced = trace_from_seeds(problem, first, p[batch])
        for i, tc in zip(batch, traced):
            results[i].curves.append(tc)
            rest = []
            for s in pending[i]:
                if _near_curves(s, results[i].curves, dup_radius):
                    results[i].seeds_merged += 1
                else:
                    rest.append(s)
            if rest:
                pending[i] = rest
            else:
                del pending[i]
    return results
