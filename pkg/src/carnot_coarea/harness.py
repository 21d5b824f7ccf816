"""Both sides of the coarea inequality for ``Pr_j . phi`` and the verdicts.

Lebesgue normalisation throughout: the level-set side integrates horizontal
length against Lebesgue measure on the hyperplane, the bulk side integrates
``|adj D phi <X_j>|`` against Lebesgue measure on the group.  The ratio of
Hausdorff-to-Lebesgue constants on the two sides cancels.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .metric import Estimate, QuadratureConfig, hausdorff1_eps, lebesgue_box_integral
from .pansu import DifferentialError, coarea_factor
from .tracing import LevelSetProblem, Region, TraceConfig, level_sets

TAU_VERDICT = 1e-3
TAU_EQUALITY = 0.05
P_CHUNK = 256


@dataclass(frozen=True)
class CoareaConfig:
    """Resolution and tolerance settings; every field is echoed into reports."""

    p_grid: int = 64
    scan: int = 32
    quad: QuadratureConfig = QuadratureConfig(kind="grid", n=32)
    seed: int = 0
    tau_verdict: float = TAU_VERDICT
    tau_equality: float = TAU_EQUALITY
    failure_budget: float = 1e-3
    trace: TraceConfig = TraceConfig()
    workers: int = 1
    oracle_eps: float = 0.05
    oracle_scan: int = 64
    finite_codistortion: bool | None = None
    # test-only hook: scales the bulk integrand to force a violation
    corrupt_factor: float = 1.0

    def as_dict(self):
        """Settings echo.  ``workers`` is left out: it cannot change any number."""
        d = asdict(self)
        d.pop("workers")
        d["quad"] = self.quad.as_dict()
        d["trace"] = self.trace.as_dict()
        return d


def _problem(phi, A, j, config):
    return LevelSetProblem(phi, A, j, config.trace)


def rhs_integral(phi, A, j, quadrature=QuadratureConfig(kind="grid", n=32),
                 method="auto", failure_budget=1e-3, scale=1.0):
    """``∫_A |adj D phi(x) <X_j>| dx`` with an error proxy.

    Nodes whose differential fails are counted as zero; more than
    ``failure_budget`` of them raises :class:`DifferentialError`.
    """
    failures = [0, 0]

    def integrand(u):
        x = A.to_chart(u)
        failures[1] += len(x)
        try:
            return scale * coarea_factor(phi, x, j, method)
        except DifferentialError:
            out = np.zeros(len(x))
            for i in range(len(x)):
                try:
                    out[i] = scale * coarea_factor(phi, x[i:i + 1], j, method)[0]
                except DifferentialError:
                    failures[0] += 1
            return out

    est = lebesgue_box_integral(integrand, A.box, quadrature)
    if failures[1] and failures[0] / failures[1] > failure_budget:
        raise DifferentialError(
            f"differential failed at {failures[0]} of {failures[1]} quadrature nodes")
    return est


def p_grid(window, n, seed):
    """Jittered cell samples of a hyperplane window: ``(points, cell_volume, multi_index)``."""
    window = np.asarray(window, dtype=float)
    d = len(window)
    width = (window[:, 1] - window[:, 0]) / n
    multi = np.stack(np.unravel_index(np.arange(n ** d), (n,) * d), axis=-1)
    rng = np.random.default_rng(seed)
    jitter = rng.random((n ** d, d))
    pts = window[:, 0] + (multi + jitter) * width
    return pts, float(np.prod(width)), multi


def _run_chunks(fn, items, workers):
    chunks = [items[i:i + P_CHUNK] for i in range(0, len(items), P_CHUNK)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, chunks))
    return [r for part in parts for r in part]


@dataclass
class LhsResult:
    estimate: Estimate
    window: np.ndarray
    results: list
    cell: float

    @property
    def flagged_fraction(self):
        if not self.results:
            return 0.0
        return sum(1 for r in self.results if r.flags) / len(self.results)


def lhs_integral(phi, A, j, config=CoareaConfig(), problem=None):
    """``∫_{Pi_j} H^1(level set ∩ A) dp`` over a jittered p-grid.

    Error proxy: the larger of the half-grid difference (every other cell
    in each direction, reweighted) and twice the collapsed-strata standard
    error.  The latter pairs neighbouring cells along the first axis and uses
    ``cell^2 * sum (f_a - f_b)^2`` as the variance; it catches the sampling
    error from cells cut by the boundary of the projected region, which a
    single half-grid difference can miss by chance.
    """
    problem = problem or _problem(phi, A, j, config)
    window = problem.window(config.scan)
    pts, cell, multi = p_grid(window, config.p_grid, config.seed)
    results = _run_chunks(lambda c: level_sets(problem, c, config.scan), pts, config.workers)
    lengths = np.array([r.length for r in results])
    full = math.fsum(lengths) * cell
    sub = np.all(multi % 2 == 0, axis=-1)
    coarse = math.fsum(lengths[sub]) * cell * 2 ** multi.shape[-1]
    return LhsResult(Estimate(full, max(abs(full - coarse), 2.0 * _collapsed_se(lengths, multi, cell))),
                     window, results, cell)


def _collapsed_se(values, multi, cell):
    """Standard error of a one-sample-per-cell stratified sum, by pairing cells."""
    a = multi[:, 0] % 2 == 0
    partner = np.ravel_multi_index(tuple((multi + np.eye(multi.shape[-1], dtype=int)[0]).T),
                                   (int(multi.max()) + 1,) * multi.shape[-1], mode="clip")
    d = values[a] - values[partner[a]]
    return cell * math.sqrt(math.fsum(d * d))


def lhs_covering_oracle(phi, p, j, A, eps=0.05, scan=64, problem=None, config=TraceConfig()):
    """Covering estimate of ``H^1`` of one level set, independent of the tracer.

    Scan nodes in the residual band are pulled onto the level set by
    Gauss-Newton on the Euclidean Jacobian of ``Pr_j . phi``; the resulting
    cloud is measured with :func:`hausdorff1_eps`.
    """
    problem = problem or LevelSetProblem(phi, A, j, config)
    p = np.asarray(p, dtype=float)
    band = problem.band_points(scan, p)
    if len(band) == 0:
        return 0.0
    pp = np.broadcast_to(p, (len(band), len(p))).copy()
    pts, res = problem.polish(band, pp)
    keep = (res <= problem.config.tau_seed) & A.contains(pts)
    pts = pts[keep]
    if len(pts) == 0:
        return 0.0
    # collapse points that polished to the same place
    pts = np.unique(np.round(pts, 12), axis=0)
    return hausdorff1_eps(pts, eps, problem.group)


@dataclass
class CoareaReport:
    schema: str
    map: str
    map_params: dict
    j: int
    region: dict
    lhs: Estimate
    rhs: Estimate
    slack: float
    verdict: str
    equality_expected: bool
    tolerance: float
    diagnostics: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": self.schema,
            "map": self.map,
            "map_params": self.map_params,
            "j": self.j,
            "box": self.region["box"],
            "region": self.region,
            "lhs": {"value": self.lhs.value, "err": self.lhs.err},
            "rhs": {"value": self.rhs.value, "err": self.rhs.err},
            "slack": self.slack,
            "verdict": self.verdict,
            "equality_expected": self.equality_expected,
            "tolerance": self.tolerance,
            "diagnostics": self.diagnostics,
            "settings": self.settings,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _equality_expected(phi, config):
    if config.finite_codistortion is not None:
        return bool(config.finite_codistortion)
    from .maps import FINITE_CODISTORTION
    from .schema import builtin_schema
    if phi.group.schema.signature == builtin_schema("heisenberg(1)").signature:
        return True
    return phi.name in FINITE_CODISTORTION


def verify_coarea(phi, A, j, config=CoareaConfig()):
    """Estimate both sides and classify.

    ``violation`` iff ``lhs > rhs + tol`` with
    ``tol = lhs_err + rhs_err + tau_verdict * max(|lhs|, |rhs|)``.
    When equality is expected (H^1, or a finite-codistortion map) the verdict
    is ``equality-ok`` if ``|lhs - rhs| <= tol + tau_equality * |rhs|``.
    """
    if not isinstance(A, Region):
        A = Region(A, phi.group)
    rhs = rhs_integral(phi, A, j, config.quad, config.trace.method,
                       config.failure_budget, config.corrupt_factor)
    lhs_res = lhs_integral(phi, A, j, config)
    lhs = lhs_res.estimate
    tol = lhs.err + rhs.err + config.tau_verdict * max(abs(lhs.value), abs(rhs.value)) + 1e-12
    expected = _equality_expected(phi, config)
    if lhs.value > rhs.value + tol:
        verdict = "violation"
    elif expected and abs(lhs.value - rhs.value) <= tol + config.tau_equality * abs(rhs.value):
        verdict = "equality-ok"
    else:
        verdict = "inequality-ok"
    diags = [dict(index=i, **r.as_dict()) for i, r in enumerate(lhs_res.results)]
    settings = config.as_dict()
    settings["p_window"] = lhs_res.window.tolist()
    settings["flagged_fraction"] = lhs_res.flagged_fraction
    return CoareaReport(
        schema=phi.group.schema.name, map=phi.name, map_params=dict(phi.params), j=int(j),
        region=A.as_dict(), lhs=lhs, rhs=rhs, slack=rhs.value - lhs.value, verdict=verdict,
        equality_expected=expected, tolerance=tol, diagnostics=diags, settings=settings)


def eilenberg_bound_check(phi, E, j, config=CoareaConfig()):
    """``(lhs, bound, ratio)`` with ``bound = Lip^(nu-1) * vol(E)``."""
    if not isinstance(E, Region):
        E = Region(E, phi.group)
    lip = phi.lipschitz_bound(E.box)
    if lip is None:
        raise ValueError(f"map {phi.name} carries no Lipschitz estimate")
    lhs = lhs_integral(phi, E, j, config).estimate.value
    bound = lip ** (phi.group.schema.nu - 1) * E.volume
    return lhs, bound, (lhs / bound if bound > 0 else 0.0)


def eilenberg_spread(ratios):
    """max/min over the nonzero ratios of a fixture family (1.0 if fewer than two)."""
    nz = [r for r in ratios if r > 0]
    if len(nz) < 2:
        return 1.0
    return max(nz) / min(nz)


def with_overrides(config, **kw):
    return replace(config, **kw)
