"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]`` or ``[FAIL]`` line with the measured
numbers, then asserts.  Run with ``pytest tests/test_acceptance.py -v -s``
to see the lines; they also appear in the captured output of failures.
"""
import json
import time

import numpy as np
import pytest

from carnot_coarea.group import as_group
from carnot_coarea.harness import (CoareaConfig, eilenberg_bound_check, eilenberg_spread,
                                   lhs_covering_oracle, p_grid, verify_coarea)
from carnot_coarea.maps import BUILTIN_MAPS, builtin_map
from carnot_coarea.metric import QuadratureConfig, hausdorff1_eps
from carnot_coarea.pansu import adjugate, complete_hom, horizontal_block
from carnot_coarea.projection import fubini_check, fubini_integrand, project_array
from carnot_coarea.tracing import LevelSetProblem, Region, level_sets

H1 = as_group("heisenberg(1)")
UNIT = Region([[0, 1]] * 3, H1)
# reduced resolution for the wide matrix sweeps; each verdict carries its own error proxy
SWEEP = CoareaConfig(p_grid=32, scan=24, quad=QuadratureConfig("grid", 16))


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


def h1_closed_form(p, q):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    a, b, c = q[..., 0], q[..., 1], q[..., 2]
    return np.stack([x + a, y + b, z + c + (x * b - y * a) / 2], axis=-1)


def test_ac1_group_core(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for name in ("heisenberg(1)", "heisenberg(2)", "free_step2(3)", "abelian(4)"):
        g = as_group(name)
        x, y, z = rng.uniform(-2, 2, (3, 10_000, g.N))
        worst[name] = float(np.max(np.abs(g.mul(g.mul(x, y), z) - g.mul(x, g.mul(y, z)))))
    x, y = rng.uniform(-2, 2, (2, 10_000, 3))
    exact = bool(np.array_equal(H1.mul(x, y), h1_closed_form(x, y)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and exact and elapsed < 5
    report(capsys, "AC1 group core", ok,
           f"max assoc defect {max(worst.values()):.2e} (<=1e-12), H1 closed form exact={exact}, "
           f"{elapsed:.2f}s (<5s)")


def test_ac2_fubini(capsys):
    t0 = time.perf_counter()
    box = [[0, 1]] * 3
    worst = 0.0
    for f in ("one", "x2sq", "half"):
        for j in (1, 2):
            lhs, rhs, _ = fubini_check(fubini_integrand(f, box), box, j, H1,
                                       QuadratureConfig("grid", 128))
            worst = max(worst, abs(lhs.value - rhs.value) / abs(rhs.value))
    elapsed = time.perf_counter() - t0
    report(capsys, "AC2 Fubini", worst <= 1e-3 and elapsed < 30,
           f"max relative gap {worst:.2e} (<=1e-3) at grid 128, {elapsed:.1f}s (<30s)")


@pytest.mark.slow
def test_ac3_coarea_equality(capsys):
    cases = [("identity", 1.0), ("dilation:lam=2", 8.0), ("anisotropic:lam=2,mu=3", 18.0),
             ("rotation:theta=0.3", 1.0)]
    parts, ok = [], True
    for spec, expected in cases:
        t0 = time.perf_counter()
        rep = verify_coarea(builtin_map(spec, H1), UNIT, 1, CoareaConfig())
        elapsed = time.perf_counter() - t0
        rel = abs(rep.lhs.value - rep.rhs.value) / rep.rhs.value
        good = (rel <= 0.05 and elapsed < 120 and abs(rep.rhs.value - expected) <= 1e-3 * expected
                and rep.verdict == "equality-ok")
        ok &= good
        parts.append(f"{spec} lhs={rep.lhs.value:.4f} rhs={rep.rhs.value:.4f} "
                     f"rel={rel:.3f} {elapsed:.0f}s")
    report(capsys, "AC3 coarea equality on H1 (<=5%, <2 min each)", ok, "; ".join(parts))


MATRIX_MAPS = ["identity", "translate:g=0.3;-0.2;0.5", "dilation:lam=2", "degenerate",
               "anisotropic:lam=2,mu=3", "rotation:theta=0.3", "shear:a=0.5", "fold"]
OFFSET_BOX = Region([[-0.5, 0.5], [0, 1], [-0.3, 0.7]], H1)


@pytest.mark.slow
def test_ac4_inequality_matrix(capsys):
    assert set(name.split(":")[0] for name in MATRIX_MAPS) == set(BUILTIN_MAPS)
    cases = [(m, UNIT, j) for m in MATRIX_MAPS for j in (1, 2)]
    cases += [(m, OFFSET_BOX, 1 + k % 2) for k, m in enumerate(MATRIX_MAPS)]
    bad, degenerate = [], []
    for spec, region, j in cases:
        rep = verify_coarea(builtin_map(spec, H1), region, j, SWEEP)
        if rep.verdict == "violation":
            bad.append(f"{spec} j={j}")
        if spec == "degenerate":
            degenerate.append(max(abs(rep.lhs.value), abs(rep.rhs.value)))
    ok = not bad and len(cases) >= 20 and max(degenerate) <= 1e-6
    report(capsys, "AC4 no violations", ok,
           f"{len(cases)} cases, violations: {bad or 'none'}, "
           f"degenerate max(|lhs|,|rhs|)={max(degenerate):.1e} (<=1e-6)")


@pytest.mark.slow
def test_ac5_estimator_independence(capsys):
    # p values are drawn from a coarse jittered grid over each projected window.
    # Level sets shorter than the covering scale 2 eps on both estimates (mostly
    # p outside the image) are not resolvable by the oracle; they are counted
    # separately and excluded from the agreement fraction.
    cfg = CoareaConfig()
    fixtures = ["identity", "dilation:lam=2", "anisotropic:lam=2,mu=3", "rotation:theta=0.3",
                "shear:a=0.5", "fold"]
    small = 2 * cfg.oracle_eps
    agree = total = skipped = 0
    worst = 0.0
    for spec in fixtures:
        phi = builtin_map(spec, H1)
        for j in (1, 2):
            prob = LevelSetProblem(phi, UNIT, j, cfg.trace)
            pts, _, _ = p_grid(prob.window(cfg.scan), 4, 11)
            traced = [r.length for r in level_sets(prob, pts, cfg.scan)]
            for p, t in zip(pts, traced):
                o = lhs_covering_oracle(phi, p, j, UNIT, eps=cfg.oracle_eps, scan=cfg.oracle_scan,
                                        problem=prob)
                if max(t, o) < small:
                    skipped += 1
                    continue
                total += 1
                rel = abs(o - t) / max(t, o)
                worst = max(worst, rel)
                agree += rel <= 0.15
    frac = agree / total if total else 0.0
    report(capsys, "AC5 traced vs covering oracle", frac >= 0.95 and total >= 60,
           f"{agree}/{total} resolved p within 15% ({frac:.1%}, need >=95%), worst {worst:.1%}; "
           f"{skipped} p below the covering scale skipped")


def test_ac6_pansu_differentials(capsys):
    rng = np.random.default_rng(6)
    fd_worst = 0.0
    for spec in ("identity", "translate:g=0.3;-0.2;0.5", "dilation:lam=2", "degenerate",
                 "anisotropic:lam=2,mu=3", "rotation:theta=0.3", "shear:a=0.5", "fold"):
        phi = builtin_map(spec, H1)
        x = rng.uniform(-1, 1, (200, 3))
        fd = horizontal_block(phi, x, "fd")
        exact = horizontal_block(phi, x, "analytic")
        fd_worst = max(fd_worst, float(np.max(np.abs(fd - exact))))
    adj_worst = 0.0
    for name in ("heisenberg(1)", "heisenberg(2)", "free_step2(3)", "abelian(4)"):
        g = as_group(name)
        for _ in range(250):
            B = rng.uniform(-2, 2, (g.n1, g.n1))
            if name == "heisenberg(2)":
                # symplectic-conformal block: a rotation in each plane with a common scale
                a, b = rng.uniform(0.2, 2, 2)
                B = np.array([[a, 0, -b, 0], [0, a, 0, -b], [b, 0, a, 0], [0, b, 0, a]])
            L = complete_hom(B, g).matrix
            A = adjugate(L)
            det = np.linalg.det(L)
            scale = max(1.0, abs(det))
            adj_worst = max(adj_worst, float(np.max(np.abs(L @ A - det * np.eye(g.N)))) / scale)
    det_worst = 0.0
    for B in rng.uniform(-2, 2, (1000, 2, 2)):
        L = complete_hom(B, H1).matrix
        jh = np.linalg.det(B)
        det_worst = max(det_worst, abs(np.linalg.det(L) - jh ** 2) / max(1.0, jh ** 2))
    ok = fd_worst <= 1e-6 and adj_worst <= 1e-10 and det_worst <= 1e-10
    report(capsys, "AC6 Pansu differentials", ok,
           f"FD vs analytic {fd_worst:.1e} (<=1e-6), adjugate identity {adj_worst:.1e} "
           f"over 1000 homs (<=1e-10), det=J_h^2 {det_worst:.1e} (<=1e-10)")


@pytest.mark.slow
def test_ac7_invariance(capsys):
    rng = np.random.default_rng(7)
    x = rng.uniform(-2, 2, (1000, 3))
    equiv = 0.0
    for j in (1, 2):
        sig = np.delete(H1.sigma, j - 1)
        for lam in (0.5, 2.0, 3.0):
            lhs = project_array(H1, H1.dilate(lam, x), j)
            rhs = project_array(H1, x, j) * lam ** sig
            equiv = max(equiv, float(np.max(np.abs(lhs - rhs))) / max(1.0, np.max(np.abs(lhs))))

    phi = builtin_map("fold", H1)
    base = verify_coarea(phi, UNIT, 1, SWEEP)
    left_ok = True
    for g in rng.uniform(-1, 1, (2, 3)):
        moved = verify_coarea(phi.compose_left_translation(g), UNIT.translated(H1.inv(g)), 1, SWEEP)
        tol = base.lhs.err + moved.lhs.err + base.rhs.err + moved.rhs.err
        left_ok &= abs(base.lhs.value - moved.lhs.value) <= tol
        left_ok &= abs(base.rhs.value - moved.rhs.value) <= tol

    t = np.linspace(0, 1, 801)
    seg = H1.mul(np.array([0.0, 0.3, 0.1]), H1.exp_horizontal(0, t))
    h0 = hausdorff1_eps(seg, 0.05, H1)
    homog = max(abs(hausdorff1_eps(H1.dilate(r, seg), 0.05 * r, H1) / (r * h0) - 1)
                for r in (0.5, 2.0, 4.0))
    ok = equiv <= 1e-12 and left_ok and homog <= 0.10
    report(capsys, "AC7 invariance", ok,
           f"proj_P dilation defect {equiv:.1e}, verify left-invariant={left_ok}, "
           f"covering homogeneity {homog:.1%} (<=10%)")


@pytest.mark.slow
def test_ac8_eilenberg(capsys):
    cfg = CoareaConfig(p_grid=32, scan=24)
    g = np.array([0.7, -0.4, 0.25])
    fixtures = [
        ("identity [0,1]^3", "identity", UNIT),
        ("identity [0,2]^3", "identity", Region([[0, 2]] * 3, H1)),
        ("identity g.[0,1]^3", "identity", UNIT.translated(g)),
        ("dilation 2", "dilation:lam=2", UNIT),
        ("dilation 4", "dilation:lam=4", UNIT),
    ]
    ratios = []
    for _, spec, region in fixtures:
        ratios.append(eilenberg_bound_check(builtin_map(spec, H1), region, 1, cfg)[2])
    spread = eilenberg_spread(ratios)
    report(capsys, "AC8 Eilenberg bound", spread <= 2.0,
           f"ratios {', '.join(f'{r:.3f}' for r in ratios)}; spread {spread:.3f} (<=2)")


@pytest.mark.slow
def test_ac9_reproducibility(capsys):
    phi = builtin_map("shear:a=0.5", H1)
    texts = [verify_coarea(phi, UNIT, 2, CoareaConfig(p_grid=32, scan=24, workers=w)).to_json()
             for w in (1, 1, 2, 4)]
    same = all(t == texts[0] for t in texts)
    json.loads(texts[0])
    report(capsys, "AC9 reproducibility", same,
           f"{len(texts)} runs (workers 1, 1, 2, 4) byte-identical={same}")
