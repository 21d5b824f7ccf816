"""Level-set tracing, both sides of the coarea inequality, and verdicts."""
import json

import numpy as np
import pytest

from carnot_coarea.group import as_group
from carnot_coarea.harness import (CoareaConfig, eilenberg_bound_check, eilenberg_spread,
                                   lhs_covering_oracle, lhs_integral, p_grid, rhs_integral,
                                   verify_coarea)
from carnot_coarea.maps import builtin_map
from carnot_coarea.metric import QuadratureConfig
from carnot_coarea.pansu import ContactMap
from carnot_coarea.tracing import LevelSetProblem, Region, TraceConfig, level_sets

H1 = as_group("heisenberg(1)")
UNIT = Region([[0, 1]] * 3, H1)
FAST = CoareaConfig(p_grid=32, scan=24, quad=QuadratureConfig("grid", 16))


def phi(spec):
    return builtin_map(spec, H1)


def identity_segment_length(y0, z0):
    """Length of {(t, y0, z0 - y0 t / 2) : t in [0, 1]} inside the unit cube."""
    t = np.linspace(0, 1, 200_001)
    z = z0 - y0 * t / 2
    inside = (z >= 0) & (z <= 1) & (0 <= y0 <= 1)
    return float(np.count_nonzero(inside) - 1) / 200_000 if inside.any() else 0.0


# --- bulk side ----------------------------------------------------------------


def test_rhs_examples():
    assert rhs_integral(phi("identity"), UNIT, 1).value == pytest.approx(1.0, abs=1e-12)
    assert rhs_integral(phi("dilation:lam=2"), UNIT, 1).value == pytest.approx(8.0, rel=1e-3)
    assert abs(rhs_integral(phi("degenerate"), UNIT, 1).value) <= 1e-9


def test_rhs_shear_against_closed_form():
    # |adj column 1| = sqrt(1 + 4 a^2 x^2) for the shear, integrated over x in [0, 1]
    # with a = 1/2 that is the integral of sqrt(1 + x^2)
    exact = (np.sqrt(2) + np.arcsinh(1)) / 2
    est = rhs_integral(phi("shear:a=0.5"), UNIT, 1, QuadratureConfig("grid", 32))
    assert est.value == pytest.approx(exact, abs=max(est.err, 1e-5))


def test_rhs_failure_budget():
    # jumps on a scale far below any quadrature cell, so most stencils straddle one
    broken = ContactMap(H1, lambda x: x + np.floor(x[..., :1] * 2.0 ** 14) % 2, name="broken")
    from carnot_coarea.pansu import DifferentialError
    with pytest.raises(DifferentialError):
        rhs_integral(broken, Region([[0.4, 0.6], [0, 1], [0, 1]], H1), 1,
                     QuadratureConfig("grid", 8), method="fd")


# --- level sets ---------------------------------------------------------------


@pytest.mark.parametrize("y0, z0", [(0.4, 0.5), (0.6, 0.1), (0.9, 0.95)])
def test_identity_level_set_is_segment(y0, z0):
    prob = LevelSetProblem(phi("identity"), UNIT, 1)
    res = level_sets(prob, np.array([[y0, z0]]), 24)[0]
    assert len(res.curves) == 1
    assert res.length == pytest.approx(identity_segment_length(y0, z0), abs=1e-4)


def test_dilation_level_set_residual():
    prob = LevelSetProblem(phi("dilation:lam=2"), UNIT, 1)
    res = level_sets(prob, np.array([[0.83, 1.37]]), 24)[0]
    assert len(res.curves) == 1
    assert res.as_dict()["max_residual"] <= 1e-8
    # preimage of a segment of length 2 t under a factor-2 dilation
    assert res.length > 0


def test_degenerate_has_no_seeds():
    prob = LevelSetProblem(phi("degenerate"), UNIT, 1)
    for res in level_sets(prob, np.array([[0.31, 0.17], [0.05, -0.2]]), 24):
        assert res.curves == [] and res.length == 0.0


def test_critical_seeds_are_not_traced():
    # x -> (x1, 0, 0) projects along X2 onto the line z = 0: near it every seed is critical
    prob = LevelSetProblem(phi("degenerate"), UNIT, 2)
    res = level_sets(prob, np.array([[0.3, 2e-5]]), 24)[0]
    assert res.curves == [] and res.length == 0.0
    assert res.seeds_critical >= 1 and "critical" in res.flags
    # a flat plateau of the residual yields a handful of candidates, not the whole band
    assert res.candidates <= 24


def test_traced_curves_are_horizontal_and_on_level_set():
    prob = LevelSetProblem(phi("fold"), UNIT, 1)
    res = level_sets(prob, np.array([[0.45, 0.3]]), 24)[0]
    assert res.curves
    for c in res.curves:
        assert c.max_residual <= 1e-7
        t = c.curve.tangents
        assert np.max(np.abs(t[:, 2])) <= 1e-12 * max(1.0, np.max(np.abs(t)))
        assert np.all(UNIT.contains(c.curve.points, slack=1e-9))


def test_p_grid_is_jittered_and_deterministic():
    a, cell, multi = p_grid([[0, 1], [0, 2]], 8, 5)
    b, _, _ = p_grid([[0, 1], [0, 2]], 8, 5)
    np.testing.assert_array_equal(a, b)
    assert cell == pytest.approx(2 / 64)
    lo = np.array([0, 0]) + multi * [1 / 8, 2 / 8]
    assert np.all((a >= lo) & (a < lo + [1 / 8, 2 / 8]))


# --- covering oracle ----------------------------------------------------------


def test_covering_oracle_identity_segment():
    prob = LevelSetProblem(phi("identity"), UNIT, 1)
    for y0, z0 in [(0.4, 0.5), (0.6, 0.1)]:
        est = lhs_covering_oracle(phi("identity"), [y0, z0], 1, UNIT, problem=prob)
        assert est == pytest.approx(identity_segment_length(y0, z0), rel=0.10)


def test_covering_oracle_outside_window():
    assert lhs_covering_oracle(phi("identity"), [5.0, 5.0], 1, UNIT) == 0.0


def test_covering_oracle_matches_tracer_dilation():
    f = phi("dilation:lam=2")
    prob = LevelSetProblem(f, UNIT, 1)
    for p in ([0.83, 1.37], [1.2, 2.6], [0.4, 0.3]):
        traced = level_sets(prob, np.array([p]), 24)[0].length
        oracle = lhs_covering_oracle(f, p, 1, UNIT, problem=prob)
        assert oracle == pytest.approx(traced, rel=0.15)


# --- integrals and verdicts ---------------------------------------------------


def test_lhs_identity():
    est = lhs_integral(phi("identity"), UNIT, 1, FAST).estimate
    assert est.value == pytest.approx(1.0, rel=0.02)


def test_lhs_degenerate():
    assert lhs_integral(phi("degenerate"), UNIT, 1, FAST).estimate.value == 0.0


@pytest.mark.parametrize("spec, expected", [("identity", 1.0), ("anisotropic:lam=2,mu=3", 18.0)])
def test_verify_equality(spec, expected):
    rep = verify_coarea(phi(spec), UNIT, 1, FAST)
    assert rep.verdict == "equality-ok"
    assert rep.rhs.value == pytest.approx(expected, rel=1e-3)
    assert rep.lhs.value == pytest.approx(expected, rel=0.05)
    assert rep.slack == pytest.approx(rep.rhs.value - rep.lhs.value)


def test_verify_degenerate_both_zero():
    rep = verify_coarea(phi("degenerate"), UNIT, 2, FAST)
    assert rep.verdict == "equality-ok"
    assert rep.lhs.value <= 1e-6 and rep.rhs.value <= 1e-6


def test_forced_violation():
    cfg = CoareaConfig(p_grid=16, scan=24, quad=QuadratureConfig("grid", 8), corrupt_factor=0.5)
    assert verify_coarea(phi("identity"), UNIT, 1, cfg).verdict == "violation"


def test_report_contents():
    rep = verify_coarea(phi("shear:a=0.5"), UNIT, 2, CoareaConfig(p_grid=8, scan=16))
    d = json.loads(rep.to_json())
    for key in ("schema", "map", "j", "box", "lhs", "rhs", "slack", "verdict", "diagnostics",
                "settings", "tolerance"):
        assert key in d
    assert len(d["diagnostics"]) == 64
    first = d["diagnostics"][0]
    for key in ("p", "candidates", "seeds_dropped", "curves", "length", "flags"):
        assert key in first
    s = d["settings"]
    assert s["tau_verdict"] == 1e-3 and s["trace"]["tau_seed"] == 1e-4
    assert s["trace"]["tau_track"] == 1e-7 and "flagged_fraction" in s
    assert "workers" not in s


def test_left_invariance():
    g = np.array([0.4, -0.3, 0.2])
    f = phi("fold")
    a = verify_coarea(f, UNIT, 1, FAST)
    b = verify_coarea(f.compose_left_translation(g), UNIT.translated(-g), 1, FAST)
    tol = a.lhs.err + b.lhs.err + a.rhs.err + b.rhs.err
    assert abs(a.lhs.value - b.lhs.value) <= tol
    assert abs(a.rhs.value - b.rhs.value) <= tol


def test_refinement_consistency():
    f = phi("shear:a=0.5")
    coarse = CoareaConfig(p_grid=16, scan=24, quad=QuadratureConfig("grid", 16))
    fine = CoareaConfig(p_grid=32, scan=24, quad=QuadratureConfig("grid", 32))
    a, b = verify_coarea(f, UNIT, 1, coarse), verify_coarea(f, UNIT, 1, fine)
    assert abs(a.lhs.value - b.lhs.value) <= a.lhs.err
    assert abs(a.rhs.value - b.rhs.value) <= a.rhs.err


def test_workers_do_not_change_report():
    cfg = CoareaConfig(p_grid=24, scan=16)
    one = verify_coarea(phi("rotation:theta=0.3"), UNIT, 1, cfg).to_json()
    three = verify_coarea(phi("rotation:theta=0.3"), UNIT, 1,
                          CoareaConfig(p_grid=24, scan=16, workers=3)).to_json()
    assert one == three


def test_abelian_plane():
    # on R^2 the level sets of x -> x_2 are horizontal segments: lhs = area
    a = as_group("abelian(2)")
    rep = verify_coarea(builtin_map("identity", a), Region([[0, 1], [0, 2]], a), 1,
                        CoareaConfig(p_grid=32, scan=24))
    assert rep.verdict == "equality-ok"
    assert rep.rhs.value == pytest.approx(2.0)


# --- Eilenberg-type bound -------------------------------------------------------


def test_eilenberg_identity_boxes():
    cfg = CoareaConfig(p_grid=24, scan=24)
    ratios = [eilenberg_bound_check(phi("identity"), Region([[0, s]] * 3, H1), 1, cfg)[2]
              for s in (1, 2, 3)]
    assert eilenberg_spread(ratios) <= 1.10


def test_eilenberg_dilations():
    cfg = CoareaConfig(p_grid=24, scan=24)
    r2 = eilenberg_bound_check(phi("dilation:lam=2"), UNIT, 1, cfg)
    r4 = eilenberg_bound_check(phi("dilation:lam=4"), UNIT, 1, cfg)
    assert r2[1] == pytest.approx(8.0) and r4[1] == pytest.approx(64.0)
    assert eilenberg_spread([r2[2], r4[2]]) <= 2.0


def test_eilenberg_degenerate_and_missing_lipschitz():
    lhs, bound, ratio = eilenberg_bound_check(phi("degenerate"), UNIT, 1, FAST)
    assert lhs == 0.0 and ratio == 0.0
    bare = ContactMap(H1, lambda x: x, name="bare")
    with pytest.raises(ValueError):
        eilenberg_bound_check(bare, UNIT, 1, FAST)


def test_region_validation():
    with pytest.raises(ValueError):
        Region([[0, 1], [1, 1], [0, 1]], H1)
    with pytest.raises(ValueError):
        Region([[0, 1]] * 2, H1)
    r = Region([[0, 2], [0, 1], [0, 3]], H1)
    assert r.volume == 6.0
    x = np.array([0.5, 0.5, 0.5])
    g = np.array([1.0, 2.0, 3.0])
    assert r.translated(g).contains(H1.mul(g, x))


def test_trace_config_echo():
    d = TraceConfig().as_dict()
    assert d["tau_seed"] == 1e-4 and d["tau_track"] == 1e-7 and d["tau_adj"] == 1e-8
