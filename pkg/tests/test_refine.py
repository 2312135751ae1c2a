import json
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deformbox.refine import (
    FAMILIES,
    LookupMissError,
    RefineInfeasibleError,
    RefineProblem,
    RefineSolution,
    build_problem,
    check_solution,
    evaluate_layout,
    make_problem,
    side_axis,
    solve,
    solve_qp,
)
from deformbox.structure import SIDE, Category, SupportLookup, build_shape_record
from deformbox.synth import airplane_fixture, chair_fixture, gapped_record, random_refine_instance
from oracles import dual_projected_gradient, enumerate_refine, refine_constraints

# --------------------------------------------------------------------------
# QP subsolver


def _random_qp(rng, n=5, meq=1, min_=4):
    h = rng.uniform(0.5, 3.0, n)
    x0 = rng.normal(size=n)
    A_eq = rng.normal(size=(meq, n))
    feasible_point = rng.normal(size=n)
    b_eq = A_eq @ feasible_point
    A_in = rng.normal(size=(min_, n))
    b_in = A_in @ feasible_point - rng.uniform(0, 1, min_)
    return h, x0, A_eq, b_eq, A_in, b_in


@pytest.mark.parametrize("seed", range(25))
def test_qp_matches_dual_gradient_oracle(seed):
    rng = np.random.default_rng(seed)
    h, x0, A_eq, b_eq, A_in, b_in = _random_qp(rng)
    res = solve_qp(np.diag(h), -h * x0, A_eq, b_eq, A_in, b_in)
    assert res.ok
    ref, obj = dual_projected_gradient(h, x0, A_eq, b_eq, A_in, b_in)
    assert 0.5 * np.sum(h * (res.x - x0) ** 2) == pytest.approx(obj, abs=1e-8)
    np.testing.assert_allclose(res.x, ref, atol=1e-5)


def test_qp_without_constraints_is_unconstrained_minimum():
    res = solve_qp(np.diag([2.0, 4.0]), np.array([-2.0, 4.0]), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0))
    np.testing.assert_allclose(res.x, [1.0, -1.0])


def test_qp_detects_infeasibility():
    A_in = np.array([[1.0], [-1.0]])
    b_in = np.array([1.0, 0.0])  # x >= 1 and x <= 0
    res = solve_qp(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0), A_in, b_in)
    assert not res.ok


# --------------------------------------------------------------------------
# problem construction


def test_no_constraints_returns_input():
    p = np.array([[0.0, 1, 0], [2, 0, 1]])
    q = np.array([[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]])
    sol = solve(make_problem(p, q))
    np.testing.assert_allclose(sol.p, p, atol=1e-15)
    np.testing.assert_allclose(sol.q, q, atol=1e-15)
    assert sol.objective < 1e-30


def test_symmetric_pair_closed_form():
    p = np.array([[1.0, 0, 0], [-1.2, 0, 0]])
    q = np.full((2, 3), 0.2)
    sol = solve(make_problem(p, q, symmetry=[(0, 1, (1, 0, 0), 0.0)], stable=False))
    assert sol.p[0, 0] == pytest.approx(1.1, abs=1e-12)
    assert sol.p[1, 0] == pytest.approx(-1.1, abs=1e-12)
    assert sol.objective == pytest.approx(0.02, abs=1e-12)


def test_unequal_legs_become_equal():
    heights = [0.9, 1.0, 1.0, 1.0]
    p = np.array([[x, h / 2, z] for h, (x, z) in zip(heights, [(-1, -1), (1, -1), (-1, 1), (1, 1)])])
    q = np.array([[0.05, h / 2, 0.05] for h in heights])
    sol = solve(make_problem(p, q, equal_length=[((0, 1, 2, 3), 1)]))
    assert np.ptp(sol.q[:, 1]) < 1e-12


def test_side_axis_prefers_largest_face_overlap():
    p = np.array([[0.0, 0, 0], [1.0, 0.0, 0.0]])
    q = np.array([[0.5, 0.5, 0.5], [0.5, 0.1, 0.1]])
    assert side_axis(p, q, 0, 1) == 0


def test_problem_validation():
    p = np.zeros((2, 3))
    q = np.full((2, 3), 0.1)
    with pytest.raises(ValueError):
        make_problem(p, -q)
    with pytest.raises(ValueError):
        make_problem(p, q, equal_length=[((0, 1), 3)])
    with pytest.raises(ValueError):
        make_problem(p, q, alpha=0.0)
    with pytest.raises(ValueError):
        make_problem(p, q, supports=[(0, 1, "below")], big_m=1e-3)


def test_toy_chair_problem_shape():
    cat, meshes, _ = chair_fixture(with_back=False, with_arms=False)
    rec, _ = build_shape_record(cat, meshes)
    prob = build_problem(rec, {cat.label_id(k): v for k, v in meshes.items()}, cat.lookup, cat)
    assert prob.num_parts == 5
    assert len(prob.equal_length) == 1 and len(prob.equal_length[0][0]) == 4
    assert len(prob.symmetry) == 2


def test_no_symmetry_bits_no_symmetry_constraints():
    cat, meshes, _ = chair_fixture(with_back=False, with_arms=False)
    plain = Category(cat.name, cat.labels, {}, {}, cat.lookup)
    rec, _ = build_shape_record(plain, {"seat": meshes["seat"], "leg_fl": meshes["leg_fl"]})
    assert not any(p.has_symmetry for p in rec.parts)
    prob = build_problem(rec, {cat.label_id(k): meshes[k] for k in ("seat", "leg_fl")}, plain.lookup, plain)
    assert prob.symmetry == []


def test_airplane_wings_get_side_direction():
    cat, meshes, _ = airplane_fixture()
    rec, _ = build_shape_record(cat, meshes)
    prob = build_problem(rec, {cat.label_id(k): v for k, v in meshes.items()}, cat.lookup, cat)
    names = prob.names
    wing_edges = [s for s in prob.supports if s.supporter >= 0 and names[s.supporter] == "fuselage" and names[s.supported].startswith("wing")]
    assert len(wing_edges) == 2
    assert all(s.kind == SIDE and s.axis == 0 for s in wing_edges)


def test_lookup_miss_lists_the_pair():
    cat, meshes, _ = chair_fixture(with_back=False, with_arms=False)
    rec, _ = build_shape_record(cat, meshes)
    with pytest.raises(LookupMissError) as err:
        build_problem(rec, {cat.label_id(k): v for k, v in meshes.items()}, SupportLookup({}), cat)
    assert "leg_fl->seat" in str(err.value)


def test_problem_json_round_trip(tmp_path):
    prob = random_refine_instance(np.random.default_rng(4))
    prob.save(tmp_path / "p.json")
    back = RefineProblem.load(tmp_path / "p.json")
    assert solve(back).objective == pytest.approx(solve(prob).objective, abs=1e-14)


# --------------------------------------------------------------------------
# branch and bound


@pytest.mark.parametrize("seed", range(12))
def test_branch_and_bound_matches_enumeration(seed):
    prob = random_refine_instance(np.random.default_rng(1000 + seed))
    best = enumerate_refine(prob)
    assert best is not None
    sol = solve(prob)
    assert sol.objective == pytest.approx(best[0], abs=1e-6)
    assert sol.feasible


def test_oracle_constraints_agree_with_solution_rows():
    prob = random_refine_instance(np.random.default_rng(7))
    sol = solve(prob)
    A_eq, b_eq, A_ge, b_ge = refine_constraints(prob, sol.assignment)
    assert np.abs(A_eq @ sol.x - b_eq).max(initial=0.0) < 1e-8
    assert (A_ge @ sol.x - b_ge).min(initial=0.0) > -1e-8


@given(st.integers(0, 10_000))
def test_solution_invariants(seed):
    prob = random_refine_instance(np.random.default_rng(seed))
    sol = solve(prob)
    assert sol.objective >= 0
    assert all(a + b <= 1 for a, b in sol.assignment)
    assert sol.feasible
    # the side whose indicator is 0 holds without the M relaxation
    for e, (d1, d2) in enumerate(sol.assignment):
        for which, d in ((1, d1), (2, d2)):
            if d == 0:
                rows = prob.containment_rows(prob.containment_edges[e], which, 0)
                assert min(r.coef @ sol.x - r.rhs for r in rows) > -1e-8
    again = solve(prob.with_layout(sol.p, sol.q))
    assert again.objective < 1e-8
    np.testing.assert_allclose(again.p, sol.p, atol=1e-8)
    np.testing.assert_allclose(again.q, sol.q, atol=1e-8)


def test_objective_zero_iff_input_feasible():
    prob = random_refine_instance(np.random.default_rng(11))
    before = evaluate_layout(prob, prob.p, prob.q)
    sol = solve(prob)
    assert (max(before.values()) > 1e-6) == (sol.objective > 1e-12)


def test_infeasible_problem_reports_least_violating_assignment():
    p = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    q = np.full((2, 3), 0.2)
    prob = make_problem(p, q, symmetry=[(0, 1, (1, 0, 0), -5.0)], stable=False)
    prob.symmetry.append(prob.symmetry[0].__class__(0, 1, (1.0, 0.0, 0.0), 5.0))
    with pytest.raises(RefineInfeasibleError) as err:
        solve(prob)
    assert err.value.residuals["symmetry"] > 1e-6


def test_solution_json_round_trip(tmp_path):
    prob = random_refine_instance(np.random.default_rng(2))
    sol = solve(prob)
    sol.save(tmp_path / "s.json")
    back = RefineSolution.from_json(json.loads((tmp_path / "s.json").read_text()))
    np.testing.assert_array_equal(back.x, sol.x)
    assert back.assignment == sol.assignment


# --------------------------------------------------------------------------
# gapped-table fixture


@pytest.fixture(scope="module")
def gapped():
    cat, record, broken = gapped_record()
    prob = build_problem(record, {cat.label_id(k): v for k, v in broken.items()}, cat.lookup, cat)
    return prob, solve(prob)


def test_gapped_fixture_residuals_before_and_after(gapped):
    prob, sol = gapped
    before = evaluate_layout(prob, prob.p, prob.q)
    assert before["support_overlap"] > 0.01 and before["equal_length"] > 0.01
    report = check_solution(prob, sol)
    assert set(FAMILIES) <= set(report)
    assert max(report.values()) < 1e-6
    assert sol.objective > 0


def test_gapped_fixture_overlap_window(gapped):
    prob, sol = gapped
    for s in prob.supports:
        if s.from_ground:
            assert sol.p[s.supported, 1] - sol.q[s.supported, 1] == pytest.approx(0.0, abs=1e-9)
            continue
        i, j, t = s.supporter, s.supported, s.axis
        depth = (sol.p[i, t] + sol.q[i, t]) - (sol.p[j, t] - sol.q[j, t])
        assert prob.eps * sol.q[j, t] - 1e-9 <= depth <= 2 * prob.eps * sol.q[j, t] + 1e-9


def test_gapped_fixture_idempotent(gapped):
    prob, sol = gapped
    again = solve(prob.with_layout(sol.p, sol.q))
    assert again.objective < 1e-8


def test_solve_time_bound():
    prob = random_refine_instance(np.random.default_rng(99), max_parts=4)
    t = time.perf_counter()
    solve(prob)
    assert time.perf_counter() - t < 1.0
