import json

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mazfo.errors import DimensionMismatch
from mazfo.problem import (CallableProblem, FeasibleSet, QuadraticProblem, QuadraticSpec,
                           constraint_sums, constraint_violation, generate_quadratic,
                           global_objective, kkt_residual, load_instance, project, project_dual,
                           save_instance, solve_reference, split_dims)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def vectors(dim):
    return arrays(np.float64, dim, elements=finite)


@st.composite
def feasible_sets(draw, dim=3):
    if draw(st.booleans()):
        return FeasibleSet.ball(dim, draw(st.floats(0.01, 50)), center=draw(vectors(dim)))
    lo = draw(vectors(dim))
    width = draw(arrays(np.float64, dim, elements=st.floats(0, 50)))
    return FeasibleSet.box(lo, lo + width)


# -- projections ------------------------------------------------------------

@given(feasible_sets(), vectors(3))
def test_projection_lands_in_set_and_is_idempotent(s, p):
    x = project(s, p)
    assert s.contains(x, tol=1e-9)
    np.testing.assert_allclose(project(s, x), x, rtol=1e-12, atol=1e-12)


@given(feasible_sets(), vectors(3), vectors(3))
def test_projection_nonexpansive(s, a, b):
    d = np.linalg.norm(project(s, a) - project(s, b))
    assert d <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-9


@given(feasible_sets(), vectors(3))
def test_projection_variational_inequality(s, p):
    # <p - P(p), x - P(p)> <= 0 for every x in the set
    x = project(s, p)
    others = s.sample(np.random.default_rng(0), 20)
    scale = 1 + np.abs(p).max() ** 2
    assert np.all((others - x) @ (p - x) <= 1e-9 * scale)


def test_box_projection_is_clamp():
    s = FeasibleSet.box([-1, 0], [1, 2])
    np.testing.assert_array_equal(project(s, [5, -3]), [1, 0])


def test_ball_projection_scales_radially():
    s = FeasibleSet.ball(2, 1.0, center=[1.0, 0.0])
    np.testing.assert_allclose(project(s, [4.0, 4.0]), [1.6, 0.8])


@pytest.mark.parametrize("p, C, expect", [
    ([3.0, 4.0], 1.0, [0.6, 0.8]),
    ([-1.0, 2.0], 10.0, [0.0, 2.0]),
    ([-1.0, -2.0], 1.0, [0.0, 0.0]),
    ([0.3, 0.4], 1.0, [0.3, 0.4]),
])
def test_project_dual_examples(p, C, expect):
    np.testing.assert_allclose(project_dual(p, C), expect)


@given(vectors(3), st.floats(0.01, 100))
def test_project_dual_matches_cvxpy_kkt(p, C):
    y = project_dual(p, C)
    assert np.all(y >= 0) and np.linalg.norm(y) <= C * (1 + 1e-12)
    # optimality: for every feasible z, <p - y, z - y> <= 0; test on extreme candidates
    cands = [np.zeros(3), C * np.eye(3)[0], C * np.eye(3)[1], C * np.eye(3)[2],
             C * np.ones(3) / np.sqrt(3)]
    scale = 1 + np.abs(p).max() * C
    for z in cands:
        assert (p - y) @ (z - y) <= 1e-9 * scale


def test_project_dual_against_solver():
    rng = np.random.default_rng(1)
    for _ in range(5):
        p, C = rng.normal(scale=2, size=3), rng.uniform(0.2, 2)
        y = cp.Variable(3)
        cp.Problem(cp.Minimize(cp.sum_squares(y - p)), [y >= 0, cp.norm(y) <= C]).solve()
        # conic solver accuracy is the limiting factor here
        np.testing.assert_allclose(project_dual(p, C), y.value, atol=1e-4)


def test_feasible_set_validation():
    with pytest.raises(ValueError):
        FeasibleSet.ball(2, -1.0)
    with pytest.raises(ValueError):
        FeasibleSet.box([1.0], [0.0])
    with pytest.raises(DimensionMismatch):
        FeasibleSet.ball(3, 1.0, center=[0.0, 0.0])


def test_feasible_set_dict_round_trip():
    for s in (FeasibleSet.ball(2, 1.5, [0.5, -1]), FeasibleSet.box([0, 1], [2, 3])):
        back = FeasibleSet.from_dict(json.loads(json.dumps(s.to_dict())))
        assert back.kind == s.kind
        np.testing.assert_array_equal(project(back, [9, 9]), project(s, [9, 9]))


# -- generator --------------------------------------------------------------

@pytest.fixture(scope="module")
def paper_shape():
    return generate_quadratic(0)


def test_split_dims():
    assert split_dims(40, 15) == [3] * 10 + [2] * 5
    assert split_dims(10, 5) == [2] * 5
    with pytest.raises(ValueError):
        split_dims(3, 4)


def test_generator_shape(paper_shape):
    inst, spec = paper_shape
    assert (inst.n, inst.d, inst.m) == (15, 40, 2)
    assert inst.dims.tolist() == [3] * 10 + [2] * 5


def test_generator_spectra(paper_shape):
    _, spec = paper_shape
    ev = np.linalg.eigvalsh(spec.A_mean)
    assert ev[0] >= 0.1 - 1e-10 and ev[-1] <= 1.6 + 1e-10
    assert ev[0] == pytest.approx(0.1, abs=1e-10) and ev[-1] == pytest.approx(1.6, abs=1e-10)
    for Ai in spec.A:
        np.testing.assert_array_equal(Ai, Ai.T)
    for Pi in spec.P:
        for Pij in Pi:
            np.testing.assert_allclose(Pij, Pij.T, atol=1e-14)
            w = np.linalg.eigvalsh(Pij)
            assert w[0] >= 0.1 - 1e-10 and w[-1] <= 1.6 + 1e-10


def test_generator_slater_point(paper_shape):
    inst, spec = paper_shape
    x0 = np.asarray(spec.meta["slater_point"])
    assert inst.contains(x0)
    assert np.all(constraint_sums(inst, x0) < 0)
    rng = np.random.default_rng(9)
    for x in x0 + 0.1 * rng.uniform(-1, 1, (200, inst.d)) / np.sqrt(inst.d):
        assert np.all(constraint_sums(inst, x) < 0)


def test_generator_deterministic():
    a, _ = generate_quadratic(5, n=4, dims=8, m=1)
    b, _ = generate_quadratic(5, n=4, dims=8, m=1)
    np.testing.assert_array_equal(a.spec.A, b.spec.A)
    np.testing.assert_array_equal(a.spec.r, b.spec.r)


def test_generator_rejects_bad_eig_range():
    with pytest.raises(ValueError):
        generate_quadratic(0, n=3, dims=6, m=1, eig_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        generate_quadratic(0, n=3, dims=6, m=1, eig_range=(2.0, 1.0))


def test_closed_form_constants_dominate_samples(small_instance):
    inst, spec, _ = small_instance
    k = inst.constants
    rng = np.random.default_rng(2)
    xs = inst.sample_feasible_set(rng, 300)
    for x in xs:
        grads = 2 * np.einsum("ikl,l->ik", 0.5 * (spec.A + spec.A.transpose(0, 2, 1)), x) + spec.b
        assert np.linalg.norm(grads, axis=1).max() <= k.M0 + 1e-9
        assert np.linalg.norm(inst.local_constraints(x), axis=1).max() <= k.Z + 1e-9
    for x, y in zip(xs[:-1], xs[1:]):
        ga = inst.objective_gradient(x)
        gb = inst.objective_gradient(y)
        assert np.linalg.norm(ga - gb) <= k.L0 * np.linalg.norm(x - y) + 1e-9


def test_estimated_constants_are_sane(small_instance):
    inst, _, _ = small_instance
    costs = [lambda x, i=i: inst.local_costs(x)[i] for i in range(inst.n)]
    cons = [lambda xi, i=i, b=b: _block_g(inst, xi, i, b) for i, b in enumerate(inst.blocks)]
    black = CallableProblem(costs, cons, inst.dims, inst.m, inst.sets, seed=0, samples=300)
    est, exact = black.constants, inst.constants
    assert 0 < est.M0 <= 1.2 * exact.M0
    assert 0 < est.L0 <= 1.2 * exact.L0 + 1e-6
    assert 0 < est.Z <= 1.2 * exact.Z


def _block_g(inst, xi, i, b):
    x = np.zeros(inst.d)
    x[b] = xi
    return inst.local_constraints(x)[i]


def test_constraint_violation_norm():
    sets = [FeasibleSet.ball(1, 1.0)] * 2
    g = [lambda xi: np.array([1.0, 2.0]), lambda xi: np.array([2.0, 2.0])]
    f = [lambda x: 0.0] * 2
    from mazfo.problem import ProblemConstants
    const = ProblemConstants(1, 1, np.ones(2), np.ones(2), 1)
    inst = CallableProblem(f, g, [1, 1], 2, sets, constants=const)
    assert constraint_violation(inst, np.zeros(2)) == pytest.approx(5.0)


# -- reference solver -------------------------------------------------------

def _cvxpy_solution(inst):
    spec = inst.spec
    x = cp.Variable(inst.d)
    A = spec.A_mean
    obj = cp.quad_form(x, cp.psd_wrap(0.5 * (A + A.T))) + spec.b_mean @ x + spec.c.mean()
    cons = [cp.norm(x[b] - s.center) <= s.radius for b, s in zip(inst.blocks, inst.sets)]
    for j in range(inst.m):
        expr = 0
        for i, b in enumerate(inst.blocks):
            P = spec.P[i][j]
            expr = expr + cp.quad_form(x[b], cp.psd_wrap(0.5 * (P + P.T))) + spec.q[i][j] @ x[b] + spec.r[i, j]
        cons.append(expr <= 0)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, x.value


def test_reference_matches_cvxpy(small_instance):
    inst, _, ref = small_instance
    f_cvx, x_cvx = _cvxpy_solution(inst)
    assert ref.f_star == pytest.approx(f_cvx, abs=1e-6)
    assert kkt_residual(inst, ref.x_star, ref.y_star) <= 1e-9


def test_reference_matches_cvxpy_paper_shape(paper_shape):
    inst, _ = paper_shape
    ref = solve_reference(inst, 1e-8)
    f_cvx, _ = _cvxpy_solution(inst)
    assert ref.f_star == pytest.approx(f_cvx, abs=1e-6)


def test_unconstrained_reference_is_linear_solve():
    inst, spec = generate_quadratic(4, n=3, dims=6, m=0, radius=100.0)
    ref = solve_reference(inst, 1e-10)
    A = spec.A_mean
    x = np.linalg.solve(A + A.T, -spec.b_mean)
    assert np.linalg.norm(x) < 100
    np.testing.assert_allclose(ref.x_star, x, atol=1e-8)
    assert ref.f_star == pytest.approx(global_objective(inst, x), abs=1e-12)


def test_reference_tolerance_and_start_invariance(small_instance):
    inst, _, ref = small_instance
    loose = solve_reference(inst, 1e-6)
    assert abs(loose.f_star - ref.f_star) < 1e-5
    x0 = inst.project(np.random.default_rng(0).normal(scale=3, size=inst.d))
    other = solve_reference(inst, 1e-9, x0=x0)
    assert other.f_star == pytest.approx(ref.f_star, abs=1e-7)


def test_suggested_C_dominates_multiplier(small_instance):
    _, _, ref = small_instance
    assert ref.suggested_C() > ref.y_norm


# -- serialisation ----------------------------------------------------------

def test_instance_round_trip(tmp_path, small_instance):
    inst, _, _ = small_instance
    save_instance(inst, tmp_path / "a.json")
    back = load_instance(tmp_path / "a.json")
    x = np.random.default_rng(0).normal(size=inst.d)
    np.testing.assert_array_equal(back.local_costs(x), inst.local_costs(x))
    np.testing.assert_array_equal(back.local_constraints(x), inst.local_constraints(x))
    save_instance(back, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_instance(tmp_path / "x.json")


def test_quadratic_shape_checks(small_instance):
    inst, spec, _ = small_instance
    bad = QuadraticSpec(spec.A[:, :-1], spec.b, spec.c, spec.P, spec.q, spec.r, spec.dims)
    with pytest.raises(DimensionMismatch):
        QuadraticProblem(bad, inst.sets)
    with pytest.raises(DimensionMismatch):
        inst.check_joint(np.zeros(inst.d + 1))
