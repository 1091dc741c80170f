from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mazfo.algorithm import (ParamSchedule, RunningAverage, compute_theorem_params,
                             consensus_mix, dual_step, extrapolate_constraint,
                             linearize_constraint, primal_step, rms_spread, run,
                             running_average_update, sample_points)
from mazfo.errors import DimensionMismatch, InvalidConstants
from mazfo.problem import (FeasibleSet, ProblemConstants, generate_quadratic, global_objective,
                           solve_reference)
from mazfo.topology import build_topology


# -- theorem parameters -----------------------------------------------------

def _unit_stub(rho=0.5):
    consts = ProblemConstants(M0=1.0, L0=1.0, M_i=np.array([1.0]), L_i=np.array([1.0]), Z=1.0, C=1.0)
    inst = SimpleNamespace(constants=consts, n=2, d=2, m=1, R_bar=1.0, dims=np.array([1, 1]))
    topo = SimpleNamespace(rho=rho, metrics=lambda dims: (1.0, 1.0))
    return inst, topo


def test_theorem_params_spreadsheet():
    # all constants 1, n = d = 2, rho = 0.5, T = 100; values evaluated by hand:
    # xi   = (sqrt2 + 2 + 4 sqrt3) sqrt51 + 208 + 248
    # zeta = 806 + 2 (12 + 3 + 486) = 1808
    inst, topo = _unit_stub()
    th = compute_theorem_params(inst, topo, 100)
    assert th.xi == pytest.approx(529.8596293028597, rel=1e-14)
    assert th.zeta == pytest.approx(1808.0, rel=1e-14)
    assert th.eta == pytest.approx(0.0043442977601663236, rel=1e-13)
    assert th.mu == pytest.approx(0.004703604341917986, rel=1e-13)
    assert th.u == pytest.approx(0.125)
    assert th.eta_step == pytest.approx(1 / (1 + 1 + 1 / th.eta))


def test_theorem_eta_inverts_exactly(small_instance, small_ring):
    inst, _, _ = small_instance
    for T in (10, 1000, 123457):
        th = compute_theorem_params(inst, small_ring, T)
        assert th.eta * np.sqrt(T * th.xi) == pytest.approx(inst.R_bar, rel=1e-14)
        assert th.u <= inst.constants.M_g / ((inst.d + 6) * inst.constants.L_g)
        assert th.xi > 0 and th.zeta > 0


def test_theorem_params_unconstrained():
    inst, _ = generate_quadratic(0, n=1, dims=3, m=0)
    th = compute_theorem_params(inst, _one_node(), 100)
    assert th.mu == 0.0
    assert th.u > 0


def _one_node():
    return SimpleNamespace(rho=0.0, metrics=lambda dims: (0.0, 0.0))


def test_theorem_params_errors():
    inst, topo = _unit_stub()
    with pytest.raises(InvalidConstants):
        compute_theorem_params(inst, topo, 0)
    inst.constants.C = None
    with pytest.raises(InvalidConstants):
        compute_theorem_params(inst, topo, 10)


def test_theorem_schedule_side_conditions():
    inst, topo = _unit_stub()
    s = compute_theorem_params(inst, topo, 50).schedule(1.0)
    s.validate(50)
    eta, mu, theta, gamma = s.steps(0, 50)
    assert np.all(theta == 1) and np.all(gamma == 1)
    assert np.all(mu == mu[0]) and np.all(eta == eta[0])


# -- schedules --------------------------------------------------------------

def test_diminishing_schedule_values():
    s = ParamSchedule("diminishing", c=300.0)
    eta, mu, _, _ = s.steps(0, 4)
    np.testing.assert_allclose(eta, 1 / (np.sqrt([1, 2, 3, 4]) + 300))
    np.testing.assert_array_equal(eta, mu)
    np.testing.assert_array_equal(s.steps(2, 4)[0], eta[2:])


def test_schedule_validation():
    with pytest.raises(ValueError):
        ParamSchedule("wild")
    with pytest.raises(ValueError):
        ParamSchedule(eta=-1).validate(3)
    with pytest.raises(ValueError):
        ParamSchedule(u=0).validate(3)
    bad = ParamSchedule("theorem", theta=0.5)
    with pytest.raises(ValueError):
        bad.validate(3)


# -- single-agent steps -----------------------------------------------------

def test_linearize_and_extrapolate_by_hand():
    g = np.array([1.0, -2.0])
    G = np.array([[1.0, 0.0], [2.0, 1.0]])
    ell = linearize_constraint(g, G, [1.0, 1.0], [0.0, 0.5])
    np.testing.assert_allclose(ell, [2.0, 0.5])
    s, ell_new = extrapolate_constraint(g, G, [1.0, 1.0], [0.0, 0.5], [0.0, 1.0], theta=1.0)
    np.testing.assert_allclose(ell_new, ell)
    np.testing.assert_allclose(s, [4.0, 0.0])


def test_extrapolation_shape_errors():
    with pytest.raises(DimensionMismatch):
        linearize_constraint([1.0], np.ones((2, 2)), [0, 0], [0, 0])
    with pytest.raises(DimensionMismatch):
        extrapolate_constraint([1.0], np.ones((1, 2)), [0, 0], [0, 0], [1.0, 2.0])


@given(arrays(np.float64, 3, elements=st.floats(-5, 5)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)),
       st.floats(1e-3, 2), st.floats(0.1, 3))
def test_dual_step_is_optimal(p, s, mu, C):
    y = dual_step(p, s, mu, C)
    # first-order condition: <grad, z - y> >= 0 for feasible z, grad = -s + (y - p)/mu
    grad = -s + (y - p) / mu
    rng = np.random.default_rng(0)
    Z = np.abs(rng.normal(size=(50, 3)))
    Z *= (C * rng.random(50) / np.linalg.norm(Z, axis=1))[:, None]
    assert np.all((Z - y) @ grad >= -1e-9 * (1 + np.abs(grad).max()))


def test_primal_step_is_projected_gradient():
    s = FeasibleSet.ball(2, 1.0)
    np.testing.assert_allclose(primal_step([0.0, 0.0], [-4.0, 0.0], 0.5, s), [1.0, 0.0])
    np.testing.assert_allclose(primal_step([0.2, 0.0], [0.2, 0.0], 0.5, s), [0.1, 0.0])


def test_consensus_mix():
    W = np.array([[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(consensus_mix(W[0], [[1.0], [3.0]]), [2.0])


def test_rms_spread_values():
    assert rms_spread(np.array([[1.0], [-1.0]])) == pytest.approx(1.0)
    assert rms_spread(np.zeros((3, 0))) == 0.0


# -- running average --------------------------------------------------------

def test_running_average_small_cases():
    avg = RunningAverage(1)
    avg.update([5.0])
    assert avg.value[0] == 5.0
    avg = RunningAverage(1)
    for v in (1.0, 2.0, 3.0):
        avg.update([v])
    assert avg.value[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        avg.update([1.0], gamma=0.0)


@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(-100, 100)), min_size=1, max_size=60))
def test_running_average_matches_batch(pairs):
    total, weight = np.zeros(1), 0.0
    for g, x in pairs:
        total, weight = running_average_update(total, weight, [x], g)
    gam = np.array([p[0] for p in pairs])
    xs = np.array([p[1] for p in pairs])
    batch = (gam * xs).sum() / gam.sum()
    assert total[0] / weight == pytest.approx(batch, rel=1e-12, abs=1e-12)


def test_sample_points():
    np.testing.assert_array_equal(sample_points(10, 3), [3, 6, 9, 10])
    np.testing.assert_array_equal(sample_points(9, 3), [3, 6, 9])
    np.testing.assert_array_equal(sample_points(2, 5), [2])


# -- full runs --------------------------------------------------------------

def _schedule(inst, mode="constant"):
    return ParamSchedule(mode, eta=0.01, mu=0.01, u=0.01, C=inst.constants.C, c=50.0)


@pytest.mark.parametrize("mode", ["constant", "diminishing"])
def test_numba_matches_reference(small_instance, small_ring, mode):
    inst, _, _ = small_instance
    sched = _schedule(inst, mode)
    T = 5000  # crosses a perturbation block boundary
    a = run(inst, small_ring, sched, 3, T, trial=2, stride=250, backend="reference",
            monitor=True, keep_iterates=True)
    b = run(inst, small_ring, sched, 3, T, trial=2, stride=250, backend="numba",
            monitor=True, keep_iterates=True)
    np.testing.assert_array_equal(a.iters, b.iters)
    np.testing.assert_allclose(b.objective, a.objective, rtol=1e-11, atol=1e-11)
    np.testing.assert_allclose(b.constraint_sums, a.constraint_sums, rtol=1e-10, atol=1e-11)
    np.testing.assert_allclose(b.spread, a.spread, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b.iterates, a.iterates, rtol=1e-10, atol=1e-11)
    for key in ("spread_before", "spread_after", "s_max", "mu"):
        np.testing.assert_allclose(b.monitor[key], a.monitor[key], rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(a.oracle.f_queries, b.oracle.f_queries)


def test_run_is_reproducible_and_trials_differ(small_instance, small_ring):
    inst, _, _ = small_instance
    sched = _schedule(inst)
    a = run(inst, small_ring, sched, 0, 300, trial=0, stride=100)
    b = run(inst, small_ring, sched, 0, 300, trial=0, stride=100)
    c = run(inst, small_ring, sched, 0, 300, trial=1, stride=100)
    np.testing.assert_array_equal(a.objective, b.objective)
    assert not np.array_equal(a.objective, c.objective)


def test_streaming_average_matches_checkpoints(small_instance, small_ring):
    inst, _, _ = small_instance
    T = 3000
    res = run(inst, small_ring, _schedule(inst), 1, T, stride=1000, keep_iterates=True)
    for k, t in enumerate(res.iters):
        xbar = res.iterates[:t].mean(axis=0)
        assert res.objective[k] == pytest.approx(global_objective(inst, xbar), rel=1e-9)


def test_iterates_stay_feasible_and_counts(small_instance, small_ring):
    inst, _, _ = small_instance
    res = run(inst, small_ring, _schedule(inst), 0, 200, stride=50, keep_iterates=True)
    assert all(inst.contains(x) for x in res.iterates)
    assert res.oracle.f_queries.tolist() == [400] * inst.n
    assert res.oracle.g_queries.tolist() == [200 * 4 * inst.m] * inst.n
    np.testing.assert_array_equal(res.queries_at(), res.iters * (2 + 4 * inst.m))


def test_trajectory_length_equals_T_at_unit_stride(small_instance, small_ring):
    inst, _, _ = small_instance
    res = run(inst, small_ring, _schedule(inst), 0, 37, stride=1)
    assert len(res.objective) == 37 and res.T == 37


def test_constant_step_run_approaches_optimum(small_instance, small_ring):
    inst, _, ref = small_instance
    res = run(inst, small_ring, _schedule(inst), 0, 20_000, stride=20_000)
    assert res.objective[-1] - ref.f_star < 0.05 * abs(ref.f_star)
    assert res.violation[-1] < 0.05 * inst.constants.Z


def test_single_agent_theorem_schedule_decreases():
    inst, _ = generate_quadratic(2, n=1, dims=4, m=0, eig_range=(1.0, 1.6))
    ref = solve_reference(inst, 1e-10)
    topo = _one_node_topology()
    gaps = []
    for T in (1000, 10_000):
        th = compute_theorem_params(inst, topo, T, C=None)
        sched = th.schedule(1.0)
        g = [run(inst, topo, sched, 0, T, trial=k, stride=T, backend="reference").objective[-1]
             - ref.f_star for k in range(3)]
        gaps.append(np.median(g))
    assert gaps[1] < gaps[0]


def _one_node_topology():
    from mazfo.topology import NetworkTopology
    adj = np.zeros((1, 1), dtype=bool)
    W = np.ones((1, 1))
    dist = np.zeros((1, 1), dtype=np.int64)
    return NetworkTopology(adj, dist, W, 0.0, "single")


def test_dimension_mismatch(small_instance):
    inst, _, _ = small_instance
    with pytest.raises(DimensionMismatch):
        run(inst, build_topology("ring", inst.n + 1), _schedule(inst), 0, 5)


def test_numba_backend_rejects_box_sets():
    from mazfo.problem import QuadraticProblem
    inst, spec = generate_quadratic(0, n=2, dims=4, m=1)
    boxed = QuadraticProblem(spec, [FeasibleSet.box(-np.ones(2), np.ones(2))] * 2, C=1.0)
    sched = ParamSchedule(C=1.0)
    topo = build_topology("complete", 2)
    with pytest.raises(ValueError):
        run(boxed, topo, sched, 0, 5, backend="numba")
    res = run(boxed, topo, sched, 0, 50, stride=50)  # auto falls back to the reference loop
    assert all(boxed.contains(x) for x in [res.x_bar])
