import numpy as np
import pytest

from pia_qlc.grid import PolicyField, ScalarField, build_grid
from pia_qlc.pia import (
    PiaConfig,
    PiaError,
    evaluate_policy,
    policy_update,
    run_pia,
    solve_linear_baseline,
)
from pia_qlc.problem import ControlProblem, QuadraticReward, make_example_problem

# Reference convergence table: step, max|pi_{i+1} - pi_i|, max|V^{pi_i} - V^{pi_{i-1}}|, calculations
REFERENCE_TABLE = [
    (0, 2.15455038, None, 24_541_704),
    (1, 1.55932909, 0.02563695, 8_017_218),
    (2, 0.16986263, 0.00372773, 1_744_578),
    (3, 0.00400477, 0.00006031, 58_806),
    (4, 0.00066038, 0.00000995, 9_801),
]


def test_policy_update_constant(example):
    g = build_grid(0.5, 2.0, 0.5, 2.0, 7)
    pi = policy_update(example, ScalarField(g, np.full(g.shape, 3.0)))
    assert np.all(pi.values == 0)


def test_policy_update_linear_value(example):
    g = build_grid(0.5, 2.0, 0.5, 2.0, 9)
    pi = policy_update(example, ScalarField.from_function(g, lambda X, Y: X))
    X, _ = g.interior_mesh()
    np.testing.assert_allclose(pi.values[..., 0], X, rtol=1e-13)


def test_policy_update_quadratic_value(example):
    g = build_grid(0.5, 2.0, 0.5, 2.0, 4)
    pi = policy_update(example, ScalarField.from_function(g, lambda X, Y: X**2))
    assert pi.values[0, 0, 0] == pytest.approx(2.0, abs=1e-14)


def _zero_reward_problem():
    base = make_example_problem()
    shape = lambda X, Y: np.broadcast(X, Y).shape
    reward = QuadraticReward(lambda X, Y: np.zeros(shape(X, Y)), base.reward.r, base.reward.Q)
    return ControlProblem(base.drift_matrix, base.drift_offset, base.diffusion, reward,
                          base.discount, base.boundary_payoff, base.bounds)


def test_zero_reward_terminates_immediately():
    prob = _zero_reward_problem()
    res = run_pia(prob, prob.grid(21), PiaConfig())
    assert len(res.records) == 1
    assert res.records[0].max_dpi == 0.0 and res.records[0].max_dv is None
    assert np.all(res.V.values == 0) and np.all(res.policy.values == 0)


def test_huge_tol2_stops_after_one_update(example):
    res = run_pia(example, example.grid(21), PiaConfig(tol2=10.0))
    assert len(res.records) == 1 and res.w_fields == []


def test_max_pia_steps(example):
    with pytest.raises(PiaError, match="max-pia-steps-exceeded") as info:
        run_pia(example, example.grid(21), PiaConfig(max_pia_steps=2))
    assert len(info.value.partial.records) == 2


def test_inner_failure_carries_step(example):
    with pytest.raises(PiaError) as info:
        run_pia(example, example.grid(21), PiaConfig(max_sweeps=3, tol1=1e-12))
    assert info.value.step == 0


def test_baseline_is_step_zero(example, ref_grid, ref_run):
    V, stats = solve_linear_baseline(example, ref_grid, 1e-5)
    np.testing.assert_array_equal(V.values, ref_run.values[0].values)
    assert stats.point_updates == ref_run.records[0].point_updates


def test_large_discount_limit():
    alpha = 1e6
    prob = make_example_problem(alpha=alpha)
    g = prob.grid(41)
    V, _ = solve_linear_baseline(prob, g, 1e-16)
    deep = V.values[5:-5, 5:-5]
    np.testing.assert_allclose(deep, 1 / alpha, rtol=1e-4)


def test_table3_reproduced(ref_run):
    recs = ref_run.records
    assert len(recs) == len(REFERENCE_TABLE)
    for rec, (step, dpi, dv, count) in zip(recs, REFERENCE_TABLE):
        assert rec.step == step
        assert rec.max_dpi == pytest.approx(dpi, abs=5e-9)
        if dv is None:
            assert rec.max_dv is None
        else:
            assert rec.max_dv == pytest.approx(dv, abs=1.5e-8)
        assert rec.point_updates == count


def test_improvement_monotone(ref_run):
    eps = 10 * 1e-5
    for W in ref_run.w_fields:
        assert W.values.min() >= -eps


def test_policy_differences_strictly_decrease(ref_run):
    dpi = [r.max_dpi for r in ref_run.records]
    assert all(a > b for a, b in zip(dpi, dpi[1:]))


def test_fixed_point_certificate(example, ref_grid, ref_run):
    V, _ = evaluate_policy(example, ref_grid, ref_run.policy, 1e-5, V0=ref_run.V)
    nxt = policy_update(example, V)
    assert np.abs(nxt.values - ref_run.policy.values).max() < 1e-3


def test_result_bookkeeping(ref_run):
    r = ref_run
    assert len(r.values) == len(r.records) == 5
    assert len(r.policies) == 6 and len(r.w_fields) == 4
    assert r.evaluated_policy is r.policies[4]
    assert r.total_point_updates == sum(t[3] for t in REFERENCE_TABLE) == 34_372_107
    assert r.w_norms == [rec.max_dv for rec in r.records[1:]]
    assert r.records[0].dominance_holds


def test_pia_config_validation():
    for bad in (dict(tol1=0), dict(tol2=-1), dict(max_pia_steps=0), dict(scheme="sor")):
        with pytest.raises(ValueError):
            PiaConfig(**bad)
