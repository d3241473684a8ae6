import json

import numpy as np
import pytest

from vopt_risk.model import (PortfolioSpec, Scenario, TwoStageProblem, build_scenario_lp,
                             cost_bounds, generate_portfolio, instance_hash, io_roundtrip,
                             load_problem, problem_from_dict, problem_to_dict, save_problem,
                             scenario_vertices, tiny1, validate)
from vopt_risk.opt_kernel import solve_lp


def test_tiny1_is_valid(tiny):
    rep = validate(tiny)
    assert rep.ok, str(rep)
    assert tiny.dims() == {"J": 2, "K": 1, "L": 1, "M": 1, "N": 1, "I": 2}


def test_tiny1_costs_forced(tiny):
    u = tiny.costs(np.array([1.0]), np.ones((2, 1)))
    np.testing.assert_array_equal(u, [[1.0, 3.0], [3.0, 1.0]])


def test_probability_sum_violation():
    rep = validate(tiny1(probabilities=(0.5, 0.4)))
    assert not rep.ok
    assert any(v.kind == "probability_sum" and "0.9" in v.message for v in rep.violations)


def test_empty_first_stage_violation():
    rep = validate(tiny1(A=((0.0,),), b=(1.0,)))
    assert any(v.kind == "empty" and v.message == "F_1 empty" for v in rep.violations)


def test_unbounded_scenario_detected():
    # y only constrained by y >= x: unbounded above
    scen = [Scenario(0.5, [[1.0, 0.0]], [[-1.0]], [0.0], [[1.0], [1.0]]) for _ in range(2)]
    prob = TwoStageProblem([[1.0, -1.0]], [0.0], np.zeros((2, 2)), scen)
    rep = validate(prob)
    assert any(v.kind == "unbounded" for v in rep.violations)


def test_dimension_mismatch_reported():
    scen = [Scenario(0.5, [[1.0]], [[-1.0]], [0.0], [[1.0, 2.0], [3.0, 4.0]]),
            Scenario(0.5, [[1.0]], [[-1.0]], [0.0], [[3.0], [1.0]])]
    rep = validate(TwoStageProblem([[1.0]], [1.0], np.zeros((2, 1)), scen))
    assert any(v.kind == "dimension" for v in rep.violations)


@pytest.mark.parametrize("i, obj, expected", [(0, (0, 1), 1.0), (0, (0, 0), 0.0), (1, (1, 0), 1.0)])
def test_scenario_lp_values(tiny, i, obj, expected):
    sol = solve_lp(build_scenario_lp(tiny, i, obj))
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(expected, abs=1e-12)


def test_scenario_lp_index_range(tiny):
    with pytest.raises(IndexError):
        build_scenario_lp(tiny, 2, (0, 0))


def test_generator_budget_row_and_theta():
    p2 = generate_portfolio(PortfolioSpec(J=2, I=5, rng_seed=3))
    np.testing.assert_array_equal(p2.A, [[1.0, 1.0815]])
    p3 = generate_portfolio(PortfolioSpec(J=3, I=400, rng_seed=3))
    assert p3.A[0, 2] == 0.9094
    # asset-3 gross return (1 + r) sits in T[2, 2]
    r3 = np.array([s.T[2, 2] for s in p3.scenarios]) - 1.0
    assert r3.min() >= -0.15 and r3.max() <= 0.3
    assert r3.min() < -0.1 and r3.max() > 0.25


def test_generator_structure():
    prob = generate_portfolio(PortfolioSpec(J=2, I=4, rng_seed=1))
    assert prob.dims() == {"J": 2, "K": 1, "L": 4, "M": 2, "N": 6, "I": 4}
    np.testing.assert_allclose(prob.p, 0.25)
    np.testing.assert_array_equal(prob.C, 0.0)
    for s in prob.scenarios:
        np.testing.assert_array_equal(s.Q[:, 4:], -np.eye(2))
        np.testing.assert_array_equal(s.Q[:, :4], 0.0)
        # diagonal transaction costs are 1
        assert s.W[0, 0] == -1.0 and s.W[1, 3] == -1.0


def test_generator_deterministic():
    spec = PortfolioSpec(J=3, I=30, rng_seed=99)
    a, b = generate_portfolio(spec), generate_portfolio(spec)
    assert a == b
    assert instance_hash(a) == instance_hash(b)
    assert instance_hash(generate_portfolio(PortfolioSpec(J=3, I=30, rng_seed=100))) != instance_hash(a)


@pytest.mark.parametrize("J", [2, 3])
def test_generated_instances_validate(J):
    prob = generate_portfolio(PortfolioSpec(J=J, I=6, rng_seed=5))
    assert validate(prob).ok


@pytest.mark.parametrize("kwargs", [dict(J=4), dict(I=1), dict(capital=0.0),
                                    dict(returns=((0.1, 0.0), (0.0, 0.1))),
                                    dict(theta=-np.ones((2, 2)))])
def test_generator_rejects_bad_settings(kwargs):
    with pytest.raises(ValueError):
        PortfolioSpec(**kwargs)


def test_roundtrip_tiny(tiny):
    assert io_roundtrip(tiny) == tiny


def test_roundtrip_generated_lossless(tmp_path):
    prob = generate_portfolio(PortfolioSpec(J=3, I=100, rng_seed=8))
    path = tmp_path / "inst.json"
    save_problem(prob, path)
    back = load_problem(path)
    assert back == prob
    # reals are stored as decimal strings
    data = json.loads(path.read_text())
    assert isinstance(data["b"][0], str)


def test_load_rejects_single_scenario(tiny):
    data = problem_to_dict(tiny)
    data["scenarios"] = data["scenarios"][:1]
    data["dims"]["I"] = 1
    with pytest.raises(ValueError, match="I ≥ 2 required"):
        problem_from_dict(data)


def test_load_rejects_version_and_unknown_keys(tiny):
    data = problem_to_dict(tiny)
    with pytest.raises(ValueError, match="version"):
        problem_from_dict({**data, "version": 99})
    with pytest.raises(ValueError, match="unknown keys"):
        problem_from_dict({**data, "extra": 1})


def test_scenario_vertices_match_lp_bounds(desk20):
    lo, hi = cost_bounds(desk20)
    for i in (0, 7):
        V = scenario_vertices(desk20, i)
        assert V.shape[0] > 0
        s = desk20.scenarios[i]
        E = np.block([[desk20.A, np.zeros((1, desk20.N))], [s.T, s.W]])
        e = np.concatenate([desk20.b, s.h])
        np.testing.assert_allclose(V @ E.T, np.broadcast_to(e, (V.shape[0], e.size)), atol=1e-9)
        assert V.min() >= 0
        for j in range(2):
            D = np.hstack([desk20.C, s.Q])[j]
            assert solve_lp(build_scenario_lp(desk20, i, D)).value == pytest.approx(lo[j, i], abs=1e-9)
            assert -solve_lp(build_scenario_lp(desk20, i, -D)).value == pytest.approx(hi[j, i], abs=1e-9)
