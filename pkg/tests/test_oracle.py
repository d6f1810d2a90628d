import json

import numpy as np
import pytest

from deconfounder_lab import fixtures
from deconfounder_lab.errors import EmptySample, InvalidQuery, NotLinearGaussian
from deconfounder_lab.oracle import (
    InterventionQuery,
    do_discrete,
    do_gaussian,
    do_monte_carlo,
    observational_conditional_gaussian,
    result_record,
    total_variation,
)
from deconfounder_lab.scm import joint_discrete, joint_gaussian

LINEAR = ["class_a", "meal_world", "meal_world_selected", "meal_world_reduced", "unconfounded",
          "pair_sum_world"]
DISCRETE = ["b1", "b2", "b3", "and_world", "a1_only_world", "unconfounded_discrete"]


def q(*pairs):
    return InterventionQuery(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


def test_query_identity_and_serialisation():
    a = q(("A1", 1), ("A2", 0))
    assert a.query_id == "A1=1,A2=0"
    assert a.digest() == q(("A1", 1.0), ("A2", 0.0)).digest()
    assert a.digest() != q(("A1", 0), ("A2", 1)).digest()
    assert json.loads(json.dumps(a.to_dict()))["targets"] == ["A1", "A2"]


@pytest.mark.parametrize("bad", [
    InterventionQuery((), ()),
    InterventionQuery(("U",), (1.0,)),
    InterventionQuery(("A1", "A1"), (1.0, 2.0)),
])
def test_bad_queries(bad):
    with pytest.raises(InvalidQuery):
        do_gaussian(fixtures.unconfounded(), bad)


def test_all_causes_is_out_of_scope():
    spec = fixtures.b1()
    with pytest.raises(InvalidQuery):
        do_discrete(spec, q(*[(c, 0) for c in spec.causes]))


def test_discrete_value_outside_support():
    with pytest.raises(InvalidQuery):
        do_discrete(fixtures.b1(), q(("A1", 2)))


def test_wrong_mechanism():
    with pytest.raises(NotLinearGaussian):
        do_gaussian(fixtures.b1(), q(("A1", 1)))


def test_exogenous_causes_do_equals_conditioning():
    spec = fixtures.linear([
        ("A1", "cause", {}),
        ("A2", "cause", {}),
        ("A3", "cause", {}),
        ("Y", "outcome", {"A1": 0.7, "A2": -0.4, "A3": 0.5}),
    ])
    given = {"A1": 1.0, "A2": -0.5}
    d = do_gaussian(spec, q(*given.items()))
    c = observational_conditional_gaussian(spec, given)
    assert d.mean[0] == pytest.approx(c.mean[0], abs=1e-12)
    assert d.cov[0, 0] == pytest.approx(c.cov[0, 0], abs=1e-12)


def test_constant_confounder_do_equals_conditioning():
    spec = fixtures.unconfounded_discrete()
    d = do_discrete(spec, q(("A1", 1)))
    c = joint_discrete(spec).condition({"A1": 1}).marginal(["Y"])
    np.testing.assert_allclose(d.pmf, c.table, atol=1e-12)


def test_confounded_do_differs_from_conditioning():
    spec = fixtures.class_a()
    given = {"A1": 1.0, "A2": 0.0}
    d = do_gaussian(spec, q(*given.items())).mean[0]
    c = observational_conditional_gaussian(spec, given).mean[0]
    mc = do_monte_carlo(spec, q(*given.items()), 200_000, 3)
    assert abs(d - c) > 10 * mc.se
    assert abs(mc.mean - d) <= 4 * mc.se


def test_back_door_through_a_sibling_cause():
    # U has no direct effect on Y but still links A1 to A3, which moves Y
    spec = fixtures.unconfounded()
    given = {"A1": 1.0, "A2": -0.5}
    d = do_gaussian(spec, q(*given.items())).mean[0]
    c = observational_conditional_gaussian(spec, given).mean[0]
    assert d == pytest.approx(0.7 * 1.0 - 0.4 * -0.5)
    assert abs(d - c) > 0.01


def test_meal_world_hand_g_formula():
    spec = fixtures.meal_world()
    y = spec.node("Y")
    alpha_1 = dict(zip(y.parents, y.coefs))["A1"]
    query = q(("A1", 1), ("A2", 0))
    d = do_gaussian(spec, query)
    assert d.mean[0] == pytest.approx(alpha_1, abs=1e-12)
    mc = do_monte_carlo(spec, query, 1_000_000, 0)
    assert abs(mc.mean - alpha_1) <= 3 * mc.se


def test_deterministic_copy_point_mass():
    d = do_discrete(fixtures.deterministic_copy(), q(("A1", 1)))
    np.testing.assert_array_equal(d.pmf, [0.0, 1.0])


def test_non_ancestor_intervention_leaves_outcome_marginal():
    spec = fixtures.linear([
        ("U", "multi_cause_confounder", {}),
        ("A1", "cause", {"U": 1.0}),
        ("A2", "cause", {"U": 0.5}),
        ("A3", "cause", {"U": -0.7}),
        ("Y", "outcome", {"A1": 1.0, "A2": 2.0, "U": 1.0}),
    ])
    marginal = joint_gaussian(spec).marginal(["Y"])
    d = do_gaussian(spec, q(("A3", 5.0)))
    assert d.mean[0] == pytest.approx(marginal.mean[0])
    assert d.cov[0, 0] == pytest.approx(marginal.cov[0, 0])


@pytest.mark.parametrize("name", LINEAR)
def test_triangle_gaussian_vs_mc(name):
    spec = fixtures.by_name(name)
    query = q(("A1", 0.7), ("A2", -1.0))
    exact = do_gaussian(spec, query)
    mc = do_monte_carlo(spec, query, 100_000, 1)
    assert abs(mc.mean - exact.mean[0]) <= 4 * mc.se
    # variance SE for a Gaussian sample is var * sqrt(2/(n-1))
    assert abs(mc.var - exact.cov[0, 0]) <= 4 * exact.cov[0, 0] * np.sqrt(2 / (mc.n - 1))


@pytest.mark.parametrize("name", DISCRETE)
def test_triangle_discrete_vs_mc(name):
    spec = fixtures.by_name(name)
    query = q(("A1", 1))
    exact = do_discrete(spec, query)
    assert exact.pmf.sum() == pytest.approx(1.0, abs=1e-12)
    mc = do_monte_carlo(spec, query, 1_000_000 if name == "b1" else 100_000, 2)
    se = np.sqrt(exact.pmf * (1 - exact.pmf) / mc.n)
    assert np.all(np.abs(np.array(mc.pmf) - exact.pmf) <= 4 * se + 1e-12)


def test_mc_is_deterministic_and_query_keyed():
    spec = fixtures.class_a()
    a = do_monte_carlo(spec, q(("A1", 1)), 5000, 9)
    b = do_monte_carlo(spec, q(("A1", 1)), 5000, 9)
    assert a == b
    assert do_monte_carlo(spec, q(("A1", 1)), 5000, 10).mean != a.mean
    assert sum(a.hist_counts) == 5000 and len(a.hist_edges) == len(a.hist_counts) + 1


def test_mc_empty_sample():
    with pytest.raises(EmptySample):
        do_monte_carlo(fixtures.class_a(), q(("A1", 1)), 0, 0)


def test_result_record_shapes():
    spec = fixtures.b1()
    query = q(("A1", 1))
    rec = result_record(query, "oracle_discrete", do_discrete(spec, query))
    assert set(rec) == {"query", "method", "mean", "var", "se", "pmf"}
    rec = result_record(query, "oracle_mc", do_monte_carlo(spec, query, 100, 0))
    assert "pmf" in rec and rec["se"] > 0
    json.dumps(rec)


def test_total_variation():
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.3, 0.7], [0.3, 0.7]) == 0.0
