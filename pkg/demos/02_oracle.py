"""Ground-truth interventional distributions, three ways.

An exact Gaussian computation, Monte Carlo on the mutilated graph and, for
contrast, the observational conditional that a naive analysis would report.
"""

from deconfounder_lab import fixtures
from deconfounder_lab.oracle import (
    InterventionQuery,
    do_gaussian,
    do_monte_carlo,
    observational_conditional_gaussian,
)

spec = fixtures.class_a()
q = InterventionQuery(("A1", "A2"), (1.0, 0.0))

exact = do_gaussian(spec, q)
mc = do_monte_carlo(spec, q, 200_000, seed=0)
seen = observational_conditional_gaussian(spec, {"A1": 1.0, "A2": 0.0})

print(f"E[Y | do({q.query_id})] exact       {exact.mean[0]: .4f}")
print(f"E[Y | do({q.query_id})] Monte Carlo {mc.mean: .4f} +/- {mc.se:.4f}")
print(f"E[Y | {q.query_id}] observational  {seen.mean[0]: .4f}")
