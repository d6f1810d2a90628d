"""Construct candidate null functions and check them.

When Y loads equally on two identically distributed causes, their
difference is invisible to Y once the confounder is known.
"""

from deconfounder_lab import fixtures
from deconfounder_lab.nullfn import construct_linear_null, identity_null, test_null
from deconfounder_lab.scm import condition, joint_gaussian, sample

spec = fixtures.pair_sum_world()
given_u = condition(joint_gaussian(spec), {"U": 0.0})
f = construct_linear_null({"A1": 0.8, "A2": 0.8}, given_u, ("A1", "A2"))
print("constructed", f.description)

data = sample(spec, 100_000, seed=3)
for candidate in (f, identity_null("A1")):
    r = test_null(candidate, data, ["U", "A3"])
    verdict = "null" if r.passed else "not null"
    print(f"{candidate.description:>22}: z = {r.statistic:7.2f} (threshold {r.threshold:.2f}) -> {verdict}")
