"""Build a structural causal model, validate it and look at its joint law.

The meal world has ten causes (foods), a multi-cause confounder, a
multi-cause covariate, a single-cause confounder and a selection node.
"""

import numpy as np

from deconfounder_lab import fixtures
from deconfounder_lab.scm import condition, joint_gaussian, sample, validate_spec

spec = fixtures.meal_world_selected()
report = validate_spec(spec)
print(f"graph class {report.graph_class}, checks passed: {report.passed}")

joint = joint_gaussian(spec)
print(f"SD(Y) = {joint.sd('Y'):.3f}")

# Knowing the confounder changes what A1 says about Y.
print("E[Y | A1=1]          =", round(condition(joint, {"A1": 1.0}).marginal(["Y"]).mean[0], 3))
print("E[Y | A1=1, Umlt=0]  =", round(condition(joint, {"A1": 1.0, "Umlt": 0.0}).marginal(["Y"]).mean[0], 3))

data = sample(spec, 10_000, seed=1, view="selected_outcome")
y = data.column("Y")
print(f"{data.n} rows, outcome recorded on {np.mean(~np.isnan(y)):.1%} of them")
