"""Fit the deconfounder on samples and compare it with the truth.

A two-factor probabilistic PCA stands in for the unobserved confounders.
The posterior-predictive check says whether the factor model is adequate,
then the outcome regression on causes plus substitute gives the estimate.
"""

import numpy as np

from deconfounder_lab import fixtures
from deconfounder_lab.deconfounder import check_factor, estimate_do, fit_outcome, fit_substitute
from deconfounder_lab.oracle import InterventionQuery, do_gaussian
from deconfounder_lab.scm import sample

spec = fixtures.class_a()
train, holdout = sample(spec, 50_000, seed=0), sample(spec, 2_000, seed=1)

for k in (1, 2):
    check = check_factor(fit_substitute(train, k), holdout)
    print(f"k={k}: predictive score {check.score:.3f} -> {check.verdict}")

sub = fit_substitute(train, 2)
out = fit_outcome(train, sub, seed=0)
q = InterventionQuery(("A1", "A2"), (1.0, 0.0))
est = estimate_do(sub, out, q)

# the naive answer regresses Y on the intervened causes and reads off the fit
X = np.column_stack([np.ones(train.n), train.matrix(["A1", "A2"])])
beta, *_ = np.linalg.lstsq(X, train.column("Y"), rcond=None)
naive = beta @ [1.0, 1.0, 0.0]

print(f"deconfounder {est.mean: .4f}")
print(f"naive        {naive: .4f}")
print(f"oracle       {do_gaussian(spec, q).mean[0]: .4f}")
