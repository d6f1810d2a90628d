"""Identify a causal effect from observed data alone using a null proxy.

In the discrete B1 world, A4 has no effect on Y given the confounder and
the other causes. That makes it a valid proxy, and the integral equation
solved on the observed joint recovers the true interventional law.
"""

from deconfounder_lab import fixtures
from deconfounder_lab.oracle import InterventionQuery, do_discrete, total_variation
from deconfounder_lab.proxy import CausePartition, completeness_reports, identify_discrete
from deconfounder_lab.scm import joint_discrete

spec = fixtures.b1()
joint = joint_discrete(spec)
part = CausePartition(C=("A1",), X=("A2", "A3"), N=("A4",))

for name, r in completeness_reports(joint, part, latent=["U"]).items():
    print(f"{name}: {r.verdict} (rank {r.matrix_rank} of {r.required_rank})")

observed = joint.marginal(["Y", "A1", "A2", "A3", "A4"])
for v in (0, 1):
    q = InterventionQuery(("A1",), (v,))
    got = identify_discrete(observed, part, q).pmf.pmf
    truth = do_discrete(spec, q).pmf
    print(f"do(A1={v}): identified {got.round(4)}, oracle {truth.round(4)}, TV {total_variation(got, truth):.1e}")
