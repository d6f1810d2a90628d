"""Run a small experiment grid and check the deconfounder against the oracle.

The same thing from the shell:

    deconfounder-lab run configs/smoke.yaml --out results/smoke
    deconfounder-lab compare results/smoke --test deconfounder --tol 0.05sd
"""

from pathlib import Path

from deconfounder_lab.harness import compare, load_config, run

config = load_config(Path(__file__).resolve().parents[1] / "configs" / "smoke.yaml")
bundle = run(config, write=False)
sd_y = bundle.summary["sd_y"]

for row in bundle.rows:
    print(f"{row['method']:>18}  n={row['n']:<5} seed={row['seed']}  mean={row['mean']: .4f}")

for method in ("deconfounder", "naive_conditional"):
    verdict = compare(bundle, "oracle_gaussian", method, 0.05 * sd_y)
    print(f"{method}: {'within' if verdict.passed else 'outside'} 0.05 SD(Y) of the oracle")
