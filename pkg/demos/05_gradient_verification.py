"""Verify every analytic gradient against central finite differences.

All six training losses are backpropagated by hand (including the exact
Jacobian of the l2 normalization), so each one is checked end to end on
small random instances. Anything defined as a constant for the optimizer
(logit history, other ensemble members' contributions, frozen
prototypes) is frozen as data inside the differentiated function.
"""

from protoadapt.gradcheck import TOLERANCE, run_suite

results = run_suite(seed=0, n_seeds=20)

print(f"{'loss':<12} {'max rel err':>12}   verdict")
for name, err in results.items():
    verdict = "ok" if err < TOLERANCE else "FAIL"
    print(f"{name:<12} {err:>12.3e}   {verdict}")
print(f"\ntolerance: {TOLERANCE:g} over 20 seeds per loss")
print("the same suite runs as `protoadapt gradcheck`")
