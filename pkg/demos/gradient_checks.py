"""
Trust, then verify: finite-difference gradient checks
=====================================================

Every backward rule in the autodiff kernel is compared against central
finite differences. This script runs a few representative checks, then
deliberately breaks one adjoint to show the harness actually catches
broken calculus rather than rubber-stamping it.
"""

from dgen.gradcheck import CASES, STEP, TOLERANCE, check_case
from dgen.tensor import clear_adjoint_faults, set_adjoint_fault

print(f"{len(CASES)} registered cases, FD step {STEP:g}, tolerance {TOLERANCE:g}")
print()

# A few primitives plus the composite cases: a full attention layer and
# both training losses. Each runs 20 random instances.
sample = ["matmul", "softmax_over_segments", "gather_rows",
          "gat_layer", "reconstruction_loss", "kl_clustering_loss"]
for name in sample:
    r = check_case(name, seed=0, instances=20)
    print(f"  {name:22s} max relative error {r.max_rel_err:.3e}  "
          f"{'ok' if r.ok else 'FAIL'}")
    assert r.ok

# Errors thousands of times under the tolerance are the healthy signature
# of double precision: the check is tight, not merely lenient.

# Negative control: scale the matmul adjoint by 1.5x and watch the same
# check fail loudly. A checker that cannot fail proves nothing.
print()
print("injecting a 1.5x fault into the matmul backward rule ...")
set_adjoint_fault("matmul", 1.5)
try:
    r = check_case("matmul", seed=0, instances=20)
finally:
    clear_adjoint_faults()
print(f"  matmul under fault: max relative error {r.max_rel_err:.3e}  "
      f"{'ok' if r.ok else 'FAIL (as it should)'}")
assert not r.ok

# And confirm the fault is gone so later imports are unaffected.
r = check_case("matmul", seed=0, instances=20)
assert r.ok
print()
print("ok: analytic gradients match finite differences, and the harness")
print("    detects a corrupted adjoint instead of passing it")
