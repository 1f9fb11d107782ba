"""Verify backpropagation against central finite differences.

Checks run in float64.  Perturbations that would flip a ReLU or move a
max-pool winner are skipped, since the loss has a kink there and the
difference quotient means nothing.
"""
import numpy as np

from hemocnn import Conv2D, build_paper_model, finite_difference_check, one_hot

rng = np.random.default_rng(0)

conv = Conv2D(8)
conv.build((6, 7, 3), rng, np.float64)
report = finite_difference_check(conv, rng.standard_normal((2, 6, 7, 3)))
print("single conv layer")
for line in report.lines():
    print("  " + line)

model = build_paper_model((46, 62, 3), seed=0, precision="float64")
x = rng.uniform(0, 255, size=(2, 46, 62, 3))
targets = one_hot(np.array([0, 1]), dtype=np.float64)
report = finite_difference_check(model, x, targets=targets, max_entries=8)
print("\nfull stack at 46x62")
for line in report.lines():
    print("  " + line)
print(f"\nworst relative error {report.max_error:.2e}, "
      f"{'pass' if report.passed else 'FAIL'} at tolerance {report.tolerance:g}")
