"""Build the blood-cell classifier and print its layer table.

The default input is 120x160x3.  Smaller inputs shrink every spatial shape
and the first dense layer; anything under 46x46 cannot survive four
conv/pool stages and is rejected with a ShapeError.
"""
from hemocnn import ShapeError, build_paper_model

model = build_paper_model()
print(model.summary())
print()

small = build_paper_model((48, 64, 3))
print(f"at 48x64 the model has {small.param_count:,} parameters "
      f"instead of {model.param_count:,}")

try:
    build_paper_model((32, 32, 3))
except ShapeError as exc:
    print(f"32x32 input rejected: {exc}")
