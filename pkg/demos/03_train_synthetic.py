"""Train on synthetic smears and write per-epoch metrics as CSV.

Mononuclear cells are drawn with one round nucleus and polynuclear cells
with several lobes, which is enough signal for the network to learn in a
few epochs.  Images are 48x64 to keep this quick on a laptop CPU.
"""
import sys
from pathlib import Path

from hemocnn import CsvMetricsSink, TrainConfig, build_paper_model, fit, split_stratified
from hemocnn.synthetic import make_cells

shape = (48, 64, 3)
data = make_cells(60, shape, seed=1)
train, val = split_stratified(data, 0.2, seed=1)
print(f"train {train.class_counts()}, validation {val.class_counts()}", file=sys.stderr)

model = build_paper_model(shape, seed=42)
out = Path(sys.argv[1]) if len(sys.argv) > 1 else None
with (open(out, "w", newline="") if out else sys.stdout) as stream:
    history = fit(model, train, val, TrainConfig(epochs=8), CsvMetricsSink(stream))

best = max(history, key=lambda r: r.val_acc)
print(f"best validation accuracy {best.val_acc:.3f} at epoch {best.epoch}", file=sys.stderr)
