"""Load a folder-per-class image tree the way the CLI does.

The expected layout is ``root/TRAIN/<FOLDER>/*`` and ``root/TEST/<FOLDER>/*``
where folders are the four leukocyte types.  Lymphocytes and monocytes map to
MONONUCLEAR, neutrophils and eosinophils to POLYNUCLEAR; a JSON file passed
as ``--class-map`` can override that.  PPM images decode natively; JPEG and
PNG need the optional Pillow dependency (``pip install hemocnn[images]``).
"""
import tempfile
from pathlib import Path

from hemocnn import ClassMapping, batches, load_dataset
from hemocnn.synthetic import write_tree

with tempfile.TemporaryDirectory() as tmp:
    root = write_tree(Path(tmp) / "TRAIN", 6, shape=(96, 128, 3), seed=3)
    for folder in sorted(root.iterdir()):
        print(f"{folder.name:<12} {len(list(folder.iterdir()))} files")

    data = load_dataset(root, ClassMapping(), target_shape=(48, 64, 3))
    print(f"\nloaded {len(data)} images resized to {data.shape}")
    print("per class:", data.class_counts())
    print("first files:", *data.paths[:3], sep="\n  ")

for x, t in batches(data, batch_size=5, seed=0, epoch=1):
    print(f"batch {x.shape}, targets {t.argmax(axis=1).tolist()}")
