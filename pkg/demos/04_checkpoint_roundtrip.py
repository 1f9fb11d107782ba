"""Save a model, inspect the file header and reload it bit-for-bit."""
import json
import struct
import tempfile
from pathlib import Path

import numpy as np

from hemocnn import build_paper_model, checkpoint
from hemocnn.synthetic import make_cells

model = build_paper_model(seed=7)
images = make_cells(4, seed=7).images

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "cells.bcm"
    checkpoint.save(model, path)
    blob = path.read_bytes()

    magic, version, hlen = struct.unpack_from("<4sIQ", blob)
    header = json.loads(blob[16:16 + hlen])
    print(f"{path.name}: {len(blob):,} bytes, magic {magic!r}, version {version}")
    print(f"input shape {header['input_shape']}, classes {header['class_names']}")
    for entry in header["params"][:4]:
        print(f"  {entry['name']:<12} {str(entry['shape']):<18} offset {entry['offset']}")
    print(f"  ... {len(header['params'])} tensors in total")

    restored = checkpoint.load(path)

same = np.array_equal(model.predict(images), restored.predict(images))
print("predictions identical after reload:", same)
