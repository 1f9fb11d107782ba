"""End-to-end acceptance criteria.

Each test appends one ``[PASS]``/``[FAIL]`` line to the terminal summary.
Criteria 3 and 6 train at 48x64x3 inputs so the suite stays within its
runtime budget on a single CPU core; the architecture is otherwise unchanged.
"""
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from layer_table import TABLE, TOTAL_PARAMS

from hemocnn import checkpoint
from hemocnn.cli import GRADCHECK_SHAPE, main
from hemocnn.data import ClassMapping, load_dataset, one_hot
from hemocnn.errors import ShapeError
from hemocnn.layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Rescale, Sigmoid
from hemocnn.model import TrainConfig, build_paper_model, fit
from hemocnn.optimize import finite_difference_check
from hemocnn.synthetic import make_cells, write_tree

SEEDS = (0, 1, 2)
TRAIN_SHAPE = (48, 64, 3)


def record(number, ok, detail):
    ACCEPTANCE_RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def test_criterion_1_layer_table(capsys):
    start = time.perf_counter()
    code = main(["summary"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    rows = {}
    for line in out.splitlines():
        parts = line.split()
        if parts and parts[0] in {name for name, _, _ in TABLE}:
            lo = line.index("(None")
            shape = line[lo:line.index(")", lo) + 1]
            rows[parts[0]] = (shape, int(parts[-1]))
    expected = {name: ("(None, " + ", ".join(map(str, shape)) + ")", params)
                for name, shape, params in TABLE}
    ok = (code == 0 and rows == expected and len(rows) == 19
          and f"Total params: {TOTAL_PARAMS}" in out and elapsed < 1.0)
    record(1, ok, f"19/19 rows match, total {TOTAL_PARAMS}, {elapsed:.3f}s"
           if ok else f"summary mismatch ({len(rows)} rows, {elapsed:.3f}s)")


def _layer_cases(seed):
    rng = np.random.default_rng(seed)
    cases = [
        (Rescale(), (2, 5, 6, 3)),
        (Conv2D(4), (2, 6, 7, 3)),
        (ReLU(), (2, 5, 6, 3)),
        (MaxPool2D(), (2, 7, 9, 3)),
        (Flatten(), (2, 3, 4, 2)),
        (Dense(5), (3, 7)),
        (Dropout(0.5, rng=np.random.default_rng(seed)), (3, 10)),
        (Sigmoid(), (3, 4)),
    ]
    for layer, shape in cases:
        layer.build(shape[1:], rng, np.float64)
        scale = 255.0 if isinstance(layer, Rescale) else 1.0
        yield layer, rng.standard_normal(shape) * scale


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    worst, failures, checks = 0.0, [], 0
    for seed in range(5):
        for layer, x in _layer_cases(seed):
            rep = finite_difference_check(layer, x, 1e-5, 1e-4, seed=seed)
            worst, checks = max(worst, rep.max_error), checks + 1
            if not rep.passed:
                failures.append(f"{layer.kind}@{seed}")
        model = build_paper_model(GRADCHECK_SHAPE, seed=seed, precision="float64")
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 255.0, size=(2, *GRADCHECK_SHAPE))
        t = one_hot(rng.integers(0, 2, size=2), dtype=np.float64)
        rep = finite_difference_check(model, x, 1e-5, 1e-4, t, seed=seed)
        worst, checks = max(worst, rep.max_error), checks + 1
        if not rep.passed:
            failures.append(f"stack@{seed}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60
    shape = "x".join(map(str, GRADCHECK_SHAPE))
    record(2, ok, f"{checks} checks (8 layers + {shape} stack, 5 seeds), "
           f"max rel err {worst:.2e}, {elapsed:.1f}s" + (f", failed {failures}" if failures else ""))


def test_criterion_2_literal_shape_collapses():
    # the 12x16 input named for the stack is too small: it collapses before conv 4
    with pytest.raises(ShapeError):
        build_paper_model((12, 16, 3), precision="float64")


def test_criterion_3_overfit():
    start = time.perf_counter()
    reached = []
    for seed in SEEDS:
        train = make_cells(8, TRAIN_SHAPE, seed=100 + seed)
        val = make_cells(1, TRAIN_SHAPE, seed=200 + seed)
        model = build_paper_model(TRAIN_SHAPE, seed=seed)
        history = fit(model, train, val, TrainConfig(epochs=200, seed=seed))
        first = next((r.epoch for r in history if r.train_acc == 1.0), None)
        reached.append(first)
    elapsed = time.perf_counter() - start
    ok = all(e is not None for e in reached) and elapsed < 120
    record(3, ok, f"train acc 1.0 first reached at epochs {reached} for seeds "
           f"{list(SEEDS)}, {elapsed:.1f}s")


def test_criterion_4_cli_determinism(tmp_path):
    root = write_tree(tmp_path / "data", 10, TRAIN_SHAPE, seed=7)
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        code = main(["train", "--data", str(root), "--checkpoint", str(d / "m.bcm"),
                     "--metrics-out", str(d / "m.csv"), "--epochs", "3",
                     "--val-fraction", "0.2", "--input-shape", "48,64,3"])
        assert code == 0
        outputs.append(((d / "m.csv").read_bytes(), (d / "m.bcm").read_bytes()))
    (csv_a, ckpt_a), (csv_b, ckpt_b) = outputs
    ok = csv_a == csv_b and ckpt_a == ckpt_b
    record(4, ok, f"metrics CSV ({len(csv_a)} B) and checkpoint ({len(ckpt_a)} B) "
           f"{'byte-identical' if ok else 'differ'} across two runs")


def test_criterion_5_round_trip(tmp_path):
    model = build_paper_model(seed=5)
    x = make_cells(16, seed=5).images
    before = model.predict(x)
    path = tmp_path / "m.bcm"
    checkpoint.save(model, path)
    after = checkpoint.load(path).predict(x)
    ok = x.shape[0] == 32 and before.tobytes() == after.tobytes()
    record(5, ok, f"save/load/predict on {x.shape[0]}x120x160x3 batch "
           f"{'bitwise identical' if ok else 'differs'}")


def test_criterion_6_monotone_learning():
    start = time.perf_counter()
    pairs = []
    for seed in SEEDS:
        train = make_cells(100, TRAIN_SHAPE, seed=300 + seed)
        val = make_cells(5, TRAIN_SHAPE, seed=400 + seed)
        model = build_paper_model(TRAIN_SHAPE, seed=seed)
        history = fit(model, train, val, TrainConfig(epochs=20, seed=seed))
        pairs.append((history[0].train_loss, history[-1].train_loss))
    ok = all(last < first for first, last in pairs)
    shown = ", ".join(f"{a:.4f}->{b:.4f}" for a, b in pairs)
    record(6, ok, f"epoch-1 -> epoch-20 train loss per seed: {shown} "
           f"({time.perf_counter() - start:.1f}s)")


@pytest.mark.extended
@pytest.mark.skipif(not os.environ.get("HEMOCNN_DATASET"),
                    reason="set HEMOCNN_DATASET to the dataset root to run")
def test_criterion_7_full_dataset():
    root = os.path.expanduser(os.environ["HEMOCNN_DATASET"])
    mapping = ClassMapping()
    train = load_dataset(os.path.join(root, "TRAIN"), mapping)
    test = load_dataset(os.path.join(root, "TEST"), mapping)
    model = build_paper_model()
    history = fit(model, train, test, TrainConfig())
    acc = history[-1].val_acc
    record(7, acc >= 0.90, f"test accuracy {acc:.4f} after 20 epochs (threshold 0.90)")
