import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hemocnn.data import (ClassMapping, LabeledDataset, batches, decode_image, decode_ppm,
                          encode_ppm, load_dataset, one_hot, resize_bilinear,
                          split_stratified, worker_count)
from hemocnn.errors import ConfigError, DataError, DecodeError
from hemocnn.synthetic import make_cells, write_tree


def test_decode_white_pixel():
    img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff")
    assert img.shape == (1, 1, 3) and img.dtype == np.float32
    np.testing.assert_array_equal(img, [[[255, 255, 255]]])


def test_decode_layout_and_comments():
    payload = bytes(range(18))
    img = decode_ppm(b"P6 # made by hand\n3 2 # w h\n255\n" + payload)
    assert img.shape == (2, 3, 3)
    assert img[1, 0].tolist() == [9, 10, 11]


@pytest.mark.parametrize("blob,field", [
    (b"P5\n1 1\n255\n\x00", "magic"),
    (b"P6\n2 2\n255\n" + bytes(11), "payload"),
    (b"P6\n1 1\n65535\n" + bytes(6), "maxval"),
    (b"P6\nx 1\n255\n" + bytes(3), "width"),
    (b"P6\n1", "height"),
])
def test_decode_errors_name_field(blob, field):
    with pytest.raises(DecodeError, match=field):
        decode_ppm(blob)


def test_encode_decode_roundtrip(rng):
    img = rng.integers(0, 256, size=(5, 7, 3)).astype(np.float32)
    np.testing.assert_array_equal(decode_ppm(encode_ppm(img)), img)


def test_decode_image_dispatch(tmp_path):
    (tmp_path / "a.ppm").write_bytes(b"P6\n1 1\n255\n\x01\x02\x03")
    assert decode_image(tmp_path / "a.ppm").reshape(-1).tolist() == [1, 2, 3]
    (tmp_path / "a.txt").write_text("hello")
    with pytest.raises(DecodeError, match="a.txt"):
        decode_image(tmp_path / "a.txt")
    (tmp_path / "b.ppm").write_bytes(b"P3\n")
    with pytest.raises(DecodeError, match="b.ppm"):
        decode_image(tmp_path / "b.ppm")


def test_decode_png_via_pillow(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    arr = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    Image.fromarray(arr).save(tmp_path / "x.png")
    np.testing.assert_array_equal(decode_image(tmp_path / "x.png"), arr)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 40), st.integers(1, 40),
       st.floats(0, 255))
def test_resize_constant_is_exact(h, w, th, tw, value):
    img = np.full((h, w, 3), value, dtype=np.float32)
    out = resize_bilinear(img, (th, tw))
    assert out.shape == (th, tw, 3)
    assert np.all(out == np.float32(value))


def test_resize_identity(rng):
    img = rng.uniform(0, 255, size=(120, 160, 3)).astype(np.float32)
    np.testing.assert_allclose(resize_bilinear(img, (120, 160)), img, atol=1e-4)


def test_resize_checkerboard():
    board = np.array([[0, 255], [255, 0]], dtype=np.float32)[:, :, None].repeat(3, axis=2)
    out = resize_bilinear(board, (4, 4))[:, :, 0]
    centre = out[1:3, 1:3]
    assert np.all((centre > 0) & (centre < 255))
    # half-pixel sampling puts output 1 at source 0.25, output 2 at 0.75
    np.testing.assert_allclose(centre, [[95.625, 159.375], [159.375, 95.625]])
    # corners clamp to the source pixels
    assert out[0, 0] == 0 and out[0, 3] == 255


def test_resize_halving_averages():
    img = np.arange(16, dtype=np.float32).reshape(4, 4, 1).repeat(3, axis=2)
    out = resize_bilinear(img, (2, 2))[:, :, 0]
    np.testing.assert_allclose(out, [[2.5, 4.5], [10.5, 12.5]])


def test_class_mapping_defaults():
    m = ClassMapping()
    assert m.index_of("EOSINOPHIL") == 1
    assert m.index_of("NEUTROPHIL") == 1
    assert m.index_of("LYMPHOCYTE") == 0
    assert m.index_of("monocyte") == 0
    with pytest.raises(ConfigError):
        m.index_of("BASOPHIL")
    with pytest.raises(ConfigError):
        ClassMapping({"X": "GRANULOCYTE"})


def test_class_mapping_json(tmp_path):
    p = tmp_path / "map.json"
    p.write_text(json.dumps({"BASOPHIL": "POLYNUCLEAR"}))
    assert ClassMapping.from_json(p).index_of("BASOPHIL") == 1
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ClassMapping.from_json(p)


def test_load_dataset(tmp_path):
    root = write_tree(tmp_path / "TRAIN", 4, (24, 32, 3), seed=1)
    ds = load_dataset(root, target_shape=(12, 16, 3))
    assert len(ds) == 8 and ds.shape == (12, 16, 3)
    assert ds.class_counts() == {"MONONUCLEAR": 4, "POLYNUCLEAR": 4}
    assert list(ds.paths) == sorted(ds.paths)
    for path, label in zip(ds.paths, ds.labels):
        folder = path.split("/")[-2]
        assert label == (1 if folder in ("NEUTROPHIL", "EOSINOPHIL") else 0)
    again = load_dataset(root, target_shape=(12, 16, 3), workers=1)
    np.testing.assert_array_equal(again.images, ds.images)


def test_load_dataset_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError):
        load_dataset(tmp_path / "empty")
    bad = tmp_path / "bad" / "BASOPHIL"
    bad.mkdir(parents=True)
    (bad / "a.ppm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ConfigError, match="BASOPHIL"):
        load_dataset(tmp_path / "bad")
    broken = tmp_path / "broken" / "MONOCYTE"
    broken.mkdir(parents=True)
    (broken / "ok.ppm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    (broken / "zz.ppm").write_bytes(b"P6\n4 4\n255\n\0")
    with pytest.raises(DecodeError, match="zz.ppm"):
        load_dataset(tmp_path / "broken", target_shape=(2, 2, 3))


def test_split_stratified():
    ds = LabeledDataset(np.zeros((200, 1, 1, 3), np.float32), np.repeat([0, 1], 100))
    train, val = split_stratified(ds, 0.2, seed=5)
    assert train.class_counts() == {"MONONUCLEAR": 80, "POLYNUCLEAR": 80}
    assert val.class_counts() == {"MONONUCLEAR": 20, "POLYNUCLEAR": 20}
    assert sorted(train.paths + val.paths) == sorted(ds.paths)
    assert not set(train.paths) & set(val.paths)
    t2, v2 = split_stratified(ds, 0.2, seed=5)
    assert t2.paths == train.paths and v2.paths == val.paths
    all_train, none = split_stratified(ds, 0.0)
    assert len(all_train) == 200 and len(none) == 0
    with pytest.raises(ConfigError):
        split_stratified(ds, 1.0)
    with pytest.raises(DataError):
        split_stratified(ds.subset(range(100)), 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.floats(0, 0.95), st.integers(0, 1000))
def test_split_partitions(n0, n1, frac, seed):
    ds = LabeledDataset(np.zeros((n0 + n1, 1, 1, 3), np.float32), [0] * n0 + [1] * n1)
    train, val = split_stratified(ds, frac, seed)
    assert sorted(train.paths + val.paths) == sorted(ds.paths)
    assert len(set(train.paths) | set(val.paths)) == n0 + n1


def test_batches():
    ds = make_cells(5, (4, 4, 3), seed=0)
    sizes = [len(x) for x, _ in batches(ds, 4, seed=1, epoch=1)]
    assert sizes == [4, 4, 2]
    for x, t in batches(ds, 3):
        np.testing.assert_array_equal(t.sum(axis=1), 1)
    assert one_hot(np.array([1])).tolist() == [[0, 1]]
    with pytest.raises(ConfigError):
        list(batches(ds, 0))


def test_batches_reshuffle_per_epoch():
    ds = LabeledDataset(np.arange(20, dtype=np.float32).reshape(20, 1, 1, 1).repeat(3, 3),
                        np.zeros(20))

    def order(seed, epoch):
        return np.concatenate([x[:, 0, 0, 0] for x, _ in batches(ds, 7, seed, epoch)])

    differing = sum(not np.array_equal(order(s, 1), order(s, 2)) for s in range(100))
    assert differing == 100
    np.testing.assert_array_equal(order(3, 1), order(3, 1))
    assert sorted(order(3, 2)) == list(range(20))


def test_worker_count(monkeypatch):
    monkeypatch.setenv("HEMOCNN_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("HEMOCNN_THREADS", "zero")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.setenv("HEMOCNN_THREADS", "0")
    with pytest.raises(ConfigError):
        worker_count()
