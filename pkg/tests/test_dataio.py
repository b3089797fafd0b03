import struct

import numpy as np
import pytest

from fedsilo import dataio, nn
from fedsilo.datagen import LabeledDataset
from fedsilo.federation import SharedUpdate


def sample_dataset(n=10):
    rng = np.random.default_rng(0)
    return LabeledDataset(
        images=rng.uniform(0, 1, (n, 3, 4, 4)).astype(np.float32),
        labels=rng.integers(0, 2, n).astype(np.uint8),
        center_id=1,
    )


def test_dataset_roundtrip_bit_exact(tmp_path):
    ds = sample_dataset()
    path = tmp_path / "d.fsd"
    dataio.save_dataset(ds, path)
    back = dataio.load_dataset(path, center_id=1)
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.labels, ds.labels)
    assert back.center_id == 1


def test_bad_magic_is_format_error(tmp_path):
    path = tmp_path / "d.fsd"
    dataio.save_dataset(sample_dataset(), path)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(raw))
    with pytest.raises(dataio.FormatError, match="magic"):
        dataio.load_dataset(path)


def test_truncation_reports_byte_counts(tmp_path):
    ds = sample_dataset()
    path = tmp_path / "d.fsd"
    # header claims more samples than the payload holds
    with open(path, "wb") as f:
        f.write(dataio.DATASET_MAGIC)
        f.write(struct.pack("<H", dataio.VERSION))
        f.write(struct.pack("<4I", 100, 3, 4, 4))
        f.write(ds.images.tobytes())
    with pytest.raises(dataio.FormatError, match=r"expected \d+ bytes"):
        dataio.load_dataset(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "d.fsd"
    dataio.save_dataset(sample_dataset(), path)
    with open(path, "ab") as f:
        f.write(b"x")
    with pytest.raises(dataio.FormatError, match="trailing"):
        dataio.load_dataset(path)


def test_dimension_overflow_rejected(tmp_path):
    path = tmp_path / "d.fsd"
    with open(path, "wb") as f:
        f.write(dataio.DATASET_MAGIC)
        f.write(struct.pack("<H", dataio.VERSION))
        f.write(struct.pack("<4I", 2**31, 2**31, 4, 4))
    with pytest.raises(dataio.FormatError, match="overflow"):
        dataio.load_dataset(path)


def test_model_roundtrip(tmp_path):
    spec = nn.dcnn_spec(True, (4, 8), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=9)
    path = tmp_path / "m.fsm"
    dataio.save_model(params, path)
    back = dataio.load_model(path)
    assert set(back) == set(params)
    for k in params:
        assert np.array_equal(back[k], params[k])
        assert back[k].dtype == params[k].dtype


def test_model_magic_distinct_from_dataset(tmp_path):
    ds = sample_dataset()
    path = tmp_path / "d.fsd"
    dataio.save_dataset(ds, path)
    with pytest.raises(dataio.FormatError, match="magic"):
        dataio.load_model(path)


def test_shared_update_roundtrip():
    spec = nn.dcnn_spec(True, (4,), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=0)
    shared = {k: params[k] for k in nn.grad_keys(spec)}
    update = SharedUpdate(silo_id=3, round_index=7, entries=shared,
                          n_samples=123)
    blob = dataio.serialize_shared_update(update)
    sid, rnd, n, entries = dataio.parse_shared_update(blob)
    assert (sid, rnd, n) == (3, 7, 123)
    assert set(entries) == set(shared)
    for k in shared:
        assert np.array_equal(entries[k], shared[k])


def test_float32_entries_preserved(tmp_path):
    params = {(0, "weight"): np.ones((2, 3), dtype=np.float32)}
    path = tmp_path / "m.fsm"
    dataio.save_model(params, path)
    back = dataio.load_model(path)
    assert back[(0, "weight")].dtype == np.float32
