import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grelu.data import (Dataset, ackley_labels, check_separation, dataset_bytes, gen_ackley,
                        load_csv, load_dataset, normalize_rows, parse_dataset, save_dataset,
                        write_csv)
from grelu.errors import DimensionError, FormatError, InputError


def ackley_reference(x):
    # plain loop with 1-based indices and the circular partner index
    d = len(x)
    total = 0.0
    for dp in range(1, d + 1):
        partner = ((d - dp - 1) % d) + 1
        v = x[dp - 1]
        lg = math.log(max(abs(v), 1e-12))
        total += x[partner - 1] * (lg * (math.cos(v) + v**3 * math.sin(v)) + math.sqrt(abs(v)))
    return total


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.array([[1.0, 1.0]]), np.array([0.0]))
    with pytest.raises(InputError):
        Dataset(np.array([[1.0, 0.0]]), np.array([np.inf]))
    with pytest.raises(DimensionError):
        Dataset(np.eye(2), np.zeros(3))
    with pytest.raises(InputError):
        normalize_rows(np.zeros((1, 3)))


def test_gen_ackley_full_size():
    ds = gen_ackley(100, 200, 0)
    assert ds.X.shape == (100, 200) and ds.Y.shape == (100, 1)
    assert np.all(np.isfinite(ds.Y))
    assert np.max(np.abs(ds.Y)) == pytest.approx(1.0, abs=1e-15)
    assert ds.label_scale > 0
    np.testing.assert_allclose(np.linalg.norm(ds.X, axis=1), 1.0, atol=1e-12)


def test_gen_ackley_deterministic():
    a, b = gen_ackley(8, 5, 3), gen_ackley(8, 5, 3)
    assert dataset_bytes(a) == dataset_bytes(b)
    assert dataset_bytes(a) != dataset_bytes(gen_ackley(8, 5, 4))


@pytest.mark.parametrize("seed", range(3))
def test_labels_match_reference(seed):
    X = normalize_rows(np.random.default_rng(seed).standard_normal((10, 7)))
    ref = np.array([ackley_reference(x) for x in X])
    np.testing.assert_allclose(ackley_labels(X), ref, rtol=1e-12, atol=1e-12)
    ds = gen_ackley(10, 7, seed)
    raw = np.array([ackley_reference(x) for x in ds.X])
    np.testing.assert_allclose(ds.Y[:, 0] * ds.label_scale, raw, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("q", range(5))
def test_one_hot_closed_form(q):
    d = 5
    x = np.zeros(d)
    x[q] = 1.0
    # only the term whose partner index is q survives
    j = (d - q - 2) % d
    expected = 1.0 if j == q else math.log(1e-12)
    assert ackley_labels(x[None])[0] == pytest.approx(expected, rel=1e-12)


def test_separation():
    assert check_separation(Dataset(np.eye(3), np.zeros(3))) == 0.0
    X = normalize_rows(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 1.0]]))
    assert check_separation(Dataset(X, np.zeros(3))) == pytest.approx(1.0)
    with pytest.warns(UserWarning):
        assert check_separation(Dataset(np.eye(2)[:1], np.zeros(1))) == 0.0


def test_separation_concentration():
    hits = [check_separation(gen_ackley(100, 200, s)) < 0.35 for s in range(50)]
    assert sum(hits) >= 0.95 * 50


def test_binary_roundtrip(tmp_path):
    ds = gen_ackley(6, 4, 1)
    save_dataset(ds, tmp_path / "d.grnd")
    back = load_dataset(tmp_path / "d.grnd")
    assert back.X.tobytes() == ds.X.tobytes() and back.Y.tobytes() == ds.Y.tobytes()
    assert back.label_scale == ds.label_scale
    raw = (tmp_path / "d.grnd").read_bytes()
    assert raw[:4] == b"GRND"
    assert struct.unpack_from("<I", raw, 4)[0] == 1


def test_binary_errors():
    buf = dataset_bytes(gen_ackley(3, 2, 0))
    with pytest.raises(FormatError) as e:
        parse_dataset(b"XXXX" + buf[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        parse_dataset(buf[:-5])
    assert e.value.offset == len(buf) - 5
    with pytest.raises(FormatError) as e:
        parse_dataset(buf[:20])
    assert e.value.offset == 20
    with pytest.raises(FormatError) as e:
        parse_dataset(buf + b"\0")
    assert e.value.offset == len(buf)
    bad = bytearray(buf)
    bad[4] = 7
    with pytest.raises(FormatError) as e:
        parse_dataset(bytes(bad))
    assert e.value.offset == 4


def test_csv_import_roundtrip(tmp_path):
    ds = gen_ackley(5, 3, 2)
    write_csv(ds, tmp_path / "d.csv")
    via_csv = load_csv(tmp_path / "d.csv", normalize=False)
    save_dataset(via_csv, tmp_path / "d.grnd")
    back = load_dataset(tmp_path / "d.grnd")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.Y, ds.Y)


def test_csv_normalizes_and_rejects_bad_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x0,x1,y0\n3,4,1\n")
    ds = load_csv(p)
    np.testing.assert_allclose(ds.X, [[0.6, 0.8]])
    p.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        load_csv(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_generated_rows_unit_and_bounded(n, d, seed):
    ds = gen_ackley(n, d, seed)
    assert np.all(np.abs(np.linalg.norm(ds.X, axis=1) - 1) <= 1e-9)
    assert np.max(np.abs(ds.Y)) <= 1.0 + 1e-15
    assert ds.label_scale > 0
    if n >= 2:
        assert check_separation(ds) <= 1.0
