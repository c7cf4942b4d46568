import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsekit.io import (
    FormatError,
    read_image,
    read_labels,
    read_spmx,
    spmx_dumps,
    spmx_loads,
    write_image,
    write_labels,
    write_spmx,
    write_trace,
)

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_spmx_roundtrip(M):
    assert np.array_equal(spmx_loads(spmx_dumps(M)), M)


def test_spmx_layout_is_column_major_little_endian():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    buf = spmx_dumps(M)
    assert buf[:4] == b"SPMX"
    assert struct.unpack_from("<IQQ", buf, 4) == (1, 2, 2)
    assert struct.unpack_from("<4d", buf, 24) == (1.0, 3.0, 2.0, 4.0)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b[:-8],
    lambda b: b[:10],
    lambda b: b[:24] + struct.pack("<d", float("nan")) + b[32:],
])
def test_spmx_rejects_malformed(mutate):
    with pytest.raises(FormatError):
        spmx_loads(mutate(spmx_dumps(np.ones((2, 2)))))


def test_spmx_files(tmp_path):
    M = np.arange(6.0).reshape(2, 3)
    write_spmx(tmp_path / "m.spmx", M)
    assert np.array_equal(read_spmx(tmp_path / "m.spmx"), M)
    with pytest.raises(FormatError):
        read_spmx(tmp_path / "missing.spmx")


def test_images_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    g = rng.integers(0, 256, (7, 5)).astype(float)
    c = rng.integers(0, 256, (4, 6, 3)).astype(float)
    write_image(tmp_path / "g.pgm", g)
    write_image(tmp_path / "c.ppm", c)
    assert (tmp_path / "g.pgm").read_bytes()[:2] == b"P5"
    assert (tmp_path / "c.ppm").read_bytes()[:2] == b"P6"
    assert np.array_equal(read_image(tmp_path / "g.pgm"), g)
    assert np.array_equal(read_image(tmp_path / "c.ppm"), c)
    # export clamps and rounds
    write_image(tmp_path / "x.pgm", np.array([[-5.0, 300.0, 1.6]]))
    assert np.array_equal(read_image(tmp_path / "x.pgm"), [[0, 255, 2]])


def test_image_rejects_other_formats(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"not an image")
    with pytest.raises(FormatError):
        read_image(tmp_path / "bad.pgm")


def test_labels_and_trace(tmp_path):
    write_labels(tmp_path / "l.txt", [3, 1, 2])
    assert list(read_labels(tmp_path / "l.txt")) == [3, 1, 2]
    (tmp_path / "bad.txt").write_text("1\nx\n")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "bad.txt")
    write_trace(tmp_path / "t.txt", [2.0, 1.0], ["replace atom 0"])
    lines = (tmp_path / "t.txt").read_text().splitlines()
    assert lines == ["iter\tobjective", "0\t2", "1\t1", "# replace atom 0"]
