import struct

import numpy as np
import pytest

from depthstitch import io
from depthstitch.errors import DimensionMismatch, ParseError
from depthstitch.pipeline import load_inputs


def test_pfm_little_endian_value(tmp_path):
    path = tmp_path / "d.pfm"
    path.write_bytes(b"Pf\n2 1\n-1.0\n" + struct.pack("<2f", 2.0, 2.0))
    d = io.read_depth(path)
    np.testing.assert_allclose(d.inv, 0.5)
    assert d.valid.all()


def test_pfm_big_endian_and_row_order(tmp_path):
    path = tmp_path / "d.pfm"
    # rows stored bottom to top: the first stored row is the image's last row
    path.write_bytes(b"Pf\n1 2\n1.0\n" + struct.pack(">2f", 4.0, 8.0))
    np.testing.assert_allclose(io.read_pfm(path)[:, 0], [8.0, 4.0])


def test_pfm_round_trip(tmp_path, rng):
    z = rng.uniform(1, 10, (5, 7)).astype(np.float32)
    io.write_pfm(tmp_path / "z.pfm", z)
    np.testing.assert_array_equal(io.read_pfm(tmp_path / "z.pfm"), z)


@pytest.mark.parametrize("payload, line", [(b"PX\n1 1\n-1\n", 1), (b"Pf\nfoo\n-1\n", 2), (b"Pf\n1 1\n0\n", 3)])
def test_pfm_bad_header(tmp_path, payload, line):
    path = tmp_path / "bad.pfm"
    path.write_bytes(payload + b"\0\0\0\0")
    with pytest.raises(ParseError) as exc:
        io.read_pfm(path)
    assert exc.value.line == line


def test_invalid_depth_pixels(tmp_path):
    io.write_pfm(tmp_path / "z.pfm", np.array([[1.0, 0.0], [-2.0, np.inf]]))
    d = io.read_depth(tmp_path / "z.pfm")
    assert d.valid.tolist() == [[True, False], [False, False]]


def test_png16_depth(tmp_path):
    z = np.array([[1.0, 2.5], [0.0, 4.0]])
    io.write_depth_png(tmp_path / "z.png", z, 0.001)
    d = io.read_depth(tmp_path / "z.png", depth_unit=0.001)
    np.testing.assert_allclose(d.depth()[d.valid], [1.0, 2.5, 4.0])
    assert not d.valid[1, 0]
    with pytest.raises(ParseError):
        io.read_depth(tmp_path / "z.png")


def test_image_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (6, 9, 3), dtype=np.uint8)
    io.write_image(tmp_path / "a.png", img)
    np.testing.assert_array_equal(io.read_image(tmp_path / "a.png"), img)


def test_bad_image(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not a png")
    with pytest.raises(ParseError):
        io.read_image(tmp_path / "x.png")


def test_match_lines(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"px":3,"py":4,"qx":5,"qy":4}\n\n{"px":1.5,"py":0,"qx":2,"qy":2}\n')
    p, q = io.read_matches(path)
    np.testing.assert_array_equal(p, [[3, 4], [1.5, 0]])
    np.testing.assert_array_equal(q, [[5, 4], [2, 2]])


@pytest.mark.parametrize("bad", ['{"px":1,"py":2,"qx":3}', "{nope", '{"px":"a","py":2,"qx":3,"qy":4}',
                                 '{"px":NaN,"py":2,"qx":3,"qy":4}'])
def test_match_errors_report_line(tmp_path, bad):
    path = tmp_path / "m.jsonl"
    path.write_text('{"px":3,"py":4,"qx":5,"qy":4}\n' + bad + "\n")
    with pytest.raises(ParseError) as exc:
        io.read_matches(path)
    assert exc.value.line == 2
    assert "m.jsonl" in str(exc.value) and "2" in str(exc.value)


def test_load_inputs_looks_up_depth(tmp_path):
    z = np.full((6, 8), 4.0)
    z[4, 3] = 2.0
    z[0, 0] = 0.0
    io.write_pfm(tmp_path / "d.pfm", z)
    img = np.zeros((6, 8, 3), np.uint8)
    io.write_image(tmp_path / "t.png", img)
    io.write_image(tmp_path / "r.png", img)
    io.write_matches(tmp_path / "m.jsonl", [(3, 4), (0, 0), (7, 5)], [(5, 4), (1, 1), (6, 5)])
    inputs = load_inputs(tmp_path / "t.png", tmp_path / "r.png", tmp_path / "d.pfm", tmp_path / "m.jsonl")
    assert len(inputs.matches) == 2 and inputs.dropped_matches == 1
    np.testing.assert_allclose(inputs.matches.inv_depth, [0.5, 0.25])


def test_dimension_mismatch(tmp_path):
    io.write_pfm(tmp_path / "d.pfm", np.ones((5, 5)))
    io.write_image(tmp_path / "t.png", np.zeros((6, 8, 3), np.uint8))
    io.write_matches(tmp_path / "m.jsonl", [(1, 1)], [(1, 1)])
    with pytest.raises(DimensionMismatch):
        load_inputs(tmp_path / "t.png", tmp_path / "t.png", tmp_path / "d.pfm", tmp_path / "m.jsonl")
