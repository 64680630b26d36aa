import struct

import numpy as np
import pytest

from pdrlab.util.images import load_png, save_png, to_uint8
from pdrlab.util.tensorio import (
    MAGIC,
    DatasetError,
    decode_tensor,
    encode_tensor,
    read_json,
    read_tensor,
    write_json,
    write_tensor,
)


def test_header_layout():
    blob = encode_tensor(np.zeros((2, 3), dtype=np.float64))
    assert blob[:4] == MAGIC
    assert blob[4] == 1 and blob[5] == 2
    assert blob[6:8] == b"\x00\x00"
    assert struct.unpack_from("<2I", blob, 8) == (2, 3)
    assert len(blob) == 8 + 8 + 6 * 8


def test_float32_code_and_payload():
    array = np.array([1.5, -2.0], dtype=np.float32)
    blob = encode_tensor(array)
    assert blob[4] == 0
    assert blob[12:] == array.astype("<f4").tobytes()


def test_file_roundtrip_is_bit_exact(tmp_path):
    array = np.random.default_rng(0).normal(size=(3, 4, 2)).astype(np.float32)
    write_tensor(tmp_path / "nested" / "a.pdrt", array)
    back = read_tensor(tmp_path / "nested" / "a.pdrt")
    assert back.dtype == np.float32
    assert back.tobytes() == array.tobytes()


def test_rejects_other_dtypes():
    with pytest.raises(ValueError, match="float32 or float64"):
        encode_tensor(np.zeros(3, dtype=np.int32))


def test_bad_magic_and_truncation():
    with pytest.raises(ValueError, match="magic"):
        decode_tensor(b"NOPE\x00\x01\x00\x00")
    blob = encode_tensor(np.zeros(4))
    with pytest.raises(ValueError, match="payload"):
        decode_tensor(blob[:-1])


def test_read_errors_name_the_path(tmp_path):
    bad = tmp_path / "bad.pdrt"
    bad.write_bytes(b"garbage!")
    with pytest.raises(DatasetError) as info:
        read_tensor(bad)
    assert str(bad) in str(info.value)
    with pytest.raises(DatasetError):
        read_tensor(tmp_path / "missing.pdrt")


def test_json_is_sorted_with_trailing_newline(tmp_path):
    write_json(tmp_path / "m.json", {"b": 1, "a": [1, 2]})
    text = (tmp_path / "m.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("}\n")
    assert read_json(tmp_path / "m.json") == {"a": [1, 2], "b": 1}


def test_png_export(tmp_path):
    image = np.zeros((4, 4, 3))
    image[0, 0] = [1.0, 0.5, 2.0]
    assert to_uint8(image)[0, 0].tolist() == [255, 128, 255]
    save_png(tmp_path / "x.png", image, scale=2)
    back = load_png(tmp_path / "x.png")
    assert back.shape == (8, 8, 3)
    assert back[1, 1, 0] == pytest.approx(1.0)
