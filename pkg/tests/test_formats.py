import numpy as np
import pytest
from PIL import Image

from cystseg.errors import ValidationError
from cystseg.formats import (
    decode_pfm,
    encode_pfm,
    read_label_png,
    read_pfm,
    read_rgb,
    write_label_png,
    write_mask_png,
    write_pfm,
    write_rgb,
)


def test_pfm_layout():
    scores = np.array([[0.0, 0.25, 0.5], [0.75, 1.0, 0.125]], dtype=np.float32)
    payload = encode_pfm(scores)
    assert payload.startswith(b"Pf\n3 2\n-1.0\n")
    body = np.frombuffer(payload[len(b"Pf\n3 2\n-1.0\n"):], dtype="<f4")
    # bottom row first
    assert body[:3].tolist() == [0.75, 1.0, 0.125]
    np.testing.assert_array_equal(decode_pfm(payload), scores)


def test_pfm_big_endian_and_files(tmp_path):
    scores = np.array([[0.5, 1.0]], dtype=np.float32)
    payload = b"Pf\n2 1\n1.0\n" + scores.astype(">f4").tobytes()
    np.testing.assert_array_equal(decode_pfm(payload), scores)
    write_pfm(tmp_path / "a.pfm", scores)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), scores)


@pytest.mark.parametrize(
    "payload",
    [
        b"PF\n1 1\n-1.0\n" + b"\0" * 12,
        b"Pf\n2 2\n-1.0\n" + b"\0" * 8,
        b"Pf\n",
        b"Pf\nab cd\n-1.0\n",
        b"Pf\n2 2\nbig\n" + b"\0" * 16,
        b"Pf\n0 2\n-1.0\n",
        b"Pf\n-2 2\n-1.0\n",
        b"Pf\n2 2\n0.0\n" + b"\0" * 16,
        b"Pf\n\xff\xfe 2\n-1.0\n",
        b"Pf\n2 2 2\n-1.0\n",
    ],
)
def test_pfm_rejects_malformed(payload):
    with pytest.raises(ValidationError):
        decode_pfm(payload)


def test_label_png_is_16_bit(tmp_path):
    labels = np.array([[0, 1], [300, 65535]], dtype=np.int32)
    path = tmp_path / "x.labels.png"
    write_label_png(path, labels)
    with Image.open(path) as img:
        assert img.mode.startswith("I")
    np.testing.assert_array_equal(read_label_png(path), labels)


def test_label_png_rejects_large_label(tmp_path):
    with pytest.raises(ValidationError):
        write_label_png(tmp_path / "x.png", np.array([[65536]], dtype=np.int32))


def test_mask_and_rgb(tmp_path):
    write_mask_png(tmp_path / "m.png", np.array([[True, False]]))
    with Image.open(tmp_path / "m.png") as img:
        assert np.array(img).tolist() == [[255, 0]]
    rgb = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    write_rgb(tmp_path / "c.png", rgb)
    np.testing.assert_array_equal(read_rgb(tmp_path / "c.png"), rgb)
    with pytest.raises(ValidationError):
        write_rgb(tmp_path / "bad.png", np.zeros((2, 2)))
