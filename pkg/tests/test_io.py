import json
import struct

import numpy as np
import pytest

from bbm.errors import DimensionMismatch, EmptyParcel, FormatError, NonFiniteError, ValidationError
from bbm.io import (
    BoldMatrix,
    MotionParams,
    Template,
    load_bold,
    load_template,
    read_matrix,
    save_bold,
    save_template,
    write_matrix,
)


def test_csv_parse(tmp_path):
    p = tmp_path / "run.csv"
    p.write_text("1,2,3\n4,5,6\n7,8,9\n10,11,12.5\n")
    b = load_bold(p)
    assert (b.T, b.V) == (4, 3)
    assert b.data[3, 2] == 12.5


def test_csv_with_header(tmp_path):
    p = tmp_path / "run.csv"
    p.write_text("a,b\n1,2\n3,4\n5,7\n")
    assert load_bold(p).data.shape == (3, 2)


def test_binary_roundtrip_is_bit_exact(tmp_path, rng):
    x = rng.standard_normal((100, 500))
    x[0, 0] = np.nextafter(1.0, 2.0)
    write_matrix(tmp_path / "x.bbm", x)
    raw = (tmp_path / "x.bbm").read_bytes()
    assert raw[:4] == b"BBMP"
    assert len(raw) == 24 + 100 * 500 * 8
    y = read_matrix(tmp_path / "x.bbm")
    assert y.tobytes() == x.tobytes()
    b = load_bold(tmp_path / "x.bbm")
    assert (b.T, b.V) == (100, 500)


def test_binary_payload_mismatch(tmp_path):
    p = tmp_path / "bad.bbm"
    p.write_bytes(struct.pack("<4sIQQ", b"BBMP", 1, 10, 10) + b"\0" * (99 * 8))
    with pytest.raises(DimensionMismatch):
        read_matrix(p)


def test_binary_bad_magic(tmp_path):
    p = tmp_path / "bad.bbm"
    p.write_bytes(struct.pack("<4sIQQ", b"NOPE", 1, 1, 1) + b"\0" * 8)
    with pytest.raises(FormatError):
        read_matrix(p)


def test_nonfinite_reports_index():
    x = np.ones((5, 4))
    x[2, 3] = np.nan
    with pytest.raises(NonFiniteError) as err:
        BoldMatrix(x)
    assert tuple(err.value.index) == (2, 3)


def test_bold_needs_two_by_two():
    with pytest.raises(ValidationError):
        BoldMatrix(np.ones((1, 5)))


def test_sidecar_metadata_roundtrip(tmp_path, rng):
    b = BoldMatrix(rng.standard_normal((6, 4)), tr_seconds=0.72, subject_id="s1", session_id="r2")
    save_bold(tmp_path / "s1.bbm", b)
    meta = json.loads((tmp_path / "s1.json").read_text())
    assert meta["tr_seconds"] == 0.72
    b2 = load_bold(tmp_path / "s1.bbm")
    assert b2.subject_id == "s1" and b2.session_id == "r2" and b2.tr_seconds == 0.72


def test_template_roundtrip(tmp_path, rng):
    maps = Template("maps", maps=rng.standard_normal((3, 20)), name="m")
    save_template(tmp_path / "m.bbm", maps)
    assert np.array_equal(load_template(tmp_path / "m.bbm").maps, maps.maps)
    labels = Template("parcellation", labels=np.array([1, 1, 2, 0, 3, 3]))
    save_template(tmp_path / "p.csv", labels)
    back = load_template(tmp_path / "p.csv", kind="parcellation")
    assert back.Q == 3
    assert np.array_equal(back.labels, labels.labels)


def test_parcellation_masks():
    t = Template("parcellation", labels=np.array([1, 2, 2, 0]))
    assert t.masks().tolist() == [[True, False, False, False], [False, True, True, False]]


def test_empty_parcel():
    with pytest.raises(EmptyParcel):
        Template("parcellation", labels=np.array([1, 1, 3, 3]))


def test_motion_shape():
    with pytest.raises(ValidationError):
        MotionParams(np.zeros((10, 5)))
