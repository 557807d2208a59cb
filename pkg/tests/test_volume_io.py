import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wmgraph.exceptions import DomainError, FormatError, SchemaError, SizeMismatchError
from wmgraph.graph import fibonacci_sphere
from wmgraph.volume_io import (
    ODF_MAGIC,
    VOLUME_MAGIC,
    Mask,
    ODFField,
    StreamlineSet,
    Volume3D,
    Volume4D,
    flat_index,
    grid_coords,
    read_mask,
    read_odf_field,
    read_streamlines,
    read_volume,
    write_mask,
    write_odf_field,
    write_streamlines,
    write_volume,
)


def _raw_volume(path, header, values):
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.asarray(values, dtype="<f8").tobytes())


def test_zero_volume_round_trip(tmp_path):
    vol = Volume3D(np.zeros((2, 2, 2)))
    write_volume(vol, tmp_path / "z.vol")
    back = read_volume(tmp_path / "z.vol")
    assert isinstance(back, Volume3D)
    assert np.array_equal(back.data, vol.data)
    assert back.voxel_size_mm == vol.voxel_size_mm


def test_truncated_payload_is_size_mismatch(tmp_path):
    _raw_volume(tmp_path / "t.vol", {"dims": [2, 2, 2], "voxel_size_mm": [1, 1, 1]}, np.zeros(7))
    with pytest.raises(SizeMismatchError):
        read_volume(tmp_path / "t.vol")


def test_payload_is_x_fastest(tmp_path):
    _raw_volume(tmp_path / "o.vol", {"dims": [2, 2, 2], "voxel_size_mm": [1, 1, 1]}, np.arange(8.0))
    vol = read_volume(tmp_path / "o.vol")
    assert vol.data[1, 0, 0] == 1
    assert vol.data[0, 1, 0] == 2
    assert vol.data[0, 0, 1] == 4


def test_random_volume_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(42)
    vol = Volume3D(rng.normal(size=(3, 3, 3)), (1.0, 2.0, 2.5))
    write_volume(vol, tmp_path / "a.vol")
    write_volume(vol, tmp_path / "b.vol")
    assert (tmp_path / "a.vol").read_bytes() == (tmp_path / "b.vol").read_bytes()
    back = read_volume(tmp_path / "a.vol")
    assert back.data.tobytes() == vol.data.tobytes()
    assert back.voxel_size_mm == (1.0, 2.0, 2.5)


def test_volume4d_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    vol = Volume4D(rng.normal(size=(2, 3, 4, 5)), tr_seconds=0.72)
    write_volume(vol, tmp_path / "s.vol")
    back = read_volume(tmp_path / "s.vol")
    assert isinstance(back, Volume4D)
    assert back.tr_seconds == 0.72
    assert np.array_equal(back.data, vol.data)


def test_volume4d_needs_two_frames():
    with pytest.raises(DomainError):
        Volume4D(np.zeros((2, 2, 2, 1)))


@pytest.mark.parametrize("header, field", [
    ({"voxel_size_mm": [1, 1, 1]}, "dims"),
    ({"dims": [2, 2, 2]}, "voxel_size_mm"),
    ({"dims": [2, -2, 2], "voxel_size_mm": [1, 1, 1]}, "dims"),
    ({"dims": [2, 2, 2], "voxel_size_mm": [1, 1]}, "voxel_size_mm"),
    ({"dims": [2, 2, 2, 2], "voxel_size_mm": [1, 1, 1]}, "tr_seconds"),
])
def test_malformed_header_names_field(tmp_path, header, field):
    n = int(np.prod(header.get("dims", [1]))) if all(d > 0 for d in header.get("dims", [1])) else 8
    _raw_volume(tmp_path / "m.vol", header, np.zeros(n))
    with pytest.raises(FormatError, match=field):
        read_volume(tmp_path / "m.vol")


def test_bad_magic(tmp_path):
    (tmp_path / "x.vol").write_bytes(b"NOPE\n{}\n")
    with pytest.raises(FormatError, match="magic"):
        read_volume(tmp_path / "x.vol")


def test_mask_round_trip(tmp_path):
    vox = np.zeros((3, 4, 5), bool)
    vox[1, 2, 3] = vox[0, 0, 0] = True
    write_mask(Mask(vox), tmp_path / "m.vol")
    back = read_mask(tmp_path / "m.vol")
    assert np.array_equal(back.voxels, vox)
    assert list(back.flat_indices) == [0, 1 + 3 * (2 + 4 * 3)]


def test_empty_mask_rejected():
    with pytest.raises(DomainError):
        Mask(np.zeros((2, 2, 2), bool))


@given(st.tuples(st.integers(1, 7), st.integers(1, 7), st.integers(1, 7)), st.data())
def test_flat_index_matches_definition(dims, data):
    x = data.draw(st.integers(0, dims[0] - 1))
    y = data.draw(st.integers(0, dims[1] - 1))
    z = data.draw(st.integers(0, dims[2] - 1))
    f = int(flat_index((x, y, z), dims))
    assert f == x + dims[0] * (y + dims[1] * z)
    assert tuple(grid_coords(f, dims)) == (x, y, z)
    assert np.arange(np.prod(dims)).reshape(dims, order="F")[x, y, z] == f


# -- ODF -------------------------------------------------------------------------------


def test_single_voxel_odf_round_trip(tmp_path):
    dirs = fibonacci_sphere(98)
    odf = ODFField(dirs, (2, 2, 2), [5], np.ones((1, 98)))
    write_odf_field(odf, tmp_path / "o.odf")
    back = read_odf_field(tmp_path / "o.odf")
    assert np.array_equal(back.directions, odf.directions)
    assert list(back.voxel_indices) == [5]
    assert np.array_equal(back.values, odf.values)


def test_non_unit_direction_rejected(tmp_path):
    dirs = fibonacci_sphere(98)
    dirs[3] *= 0.5
    header = {"dims": [1, 1, 1], "n_dirs": 98, "directions": dirs.tolist(), "n_voxels": 0}
    with open(tmp_path / "bad.odf", "wb") as fh:
        fh.write(ODF_MAGIC + (json.dumps(header) + "\n").encode())
    with pytest.raises(DomainError, match="norm"):
        read_odf_field(tmp_path / "bad.odf")


def test_too_few_directions_rejected():
    with pytest.raises(DomainError):
        ODFField(fibonacci_sphere(97), (1, 1, 1), [0], np.ones((1, 97)))


def test_negative_odf_value_rejected():
    vals = np.ones((1, 98))
    vals[0, 4] = -1e-3
    with pytest.raises(DomainError):
        ODFField(fibonacci_sphere(98), (1, 1, 1), [0], vals)


def test_random_odf_round_trip_bytes(tmp_path):
    rng = np.random.default_rng(7)
    dims = (4, 3, 5)
    idx = np.sort(rng.choice(60, 17, replace=False))
    odf = ODFField(fibonacci_sphere(120), dims, idx, rng.uniform(0, 3, (17, 120)))
    write_odf_field(odf, tmp_path / "a.odf")
    back = read_odf_field(tmp_path / "a.odf")
    write_odf_field(back, tmp_path / "b.odf")
    assert (tmp_path / "a.odf").read_bytes() == (tmp_path / "b.odf").read_bytes()
    assert back.values.tobytes() == odf.values.tobytes()
    assert back.directions.tobytes() == odf.directions.tobytes()


def test_truncated_odf_payload(tmp_path):
    odf = ODFField(fibonacci_sphere(98), (2, 2, 2), [0, 3], np.ones((2, 98)))
    write_odf_field(odf, tmp_path / "o.odf")
    blob = (tmp_path / "o.odf").read_bytes()
    (tmp_path / "o.odf").write_bytes(blob[:-8])
    with pytest.raises(SizeMismatchError):
        read_odf_field(tmp_path / "o.odf")


# -- streamlines -------------------------------------------------------------------------


def test_single_streamline(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"streamlines": [[[0, 0, 0], [1, 2, 3]]]}))
    lines = read_streamlines(tmp_path / "s.json")
    assert len(lines) == 1
    assert lines.streamlines[0].shape == (2, 3)


def test_one_point_streamline_is_schema_error(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"streamlines": [[[0, 0, 0]]]}))
    with pytest.raises(SchemaError):
        read_streamlines(tmp_path / "s.json")


@pytest.mark.parametrize("doc", [
    {"lines": []},
    {"streamlines": [[[0, 0], [1, 1]]]},
    {"streamlines": [[[0, 0, 0], [0, 0, 0]]]},
])
def test_invalid_streamline_documents(tmp_path, doc):
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        read_streamlines(tmp_path / "s.json")


def test_hundred_streamlines_round_trip(tmp_path):
    rng = np.random.default_rng(100)
    lines = [np.cumsum(rng.normal(size=(rng.integers(2, 30), 3)), axis=0) for _ in range(100)]
    write_streamlines(StreamlineSet(lines), tmp_path / "s.json")
    back = read_streamlines(tmp_path / "s.json")
    assert len(back) == 100
    for a, b in zip(lines, back):
        assert a.tobytes() == b.tobytes()
