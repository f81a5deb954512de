import numpy as np
import pytest

from pcqa import ManifestError, ParseError, PointCloud, load_manifest, parse_ply, write_ply
from pcqa.pcio import load_manifest_file

from conftest import random_cloud

ASCII_TWO_POINTS = b"""ply
format ascii 1.0
element vertex 2
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
0 0 0 255 0 0
1 1 1 0 255 0
"""


def test_parse_ascii_two_vertices():
    pc = parse_ply(ASCII_TWO_POINTS)
    assert len(pc) == 2
    assert np.array_equal(pc.positions, [[0, 0, 0], [1, 1, 1]])
    assert np.array_equal(pc.colors, [[255, 0, 0], [0, 255, 0]])


def test_parse_truncated_body():
    doc = ASCII_TWO_POINTS.replace(b"element vertex 2", b"element vertex 3")
    with pytest.raises(ParseError) as exc:
        parse_ply(doc)
    assert exc.value.code == "truncated"


def test_parse_missing_colors():
    doc = b"ply\nformat ascii 1.0\nelement vertex 1\n" \
          b"property float x\nproperty float y\nproperty float z\n" \
          b"end_header\n0 0 0\n"
    with pytest.raises(ParseError) as exc:
        parse_ply(doc)
    assert exc.value.code == "missing-attribute"


def test_parse_big_endian_rejected():
    doc = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\n" \
          b"property float x\nproperty float y\nproperty float z\n" \
          b"property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    with pytest.raises(ParseError) as exc:
        parse_ply(doc)
    assert exc.value.code == "unsupported-encoding"


def test_parse_bad_magic():
    with pytest.raises(ParseError) as exc:
        parse_ply(b"nope\nformat ascii 1.0\nend_header\n")
    assert exc.value.code == "header"


def test_unknown_properties_skipped_binary():
    # nx (float) before colors and a trailing face element must both be ignored
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
              b"property float x\nproperty float y\nproperty float z\n"
              b"property float nx\n"
              b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
              b"element face 1\nproperty list uchar int vertex_indices\nend_header\n")
    row = np.zeros(2, dtype=np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                      ("nx", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")]))
    row["x"] = [1.5, -2.0]
    row["nx"] = [9.9, 9.9]
    row["r"] = [7, 8]
    doc = header + row.tobytes() + b"\x03\x00\x00\x00\x00trailing"
    pc = parse_ply(doc)
    assert len(pc) == 2
    assert pc.positions[0, 0] == 1.5
    assert np.array_equal(pc.colors[:, 0], [7, 8])


def test_rgb_short_names_accepted():
    doc = (b"ply\nformat ascii 1.0\nelement vertex 1\n"
           b"property float x\nproperty float y\nproperty float z\n"
           b"property uchar r\nproperty uchar g\nproperty uchar b\n"
           b"end_header\n1 2 3 10 20 30\n")
    pc = parse_ply(doc)
    assert np.array_equal(pc.colors[0], [10, 20, 30])


def test_write_single_white_point():
    pc = PointCloud([[0.0, 0.0, 0.0]], [[255, 255, 255]], name="dot")
    doc = write_ply(pc)
    assert b"element vertex 1" in doc
    again = parse_ply(doc)
    assert len(again) == 1
    assert np.array_equal(again.colors, [[255, 255, 255]])


def test_empty_cloud_rejected_by_invariant():
    with pytest.raises(ParseError):
        PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))


def test_nonfinite_positions_rejected():
    with pytest.raises(ParseError):
        PointCloud([[np.nan, 0, 0]], [[1, 2, 3]])


@pytest.mark.parametrize("encoding", ["binary_little_endian", "ascii"])
def test_round_trip(encoding, rng):
    # round-trip oracle: serialize then reparse must reproduce the cloud
    for trial in range(20):
        pc = random_cloud(rng, int(rng.integers(1, 60)), name=f"t{trial}")
        again = parse_ply(write_ply(pc, encoding=encoding))
        assert np.array_equal(again.positions, pc.positions)
        assert np.array_equal(again.colors, pc.colors)


def test_round_trip_binary_bit_exact_100(rng):
    for trial in range(100):
        pc = random_cloud(rng, 50, name=f"t{trial}")
        data = write_ply(pc)
        again = parse_ply(data)
        assert again.positions.tobytes() == pc.positions.tobytes()
        assert again.colors.tobytes() == pc.colors.tobytes()


def test_trailing_bytes_ignored(rng):
    pc = random_cloud(rng, 5)
    doc = write_ply(pc) + b"garbage after the declared vertices"
    again = parse_ply(doc)
    assert np.array_equal(again.positions, pc.positions)


# --- manifests ---------------------------------------------------------------

def manifest_csv(tmp_path, rows):
    lines = ["path,mos,reference"]
    for name, mos, ref in rows:
        (tmp_path / name).write_bytes(b"")
        lines.append(f"{name},{mos},{ref}")
    return "\n".join(lines) + "\n"


def test_manifest_two_rows(tmp_path):
    text = manifest_csv(tmp_path, [("a.ply", 3.5, "ref1"), ("b.ply", 2.0, "ref2")])
    m = load_manifest(text, base_dir=tmp_path)
    assert len(m) == 2
    assert m.entries[0].mos == 3.5
    assert m.entries[1].reference == "ref2"


def test_manifest_bad_mos(tmp_path):
    text = manifest_csv(tmp_path, [("a.ply", "abc", "ref1")])
    with pytest.raises(ManifestError) as exc:
        load_manifest(text, base_dir=tmp_path)
    assert exc.value.code == "bad-mos"


def test_manifest_duplicate_path(tmp_path):
    (tmp_path / "a.ply").write_bytes(b"")
    text = "path,mos,reference\na.ply,1,r1\na.ply,2,r2\n"
    with pytest.raises(ManifestError) as exc:
        load_manifest(text, base_dir=tmp_path)
    assert exc.value.code == "duplicate"


def test_manifest_schema_errors(tmp_path):
    with pytest.raises(ManifestError) as exc:
        load_manifest("file,score\na,1\n")
    assert exc.value.code == "schema"
    with pytest.raises(ManifestError) as exc:
        load_manifest("path,mos,reference\nonly-two-fields,1\n")
    assert exc.value.code == "schema"


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ManifestError) as exc:
        load_manifest("path,mos,reference\nnope.ply,1,r1\n", base_dir=tmp_path)
    assert exc.value.code == "missing-file"


def test_manifest_group_counts(tmp_path):
    # 90 rows over 6 references -> 6 groups of 15
    rows = [(f"c{r}_{i}.ply", i / 10, f"ref{r}") for r in range(6) for i in range(15)]
    text = manifest_csv(tmp_path, rows)
    m = load_manifest(text, base_dir=tmp_path)
    groups = m.group_by_reference()
    assert len(groups) == 6
    assert all(len(g) == 15 for g in groups.values())


def test_manifest_order_stable(tmp_path):
    rows = [(f"x{i}.ply", i, f"r{i % 3}") for i in range(9)]
    text = manifest_csv(tmp_path, rows)
    first = load_manifest(text, base_dir=tmp_path)
    second = load_manifest(text, base_dir=tmp_path)
    assert [e.path for e in first.entries] == [e.path for e in second.entries]
    assert [e.path for e in first.entries] == [f"x{i}.ply" for i in range(9)]


def test_manifest_file_loader(tmp_path):
    (tmp_path / "a.ply").write_bytes(b"")
    (tmp_path / "m.csv").write_text("path,mos,reference\na.ply,1.5,r1\n")
    m = load_manifest_file(tmp_path / "m.csv")
    assert m.resolve(m.entries[0]) == tmp_path / "a.ply"
