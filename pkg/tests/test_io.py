"""File parsers: hand-written cases, round trips, fuzzing."""

import numpy as np
import pytest

from pointcompact.geometry import PointCloud
from pointcompact.io import ParseError, parse_pointcloud, write_pointcloud


def test_xyz_two_points(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 0 0\n")
    pc = parse_pointcloud(p)
    assert np.array_equal(pc.points, [[0, 0, 0], [1, 0, 0]])


def test_xyz_wrong_field_count_names_line(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 0\n")
    with pytest.raises(ParseError, match=r"a\.xyz:2"):
        parse_pointcloud(p)


def test_xyz_nonfinite_rejected_with_location(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 nan 0\n")
    with pytest.raises(ParseError, match=r":2.*non-finite"):
        parse_pointcloud(p)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError, match="does not exist"):
        parse_pointcloud(tmp_path / "nope.xyz")


def test_unknown_extension(tmp_path):
    p = tmp_path / "a.obj"
    p.write_text("x")
    with pytest.raises(ParseError, match="unknown point cloud format"):
        parse_pointcloud(p)


@pytest.mark.parametrize("fmt", ["xyz", "ply", "off"])
def test_roundtrip_bit_exact(tmp_path, fmt):
    rng = np.random.default_rng(0)
    pc = PointCloud(rng.normal(size=(17, 3)) * 1e3)
    path = tmp_path / f"cloud.{fmt}"
    write_pointcloud(path, pc)
    back = parse_pointcloud(path)
    assert np.array_equal(back.points, pc.points)


def test_ply_three_vertices_roundtrip(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\n"
                 "property float x\nproperty float y\nproperty float z\n"
                 "end_header\n0 0 0\n1 2 3\n4 5 6\n")
    pc = parse_pointcloud(p)
    assert pc.n == 3
    out = tmp_path / "b.ply"
    write_pointcloud(out, pc)
    assert np.array_equal(parse_pointcloud(out).points, pc.points)


def test_ply_extra_properties_and_faces_ignored(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\ncomment made up\n"
                 "element vertex 2\n"
                 "property float nx\nproperty float x\nproperty float y\nproperty float z\n"
                 "element face 1\nproperty list uchar int vertex_indices\n"
                 "end_header\n9 0 0 0\n9 1 2 3\n3 0 1 0\n")
    pc = parse_pointcloud(p)
    assert np.array_equal(pc.points, [[0, 0, 0], [1, 2, 3]])


def test_ply_binary_format_rejected(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n")
    with pytest.raises(ParseError, match="only ascii"):
        parse_pointcloud(p)


def test_ply_missing_vertex_element(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\nend_header\n")
    with pytest.raises(ParseError, match="no vertex element"):
        parse_pointcloud(p)


def test_ply_truncated_vertex_data(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\n"
                 "property float x\nproperty float y\nproperty float z\n"
                 "end_header\n0 0 0\n")
    with pytest.raises(ParseError, match="expected 3 vertex lines"):
        parse_pointcloud(p)


def test_off_basic(tmp_path):
    p = tmp_path / "a.off"
    p.write_text("OFF\n2 1 0\n0 0 0\n1 1 1\n3 0 1 0\n")
    pc = parse_pointcloud(p)
    assert np.array_equal(pc.points, [[0, 0, 0], [1, 1, 1]])


def test_off_truncated_header_names_line_one(tmp_path):
    p = tmp_path / "a.off"
    p.write_text("OFX\n")
    with pytest.raises(ParseError, match=r"a\.off:1"):
        parse_pointcloud(p)
    p.write_text("OFF\n")
    with pytest.raises(ParseError, match=r"a\.off:1.*truncated"):
        parse_pointcloud(p)


def test_off_missing_vertices(tmp_path):
    p = tmp_path / "a.off"
    p.write_text("OFF\n5 0 0\n0 0 0\n")
    with pytest.raises(ParseError, match="expected 5 vertices"):
        parse_pointcloud(p)


def _mutate(text: str, rng) -> str:
    choice = rng.integers(0, 6)
    if choice == 0 or not text:
        return "".join(chr(rng.integers(1, 127)) for _ in range(rng.integers(0, 40)))
    chars = list(text)
    pos = int(rng.integers(0, len(chars)))
    if choice == 1:
        chars[pos] = chr(rng.integers(32, 127))
    elif choice == 2:
        del chars[max(0, pos - int(rng.integers(1, 10))):pos + 1]
    elif choice == 3:
        chars.insert(pos, rng.choice(list(" nan\tinf-+.e")))
    elif choice == 4:
        chars = chars[:pos]  # truncate
    else:
        chars[pos:pos] = list("999999999999999999999999")
    return "".join(chars)


@pytest.mark.parametrize("fmt", ["xyz", "ply", "off"])
def test_fuzz_malformed_inputs_never_crash(tmp_path, fmt):
    """Every fuzzed mutation either parses to a valid cloud or raises ParseError."""
    rng = np.random.default_rng(hash(fmt) % 2 ** 32)
    base = {
        "xyz": "0 0 0\n1 2 3\n-1 2.5e-3 4\n",
        "ply": "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
               "property float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n",
        "off": "OFF\n2 0 0\n0 0 0\n1 2 3\n",
    }[fmt]
    path = tmp_path / f"fuzz.{fmt}"
    crashes = 0
    for i in range(3400):
        path.write_text(_mutate(base, rng), encoding="utf-8")
        try:
            pc = parse_pointcloud(path)
            assert pc.n >= 1
        except ParseError:
            pass
        except Exception:
            crashes += 1
    assert crashes == 0
