"""Point-cloud file parsers and writers: XYZ, ascii PLY, and OFF.

All parsers reject malformed input with a :class:`ParseError` carrying the
path and line number; they never raise anything else on bad bytes. Faces in
PLY/OFF files are ignored. Written floats use shortest round-trip repr, so a
write/parse cycle is bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from .geometry import PointCloud

FORMATS = ("xyz", "ply", "off")


class ParseError(ValueError):
    """Malformed point-cloud file; knows where the problem is."""

    def __init__(self, path, lineno: int | None, message: str):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno is not None else self.path
        super().__init__(f"{where}: {message}")


def detect_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    if ext not in FORMATS:
        raise ParseError(path, None, f"unknown point cloud format {ext!r} "
                                     f"(expected one of {', '.join(FORMATS)})")
    return ext


def parse_pointcloud(path, fmt: str | None = None) -> PointCloud:
    """Parse a point-cloud file; format inferred from the extension unless given."""
    fmt = fmt or detect_format(path)
    if fmt not in FORMATS:
        raise ParseError(path, None, f"unknown point cloud format {fmt!r}")
    try:
        with open(path, "r", encoding="utf-8", errors="strict") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ParseError(path, None, "file does not exist") from None
    except UnicodeDecodeError:
        raise ParseError(path, None, "file is not valid text") from None
    lines = text.splitlines()
    if fmt == "xyz":
        return _parse_xyz(path, lines)
    if fmt == "ply":
        return _parse_ply(path, lines)
    return _parse_off(path, lines)


def _parse_triple(path, lineno: int, fields: list[str]) -> tuple[float, float, float]:
    try:
        x, y, z = (float(fields[0]), float(fields[1]), float(fields[2]))
    except ValueError:
        raise ParseError(path, lineno, f"cannot parse coordinates from {' '.join(fields)!r}") from None
    for v in (x, y, z):
        if not np.isfinite(v):
            raise ParseError(path, lineno, f"non-finite coordinate {v!r}")
    return x, y, z


def _parse_xyz(path, lines: list[str]) -> PointCloud:
    pts = []
    for lineno, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise ParseError(path, lineno, f"expected 3 coordinates, got {len(fields)}")
        pts.append(_parse_triple(path, lineno, fields))
    if not pts:
        raise ParseError(path, None, "no points in file")
    return PointCloud(np.array(pts))


def _parse_ply(path, lines: list[str]) -> PointCloud:
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic line")
    n_vertices = None
    vertex_props: list[str] = []
    current_element = None
    elements: list[tuple[str, int]] = []
    header_end = None
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            continue
        kw = fields[0]
        if kw == "comment":
            continue
        if kw == "format":
            if fields[1:3] != ["ascii", "1.0"]:
                raise ParseError(path, lineno, f"unsupported PLY format {' '.join(fields[1:])!r} "
                                               "(only ascii 1.0)")
        elif kw == "element":
            if len(fields) != 3:
                raise ParseError(path, lineno, "malformed element declaration")
            try:
                count = int(fields[2])
            except ValueError:
                raise ParseError(path, lineno, f"bad element count {fields[2]!r}") from None
            if count < 0:
                raise ParseError(path, lineno, f"negative element count {count}")
            current_element = fields[1]
            elements.append((fields[1], count))
            if fields[1] == "vertex":
                if n_vertices is not None:
                    raise ParseError(path, lineno, "duplicate vertex element")
                n_vertices = count
        elif kw == "property":
            if current_element == "vertex":
                if len(fields) < 3:
                    raise ParseError(path, lineno, "malformed property declaration")
                vertex_props.append(fields[-1])
        elif kw == "end_header":
            header_end = lineno
            break
        else:
            raise ParseError(path, lineno, f"unexpected header keyword {kw!r}")
    if header_end is None:
        raise ParseError(path, len(lines) or 1, "missing end_header")
    if n_vertices is None:
        raise ParseError(path, header_end, "no vertex element declared")
    if n_vertices < 1:
        raise ParseError(path, header_end, "vertex element is empty")
    try:
        ix, iy, iz = (vertex_props.index("x"), vertex_props.index("y"), vertex_props.index("z"))
    except ValueError:
        raise ParseError(path, header_end, "vertex element lacks x/y/z properties") from None

    data_lines = [(n, l) for n, l in enumerate(lines[header_end:], start=header_end + 1)
                  if l.split()]
    pts = []
    cursor = 0
    for name, count in elements:
        if name == "vertex":
            if cursor + count > len(data_lines):
                last = data_lines[-1][0] if data_lines else header_end
                raise ParseError(path, last, f"expected {count} vertex lines, "
                                             f"found {len(data_lines) - cursor}")
            for lineno, line in data_lines[cursor:cursor + count]:
                fields = line.split()
                if len(fields) < len(vertex_props):
                    raise ParseError(path, lineno, f"expected {len(vertex_props)} vertex values, "
                                                   f"got {len(fields)}")
                pts.append(_parse_triple(path, lineno, [fields[ix], fields[iy], fields[iz]]))
        cursor += count  # other elements (faces, ...) are skipped
    return PointCloud(np.array(pts))


def _parse_off(path, lines: list[str]) -> PointCloud:
    if not lines or lines[0].split() != ["OFF"]:
        raise ParseError(path, 1, "missing or malformed OFF header")
    content = [(n, l) for n, l in enumerate(lines[1:], start=2)
               if l.split() and not l.lstrip().startswith("#")]
    if not content:
        raise ParseError(path, 1, "truncated OFF header: no counts line")
    counts_lineno, counts_line = content[0]
    fields = counts_line.split()
    if len(fields) != 3:
        raise ParseError(path, counts_lineno, "counts line must be 'nv nf ne'")
    try:
        nv, nf, _ = (int(f) for f in fields)
    except ValueError:
        raise ParseError(path, counts_lineno, f"bad counts line {counts_line!r}") from None
    if nv < 1:
        raise ParseError(path, counts_lineno, f"vertex count must be >= 1, got {nv}")
    vertex_lines = content[1:1 + nv]
    if len(vertex_lines) < nv:
        last = content[-1][0] if content else counts_lineno
        raise ParseError(path, last, f"expected {nv} vertices, found {len(vertex_lines)}")
    pts = []
    for lineno, line in vertex_lines:
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(path, lineno, f"expected 3 coordinates, got {len(fields)}")
        pts.append(_parse_triple(path, lineno, fields[:3]))
    return PointCloud(np.array(pts))


def write_pointcloud(path, pc: PointCloud, fmt: str | None = None):
    fmt = fmt or detect_format(path)
    pts = pc.points

    def fmt_line(row) -> str:
        return " ".join(repr(float(v)) for v in row) + "\n"

    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "xyz":
            fh.writelines(fmt_line(row) for row in pts)
        elif fmt == "ply":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(pts)}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write("end_header\n")
            fh.writelines(fmt_line(row) for row in pts)
        elif fmt == "off":
            fh.write("OFF\n")
            fh.write(f"{len(pts)} 0 0\n")
            fh.writelines(fmt_line(row) for row in pts)
        else:
            raise ValueError(f"unknown point cloud format {fmt!r}")
