"""Point cloud I/O: PLY parsing/serialization and dataset manifests.

Supported PLY encodings are ``ascii`` and ``binary_little_endian`` (1.0).
Vertices must carry float x/y/z plus uchar red/green/blue (or r/g/b);
any other declared vertex property is skipped at its declared width.
Positions are held as 64-bit reals internally regardless of file precision.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError, ParseError

# width in bytes and numpy codes for every scalar PLY property type
_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_COLOR_ALIASES = {"red": "red", "green": "green", "blue": "blue",
                  "r": "red", "g": "green", "b": "blue"}


@dataclass
class PointCloud:
    """N xyz positions plus N RGB triplets, with an optional MOS label.

    Colors are integer-valued 0-255 at rest; model-facing code divides them
    into [0, 1] (see ``partition.normalize_cloud``).
    """

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray     # (N, 3) float64, 0-255 at rest
    name: str = ""
    mos: float | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ParseError("invalid-cloud", f"positions must be (N, 3), got {self.positions.shape}")
        if self.colors.shape != self.positions.shape:
            raise ParseError("invalid-cloud", "positions and colors must have identical length")
        if len(self.positions) < 1:
            raise ParseError("invalid-cloud", "cloud must contain at least one point")
        if not np.isfinite(self.positions).all():
            raise ParseError("invalid-cloud", "positions contain non-finite values")

    def __len__(self) -> int:
        return len(self.positions)


def _parse_header(stream: io.BytesIO):
    """Read the PLY header, returning (format, elements) where elements is a
    list of (name, count, [(prop_name, type_code)])."""
    magic = stream.readline().strip()
    if magic != b"ply":
        raise ParseError("header", "missing 'ply' magic")
    fmt = None
    elements = []
    while True:
        raw = stream.readline()
        if not raw:
            raise ParseError("header", "header ended before end_header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2:
                raise ParseError("header", "malformed format line")
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary_little_endian"
            elif parts[1] == "binary_big_endian":
                raise ParseError("unsupported-encoding", "big-endian PLY is not supported")
            else:
                raise ParseError("header", f"unknown format '{parts[1]}'")
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError("header", f"malformed element line: {line}")
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError("header", f"bad element count: {line}") from None
            elements.append((parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("header", "property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError("header", f"unsupported property: {line}")
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt is None:
        raise ParseError("header", "missing format line")
    if not elements:
        raise ParseError("header", "no elements declared")
    return fmt, elements


def _vertex_columns(props):
    """Map x/y/z and color property names to their column indices."""
    names = [p[0] for p in props]
    cols = {}
    for i, n in enumerate(names):
        if n in ("x", "y", "z"):
            cols[n] = i
        elif n in _COLOR_ALIASES:
            cols[_COLOR_ALIASES[n]] = i
    for needed in ("x", "y", "z"):
        if needed not in cols:
            raise ParseError("missing-attribute", f"vertex property '{needed}' is missing")
    for needed in ("red", "green", "blue"):
        if needed not in cols:
            raise ParseError("missing-attribute", "vertex colors are missing")
    return cols


def parse_ply(data: bytes, name: str = "") -> PointCloud:
    """Parse an ascii or binary-little-endian PLY document into a PointCloud.

    Unknown vertex properties are skipped; elements other than ``vertex``
    are ignored. Never reads past the declared vertex count.
    """
    stream = io.BytesIO(data)
    fmt, elements = _parse_header(stream)

    vertex_props = None
    leading = []  # elements occurring before vertex, which must be skipped
    vertex_count = 0
    for elem_name, count, props in elements:
        if elem_name == "vertex":
            vertex_props = props
            vertex_count = count
            break
        leading.append((elem_name, count, props))
    if vertex_props is None:
        raise ParseError("header", "no vertex element declared")
    if vertex_count < 1:
        raise ParseError("header", "vertex count must be at least 1")
    cols = _vertex_columns(vertex_props)

    if fmt == "ascii":
        return _parse_ascii_vertices(stream, leading, vertex_props, vertex_count, cols, name)
    return _parse_binary_vertices(stream, leading, vertex_props, vertex_count, cols, name)


def _parse_ascii_vertices(stream, leading, props, count, cols, name):
    for elem_name, n, _ in leading:
        for _ in range(n):  # one line per row
            if not stream.readline():
                raise ParseError("truncated", f"element '{elem_name}' body is short")
    rows = np.empty((count, 6), dtype=np.float64)
    want = [cols["x"], cols["y"], cols["z"], cols["red"], cols["green"], cols["blue"]]
    nprops = len(props)
    for i in range(count):
        line = stream.readline()
        if not line:
            raise ParseError("truncated", f"expected {count} vertices, body ended at {i}")
        tokens = line.split()
        if not tokens:
            raise ParseError("truncated", "blank line inside vertex body")
        if len(tokens) < nprops:
            raise ParseError("truncated", f"vertex row {i} has {len(tokens)} of {nprops} values")
        try:
            for j, c in enumerate(want):
                rows[i, j] = float(tokens[c])
        except ValueError:
            raise ParseError("truncated", f"non-numeric value in vertex row {i}") from None
    return PointCloud(rows[:, :3], rows[:, 3:], name=name)


def _parse_binary_vertices(stream, leading, props, count, cols, name):
    for elem_name, n, eprops in leading:
        if any(t == "list" for _, t in eprops):
            raise ParseError("header", f"cannot skip list-typed element '{elem_name}' before vertex")
        width = sum(int(t[1]) for _, t in eprops)
        if len(stream.read(width * n)) != width * n:
            raise ParseError("truncated", f"element '{elem_name}' body is short")
    if any(t == "list" for _, t in props):
        raise ParseError("header", "list-typed vertex properties are not supported")
    dtype = np.dtype([(f"p{i}", "<" + t) for i, (_, t) in enumerate(props)])
    body = stream.read(dtype.itemsize * count)
    if len(body) != dtype.itemsize * count:
        raise ParseError("truncated", f"expected {dtype.itemsize * count} vertex bytes, got {len(body)}")
    rec = np.frombuffer(body, dtype=dtype)
    positions = np.stack([rec[f"p{cols[a]}"] for a in ("x", "y", "z")], axis=1).astype(np.float64)
    colors = np.stack([rec[f"p{cols[a]}"] for a in ("red", "green", "blue")], axis=1).astype(np.float64)
    return PointCloud(positions, colors, name=name)


def write_ply(pc: PointCloud, encoding: str = "binary_little_endian") -> bytes:
    """Serialize a cloud: x/y/z as 32-bit floats, colors as unsigned bytes.

    Binary output round-trips bit-exactly through parse_ply (positions are
    stored at file precision, i.e. float32).
    """
    if encoding not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported encoding '{encoding}'")
    colors = pc.colors
    if not (np.all(colors >= 0) and np.all(colors <= 255) and np.all(colors == np.round(colors))):
        raise ParseError("invalid-cloud", "colors must be integers in 0-255")
    n = len(pc)
    header = (
        "ply\n"
        f"format {encoding} 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    pos32 = pc.positions.astype(np.float32)
    col8 = colors.astype(np.uint8)
    if encoding == "ascii":
        lines = []
        for i in range(n):
            # repr of the promoted float64 parses back to the identical value
            x, y, z = (repr(float(v)) for v in pos32[i])
            lines.append(f"{x} {y} {z} {col8[i, 0]} {col8[i, 1]} {col8[i, 2]}")
        return header.encode("ascii") + "\n".join(lines).encode("ascii") + b"\n"
    rec = np.empty(n, dtype=np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                      ("r", "u1"), ("g", "u1"), ("b", "u1")]))
    rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
    rec["r"], rec["g"], rec["b"] = col8[:, 0], col8[:, 1], col8[:, 2]
    return header.encode("ascii") + rec.tobytes()


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    mos: float
    reference: str


@dataclass
class DatasetManifest:
    """Rows pairing a cloud file with its MOS and reference-content id."""

    entries: list[ManifestEntry]
    base_dir: Path | None = field(default=None)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    def group_by_reference(self) -> dict[str, list[ManifestEntry]]:
        groups: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            groups.setdefault(e.reference, []).append(e)
        return groups


def load_manifest(data: bytes | str, base_dir: Path | str | None = None,
                  check_exists: bool = True) -> DatasetManifest:
    """Load a ``path,mos,reference`` CSV manifest.

    Rows are kept in file order. Paths must be unique and (by default) must
    exist, resolved against ``base_dir`` when relative.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or [c.strip() for c in lines[0].split(",")] != ["path", "mos", "reference"]:
        raise ManifestError("schema", "header must be exactly 'path,mos,reference'")
    base = Path(base_dir) if base_dir is not None else None
    entries = []
    seen = set()
    for lineno, ln in enumerate(lines[1:], start=2):
        fields = [c.strip() for c in ln.split(",")]
        if len(fields) != 3:
            raise ManifestError("schema", f"line {lineno}: expected 3 columns, got {len(fields)}")
        path, mos_str, reference = fields
        if not path:
            raise ManifestError("schema", f"line {lineno}: empty path")
        if path in seen:
            raise ManifestError("duplicate", f"line {lineno}: duplicate path '{path}'")
        seen.add(path)
        try:
            mos = float(mos_str)
        except ValueError:
            raise ManifestError("bad-mos", f"line {lineno}: non-numeric MOS '{mos_str}'") from None
        if not reference:
            raise ManifestError("schema", f"line {lineno}: empty reference id")
        entries.append(ManifestEntry(path, mos, reference))
    manifest = DatasetManifest(entries, base_dir=base)
    if check_exists:
        for e in entries:
            if not manifest.resolve(e).exists():
                raise ManifestError("missing-file", f"referenced file does not exist: {e.path}")
    return manifest


def load_manifest_file(path: Path | str, check_exists: bool = True) -> DatasetManifest:
    p = Path(path)
    return load_manifest(p.read_bytes(), base_dir=p.parent, check_exists=check_exists)
