"""Point-cloud and correspondence file I/O.

Supported cloud formats: PLY (ascii and binary little-endian, double or
single precision vertex properties) and whitespace-separated XYZ text.
Correspondence files are two integer columns per line.  Text formats allow
'#' comment lines.  Malformed input raises CloudFormatError naming the file
and the offending location.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import CorrespondenceSet, PointCloud, RigidTransform

__all__ = [
    "CloudFormatError",
    "read_ply",
    "write_ply",
    "read_xyz",
    "write_xyz",
    "load_cloud",
    "save_cloud",
    "read_correspondences",
    "write_correspondences",
    "read_transform",
    "write_transform",
]


class CloudFormatError(ValueError):
    """A cloud or correspondence file could not be parsed."""


_PLY_TYPES = {
    "float": np.dtype("<f4"),
    "float32": np.dtype("<f4"),
    "double": np.dtype("<f8"),
    "float64": np.dtype("<f8"),
    "uchar": np.dtype("<u1"),
    "uint8": np.dtype("<u1"),
    "char": np.dtype("<i1"),
    "int8": np.dtype("<i1"),
    "short": np.dtype("<i2"),
    "int16": np.dtype("<i2"),
    "ushort": np.dtype("<u2"),
    "uint16": np.dtype("<u2"),
    "int": np.dtype("<i4"),
    "int32": np.dtype("<i4"),
    "uint": np.dtype("<u4"),
    "uint32": np.dtype("<u4"),
}


def _parse_ply_header(path: Path, raw: bytes):
    """Return (format, vertex_count, properties, body_offset)."""
    end = raw.find(b"end_header\n")
    if end < 0:
        raise CloudFormatError(f"{path}: missing end_header")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}: not a PLY file (missing 'ply' magic)")

    fmt = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    in_vertex = False
    for lineno, line in enumerate(header_lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise CloudFormatError(f"{path}:{lineno}: bad format line")
            fmt = parts[1]
            if fmt == "binary_big_endian":
                raise CloudFormatError(
                    f"{path}:{lineno}: big-endian PLY is not supported"
                )
            if fmt not in ("ascii", "binary_little_endian"):
                raise CloudFormatError(
                    f"{path}:{lineno}: unknown PLY format {fmt!r}"
                )
        elif parts[0] == "element":
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: bad element line")
            if parts[1] == "vertex":
                in_vertex = True
                try:
                    vertex_count = int(parts[2])
                except ValueError as exc:
                    raise CloudFormatError(
                        f"{path}:{lineno}: bad vertex count {parts[2]!r}"
                    ) from exc
            else:
                if vertex_count is None:
                    raise CloudFormatError(
                        f"{path}:{lineno}: vertex element must come first"
                    )
                in_vertex = False
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise CloudFormatError(
                    f"{path}:{lineno}: list properties are not supported on "
                    "vertices"
                )
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: bad property line")
            if parts[1] not in _PLY_TYPES:
                raise CloudFormatError(
                    f"{path}:{lineno}: unsupported property type {parts[1]!r}"
                )
            properties.append((parts[2], parts[1]))

    if fmt is None:
        raise CloudFormatError(f"{path}: missing format line")
    if vertex_count is None:
        raise CloudFormatError(f"{path}: missing vertex element")
    names = [name for name, _ in properties]
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise CloudFormatError(f"{path}: vertex property {coord!r} missing")
    return fmt, vertex_count, properties, end + len(b"end_header\n")


def read_ply(path) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    fmt, count, properties, offset = _parse_ply_header(path, raw)

    if fmt == "ascii":
        text = raw[offset:].decode("ascii", errors="replace").splitlines()
        rows = []
        names = [name for name, _ in properties]
        want = [names.index(c) for c in ("x", "y", "z")]
        data_lines = [ln for ln in text if ln.strip()]
        if len(data_lines) < count:
            raise CloudFormatError(
                f"{path}: truncated body, expected {count} vertex rows, "
                f"got {len(data_lines)}"
            )
        for rowno, line in enumerate(data_lines[:count]):
            parts = line.split()
            if len(parts) < len(properties):
                raise CloudFormatError(
                    f"{path}: vertex row {rowno}: expected "
                    f"{len(properties)} values, got {len(parts)}"
                )
            try:
                rows.append([float(parts[i]) for i in want])
            except ValueError as exc:
                raise CloudFormatError(
                    f"{path}: vertex row {rowno}: {exc}"
                ) from exc
        return PointCloud(np.asarray(rows))

    dtype = np.dtype([(name, _PLY_TYPES[t]) for name, t in properties])
    body = raw[offset : offset + dtype.itemsize * count]
    if len(body) < dtype.itemsize * count:
        raise CloudFormatError(
            f"{path}: truncated body, expected {dtype.itemsize * count} "
            f"bytes, got {len(body)}"
        )
    rec = np.frombuffer(body, dtype=dtype, count=count)
    pts = np.column_stack(
        [rec["x"].astype(np.float64), rec["y"].astype(np.float64),
         rec["z"].astype(np.float64)]
    )
    return PointCloud(pts)


def write_ply(path, cloud: PointCloud, binary: bool = False) -> None:
    """Write double-precision vertices; exact value round-trip either way."""
    path = Path(path)
    n = len(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {n}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(cloud.points.astype("<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header)
            for x, y, z in cloud.points.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")


def read_xyz(path) -> PointCloud:
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected 3 coordinates, "
                    f"got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise CloudFormatError(f"{path}: no points found")
    return PointCloud(np.asarray(rows))


def write_xyz(path, cloud: PointCloud) -> None:
    with open(Path(path), "w") as fh:
        for x, y, z in cloud.points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def load_cloud(path) -> PointCloud:
    """Dispatch on extension: .ply, or .xyz/.txt text."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".xyz", ".txt"):
        return read_xyz(path)
    raise CloudFormatError(f"{path}: unsupported cloud extension {suffix!r}")


def save_cloud(path, cloud: PointCloud, binary: bool = False) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        write_ply(path, cloud, binary=binary)
    elif suffix in (".xyz", ".txt"):
        write_xyz(path, cloud)
    else:
        raise CloudFormatError(f"{path}: unsupported cloud extension {suffix!r}")


def read_correspondences(path) -> CorrespondenceSet:
    path = Path(path)
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected 2 indices, got {len(parts)}"
                )
            try:
                pairs.append([int(v) for v in parts])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from exc
    if not pairs:
        raise CloudFormatError(f"{path}: no correspondences found")
    try:
        return CorrespondenceSet(np.asarray(pairs, dtype=np.int64))
    except ValueError as exc:
        raise CloudFormatError(f"{path}: {exc}") from exc


def write_correspondences(path, correspondences: CorrespondenceSet) -> None:
    with open(Path(path), "w") as fh:
        for a, b in correspondences.pairs.tolist():
            fh.write(f"{a} {b}\n")


def read_transform(path) -> RigidTransform:
    """Read a rigid transform: three rotation rows then one translation row."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected 3 values, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) != 4:
        raise CloudFormatError(
            f"{path}: expected 4 rows (rotation then translation),"
            f" got {len(rows)}"
        )
    try:
        return RigidTransform(np.asarray(rows[:3]), np.asarray(rows[3]))
    except ValueError as exc:
        raise CloudFormatError(f"{path}: {exc}") from exc


def write_transform(path, transform: RigidTransform) -> None:
    with open(Path(path), "w") as fh:
        fh.write("# rotation rows, then translation\n")
        for row in transform.rotation.tolist():
            fh.write(" ".join(repr(v) for v in row) + "\n")
        fh.write(" ".join(repr(v) for v in transform.translation.tolist()) + "\n")
