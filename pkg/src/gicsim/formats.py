"""File formats: PLY point sets, GICF density fields, PGM/PPM/PFM images, OBJ.

PLY reading accepts both ASCII and binary little-endian; writing defaults to
binary. Gaussian point sets use the vertex schema
(x, y, z, scale, opacity: float32; red, green, blue: uint8); trajectory and
continuum clouds carry an optional ``surface`` uchar flag.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InvalidInputError, ParseError
from .geometry import DensityField, GaussianPointSet, GicParticleSet

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}


def read_ply(path) -> dict[str, np.ndarray]:
    """Read the vertex element of a PLY file into named property arrays."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"ply"):
        raise ParseError("not a PLY file", path=str(path), line=1)
    try:
        header_end = data.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise ParseError("PLY header without end_header", path=str(path)) from None
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []                    # (name, count, [(prop, dtype)])
    for ln, line in enumerate(header, start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format {tok[1]}", path=str(path), line=ln)
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", path=str(path), line=ln)
            if tok[1] == "list":
                raise ParseError("list properties are not supported", path=str(path), line=ln)
            if tok[1] not in _PLY_TYPES:
                raise ParseError(f"unknown property type {tok[1]}", path=str(path), line=ln)
            elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt is None:
        raise ParseError("PLY header missing format line", path=str(path))
    body = data[header_end:]
    out = {}
    offset = 0
    if fmt == "ascii":
        rows = body.decode("ascii", errors="replace").split()
        cursor = 0
        for name, count, props in elements:
            ncol = len(props)
            need = count * ncol
            if cursor + need > len(rows):
                raise ParseError(f"truncated ASCII element {name}", path=str(path))
            block = np.array(rows[cursor:cursor + need], dtype=np.float64).reshape(count, ncol)
            cursor += need
            if name == "vertex":
                for c, (pname, dt) in enumerate(props):
                    out[pname] = block[:, c].astype(dt)
    else:
        for name, count, props in elements:
            dt = np.dtype([(p, t) for p, t in props])
            need = count * dt.itemsize
            if offset + need > len(body):
                raise ParseError(f"truncated binary element {name}", path=str(path), offset=offset)
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += need
            if name == "vertex":
                for pname, _ in props:
                    out[pname] = arr[pname].copy()
    if not out:
        raise ParseError("PLY file has no vertex element", path=str(path))
    return out


def write_ply(path, columns, ascii_format: bool = False) -> None:
    """Write vertex columns [(name, ply_type, array)] as a PLY file."""
    n = len(columns[0][2])
    lines = ["ply", f"format {'ascii' if ascii_format else 'binary_little_endian'} 1.0",
             f"element vertex {n}"]
    for name, ptype, arr in columns:
        if len(arr) != n:
            raise InvalidInputError("PLY columns have mismatched lengths")
        lines.append(f"property {ptype} {name}")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        if ascii_format:
            cols = [np.asarray(arr) for _, _, arr in columns]
            for i in range(n):
                f.write(" ".join(_fmt_ascii(c[i]) for c in cols).encode("ascii") + b"\n")
        else:
            dt = np.dtype([(name, _PLY_TYPES[ptype]) for name, ptype, _ in columns])
            rec = np.empty(n, dtype=dt)
            for name, ptype, arr in columns:
                rec[name] = np.asarray(arr).astype(_PLY_TYPES[ptype])
            f.write(rec.tobytes())


def _fmt_ascii(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def write_gaussian_ply(path, gaussians: GaussianPointSet, ascii_format: bool = False) -> None:
    c = gaussians
    rgb = np.clip(np.round(c.colors * 255), 0, 255).astype(np.uint8)
    write_ply(path, [
        ("x", "float", c.centers[:, 0]), ("y", "float", c.centers[:, 1]),
        ("z", "float", c.centers[:, 2]),
        ("scale", "float", c.scales), ("opacity", "float", c.opacities),
        ("red", "uchar", rgb[:, 0]), ("green", "uchar", rgb[:, 1]), ("blue", "uchar", rgb[:, 2]),
    ], ascii_format)


def read_gaussian_ply(path) -> GaussianPointSet:
    v = read_ply(path)
    for key in ("x", "y", "z", "scale", "opacity"):
        if key not in v:
            raise ParseError(f"gaussian PLY missing property {key}", path=str(path))
    centers = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    if "red" in v:
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64) / 255.0
    else:
        colors = np.ones((len(centers), 3))
    return GaussianPointSet(centers, v["scale"].astype(np.float64),
                            v["opacity"].astype(np.float64), colors)


def write_gic_ply(path, gic: GicParticleSet, surface_mask=None, ascii_format: bool = False) -> None:
    n = len(gic)
    rgb = np.clip(np.round(gic.colors * 255), 0, 255).astype(np.uint8)
    cols = [
        ("x", "float", gic.positions[:, 0]), ("y", "float", gic.positions[:, 1]),
        ("z", "float", gic.positions[:, 2]),
        ("scale", "float", np.full(n, gic.scale)), ("opacity", "float", gic.opacities),
        ("red", "uchar", rgb[:, 0]), ("green", "uchar", rgb[:, 1]), ("blue", "uchar", rgb[:, 2]),
    ]
    if surface_mask is not None:
        cols.append(("surface", "uchar", np.asarray(surface_mask).astype(np.uint8)))
    write_ply(path, cols, ascii_format)


def read_gic_ply(path):
    """Read a continuum PLY; returns (GicParticleSet, surface_mask or None)."""
    v = read_ply(path)
    for key in ("x", "y", "z", "scale", "opacity"):
        if key not in v:
            raise ParseError(f"continuum PLY missing property {key}", path=str(path))
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    scales = np.asarray(v["scale"], dtype=np.float64)
    if len(scales) and not np.allclose(scales, scales[0], rtol=1e-5, atol=0):
        raise ParseError("continuum PLY has non-uniform particle scales", path=str(path))
    gic = GicParticleSet(pos, float(scales[0]), v["opacity"].astype(np.float64))
    mask = v["surface"].astype(bool) if "surface" in v else None
    return gic, mask


def write_cloud_ply(path, positions, surface_mask=None, ascii_format: bool = False) -> None:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    cols = [("x", "float", positions[:, 0]), ("y", "float", positions[:, 1]),
            ("z", "float", positions[:, 2])]
    if surface_mask is not None:
        cols.append(("surface", "uchar", np.asarray(surface_mask).astype(np.uint8)))
    write_ply(path, cols, ascii_format)


def read_cloud_ply(path):
    """Read a bare point cloud PLY; returns (positions, surface_mask or None)."""
    v = read_ply(path)
    for key in ("x", "y", "z"):
        if key not in v:
            raise ParseError(f"cloud PLY missing property {key}", path=str(path))
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    mask = v["surface"].astype(bool) if "surface" in v else None
    return pos, mask


# --- density fields -------------------------------------------------------

_GICF_MAGIC = b"GICF"


def write_field(path, field: DensityField) -> None:
    dims = np.asarray(field.dims, dtype="<u4")
    with open(path, "wb") as f:
        f.write(_GICF_MAGIC)
        f.write(dims.tobytes())
        f.write(np.asarray(field.origin, dtype="<f8").tobytes())
        f.write(struct.pack("<d", field.cell_size))
        f.write(np.ascontiguousarray(field.values, dtype="<f4").tobytes())


def read_field(path) -> DensityField:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _GICF_MAGIC:
        raise ParseError("bad magic, expected GICF", path=str(path), offset=0)
    dims = np.frombuffer(data, dtype="<u4", count=3, offset=4).astype(np.int64)
    origin = np.frombuffer(data, dtype="<f8", count=3, offset=16)
    (cell,) = struct.unpack_from("<d", data, 40)
    count = int(dims.prod())
    expected = 48 + 4 * count
    if len(data) < expected:
        raise ParseError(f"truncated field data: expected {expected} bytes, got {len(data)}",
                         path=str(path), offset=len(data))
    values = np.frombuffer(data, dtype="<f4", count=count, offset=48)
    return DensityField(origin, cell, values.reshape(tuple(dims)).astype(np.float64))


# --- images ---------------------------------------------------------------

_PFM_INF = 3.4e38


def write_pgm(path, mask: np.ndarray) -> None:
    """8-bit P5 PGM; mask values in [0, 1] scale to 0..255."""
    img = np.clip(np.round(np.asarray(mask, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm(path, color: np.ndarray) -> None:
    img = np.clip(np.round(np.asarray(color, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(magic):
        raise ParseError(f"expected {magic.decode()} image", path=str(path), line=1)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1                         # single whitespace after maxval
    w, h, maxval = fields
    count = w * h * channels
    img = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return img.reshape(shape).astype(np.float64) / maxval


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def write_pfm(path, depth: np.ndarray) -> None:
    """Little-endian float32 PFM; +inf encodes as 3.4e38. Rows bottom-up."""
    img = np.asarray(depth, dtype=np.float64)
    img = np.where(np.isposinf(img), _PFM_INF, img).astype("<f4")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(img).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ParseError("expected grayscale Pf image", path=str(path), line=1)
        try:
            w, h = (int(t) for t in f.readline().split())
            scale = float(f.readline())
        except ValueError:
            raise ParseError("malformed PFM header", path=str(path), line=2) from None
        if scale >= 0:
            raise ParseError("only little-endian PFM is supported", path=str(path), line=3)
        img = np.frombuffer(f.read(4 * w * h), dtype="<f4").reshape(h, w)
    img = np.flipud(img).astype(np.float64)
    return np.where(img >= _PFM_INF * 0.999, np.inf, img)


# --- trajectories -----------------------------------------------------------

def write_trajectory(out_dir, traj, material=None) -> None:
    """One PLY per frame (positions + surface flag) plus a JSON manifest."""
    import json
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(traj.num_frames):
        name = f"frame_{k:04d}.ply"
        write_cloud_ply(out_dir / name, traj.positions[k], surface_mask=traj.surface_mask)
        files.append(name)
    manifest = {
        "frames": traj.num_frames,
        "dt": traj.dt,
        "frame_dt": traj.frame_dt,
        "times": [float(t) for t in traj.times],
        "files": files,
    }
    if material is not None:
        manifest["material"] = {"kind": material.kind, "params": material.params_dict()}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def read_trajectory(in_dir):
    """Inverse of write_trajectory; returns a solver Trajectory."""
    import json
    from pathlib import Path

    from .solver import Trajectory

    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise InvalidInputError(f"no trajectory manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    positions = []
    mask = None
    for name in manifest["files"]:
        pos, m = read_cloud_ply(in_dir / name)
        positions.append(pos)
        if m is not None:
            mask = m
    positions = np.asarray(positions)
    if mask is None:
        mask = np.zeros(positions.shape[1], dtype=bool)
    return Trajectory(np.asarray(manifest["times"]), positions, mask,
                      float(manifest["frame_dt"]), float(manifest["dt"]))


# --- meshes ---------------------------------------------------------------

def write_obj(path, mesh) -> None:
    with open(path, "w", encoding="ascii") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for tri in mesh.faces:
            f.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
