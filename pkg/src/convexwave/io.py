"""On-disk formats: raw field files, legacy VTK, PGM previews, block archives.

Field files are a pair  <prefix>.json / <prefix>.bin : the sidecar carries the
grid (origin, spacing, dims) and component count, the binary holds float64
little-endian values, x index fastest, components in sequence.  The VTK
writer emits legacy ASCII STRUCTURED_POINTS for quick-look visualisation.
Block archives (used for recordings and reduced boundary data) store several
named numpy arrays next to a single JSON header.

All writers are deterministic: identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Union

import numpy as np

from .grid import Grid3, GridError, ScalarField, VecField

FIELD_MAGIC = "convexwave-field-v1"
BLOCKS_MAGIC = "convexwave-blocks-v1"

Field = Union[ScalarField, VecField]


class IOFormatError(ValueError):
    pass


def _dump_json(path: str, obj: dict) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _xfastest(a: np.ndarray) -> np.ndarray:
    # (nx, ny, nz) C-ordered -> flat with x fastest
    return np.ascontiguousarray(a.transpose(2, 1, 0)).ravel()


def save_field(prefix: str, field: Field) -> None:
    """Write <prefix>.json + <prefix>.bin."""
    ncomp = field.values.shape[0] if isinstance(field, VecField) else 1
    comps = field.values if isinstance(field, VecField) else field.values[None]
    meta = {
        "format": FIELD_MAGIC,
        "grid": field.grid.to_json(),
        "components": ncomp,
        "data": os.path.basename(prefix) + ".bin",
        "layout": "x-fastest, float64 little-endian, component-major",
    }
    _dump_json(prefix + ".json", meta)
    with open(prefix + ".bin", "wb") as f:
        for n in range(ncomp):
            f.write(_xfastest(comps[n]).astype("<f8").tobytes())


def load_field(prefix: str) -> Field:
    with open(prefix + ".json") as f:
        meta = json.load(f)
    if meta.get("format") != FIELD_MAGIC:
        raise IOFormatError(f"{prefix}.json is not a {FIELD_MAGIC} file")
    grid = Grid3.from_json(meta["grid"])
    ncomp = int(meta["components"])
    raw = np.fromfile(os.path.join(os.path.dirname(prefix), meta["data"]), dtype="<f8")
    if raw.size != ncomp * grid.node_count:
        raise IOFormatError(f"{prefix}.bin has {raw.size} values, expected "
                            f"{ncomp * grid.node_count}")
    nx, ny, nz = grid.dims
    comps = raw.reshape(ncomp, nz, ny, nx).transpose(0, 3, 2, 1)
    if ncomp == 1:
        return ScalarField(grid, comps[0])
    return VecField(grid, comps)


def write_vtk(path: str, field: ScalarField, name: str = "field") -> None:
    """Legacy ASCII STRUCTURED_POINTS file with one scalar array."""
    g = field.grid
    flat = _xfastest(field.values)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{name}\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {g.dims[0]} {g.dims[1]} {g.dims[2]}\n")
        f.write(f"ORIGIN {g.origin[0]:.10g} {g.origin[1]:.10g} {g.origin[2]:.10g}\n")
        f.write(f"SPACING {g.h:.10g} {g.h:.10g} {g.h:.10g}\n")
        f.write(f"POINT_DATA {g.node_count}\n")
        f.write(f"SCALARS {name} double 1\n")
        f.write("LOOKUP_TABLE default\n")
        for v in flat:
            f.write(f"{v:.10e}\n")


def write_pgm(path: str, img: np.ndarray, lo: float | None = None,
              hi: float | None = None) -> None:
    """8-bit ASCII PGM of a 2D array; rows are the first index."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise IOFormatError("PGM writer needs a 2D array")
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.round((img - lo) / span * 255.0), 0, 255).astype(int)
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"# range [{lo:.6g}, {hi:.6g}]\n")
        f.write(f"{img.shape[1]} {img.shape[0]}\n255\n")
        for row in q:
            f.write(" ".join(str(v) for v in row) + "\n")


def save_blocks(directory: str, name: str, meta: dict, arrays: dict) -> None:
    """Write <name>.json plus one .bin per named array into `directory`."""
    os.makedirs(directory, exist_ok=True)
    header = {"format": BLOCKS_MAGIC, "meta": meta, "blocks": {}}
    for key, arr in arrays.items():
        arr = np.asarray(arr)
        kind = "<f8" if arr.dtype.kind == "f" else "<i8"
        fname = f"{name}.{key}.bin"
        header["blocks"][key] = {
            "file": fname,
            "dtype": kind,
            "shape": list(arr.shape),
        }
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(np.ascontiguousarray(arr).astype(kind).tobytes())
    _dump_json(os.path.join(directory, name + ".json"), header)


def load_blocks(directory: str, name: str) -> tuple[dict, dict]:
    """Inverse of save_blocks: returns (meta, {key: array})."""
    path = os.path.join(directory, name + ".json")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        header = json.load(f)
    if header.get("format") != BLOCKS_MAGIC:
        raise IOFormatError(f"{path} is not a {BLOCKS_MAGIC} file")
    arrays = {}
    for key, spec in header["blocks"].items():
        raw = np.fromfile(os.path.join(directory, spec["file"]), dtype=spec["dtype"])
        arrays[key] = raw.reshape(spec["shape"]).astype(
            np.float64 if spec["dtype"] == "<f8" else np.int64)
    return header["meta"], arrays


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
