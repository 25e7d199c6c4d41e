"""On-disk formats: BLM1 rasters and cohort directories.

A BLM1 raster is a 4-byte magic ``BLM1``, a u16 version, a u8 dtype code
(0 bit-packed binary, 1 float32), three u32 dims (nx, ny, nz), then the
payload in x-fastest order. All integers are little-endian; binary payloads
pack 8 voxels per byte, first voxel in the least significant bit.

Rasters from other imaging containers convert by loading the voxel array
with any reader, transposing to (nz, ny, nx) order, and calling
``write_raster``.

A cohort directory holds::

    covariates.csv   id,subtype,<covariate columns>
    outcomes.csv     id,path   (raster paths relative to the directory)
    mask.blm         optional; default is every voxel lesioned in any subject
    spatial.blm      optional float raster, the spatially varying covariate
    profiles.csv     optional name,subtype,<covariate columns>; blanks mean reference
    truth.json       optional ground truth written by ``simulate``
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .dataset import Dataset, Profile
from .errors import DataError
from .lattice import build_lattice
from .model import SubjectRecord, build_design

MAGIC = b"BLM1"
VERSION = 1
DTYPE_BIT = 0
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHB3I")

COVARIATES = "covariates.csv"
OUTCOMES = "outcomes.csv"
MASK = "mask.blm"
SPATIAL = "spatial.blm"
PROFILES = "profiles.csv"
TRUTH = "truth.json"


def _as_grid(array) -> np.ndarray:
    a = np.asarray(array)
    if a.ndim == 1:
        a = a[None, None, :]
    elif a.ndim == 2:
        a = a[None, :, :]
    elif a.ndim != 3:
        raise DataError(f"rasters must be 1-, 2- or 3-D, got {a.ndim}-D")
    return a


def encode_raster(array, dtype: int | None = None) -> bytes:
    """Serialize a (nz, ny, nx) array (2-D taken as ny, nx)."""
    a = _as_grid(array)
    if dtype is None:
        dtype = DTYPE_BIT if a.dtype == bool else DTYPE_F32
    nz, ny, nx = a.shape
    head = _HEADER.pack(MAGIC, VERSION, dtype, nx, ny, nz)
    if dtype == DTYPE_BIT:
        payload = np.packbits(a.astype(bool).reshape(-1), bitorder="little").tobytes()
    elif dtype == DTYPE_F32:
        payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    else:
        raise DataError(f"unknown raster dtype code {dtype}")
    return head + payload


def decode_raster(data: bytes, name: str = "raster") -> np.ndarray:
    """Inverse of ``encode_raster``; returns bool or float32 (nz, ny, nx)."""
    if len(data) < _HEADER.size:
        raise DataError(f"{name}: truncated header")
    magic, version, dtype, nx, ny, nz = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{name}: unsupported version {version}")
    if min(nx, ny, nz) < 1:
        raise DataError(f"{name}: dims must be positive, got {(nx, ny, nz)}")
    n = nx * ny * nz
    body = data[_HEADER.size:]
    if dtype == DTYPE_BIT:
        expect = (n + 7) // 8
        if len(body) != expect:
            raise DataError(f"{name}: payload is {len(body)} bytes, expected {expect}")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n, bitorder="little")
        return bits.astype(bool).reshape(nz, ny, nx)
    if dtype == DTYPE_F32:
        if len(body) != 4 * n:
            raise DataError(f"{name}: payload is {len(body)} bytes, expected {4 * n}")
        return np.frombuffer(body, dtype="<f4").reshape(nz, ny, nx).astype(np.float32)
    raise DataError(f"{name}: unknown dtype code {dtype}")


def write_raster(path, array, dtype: int | None = None) -> None:
    Path(path).write_bytes(encode_raster(array, dtype))


def read_raster(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"raster not found: {path}") from None
    return decode_raster(data, os.fspath(path))


# ---------------------------------------------------------------------------
# cohort directories

def _read_csv(path) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None


def read_covariates(path):
    """Subject rows from the covariate table: (covariate names, list of (id, subtype, dict))."""
    fields, rows = _read_csv(path)
    if fields[:2] != ["id", "subtype"]:
        raise DataError(f"{path}: header must start with id,subtype")
    names = fields[2:]
    out, seen = [], set()
    for r in rows:
        sid = r["id"]
        if sid in seen:
            raise DataError(f"{path}: duplicate id {sid!r}")
        seen.add(sid)
        try:
            k = int(r["subtype"])
        except ValueError:
            raise DataError(f"{path}: subject {sid}: subtype {r['subtype']!r} is not an integer") from None
        covs = {}
        for name in names:
            try:
                covs[name] = float(r[name])
            except (TypeError, ValueError):
                raise DataError(f"subject {sid}: covariate {name!r} is not numeric ({r[name]!r})") from None
        out.append((sid, k, covs))
    if not out:
        raise DataError(f"{path}: no subjects")
    return names, out


def read_manifest(data_dir) -> dict[str, Path]:
    data_dir = Path(data_dir)
    _, rows = _read_csv(data_dir / OUTCOMES)
    out = {}
    for r in rows:
        if r.get("id") in out:
            raise DataError(f"{OUTCOMES}: duplicate id {r['id']!r}")
        out[r["id"]] = data_dir / r["path"]
    return out


def validate_cohort(data_dir) -> None:
    """Check ids, raster presence and dimensions without building the dataset."""
    load_cohort_arrays(data_dir)


def load_cohort_arrays(data_dir):
    data_dir = Path(data_dir)
    names, subjects = read_covariates(data_dir / COVARIATES)
    paths = read_manifest(data_dir)
    ids = [s[0] for s in subjects]
    missing = [i for i in ids if i not in paths]
    extra = [i for i in paths if i not in set(ids)]
    if missing or extra:
        raise DataError(f"covariate and outcome ids differ (missing rasters: {missing[:5]}, "
                        f"unknown ids: {extra[:5]})")
    for sid in ids:
        if not paths[sid].exists():
            raise DataError(f"subject {sid}: raster not found: {paths[sid]}")
    grids = []
    for sid in ids:
        g = read_raster(paths[sid])
        if grids and g.shape != grids[0].shape:
            raise DataError(f"subject {sid}: raster dims {g.shape[::-1]} differ from {grids[0].shape[::-1]}")
        grids.append(g.astype(bool))
    stack = np.stack(grids)
    mask_path = data_dir / MASK
    if mask_path.exists():
        mask = read_raster(mask_path).astype(bool)
        if mask.shape != stack.shape[1:]:
            raise DataError(f"mask dims {mask.shape[::-1]} differ from outcome dims {stack.shape[:0:-1]}")
    else:
        mask = stack.any(axis=0)
    spatial = None
    if (data_dir / SPATIAL).exists():
        spatial = read_raster(data_dir / SPATIAL).astype(np.float64)
        if spatial.shape != mask.shape:
            raise DataError(f"spatial covariate dims {spatial.shape[::-1]} differ from {mask.shape[::-1]}")
    return names, subjects, stack, mask, spatial


def load_dataset(data_dir, center=None) -> Dataset:
    """Read a cohort directory into a Dataset.

    ``center`` lists covariates to mean-center (default: every non-binary one).
    """
    data_dir = Path(data_dir)
    names, subjects, stack, mask, spatial = load_cohort_arrays(data_dir)
    lattice = build_lattice(mask)
    outside = stack[:, ~mask].any(axis=1)
    if outside.any():
        raise DataError(f"subject {subjects[int(np.argmax(outside))][0]} has lesions outside the mask")
    records = [SubjectRecord(sid, k, covs) for sid, k, covs in subjects]
    K = max(k for _, k, _ in subjects)
    labels = None
    truth = read_truth(data_dir)
    if truth and "subtype_labels" in truth:
        labels = truth["subtype_labels"]
        K = max(K, len(labels))
    design = build_design(records, n_subtypes=K, covariate_names=names, center=center,
                          subtype_labels=labels)
    outcomes = stack[:, mask]
    w = lattice.gather(spatial) if spatial is not None else None
    ds = Dataset(lattice, design, outcomes, w, [s[0] for s in subjects])
    if (data_dir / PROFILES).exists():
        ds.profiles = read_profiles(data_dir / PROFILES, design)
    return ds


def read_profiles(path, design) -> list[Profile]:
    fields, rows = _read_csv(path)
    if fields[:2] != ["name", "subtype"]:
        raise DataError(f"{path}: header must start with name,subtype")
    out = []
    for r in rows:
        k = int(r["subtype"])
        if not 1 <= k <= design.n_subtypes:
            raise DataError(f"{path}: profile {r['name']}: subtype {k} outside 1..{design.n_subtypes}")
        covs = {c: float(r[c]) for c in fields[2:] if r.get(c, "") != ""}
        out.append(Profile(r["name"], design.profile(k - 1, covs)))
    return out


def read_truth(data_dir) -> dict | None:
    p = Path(data_dir) / TRUTH
    if not p.exists():
        return None
    return json.loads(p.read_text())


def write_cohort(out_dir, ids, subtypes, covariates: dict[str, list], images, mask=None,
                 spatial=None, profiles: list[dict] | None = None, truth: dict | None = None) -> None:
    """Write a cohort directory. ``images`` is a sequence of boolean grids in ``ids`` order."""
    out = Path(out_dir)
    (out / "outcomes").mkdir(parents=True, exist_ok=True)
    cov_names = list(covariates)
    with open(out / COVARIATES, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "subtype"] + cov_names)
        for i, sid in enumerate(ids):
            w.writerow([sid, int(subtypes[i])] + [_fmt(covariates[c][i]) for c in cov_names])
    with open(out / OUTCOMES, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "path"])
        for sid, img in zip(ids, images):
            rel = f"outcomes/{sid}.blm"
            write_raster(out / rel, np.asarray(img, dtype=bool))
            w.writerow([sid, rel])
    if mask is not None:
        write_raster(out / MASK, np.asarray(mask, dtype=bool))
    if spatial is not None:
        write_raster(out / SPATIAL, np.asarray(spatial, dtype=np.float32))
    if profiles:
        with open(out / PROFILES, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "subtype"] + cov_names)
            for p in profiles:
                w.writerow([p["name"], p["subtype"]] + [_fmt(p.get(c, "")) for c in cov_names])
    if truth is not None:
        (out / TRUTH).write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if v == "" or v is None:
        return ""
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
