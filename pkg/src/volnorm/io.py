"""File formats: raw volumes, covariate tables, and fitted-model persistence.

Volumes use a purpose-built container ("NVOL1"): an ASCII magic line, one
JSON header line, then the raw float32 little-endian payload in x-fastest
order. The format is deterministic byte-for-byte, which keeps round-trip
tests exact without a medical-imaging dependency; converters for standard
neuroimaging containers are an extension point, not core.

Models persist as versioned JSON. Python's float repr round-trips exactly,
so parameters survive save/load bit-for-bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from dataclasses import dataclass

from .errors import FormatError, ValidationError
from .estimation import CovariateRecord, DesignInfo, GridModel, GROUPS, VoxelFit
from .geometry import BrainMask, GridSpec, VolumetricImage

__all__ = [
    "VOLUME_MAGIC",
    "MODEL_FORMAT",
    "MODEL_SCHEMA_VERSION",
    "VolumeFileHeader",
    "read_volume_header",
    "read_volume",
    "write_volume",
    "read_mask",
    "write_mask",
    "read_covariates",
    "write_covariates",
    "save_model",
    "load_model",
    "write_scores",
]

VOLUME_MAGIC = b"NVOL1\n"
MODEL_FORMAT = "volnorm-model"
MODEL_SCHEMA_VERSION = 1

_MAX_DIM = 1 << 14  # 16384 voxels per axis is far beyond any real volume
_SEX_CODES = {"F": 0, "M": 1, "0": 0, "1": 1}


@dataclass(frozen=True)
class VolumeFileHeader:
    """Parsed NVOL1 header; the payload starts at `data_offset`."""

    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float]
    dtype: str
    data_offset: int

    @property
    def payload_bytes(self) -> int:
        return 4 * self.dims[0] * self.dims[1] * self.dims[2]


def _encode_header(img: VolumetricImage) -> bytes:
    header = {
        "dims": list(img.dims),
        "dtype": "f32le",
        "voxel_size_mm": list(img.voxel_size),
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii") + b"\n"


def write_volume(img: VolumetricImage, path) -> None:
    """Write an image as NVOL1; values are stored as little-endian float32."""
    payload = np.asarray(img.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(_encode_header(img))
        fh.write(payload)


def _parse_header(blob: bytes, path) -> VolumeFileHeader:
    if not blob.startswith(VOLUME_MAGIC):
        raise FormatError(f"{path}: bad magic, not an NVOL1 volume")
    newline = blob.find(b"\n", len(VOLUME_MAGIC))
    if newline < 0:
        raise FormatError(f"{path}: header line is not terminated")
    raw = blob[len(VOLUME_MAGIC) : newline]
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    try:
        dims = tuple(int(d) for d in header["dims"])
        voxel = tuple(float(v) for v in header["voxel_size_mm"])
        dtype = str(header["dtype"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header missing or malformed field: {exc}") from exc
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise FormatError(f"{path}: dims must be three positive integers, got {dims}")
    if any(d > _MAX_DIM for d in dims):
        raise FormatError(f"{path}: dims {dims} exceed the supported maximum {_MAX_DIM}")
    if len(voxel) != 3 or any(not v > 0.0 for v in voxel):
        raise FormatError(f"{path}: voxel sizes must be three positive reals")
    if dtype != "f32le":
        raise FormatError(f"{path}: unsupported dtype {dtype!r}, expected 'f32le'")
    return VolumeFileHeader(
        dims=dims, voxel_size_mm=voxel, dtype=dtype, data_offset=newline + 1
    )


def read_volume_header(path) -> VolumeFileHeader:
    """Parse just the header of an NVOL1 file."""
    with open(path, "rb") as fh:
        blob = fh.read(len(VOLUME_MAGIC) + 4096)
    return _parse_header(blob, path)


def read_volume(path) -> VolumetricImage:
    """Read an NVOL1 volume; rejects truncated or oversized payloads."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = _parse_header(blob, path)
    payload = blob[header.data_offset :]
    if len(payload) != header.payload_bytes:
        raise FormatError(
            f"{path}: expected {header.payload_bytes} payload bytes, "
            f"got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return VolumetricImage(header.dims, header.voxel_size_mm, data)


def write_mask(mask: BrainMask, path) -> None:
    """Store a mask as an NVOL1 volume of 0/1 values."""
    img = VolumetricImage(mask.dims, mask.voxel_size, mask.flags.astype(np.float64))
    write_volume(img, path)


def read_mask(path) -> BrainMask:
    img = read_volume(path)
    return BrainMask(img.dims, img.voxel_size, img.data > 0.5)


def read_covariates(path) -> list[CovariateRecord]:
    """Read `subject_id,age,sex,group` rows; rejects rather than coerces.

    Sex accepts F/M or 0/1; group accepts CN/MCI/AD/UNKNOWN, with an empty
    cell mapping to UNKNOWN. Errors carry the offending row number.
    """
    records: list[CovariateRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "age", "sex", "group"}
        fieldnames = set(reader.fieldnames or [])
        missing = required - fieldnames
        if missing:
            raise FormatError(f"{path}: missing columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            sid = (row["subject_id"] or "").strip()
            if not sid:
                raise FormatError(f"{path}:{lineno}: empty subject_id")
            if sid in seen:
                raise FormatError(f"{path}:{lineno}: duplicate subject_id {sid!r}")
            seen.add(sid)
            try:
                age = float((row["age"] or "").strip())
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unparseable age {row['age']!r}")
            sex_raw = (row["sex"] or "").strip()
            if sex_raw not in _SEX_CODES:
                raise FormatError(f"{path}:{lineno}: unknown sex code {sex_raw!r}")
            group = (row["group"] or "").strip() or "UNKNOWN"
            if group not in GROUPS:
                raise FormatError(f"{path}:{lineno}: unknown group {group!r}")
            try:
                records.append(
                    CovariateRecord(
                        subject_id=sid, age=age, sex=_SEX_CODES[sex_raw], group=group
                    )
                )
            except ValidationError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_covariates(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "age", "sex", "group"])
        for rec in records:
            writer.writerow([rec.subject_id, repr(rec.age), rec.sex, rec.group])


def save_model(model: GridModel, path) -> None:
    """Persist a fitted model as versioned JSON."""
    grid = model.grid
    payload = {
        "format": MODEL_FORMAT,
        "schema_version": MODEL_SCHEMA_VERSION,
        "grid": {
            "dims": list(grid.dims),
            "voxel_size_mm": list(grid.voxel_size),
            "spacing_mm": list(grid.spacing_mm),
            "offset_voxels": list(grid.offset_voxels),
            "centers": [int(c) for c in grid.centers],
        },
        "design": {
            "columns": list(model.design.columns),
            "age_center": model.design.age_center,
            "age_min": model.design.age_min,
            "age_max": model.design.age_max,
            "sex_encoding": {"F": 0, "M": 1},
        },
        "rbf": {"bandwidth_mm": model.rbf_bandwidth, "mode": model.rbf_mode},
        "training": {
            "n_subjects": model.n_subjects,
            "seed": model.seed,
            "created_utc": model.created_utc,
        },
        "fits": [
            {
                "beta": [float(b) for b in fit.beta],
                "sigma": fit.sigma,
                "gamma": fit.gamma,
                "loglik": fit.loglik,
                "converged": fit.converged,
                "clamped": fit.clamped,
            }
            for fit in model.fits
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, allow_nan=False, separators=(",", ":"), sort_keys=True)


def load_model(path) -> GridModel:
    """Load a model saved by save_model; validates format and schema version."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: unparseable model file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a {MODEL_FORMAT} file")
    version = payload.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise FormatError(
            f"{path}: schema version {version} is not the supported "
            f"{MODEL_SCHEMA_VERSION}"
        )
    try:
        g = payload["grid"]
        grid = GridSpec(
            dims=tuple(g["dims"]),
            voxel_size=tuple(g["voxel_size_mm"]),
            spacing_mm=tuple(g["spacing_mm"]),
            offset_voxels=tuple(g["offset_voxels"]),
            centers=np.asarray(g["centers"], dtype=np.int64),
        )
        d = payload["design"]
        design = DesignInfo(
            age_center=float(d["age_center"]),
            age_min=float(d["age_min"]),
            age_max=float(d["age_max"]),
            columns=tuple(d["columns"]),
        )
        fits = tuple(
            VoxelFit(
                beta=np.asarray(f["beta"], dtype=float),
                sigma=float(f["sigma"]),
                gamma=float(f["gamma"]),
                loglik=float(f["loglik"]),
                converged=bool(f["converged"]),
                clamped=bool(f["clamped"]),
            )
            for f in payload["fits"]
        )
        t = payload["training"]
        return GridModel(
            grid=grid,
            design=design,
            fits=fits,
            n_subjects=int(t["n_subjects"]),
            seed=t.get("seed"),
            created_utc=t.get("created_utc"),
            rbf_bandwidth=float(payload["rbf"]["bandwidth_mm"]),
            rbf_mode=str(payload["rbf"]["mode"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing or malformed model field: {exc}") from exc


def write_scores(scores, path) -> None:
    """Deviation scores as CSV: subject_id,group,q,u_abs,n_tail_voxels."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "group", "q", "u_abs", "n_tail_voxels"])
        for s in scores:
            writer.writerow([s.subject_id, s.group, repr(s.q), repr(s.value), s.n_tail])
