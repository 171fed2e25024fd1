"""Volume and dataset containers plus on-disk formats.

Two input formats are supported for 3-D volumes:

* NIfTI-1 single-file volumes (``.nii`` / ``.nii.gz``), read by a small
  built-in parser covering the common scalar datatypes.
* A raw fallback: little-endian 32-bit floats in C order with a JSON
  sidecar giving the shape (``volume.raw`` + ``volume.json``).

Processed datasets are stored as an archive directory: one 32-bit float
record per image in ``images.f32`` (row-major), optional ``masks.u8``
ground-truth records, and a ``manifest.json`` describing counts, shapes
and the normalization applied.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataIntegrityError, DegenerateInputError, IngestionError

ARCHIVE_FORMAT_VERSION = 1

_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}


@dataclass
class Volume:
    """A 3-D intensity grid with optional physical spacing metadata."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] | None = None
    subject_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ContractError(f"volume must be 3-D, got shape {self.voxels.shape}")

    def validate(self):
        """Check the finiteness / non-emptiness invariants, raising on violation."""
        bad = np.count_nonzero(~np.isfinite(self.voxels))
        if bad:
            raise DataIntegrityError(f"volume contains {bad} non-finite voxel(s)")
        if not np.any(self.voxels):
            raise DegenerateInputError("volume has no nonzero voxels")
        return self


@dataclass
class Dataset:
    """An ordered collection of 2-D images with optional anomaly masks."""

    images: np.ndarray
    masks: np.ndarray | None = None
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 3:
            raise ContractError(f"dataset images must be (n, H, W), got {self.images.shape}")
        if self.masks is not None:
            self.masks = np.asarray(self.masks)
            if self.masks.shape != self.images.shape:
                raise DataIntegrityError(
                    f"mask shape {self.masks.shape} does not match images {self.images.shape}"
                )
            values = np.unique(self.masks)
            if not np.all(np.isin(values, (0, 1))):
                raise DataIntegrityError("masks must be binary {0,1}")

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]


# ---------------------------------------------------------------------------
# Volume IO
# ---------------------------------------------------------------------------


def load_volume(path) -> Volume:
    """Load a NIfTI-1 or raw-format volume and validate its invariants.

    Raises IngestionError for unreadable files and DataIntegrityError when
    the voxel data contains NaN/Inf values.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        volume = _load_nifti(path)
    elif name.endswith(".raw") or name.endswith(".json"):
        volume = _load_raw(path)
    else:
        raise IngestionError(f"unrecognized volume format: {path}")
    return volume.validate()


def save_volume(volume: Volume, path):
    """Save a volume in the format implied by the file extension."""
    path = Path(path)
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        _save_nifti(volume, path)
    elif name.endswith(".raw"):
        _save_raw(volume, path)
    else:
        raise IngestionError(f"unrecognized volume format: {path}")


def _load_raw(path: Path) -> Volume:
    if path.name.lower().endswith(".json"):
        sidecar_path = path
        raw_path = path.with_suffix(".raw")
    else:
        raw_path = path
        sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise IngestionError(f"missing JSON sidecar for raw volume: {sidecar_path}")
    if not raw_path.exists():
        raise IngestionError(f"missing raw data file: {raw_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text())
        shape = tuple(int(d) for d in sidecar["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"invalid sidecar {sidecar_path}: {exc}") from exc
    if len(shape) != 3:
        raise IngestionError(f"sidecar shape must be 3-D, got {shape}")
    data = np.fromfile(raw_path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise IngestionError(
            f"{raw_path}: expected {expected} float32 values for shape {shape}, found {data.size}"
        )
    spacing = sidecar.get("spacing")
    return Volume(
        voxels=data.reshape(shape),
        spacing=tuple(spacing) if spacing else None,
        subject_id=sidecar.get("subject_id", path.stem),
    )


def _save_raw(volume: Volume, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(volume.voxels, dtype="<f4").tofile(path)
    sidecar = {
        "shape": [int(d) for d in volume.voxels.shape],
        "dtype": "float32",
        "byte_order": "little",
        "subject_id": volume.subject_id,
    }
    if volume.spacing is not None:
        sidecar["spacing"] = list(volume.spacing)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def _load_nifti(path: Path) -> Volume:
    opener = gzip.open if path.name.lower().endswith(".gz") else open
    try:
        with opener(path, "rb") as handle:
            header = handle.read(348)
            if len(header) < 348:
                raise IngestionError(f"{path}: truncated NIfTI header")
            byte_order = "<"
            (sizeof_hdr,) = struct.unpack("<i", header[:4])
            if sizeof_hdr != 348:
                byte_order = ">"
                (sizeof_hdr,) = struct.unpack(">i", header[:4])
                if sizeof_hdr != 348:
                    raise IngestionError(f"{path}: not a NIfTI-1 file")
            magic = header[344:348]
            if magic[:3] not in (b"n+1", b"ni1"):
                raise IngestionError(f"{path}: bad NIfTI magic {magic!r}")
            if magic[:3] == b"ni1":
                raise IngestionError(f"{path}: detached .hdr/.img pairs are not supported")
            dim = struct.unpack(byte_order + "8h", header[40:56])
            ndim = dim[0]
            if ndim < 3:
                raise IngestionError(f"{path}: expected a 3-D volume, header says {ndim}-D")
            shape = dim[1 : 1 + ndim]
            if ndim > 3 and any(d > 1 for d in shape[3:]):
                raise IngestionError(f"{path}: 4-D+ volumes are not supported (shape {shape})")
            shape = shape[:3]
            (datatype,) = struct.unpack(byte_order + "h", header[70:72])
            if datatype not in _NIFTI_DTYPES:
                raise IngestionError(f"{path}: unsupported NIfTI datatype code {datatype}")
            dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(byte_order)
            pixdim = struct.unpack(byte_order + "8f", header[76:108])
            (vox_offset,) = struct.unpack(byte_order + "f", header[108:112])
            slope, inter = struct.unpack(byte_order + "2f", header[112:120])
            offset = int(vox_offset) if vox_offset else 352
            handle.read(offset - 348)
            count = int(np.prod(shape))
            payload = handle.read(count * dtype.itemsize)
            if len(payload) < count * dtype.itemsize:
                raise IngestionError(f"{path}: truncated voxel data")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    data = np.frombuffer(payload, dtype=dtype, count=count)
    # NIfTI stores voxels with the first axis fastest (Fortran order).
    voxels = data.reshape(shape, order="F").astype(np.float64)
    if slope not in (0.0, 1.0) or inter != 0.0:
        if slope == 0.0:
            slope = 1.0
        voxels = voxels * slope + inter
    spacing = tuple(float(p) for p in pixdim[1:4])
    return Volume(voxels=voxels, spacing=spacing, subject_id=path.name.split(".")[0])


def _save_nifti(volume: Volume, path: Path):
    """Write a minimal single-file NIfTI-1 volume (float32, magic ``n+1``)."""
    shape = volume.voxels.shape
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, shape[0], shape[1], shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, 16)  # float32
    struct.pack_into("<h", header, 72, 32)  # bits per voxel
    spacing = volume.spacing or (1.0, 1.0, 1.0)
    struct.pack_into("<8f", header, 76, 1.0, spacing[0], spacing[1], spacing[2], 1, 1, 1, 1)
    struct.pack_into("<f", header, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    header[344:348] = b"n+1\x00"
    payload = np.asfortranarray(volume.voxels, dtype="<f4").tobytes(order="F")
    path.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if path.name.lower().endswith(".gz") else open
    with opener(path, "wb") as handle:
        handle.write(bytes(header))
        handle.write(b"\x00" * 4)  # extension flag
        handle.write(payload)


# ---------------------------------------------------------------------------
# Dataset archives
# ---------------------------------------------------------------------------


def write_archive(dataset: Dataset, directory):
    """Write a dataset archive (float records + JSON manifest) to a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, height, width = dataset.images.shape
    np.ascontiguousarray(dataset.images, dtype="<f4").tofile(directory / "images.f32")
    manifest = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "count": int(n),
        "height": int(height),
        "width": int(width),
        "split": dataset.split,
        "dtype": "float32",
        "byte_order": "little",
        "has_masks": dataset.masks is not None,
    }
    if dataset.masks is not None:
        np.ascontiguousarray(dataset.masks, dtype=np.uint8).tofile(directory / "masks.u8")
    for key in ("normalization", "reference_profile"):
        if key in dataset.meta:
            manifest[key] = dataset.meta[key]
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def read_archive(directory) -> Dataset:
    """Read a dataset archive written by :func:`write_archive`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise IngestionError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"invalid manifest in {directory}: {exc}") from exc
    version = manifest.get("format_version")
    if version != ARCHIVE_FORMAT_VERSION:
        raise IngestionError(f"unsupported archive format_version {version!r}")
    n = int(manifest["count"])
    height, width = int(manifest["height"]), int(manifest["width"])
    images = np.fromfile(directory / "images.f32", dtype="<f4")
    if images.size != n * height * width:
        raise DataIntegrityError(
            f"images.f32 holds {images.size} values, manifest promises {n * height * width}"
        )
    images = images.reshape(n, height, width)
    masks = None
    if manifest.get("has_masks"):
        masks = np.fromfile(directory / "masks.u8", dtype=np.uint8)
        if masks.size != n * height * width:
            raise DataIntegrityError("masks.u8 size disagrees with manifest")
        masks = masks.reshape(n, height, width)
    meta = {k: manifest[k] for k in ("normalization", "reference_profile") if k in manifest}
    return Dataset(images=images, masks=masks, split=manifest.get("split", "train"), meta=meta)
