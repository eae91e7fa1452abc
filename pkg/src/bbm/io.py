"""Data containers and on-disk formats.

Dense matrices are stored in the ``bbm-binary`` format::

    offset  size  field
    0       4     magic b"BBMP"
    4       4     u32 version (currently 1)
    8       8     u64 rows
    16      8     u64 cols
    24      8*r*c little-endian float64 payload, row-major

CSV is accepted for BOLD data (optional header row) and for parcellation
labels (single integer column). Scalar metadata lives in a JSON sidecar
next to the data file (``<stem>.json``).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyParcel,
    FormatError,
    NonFiniteError,
    ValidationError,
)

MAGIC = b"BBMP"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


@dataclass(frozen=True)
class BoldMatrix:
    """A T x V time-by-location data matrix.

    ``kept_mask`` has one entry per volume of the raw acquisition and is
    True for the volumes that survive censoring; it has exactly ``T`` True
    entries.
    """

    data: np.ndarray
    tr_seconds: float = 1.0
    kept_mask: Optional[np.ndarray] = None
    subject_id: str = ""
    session_id: str = ""

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatch(f"BOLD data must be 2-D, got shape {data.shape}")
        T, V = data.shape
        if T < 2 or V < 2:
            raise DimensionMismatch(f"need T >= 2 and V >= 2, got {data.shape}")
        check_finite(data, "BOLD data")
        if not self.tr_seconds > 0:
            raise ValidationError("tr_seconds must be positive")
        mask = self.kept_mask
        mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.ndim != 1 or int(mask.sum()) != T:
            raise DimensionMismatch(
                f"kept_mask must have exactly T={T} true entries, has {int(mask.sum())}"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kept_mask", mask)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def V(self) -> int:
        return self.data.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.T * self.tr_seconds

    def with_data(self, data, kept_mask=None) -> "BoldMatrix":
        return replace(
            self,
            data=data,
            kept_mask=self.kept_mask if kept_mask is None else kept_mask,
        )


@dataclass(frozen=True)
class Template:
    """Group-level definition of Q networks.

    Either a hard parcellation (``labels``: length-V integers in 0..Q, 0 is
    unassigned) or continuous maps (``maps``: Q x V).
    """

    kind: Literal["parcellation", "maps"]
    labels: Optional[np.ndarray] = None
    maps: Optional[np.ndarray] = None
    network_names: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind == "parcellation":
            if self.labels is None:
                raise ValidationError("parcellation template needs labels")
            labels = np.asarray(self.labels)
            if labels.ndim != 1:
                raise DimensionMismatch("labels must be a vector")
            if not np.all(labels == np.round(labels)):
                raise ValidationError("labels must be integers")
            labels = labels.astype(np.int64)
            if labels.min() < 0:
                raise ValidationError("labels must be >= 0")
            Q = int(labels.max())
            counts = np.bincount(labels, minlength=Q + 1)[1:]
            if Q == 0 or np.any(counts == 0):
                missing = [q + 1 for q in np.flatnonzero(counts == 0)]
                raise EmptyParcel(f"parcels with no locations: {missing or 'all'}")
            object.__setattr__(self, "labels", labels)
        elif self.kind == "maps":
            if self.maps is None:
                raise ValidationError("continuous template needs maps")
            maps = np.ascontiguousarray(self.maps, dtype=np.float64)
            if maps.ndim != 2:
                raise DimensionMismatch("template maps must be Q x V")
            check_finite(maps, "template maps")
            zero_rows = np.flatnonzero(~np.any(maps != 0, axis=1))
            if zero_rows.size:
                raise ValidationError(f"all-zero template rows: {zero_rows.tolist()}")
            object.__setattr__(self, "maps", maps)
        else:
            raise ValidationError(f"unknown template kind {self.kind!r}")
        Q = self.Q
        names = tuple(self.network_names) or tuple(f"net{q + 1}" for q in range(Q))
        if len(names) != Q:
            raise DimensionMismatch(f"{len(names)} network names for Q={Q}")
        object.__setattr__(self, "network_names", names)

    @property
    def Q(self) -> int:
        if self.kind == "parcellation":
            return int(self.labels.max())
        return self.maps.shape[0]

    @property
    def V(self) -> int:
        return self.labels.shape[0] if self.kind == "parcellation" else self.maps.shape[1]

    def masks(self) -> np.ndarray:
        """Q x V boolean membership (parcellations only)."""
        if self.kind != "parcellation":
            raise ValidationError("masks() is defined for parcellations only")
        return self.labels[None, :] == np.arange(1, self.Q + 1)[:, None]


@dataclass(frozen=True)
class MotionParams:
    """Rigid-body motion: T_original x 6 (x, y, z in mm; 3 rotations in rad)."""

    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 6:
            raise DimensionMismatch(f"motion parameters must be T x 6, got {p.shape}")
        check_finite(p, "motion parameters")
        object.__setattr__(self, "params", p)

    @property
    def T(self) -> int:
        return self.params.shape[0]


def check_finite(a: np.ndarray, what: str = "array"):
    bad = ~np.isfinite(a)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteError(f"non-finite value in {what} at index {idx}", index=idx)


# -- raw matrices -----------------------------------------------------------


def write_matrix(path, a) -> None:
    """Write a 1-D or 2-D array in bbm-binary format (vectors as 1 x n)."""
    a = np.asarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionMismatch(f"can only store 1-D or 2-D arrays, got {a.ndim}-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a bbm-binary header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = len(raw) - _HEADER.size
    if payload != rows * cols * 8:
        raise DimensionMismatch(
            f"{path}: header says {rows}x{cols} ({rows * cols * 8} bytes), "
            f"payload has {payload} bytes"
        )
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).copy()


def read_csv_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]  # header row
    try:
        values = [[float(c) for c in r] for r in rows]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    widths = {len(r) for r in values}
    if len(widths) != 1:
        raise DimensionMismatch(f"{path}: ragged CSV rows (widths {sorted(widths)})")
    return np.array(values, dtype=np.float64)


def write_csv_matrix(path, a, header: Optional[Sequence[str]] = None) -> None:
    a = np.atleast_2d(np.asarray(a))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in a:
            w.writerow([repr(float(x)) for x in row])


def _infer_format(path) -> str:
    return "csv" if Path(path).suffix.lower() in (".csv", ".txt") else "bbm-binary"


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_sidecar(path) -> dict:
    sc = sidecar_path(path)
    return json.loads(sc.read_text()) if sc.exists() else {}


# -- typed loaders ------------------------------------------------------------


def load_bold(path, format: Optional[str] = None) -> BoldMatrix:
    """Load a BOLD matrix and its JSON sidecar (if any)."""
    fmt = format or _infer_format(path)
    if fmt == "csv":
        data = read_csv_matrix(path)
    elif fmt == "bbm-binary":
        data = read_matrix(path)
    else:
        raise ValidationError(f"unknown format {fmt!r}")
    meta = read_sidecar(path)
    return BoldMatrix(
        data=data,
        tr_seconds=float(meta.get("tr_seconds", 1.0)),
        subject_id=str(meta.get("subject_id", Path(path).stem)),
        session_id=str(meta.get("session_id", "")),
    )


def save_bold(path, b: BoldMatrix, format: Optional[str] = None, extra_meta=None) -> None:
    fmt = format or _infer_format(path)
    if fmt == "csv":
        write_csv_matrix(path, b.data)
    else:
        write_matrix(path, b.data)
    meta = {"tr_seconds": b.tr_seconds, "subject_id": b.subject_id, "session_id": b.session_id}
    meta.update(extra_meta or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_template(path, kind: Optional[str] = None, name: Optional[str] = None) -> Template:
    """Load a template: bbm-binary Q x V maps, or a one-column label CSV."""
    fmt = _infer_format(path)
    if kind is None:
        kind = "parcellation" if fmt == "csv" else "maps"
    meta = read_sidecar(path)
    names = tuple(meta.get("network_names", ()))
    name = name or meta.get("name") or Path(path).stem
    if kind == "parcellation":
        a = read_csv_matrix(path) if fmt == "csv" else read_matrix(path)
        if a.ndim == 2 and 1 in a.shape:
            a = a.ravel()
        else:
            raise DimensionMismatch(f"{path}: parcellation must be a single column")
        return Template("parcellation", labels=a, network_names=names, name=name)
    a = read_matrix(path) if fmt == "bbm-binary" else read_csv_matrix(path)
    return Template("maps", maps=a, network_names=names, name=name)


def save_template(path, t: Template) -> None:
    if t.kind == "parcellation":
        with open(path, "w", newline="") as fh:
            fh.write("label\n")
            fh.writelines(f"{int(x)}\n" for x in t.labels)
    else:
        write_matrix(path, t.maps)
    sidecar_path(path).write_text(
        json.dumps({"name": t.name, "network_names": list(t.network_names)}, indent=2) + "\n"
    )


def load_motion(path) -> MotionParams:
    fmt = _infer_format(path)
    a = read_csv_matrix(path) if fmt == "csv" else read_matrix(path)
    return MotionParams(a)
