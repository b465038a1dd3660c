"""Binary and text persistence.

Binary layouts (all integers little-endian, payload float32 little-endian)::

    FMAT  magic "FMAT" | u32 version=1 | u32 dtype=1 | u64 rows | u64 cols | rows*cols f32
    LBL1  magic "LBL1" | u32 version=1 | u32 K       | u64 count | count u8
    FMAP  magic "FMAP" | u32 version=1 | u64 images  | u32 H | u32 W | u32 C | f32 payload

FMAP payloads are image-major, row-major, channel-last.

The text format used for models, configs and ground-truth sidecars is a
sequence of ``[section]`` headers and ``key = value`` lines.  A matrix is
written as ``name.rows = R`` and ``name.cols = C`` followed by R lines of
comma-separated ``%.9g`` values.  Vectors are written as 1-row matrices.
Blank lines and lines starting with ``#`` are ignored on read.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    FileIOError,
    FormatError,
    LengthError,
    ValidationError,
)

FMAT_MAGIC = b"FMAT"
LBL_MAGIC = b"LBL1"
FMAP_MAGIC = b"FMAP"
VERSION = 1
DTYPE_F32 = 1

_FMAT_HEADER = struct.Struct("<4sIIQQ")
_LBL_HEADER = struct.Struct("<4sIIQ")
_FMAP_HEADER = struct.Struct("<4sIQIII")

MODEL_SECTIONS = ("pca", "ica", "head", "meta")


@dataclass
class FeatureMatrix:
    """N x m last-layer feature vectors, one sample per row."""

    data: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DimensionError(f"feature matrix must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValidationError(f"feature matrix needs rows >= 1 and cols >= 1, got {self.data.shape}")
        _check_finite(self.data, "feature matrix")

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self):
        return self.rows


@dataclass
class LabelVector:
    """Ordinal class indices in ``0..K-1``."""

    values: np.ndarray
    K: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64).ravel()
        self.K = int(self.K)
        if self.K < 2:
            raise ValidationError(f"class count K must be >= 2, got {self.K}")
        bad = np.flatnonzero((self.values < 0) | (self.values >= self.K))
        if bad.size:
            pos = int(bad[0])
            raise ValidationError(
                f"label {int(self.values[pos])} at position {pos} outside 0..{self.K - 1}"
            )

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def __getitem__(self, idx):
        if np.isscalar(idx) or isinstance(idx, (int, np.integer)):
            return int(self.values[idx])
        return LabelVector(self.values[idx], self.K)


@dataclass
class SpatialFeatureMap:
    """Pre-pooling feature tensor of shape (images, H, W, C)."""

    data: np.ndarray
    bumps: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise DimensionError(f"spatial map must be 4-D (images, H, W, C), got {self.data.shape}")
        _check_finite(self.data, "spatial map")

    @property
    def images(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def channels(self):
        return self.data.shape[3]

    def pooled(self):
        """Global average over (H, W): one feature vector per image."""
        return self.data.mean(axis=(1, 2))


def _check_finite(arr, what):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"{what} has non-finite entry {arr[idx]!r} at index {idx}")


def _to_f32(arr, what):
    with np.errstate(over="ignore"):
        out = np.ascontiguousarray(arr, dtype="<f4")
    _check_finite(out, what + " (as float32)")
    return out


def _write_bytes(path, chunks):
    try:
        with open(path, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
    except OSError as exc:
        raise FileIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FileIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _check_magic(buf, magic, path):
    found = buf[:4]
    if found != magic:
        raise FormatError(f"{path}: bad magic {found!r}, expected {magic!r}")


def _check_size(buf, header_size, payload_size, path):
    expected = header_size + payload_size
    if len(buf) != expected:
        raise LengthError(f"{path}: expected {expected} bytes, found {len(buf)}")


def _check_version(version, path):
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


# -- FMAT ---------------------------------------------------------------------


def encode_feature_matrix(mat):
    data = _to_f32(np.asarray(mat, dtype=np.float64), "feature matrix")
    rows, cols = data.shape
    return _FMAT_HEADER.pack(FMAT_MAGIC, VERSION, DTYPE_F32, rows, cols) + data.tobytes()


def decode_feature_matrix(buf, path="<bytes>"):
    if len(buf) < _FMAT_HEADER.size:
        _check_magic(buf, FMAT_MAGIC, path)
        raise LengthError(f"{path}: expected at least {_FMAT_HEADER.size} header bytes, found {len(buf)}")
    magic, version, dtype, rows, cols = _FMAT_HEADER.unpack_from(buf)
    _check_magic(buf, FMAT_MAGIC, path)
    _check_version(version, path)
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: invalid shape {rows}x{cols}")
    _check_size(buf, _FMAT_HEADER.size, 4 * rows * cols, path)
    data = np.frombuffer(buf, dtype="<f4", offset=_FMAT_HEADER.size).reshape(rows, cols)
    return FeatureMatrix(data.astype(np.float64), source=str(path))


def write_feature_matrix(mat, path):
    """Write ``mat`` (FeatureMatrix or 2-D array) as FMAT.

    Values are rounded to float32; a value that overflows float32 is a
    validation error.
    """
    _write_bytes(path, [encode_feature_matrix(mat)])


def read_feature_matrix(path):
    return decode_feature_matrix(_read_bytes(path), path)


# -- LBL1 ---------------------------------------------------------------------


def encode_labels(labels):
    if not isinstance(labels, LabelVector):
        raise TypeError("encode_labels expects a LabelVector")
    if labels.K > 256:
        raise ValidationError(f"LBL1 stores u8 indices, K={labels.K} too large")
    values = labels.values.astype(np.uint8)
    return _LBL_HEADER.pack(LBL_MAGIC, VERSION, labels.K, values.size) + values.tobytes()


def decode_labels(buf, path="<bytes>"):
    if len(buf) < _LBL_HEADER.size:
        _check_magic(buf, LBL_MAGIC, path)
        raise LengthError(f"{path}: expected at least {_LBL_HEADER.size} header bytes, found {len(buf)}")
    magic, version, K, count = _LBL_HEADER.unpack_from(buf)
    _check_magic(buf, LBL_MAGIC, path)
    _check_version(version, path)
    if not 2 <= K <= 256:
        raise FormatError(f"{path}: class count K={K} outside 2..256")
    _check_size(buf, _LBL_HEADER.size, count, path)
    values = np.frombuffer(buf, dtype=np.uint8, offset=_LBL_HEADER.size)
    return LabelVector(values, K)


def write_labels(labels, path):
    _write_bytes(path, [encode_labels(labels)])


def read_labels(path):
    return decode_labels(_read_bytes(path), path)


# -- FMAP ---------------------------------------------------------------------


def encode_spatial_map(fmap):
    data = _to_f32(fmap.data, "spatial map")
    images, h, w, c = data.shape
    return _FMAP_HEADER.pack(FMAP_MAGIC, VERSION, images, h, w, c) + data.tobytes()


def decode_spatial_map(buf, path="<bytes>"):
    if len(buf) < _FMAP_HEADER.size:
        _check_magic(buf, FMAP_MAGIC, path)
        raise LengthError(f"{path}: expected at least {_FMAP_HEADER.size} header bytes, found {len(buf)}")
    magic, version, images, h, w, c = _FMAP_HEADER.unpack_from(buf)
    _check_magic(buf, FMAP_MAGIC, path)
    _check_version(version, path)
    if min(images, h, w, c) < 1:
        raise FormatError(f"{path}: invalid shape {images}x{h}x{w}x{c}")
    _check_size(buf, _FMAP_HEADER.size, 4 * images * h * w * c, path)
    data = np.frombuffer(buf, dtype="<f4", offset=_FMAP_HEADER.size).reshape(images, h, w, c)
    return SpatialFeatureMap(data.astype(np.float64))


def write_spatial_map(fmap, path):
    _write_bytes(path, [encode_spatial_map(fmap)])


def read_spatial_map(path):
    return decode_spatial_map(_read_bytes(path), path)


# -- sectioned text -----------------------------------------------------------


def _format_scalar(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.9g" % float(value)
    text = str(value)
    if "\n" in text:
        raise ValidationError("text values must be single-line")
    return text


def _parse_scalar(text):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def dumps_sections(sections):
    """Serialize ``{section: {key: value}}`` preserving the given key order.

    A section named ``""`` holds top-level keys and is written first without
    a header.  numpy arrays (1-D or 2-D) become matrix blocks.
    """
    lines = []
    for name, body in sections.items():
        if name:
            if lines:
                lines.append("")
            lines.append(f"[{name}]")
        for key, value in body.items():
            if isinstance(value, np.ndarray):
                mat = np.atleast_2d(np.asarray(value, dtype=np.float64))
                if mat.ndim != 2:
                    raise DimensionError(f"{key}: only vectors and matrices can be written")
                lines.append(f"{key}.rows = {mat.shape[0]}")
                lines.append(f"{key}.cols = {mat.shape[1]}")
                for row in mat:
                    lines.append(",".join("%.9g" % v for v in row))
            else:
                lines.append(f"{key} = {_format_scalar(value)}")
    return "\n".join(lines) + "\n"


def loads_sections(text, allowed=None, path="<text>"):
    """Parse the sectioned text format.

    Matrices come back as 2-D float arrays.  ``allowed`` restricts section
    names; top-level keys land in section ``""``.
    """
    sections = {}
    current = sections.setdefault("", {})
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i].strip()
        lineno = i + 1
        i += 1
        if not raw or raw.startswith("#"):
            continue
        if raw.startswith("["):
            if not raw.endswith("]"):
                raise FormatError(f"{path}:{lineno}: malformed section header {raw!r}")
            name = raw[1:-1].strip()
            if allowed is not None and name not in allowed:
                raise FormatError(f"{path}:{lineno}: unknown section [{name}]")
            if name in sections and sections[name]:
                raise FormatError(f"{path}:{lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            continue
        if "=" not in raw:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in raw.split("=", 1))
        if key.endswith(".rows"):
            name = key[: -len(".rows")]
            nxt = lines[i].strip() if i < len(lines) else ""
            if not nxt.startswith(name + ".cols"):
                raise FormatError(f"{path}:{lineno}: {name}.rows must be followed by {name}.cols")
            try:
                nrows = int(value)
                ncols = int(nxt.split("=", 1)[1])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: bad dimensions for {name}") from None
            i += 1
            block = []
            for r in range(nrows):
                if i >= len(lines) or not lines[i].strip() or "=" in lines[i] or lines[i].startswith("["):
                    raise DimensionError(
                        f"{path}: matrix {name} declares {nrows} rows, found {r}"
                    )
                try:
                    row = [float(tok) for tok in lines[i].split(",")]
                except ValueError:
                    raise FormatError(f"{path}:{i + 1}: non-numeric entry in {name}") from None
                if len(row) != ncols:
                    raise DimensionError(
                        f"{path}:{i + 1}: matrix {name} declares {ncols} cols, row has {len(row)}"
                    )
                block.append(row)
                i += 1
            if i < len(lines) and lines[i].strip() and "=" not in lines[i] and not lines[i].strip().startswith(("[", "#")):
                raise DimensionError(f"{path}:{i + 1}: matrix {name} has more than {nrows} rows")
            current[name] = np.array(block, dtype=np.float64).reshape(nrows, ncols)
        else:
            current[key] = _parse_scalar(value)
    if not sections[""]:
        del sections[""]
    return sections


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise FileIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise FileIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def write_model(sections, path):
    """Write a model file; sections are emitted in the order pca, ica, head, meta."""
    unknown = set(sections) - set(MODEL_SECTIONS)
    if unknown:
        raise FormatError(f"unknown model section(s): {sorted(unknown)}")
    ordered = {name: sections[name] for name in MODEL_SECTIONS if name in sections}
    if "meta" in ordered:
        ordered["meta"] = dict(sorted(ordered["meta"].items()))
    _write_text(path, dumps_sections(ordered))


def read_model(path):
    sections = loads_sections(_read_text(path), allowed=MODEL_SECTIONS, path=path)
    if "" in sections:
        raise FormatError(f"{path}: keys outside any section")
    return sections


def write_text_sections(sections, path):
    _write_text(path, dumps_sections(sections))


def read_text_sections(path, allowed=None):
    return loads_sections(_read_text(path), allowed=allowed, path=os.fspath(path))
