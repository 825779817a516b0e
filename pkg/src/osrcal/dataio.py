"""File formats: arrays (CSV or NPY v1.0), label vectors, manifests, reports.

Arrays are always widened to float64 on load. JSON documents are written in
a canonical form (sorted keys, UTF-8, floats with 17 significant digits) so
equal inputs give byte-identical files.
"""

from __future__ import annotations

import ast
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from osrcal.errors import FormatError, InvalidArgumentError, ValidationError
from osrcal.metrics import ReliabilityTable

NPY_MAGIC = b"\x93NUMPY"
NPY_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i4": np.dtype("<i4"), "<i8": np.dtype("<i8")}
METHODS = ("closed-set", "open-set-threshold", "open-set-openmax")

REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["method", "calibrated", "brier", "ece", "accuracy", "temperature", "bins"],
    "properties": {
        "method": {"enum": list(METHODS)},
        "calibrated": {"type": "boolean"},
        "brier": {"type": "number", "minimum": 0},
        "ece": {"type": "number", "minimum": 0, "maximum": 1},
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "temperature": {"anyOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
        "bins": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["lo", "hi", "count", "avg_conf", "accuracy"],
                "properties": {
                    "lo": {"type": "number", "minimum": 0, "maximum": 1},
                    "hi": {"type": "number", "minimum": 0, "maximum": 1},
                    "count": {"type": "integer", "minimum": 0},
                    "avg_conf": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                    "accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                },
            },
        },
    },
}

_SUMMARY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mean", "std", "min", "max"],
    "properties": {k: {"type": "number"} for k in ("mean", "std", "min", "max")},
}

AGGREGATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["method", "calibrated", "runs", "brier", "ece", "accuracy", "temperature"],
    "properties": {
        "method": {"enum": list(METHODS)},
        "calibrated": {"type": "boolean"},
        "runs": {"type": "integer", "minimum": 1},
        "brier": _SUMMARY,
        "ece": _SUMMARY,
        "accuracy": _SUMMARY,
        "temperature": {"anyOf": [{"type": "null"}, _SUMMARY]},
    },
}


# Canonical JSON


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise FormatError(f"cannot serialize non-finite float {x!r}")
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def canonical_json(obj) -> str:
    """Serialize `obj` deterministically: sorted keys, compact separators, 17-digit floats."""
    parts: list[str] = []
    _encode(obj, parts)
    return "".join(parts)


def _encode(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj, key=str)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise FormatError(f"cannot serialize {type(obj).__name__}")


def write_json(obj, path) -> None:
    Path(path).write_bytes((canonical_json(obj) + "\n").encode("utf-8"))


def read_json(path):
    try:
        return json.loads(Path(path).read_bytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None


# NPY v1.0


def read_npy(path) -> np.ndarray:
    """Parse an NPY v1.0 file; only little-endian f4/f8/i4/i8, C order, 1-D or 2-D."""
    raw = Path(path).read_bytes()
    if raw[:6] != NPY_MAGIC:
        raise FormatError(f"{path}: byte 0: missing NPY magic")
    if len(raw) < 10:
        raise FormatError(f"{path}: byte {len(raw)}: truncated NPY preamble")
    if raw[6:8] != b"\x01\x00":
        raise FormatError(f"{path}: byte 6: unsupported NPY version {raw[6]}.{raw[7]}, only 1.0")
    (header_len,) = struct.unpack("<H", raw[8:10])
    start = 10 + header_len
    if len(raw) < start:
        raise FormatError(f"{path}: byte {len(raw)}: header truncated, expected {header_len} bytes")
    try:
        header = ast.literal_eval(raw[10:start].decode("latin1"))
    except (ValueError, SyntaxError):
        raise FormatError(f"{path}: byte 10: header is not a Python dict literal") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: byte 10: header must have exactly descr, fortran_order, shape")
    descr = header["descr"]
    if not isinstance(descr, str) or descr not in NPY_DTYPES:
        raise FormatError(f"{path}: byte 10: unsupported dtype {descr!r}")
    if header["fortran_order"] is not False:
        raise FormatError(f"{path}: byte 10: Fortran-ordered arrays are not supported")
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or len(shape) not in (1, 2)
        or not all(isinstance(s, int) and s >= 0 for s in shape)
    ):
        raise FormatError(f"{path}: byte 10: shape must be a 1-D or 2-D tuple, got {shape!r}")
    dtype = NPY_DTYPES[descr]
    count = math.prod(shape)
    expected = count * dtype.itemsize
    if len(raw) - start != expected:
        raise FormatError(f"{path}: byte {start}: payload is {len(raw) - start} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(shape)
    if dtype.kind == "f":
        bad = np.flatnonzero(~np.isfinite(arr.ravel()))
        if bad.size:
            raise FormatError(f"{path}: byte {start + int(bad[0]) * dtype.itemsize}: NaN or Inf entry")
    return arr


def write_npy(arr: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(arr)
    descr = arr.dtype.str
    if descr not in NPY_DTYPES:
        raise InvalidArgumentError(f"cannot write dtype {descr}")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %r, }" % (descr, tuple(arr.shape))
    # Pad so the payload starts on a 64-byte boundary, as numpy does.
    pad = 64 - (10 + len(header) + 1) % 64
    header = header + " " * (pad % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))


# CSV


def _read_csv_rows(path) -> list[list[str]]:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: byte {exc.start}: not UTF-8 text") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r").split(",") for line in lines]


def _read_csv(path) -> np.ndarray:
    rows = _read_csv_rows(path)
    if not rows:
        raise FormatError(f"{path}: line 1: empty file")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, fields in enumerate(rows):
        if len(fields) != width:
            raise FormatError(f"{path}: line {i + 1}: expected {width} fields, found {len(fields)}")
        for j, f in enumerate(fields):
            try:
                v = float(f)
            except ValueError:
                raise FormatError(f"{path}: line {i + 1}: field {j + 1} is not a number: {f!r}") from None
            if not math.isfinite(v):
                raise FormatError(f"{path}: line {i + 1}: field {j + 1} is NaN or Inf")
            out[i, j] = v
    return out


def is_npy(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(6) == NPY_MAGIC


def load_array(path) -> np.ndarray:
    """Load a float matrix from CSV or NPY (sniffed from the magic bytes).

    float32 payloads are widened exactly to float64. CSV always yields 2-D.
    """
    if is_npy(path):
        arr = read_npy(path)
        if arr.dtype.kind != "f":
            raise FormatError(f"{path}: byte 10: expected a float array, found {arr.dtype.str}")
        return arr.astype(np.float64)
    return _read_csv(path)


def save_array(matrix, path, format: str | None = None) -> None:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.size == 0:
        raise InvalidArgumentError("empty array")
    if arr.ndim not in (1, 2):
        raise InvalidArgumentError(f"only 1-D or 2-D arrays are supported, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("array contains NaN or Inf")
    fmt = format or ("npy" if str(path).endswith(".npy") else "csv")
    if fmt == "npy":
        write_npy(arr.astype("<f8"), path)
    elif fmt == "csv":
        rows = arr if arr.ndim == 2 else arr[:, None]
        Path(path).write_text("".join(",".join(f"{v:.17g}" for v in r) + "\n" for r in rows))
    else:
        raise InvalidArgumentError(f"unknown array format {fmt!r}")


def load_labels(path, num_known: int | None = None) -> np.ndarray:
    """Load a 1-D integer label vector; with `num_known`, labels must lie in [0, K]."""
    if is_npy(path):
        arr = read_npy(path)
        if arr.dtype.kind != "i":
            raise FormatError(f"{path}: byte 10: labels must be an integer array, found {arr.dtype.str}")
        if arr.ndim != 1:
            raise FormatError(f"{path}: byte 10: labels must be 1-D, got shape {arr.shape}")
        labels = arr.astype(np.int64)
    else:
        rows = _read_csv_rows(path)
        labels = np.empty(len(rows), dtype=np.int64)
        for i, fields in enumerate(rows):
            if len(fields) != 1:
                raise FormatError(f"{path}: line {i + 1}: expected one label, found {len(fields)} fields")
            try:
                labels[i] = int(fields[0])
            except ValueError:
                raise FormatError(f"{path}: line {i + 1}: not an integer: {fields[0]!r}") from None
    if num_known is not None:
        validate_labels(labels, num_known)
    return labels


def validate_labels(labels: np.ndarray, num_known: int) -> None:
    bad = np.flatnonzero((labels < 0) | (labels > num_known))
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"row {i + 1}: label {int(labels[i])} outside [0, {num_known}]")


def save_labels(labels, path, format: str | None = None) -> None:
    y = np.asarray(labels, dtype=np.int64).ravel()
    fmt = format or ("npy" if str(path).endswith(".npy") else "csv")
    if fmt == "npy":
        write_npy(y.astype("<i8"), path)
    elif fmt == "csv":
        Path(path).write_text("".join(f"{int(v)}\n" for v in y))
    else:
        raise InvalidArgumentError(f"unknown label format {fmt!r}")


# Manifests and reports


@dataclass(frozen=True)
class RunManifest:
    """One run of the known/unknown split protocol.

    `class_remap` maps each original class id to its compact id: knowns to
    0..K-1 in ascending original order, every unknown to K.
    """

    seed: int
    num_total_classes: int
    known_class_ids: tuple[int, ...]
    class_remap: dict[int, int] = field(default_factory=dict)
    dataset_name: str = "synthetic"
    run_index: int = 0

    def __post_init__(self):
        known = tuple(int(c) for c in self.known_class_ids)
        object.__setattr__(self, "known_class_ids", known)
        k, total = len(known), self.num_total_classes
        if len(set(known)) != k or any(not 0 <= c < total for c in known):
            raise ValidationError("known_class_ids must be distinct and within [0, num_total_classes)")
        remap = {int(a): int(b) for a, b in self.class_remap.items()}
        if set(remap) != set(range(total)):
            raise ValidationError("class_remap must cover every original class id")
        for orig, compact in remap.items():
            if orig not in known and compact != k:
                raise ValidationError(f"unknown class {orig} must map to {k}, not {compact}")
            if orig in known and not 0 <= compact < k:
                raise ValidationError(f"known class {orig} must map into [0, {k}), not {compact}")
        object.__setattr__(self, "class_remap", remap)

    @property
    def num_known(self) -> int:
        return len(self.known_class_ids)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_total_classes": self.num_total_classes,
            "known_class_ids": list(self.known_class_ids),
            "class_remap": {str(a): b for a, b in sorted(self.class_remap.items())},
            "dataset_name": self.dataset_name,
            "run_index": self.run_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        try:
            return cls(
                seed=int(d["seed"]),
                num_total_classes=int(d["num_total_classes"]),
                known_class_ids=tuple(d["known_class_ids"]),
                class_remap={int(a): int(b) for a, b in d["class_remap"].items()},
                dataset_name=str(d.get("dataset_name", "synthetic")),
                run_index=int(d.get("run_index", 0)),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed manifest: {exc}") from None


def save_manifest(manifest: RunManifest, path) -> None:
    write_json(manifest.to_dict(), path)


def load_manifest(path) -> RunManifest:
    return RunManifest.from_dict(read_json(path))


@dataclass(frozen=True)
class MetricReport:
    method: str
    calibrated: bool
    brier: float
    ece: float
    accuracy: float
    reliability: ReliabilityTable
    temperature: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if not 0.0 <= self.ece <= 1.0 or not 0.0 <= self.accuracy <= 1.0 or self.brier < 0.0:
            raise ValidationError("metric value out of range")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "calibrated": self.calibrated,
            "brier": self.brier,
            "ece": self.ece,
            "accuracy": self.accuracy,
            "temperature": self.temperature,
            "bins": self.reliability.to_list(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        validate_report(d)
        t = d["temperature"]
        return cls(
            method=d["method"],
            calibrated=bool(d["calibrated"]),
            brier=float(d["brier"]),
            ece=float(d["ece"]),
            accuracy=float(d["accuracy"]),
            reliability=ReliabilityTable.from_list(d["bins"]),
            temperature=None if t is None else float(t),
        )


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"report does not match schema: {exc.message}") from None


def validate_aggregate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, AGGREGATE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"aggregate does not match schema: {exc.message}") from None


def save_report(report: MetricReport, path) -> None:
    write_json(report.to_dict(), path)


def load_report(path) -> MetricReport:
    return MetricReport.from_dict(read_json(path))
