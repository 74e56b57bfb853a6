"""Persistence: sequence files, model checkpoints, predictions, reports.

All binary layouts are little-endian and fixed, so writer/reader pairs are
bit-exact round trips and reruns with the same seed produce byte-identical
files (nothing here embeds timestamps).
"""
from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import EngineConfig, LabeledSequence, config_hash
from .lang_model import TransitionTable
from .policy import PolicyModel
from .value import RecurrentValueModel

SEQUENCE_MAGIC = b"SEGF1"
CHECKPOINT_MAGIC = b"SEGC1"
CHECKPOINT_VERSION = 1


class FileFormatError(ValueError):
    """Base class for malformed persisted data."""


class BadMagicError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class LabelRangeError(FileFormatError):
    pass


class CheckpointError(FileFormatError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class UnknownModelKindError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# Sequence files: binary ".seq" plus a CSV variant selected by extension.
# ---------------------------------------------------------------------------


def write_sequence(path: Union[str, Path], seq: LabeledSequence) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _write_sequence_csv(path, seq)
    else:
        _write_sequence_binary(path, seq)


def read_sequence(path: Union[str, Path]) -> LabeledSequence:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_sequence_csv(path)
    return _read_sequence_binary(path)


def _write_sequence_binary(path: Path, seq: LabeledSequence) -> None:
    if seq.has_labels and int(seq.labels.max()) >= 1 << 16:
        raise LabelRangeError("labels beyond the 16-bit range cannot be stored")
    group = seq.group_id.encode("utf-8")
    if len(group) >= 1 << 16:
        raise FileFormatError("group id too long")
    header = SEQUENCE_MAGIC + struct.pack(
        "<IIBH", seq.num_frames, seq.feature_dim, int(seq.has_labels), len(group)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(group)
        fh.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())
        if seq.has_labels:
            fh.write(seq.labels.astype("<u2").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"file ends inside {what}")
    return data


def _read_sequence_binary(path: Path) -> LabeledSequence:
    with open(path, "rb") as fh:
        magic = fh.read(len(SEQUENCE_MAGIC))
        if magic != SEQUENCE_MAGIC:
            raise BadMagicError(f"{path} is not a sequence file")
        header = _read_exact(fh, struct.calcsize("<IIBH"), "header")
        num_frames, feature_dim, has_labels, group_len = struct.unpack("<IIBH", header)
        if num_frames == 0 or feature_dim == 0:
            raise FileFormatError("header declares an empty sequence")
        group = _read_exact(fh, group_len, "group id").decode("utf-8")
        feats = np.frombuffer(
            _read_exact(fh, 4 * num_frames * feature_dim, "feature payload"), dtype="<f4"
        ).reshape(num_frames, feature_dim)
        labels = None
        if has_labels:
            labels = np.frombuffer(
                _read_exact(fh, 2 * num_frames, "label payload"), dtype="<u2"
            ).astype(np.int64)
        if fh.read(1):
            raise FileFormatError("trailing bytes after sequence payload")
    return LabeledSequence(features=feats, labels=labels, group_id=group)


def _write_sequence_csv(path: Path, seq: LabeledSequence) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if seq.group_id:
            fh.write(f"# group_id={seq.group_id}\n")
        columns = [f"f{i}" for i in range(seq.feature_dim)]
        if seq.has_labels:
            columns.append("label")
        fh.write(",".join(columns) + "\n")
        for t in range(seq.num_frames):
            row = [format(float(x), ".9g") for x in seq.features[t]]
            if seq.has_labels:
                row.append(str(int(seq.labels[t])))
            fh.write(",".join(row) + "\n")


def _read_sequence_csv(path: Path) -> LabeledSequence:
    group = ""
    rows = []
    header: Optional[list[str]] = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "group_id=" in line:
                    group = line.split("group_id=", 1)[1].strip()
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            rows.append(line.split(","))
    if header is None or not rows:
        raise TruncatedFileError(f"{path} has no data rows")
    has_labels = header[-1] == "label"
    feature_cols = len(header) - int(has_labels)
    if feature_cols < 1:
        raise FileFormatError("CSV header declares no feature columns")
    try:
        feats = np.array([[np.float32(v) for v in row[:feature_cols]] for row in rows])
        labels = (
            np.array([int(row[feature_cols]) for row in rows], dtype=np.int64)
            if has_labels
            else None
        )
    except (ValueError, IndexError) as exc:
        raise FileFormatError(f"malformed CSV row: {exc}") from exc
    return LabeledSequence(features=feats, labels=labels, group_id=group)


# ---------------------------------------------------------------------------
# Predictions: plain frame,label CSV.
# ---------------------------------------------------------------------------


def write_labels(path: Union[str, Path], labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("frame,label\n")
        for t, lab in enumerate(labels):
            fh.write(f"{t},{int(lab)}\n")


def read_labels(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() != ".csv":
        seq = read_sequence(path)
        if not seq.has_labels:
            raise FileFormatError(f"{path} carries no labels")
        return seq.labels
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise TruncatedFileError(f"{path} is empty")
    if lines[0] == "frame,label":
        lines = lines[1:]
        values = [int(ln.split(",")[1]) for ln in lines]
    else:
        seq = _read_sequence_csv(path)
        if not seq.has_labels:
            raise FileFormatError(f"{path} carries no labels")
        return seq.labels
    if not values:
        raise TruncatedFileError(f"{path} has no label rows")
    return np.asarray(values, dtype=np.int64)


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest + raw little-endian float64 payloads.
# ---------------------------------------------------------------------------

_MODEL_KINDS = {
    PolicyModel: "policy",
    RecurrentValueModel: "value",
    TransitionTable: "lang_model",
}


def _model_params(model) -> dict[str, np.ndarray]:
    if isinstance(model, TransitionTable):
        return {"matrix": model.matrix, "start": model.start}
    return model.params()


def _model_from_params(kind: str, params: dict[str, np.ndarray]):
    if kind == "policy":
        return PolicyModel(**params)
    if kind == "value":
        return RecurrentValueModel(**params)
    if kind == "lang_model":
        return TransitionTable(matrix=params["matrix"], start=params["start"])
    raise UnknownModelKindError(f"unknown model kind {kind!r}")


def write_checkpoint(
    path: Union[str, Path],
    model,
    seed: Optional[int] = None,
    config: Optional[EngineConfig] = None,
) -> None:
    kind = _MODEL_KINDS.get(type(model))
    if kind is None:
        raise UnknownModelKindError(f"cannot checkpoint a {type(model).__name__}")
    params = _model_params(model)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "arrays": [{"name": name, "shape": list(p.shape)} for name, p in params.items()],
        "metadata": {
            "seed": seed,
            "config_hash": config_hash(config) if config is not None else None,
        },
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for entry in manifest["arrays"]:
            fh.write(np.ascontiguousarray(params[entry["name"]], dtype="<f8").tobytes())


def read_checkpoint(
    path: Union[str, Path],
    expected_kind: Optional[str] = None,
    config: Optional[EngineConfig] = None,
):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path} is not a checkpoint file")
        (manifest_len,) = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
        manifest = json.loads(_read_exact(fh, manifest_len, "manifest").decode("utf-8"))
        version = manifest.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        kind = manifest.get("kind")
        if kind not in _MODEL_KINDS.values():
            raise UnknownModelKindError(f"unknown model kind {kind!r}")
        if expected_kind is not None and kind != expected_kind:
            raise UnknownModelKindError(f"expected a {expected_kind} checkpoint, found {kind}")
        payload = fh.read()
    declared = sum(int(np.prod(e["shape"])) for e in manifest["arrays"])
    if len(payload) != 8 * declared:
        raise ShapeMismatchError(
            f"payload holds {len(payload) // 8} values but shapes declare {declared}"
        )
    params = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape))
        params[entry["name"]] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += 8 * count
    if config is not None:
        stored = manifest.get("metadata", {}).get("config_hash")
        if stored is not None and stored != config_hash(config):
            warnings.warn(
                f"checkpoint {path} was trained under a different engine config "
                f"(hash {stored}, runtime {config_hash(config)})"
            )
    try:
        return _model_from_params(kind, params)
    except TypeError as exc:
        raise ShapeMismatchError(f"manifest arrays do not fit model kind {kind}: {exc}") from exc


# ---------------------------------------------------------------------------
# Reports: deterministic JSON plus a flat frames CSV.
# ---------------------------------------------------------------------------


def frames_csv_path(report_path: Union[str, Path]) -> Path:
    report_path = Path(report_path)
    return report_path.with_name(report_path.stem + ".frames.csv")


def write_report(path: Union[str, Path], report: dict) -> None:
    """Write the JSON report; the flat frame table goes to a sibling CSV.

    The report dict is serialized with sorted keys and no timestamps, so a
    rerun with identical inputs is byte-identical.
    """
    path = Path(path)
    frames = report.get("frames_table")
    body = dict(report)
    if frames is not None:
        body["frames_csv"] = frames_csv_path(path).name
        body.pop("frames_table")
        with open(frames_csv_path(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("sequence,frame,ground_truth,prediction,max_prob\n")
            for row in frames:
                fh.write(",".join(str(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: Union[str, Path]) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
