"""RSAD binary files and CSV score reports.

All integers are little-endian. Strings are a ``u32`` byte length followed by
UTF-8 bytes.

Activation file::

    b"RSAD"  u16 version=1  u16 flags=0x0000
    str layer_id  u32 K  u32 d  u64 N
    N x (str sample_id, i32 class_label (-1 unknown), u8 truth, d x f32)

Detector file::

    b"RSAD"  u16 version=1  u16 flags=0x0001
    str metric  f64 alpha  u32 n_layers
    n_layers x (str layer_id, u32 K, u32 d, K x u64 support count,
                K*d x f64 prototypes, u64 master_seed, u32 M, u32 k,
                8 bytes blake2b digest of row 0 of matrix 0)

Projection matrices are stored by seed and regenerated on load; the digest
catches a seed or layout that no longer reproduces the calibrated ensemble.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rsad.detector import DetectionResult, Detector, LayerModel
from rsad.errors import (
    BadMagicError,
    IntegrityError,
    NonFiniteValueError,
    StorageError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from rsad.projection import row_checksum, sample_ensemble
from rsad.prototype import ActivationSet, PrototypeSet, Truth

MAGIC = b"RSAD"
VERSION = 1
FLAG_ACTIVATIONS = 0x0000
FLAG_DETECTOR = 0x0001

REPORT_HEADER = ("sample_id", "score", "consistency", "verdict", "truth")


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StorageError(f"invalid UTF-8 string: {exc}") from None

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size), dtype=dtype, count=count)

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise StorageError(f"{len(self.data) - self.pos} unexpected trailing bytes")


def _string(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _header(reader: _Reader, expected_flags: int) -> None:
    magic = reader.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, flags = reader.unpack("<HH")
    if version != VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {VERSION}")
    if flags != expected_flags:
        raise StorageError(f"file kind flags 0x{flags:04x}, expected 0x{expected_flags:04x}")


# ----------------------------------------------------------------- activations


def encode_activations(aset: ActivationSet) -> bytes:
    if not np.all(np.isfinite(aset.vectors)):
        raise NonFiniteValueError("activation vectors must be finite")
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<HH", VERSION, FLAG_ACTIVATIONS))
    out.write(_string(aset.layer_id))
    out.write(struct.pack("<IIQ", aset.n_classes, aset.dim, len(aset)))
    vectors = aset.vectors.astype("<f4")
    for i, sid in enumerate(aset.sample_ids):
        out.write(_string(sid))
        out.write(struct.pack("<iB", int(aset.labels[i]), int(aset.truth[i])))
        out.write(vectors[i].tobytes())
    return out.getvalue()


def decode_activations(data: bytes) -> ActivationSet:
    reader = _Reader(data)
    _header(reader, FLAG_ACTIVATIONS)
    layer_id = reader.string()
    K, d, N = reader.unpack("<IIQ")
    ids, labels, truth = [], np.empty(N, np.int32), np.empty(N, np.uint8)
    vectors = np.empty((N, d), dtype=np.float32)
    for i in range(N):
        ids.append(reader.string())
        labels[i], truth[i] = reader.unpack("<iB")
        vectors[i] = reader.array("<f4", d)
    reader.finish()
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteValueError("file contains non-finite activation values")
    if N and truth.max() > Truth.UNKNOWN:
        raise StorageError("truth flag outside {0, 1, 2}")
    return ActivationSet(layer_id, K, tuple(ids), labels, truth, vectors)


def write_activations(aset: ActivationSet, path: str | Path) -> None:
    Path(path).write_bytes(encode_activations(aset))


def read_activations(path: str | Path) -> ActivationSet:
    return decode_activations(Path(path).read_bytes())


# -------------------------------------------------------------------- detector


def encode_detector(detector: Detector) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<HH", VERSION, FLAG_DETECTOR))
    out.write(_string(detector.metric))
    out.write(struct.pack("<dI", detector.alpha, len(detector.layers)))
    for layer in detector.layers:
        protos, ens = layer.prototypes, layer.ensemble
        out.write(_string(layer.layer_id))
        out.write(struct.pack("<II", protos.K, protos.dim))
        out.write(protos.support_counts.astype("<u8").tobytes())
        out.write(protos.prototypes.astype("<f8").tobytes())
        out.write(struct.pack("<QII", ens.master_seed, ens.M, ens.k))
        out.write(row_checksum(ens[0]))
    return out.getvalue()


def decode_detector(data: bytes) -> Detector:
    reader = _Reader(data)
    _header(reader, FLAG_DETECTOR)
    metric = reader.string()
    alpha, n_layers = reader.unpack("<dI")
    layers = []
    for _ in range(n_layers):
        layer_id = reader.string()
        K, d = reader.unpack("<II")
        counts = reader.array("<u8", K).astype(np.int64)
        protos = reader.array("<f8", K * d).reshape(K, d)
        if not np.all(np.isfinite(protos)):
            raise NonFiniteValueError(f"layer {layer_id!r} has non-finite prototypes")
        seed, M, k = reader.unpack("<QII")
        digest = reader.take(8)
        ensemble = sample_ensemble(seed, layer_id, M, k, d)
        if row_checksum(ensemble[0]) != digest:
            raise IntegrityError(
                f"layer {layer_id!r}: regenerated projections do not match the stored checksum"
            )
        layers.append(LayerModel(PrototypeSet(layer_id, protos, counts), ensemble))
    reader.finish()
    if not math.isfinite(alpha):
        raise NonFiniteValueError("alpha is not finite")
    return Detector(tuple(layers), metric=metric, alpha=alpha)


def write_detector(detector: Detector, path: str | Path) -> None:
    Path(path).write_bytes(encode_detector(detector))


def read_detector(path: str | Path) -> Detector:
    return decode_detector(Path(path).read_bytes())


# --------------------------------------------------------------------- reports


@dataclass(frozen=True)
class ReportRow:
    sample_id: str
    score: float
    consistency: float | None
    verdict: int
    truth: int | None  # None when unknown


def _truth_value(flag: int) -> int | None:
    return None if flag == Truth.UNKNOWN else int(flag)


def rows_from_results(results: Sequence[DetectionResult], test: ActivationSet) -> list[ReportRow]:
    if len(results) != len(test):
        raise StorageError("results and test set differ in length")
    return [
        ReportRow(r.sample_id, r.adversarial_score, r.consistency, r.verdict, _truth_value(t))
        for r, t in zip(results, test.truth)
    ]


def rows_from_scores(
    test: ActivationSet, scores: np.ndarray, verdicts: np.ndarray
) -> list[ReportRow]:
    return [
        ReportRow(sid, float(s), None, int(v), _truth_value(t))
        for sid, s, v, t in zip(test.sample_ids, scores, verdicts, test.truth)
    ]


def format_report(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for row in rows:
        writer.writerow(
            [
                row.sample_id,
                repr(float(row.score)),
                "" if row.consistency is None else repr(float(row.consistency)),
                row.verdict,
                "" if row.truth is None else row.truth,
            ]
        )
    return buf.getvalue()


def write_report(rows: Iterable[ReportRow], path: str | Path) -> None:
    Path(path).write_text(format_report(rows))


def read_report(path: str | Path) -> list[ReportRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_HEADER:
            raise StorageError(f"report header must be {','.join(REPORT_HEADER)}")
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != len(REPORT_HEADER):
                raise StorageError(f"line {line_no}: expected {len(REPORT_HEADER)} fields")
            sid, score, cons, verdict, truth = rec
            try:
                rows.append(
                    ReportRow(
                        sid,
                        float(score),
                        float(cons) if cons else None,
                        int(verdict),
                        int(truth) if truth else None,
                    )
                )
            except ValueError as exc:
                raise StorageError(f"line {line_no}: {exc}") from None
    return rows
