"""Feature files (HTK binary, CSV) and cepstral mean subtraction.

HTK layout, all big-endian: a 12-byte header (int32 frame count, int32
sample period in 100 ns units, int16 bytes per frame, int16 parameter kind)
followed by the frames as float32. Compressed, CRC-protected and VQ
variants are rejected rather than mis-read.
"""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError

HEADER = struct.Struct(">iihh")

# base parameter kinds
MFCC = 6
USER = 9
DISCRETE = 10
# qualifier bits
_O = 0o20000
_C = 0o2000
_K = 0o10000
_V = 0o40000
UNSUPPORTED = _C | _K | _V


@dataclass(eq=False)
class FeatureFile:
    frames: np.ndarray
    sample_period: int = 100000
    param_kind: int = MFCC | _O

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def _parse_header(head, path):
    if len(head) < HEADER.size:
        raise FormatError(f"{path}: truncated HTK header ({len(head)} bytes)")
    n, period, size, kind = HEADER.unpack(head[:HEADER.size])
    if kind & UNSUPPORTED or (kind & 0o77) == DISCRETE:
        raise FormatError(f"{path}: unsupported HTK parameter kind {kind:#o} (compressed/CRC/VQ)")
    if n < 1:
        raise FormatError(f"{path}: header declares {n} frames")
    if size <= 0 or size % 4:
        raise FormatError(f"{path}: sample size {size} is not a positive multiple of 4")
    return n, period, size, kind


def read_htk_header(path):
    """Return ``(n_frames, sample_period, sample_size, param_kind)`` without reading the body."""
    with open(path, "rb") as f:
        return _parse_header(f.read(HEADER.size), path)


def read_htk(path):
    data = Path(path).read_bytes()
    n, period, size, kind = _parse_header(data, path)
    body = len(data) - HEADER.size
    if body != n * size:
        raise FormatError(f"{path}: header declares {n} frames x {size} bytes = {n * size} bytes, "
                          f"but the body holds {body} bytes")
    frames = np.frombuffer(data, dtype=">f4", offset=HEADER.size).reshape(n, size // 4)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: non-finite feature values")
    return FeatureFile(frames.astype(np.float32), period, kind)


def write_htk(ff, path):
    frames = np.asarray(ff.frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise UsageError("HTK files need at least one frame")
    size = frames.shape[1] * 4
    if size > 32767:
        raise UsageError(f"{frames.shape[1]} dimensions do not fit the HTK sample-size field")
    with open(path, "wb") as f:
        f.write(HEADER.pack(frames.shape[0], int(ff.sample_period), size, int(ff.param_kind)))
        f.write(np.ascontiguousarray(frames, dtype=">f4").tobytes())


def read_csv(path):
    rows = []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} values, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise UsageError(f"{path}: no frames")
    x = np.array(rows, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite feature values")
    return x


def write_csv(frames, path):
    x = np.asarray(frames, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise UsageError("CSV feature files need at least one frame")
    with open(path, "w") as f:
        for row in x:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def is_csv(path):
    return Path(path).suffix.lower() == ".csv"


def load_features(path):
    """Read HTK or CSV (by extension) into a FeatureFile."""
    if is_csv(path):
        return FeatureFile(read_csv(path), param_kind=USER)
    return read_htk(path)


def save_features(ff, path):
    if is_csv(path):
        write_csv(ff.frames, path)
    else:
        write_htk(ff, path)


def frame_count(path):
    if is_csv(path):
        return read_csv(path).shape[0]
    return read_htk_header(path)[0]


def cms(frames):
    """Per-utterance cepstral mean subtraction."""
    x = np.asarray(frames, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise UsageError("cms needs an N x D matrix with N >= 1")
    return x - x.mean(axis=0)
