"""Clip-feature file IO and constant-interval clip sampling.

Feature files are one binary file per video: magic ``MCFT``, two u32 fields
(rows, cols), then row-major little-endian float32 data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"MCFT"
FEATURE_SUFFIX = ".mcft"


@dataclass(frozen=True)
class ClipFeatureSequence:
    """Exactly ``n_v`` sampled clip feature rows plus the video duration."""

    features: np.ndarray  # (n_v, d_v) float32
    duration: float
    video_id: str

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if not np.isfinite(self.features).all():
            raise ValueError(f"non-finite clip features for video {self.video_id!r}")
        if self.duration <= 0.0:
            raise ValueError(f"duration must be positive, got {self.duration}")

    @property
    def n_clips(self) -> int:
        return self.features.shape[0]


def write_feature_file(path: str | Path, matrix: np.ndarray) -> None:
    """Write a (rows, cols) float matrix in the MCFT container format."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    rows, cols = matrix.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", rows, cols))
        f.write(matrix.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    """Read an MCFT container back into a (rows, cols) float32 matrix."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not an MCFT feature file")
    rows, cols = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: truncated feature file ({len(data)} bytes, expected {expected})")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, cols).copy()


def feature_path(feature_dir: str | Path, video_id: str) -> Path:
    return Path(feature_dir) / f"{video_id}{FEATURE_SUFFIX}"


def load_clip_features(feature_dir: str | Path, video_id: str, d_v: int) -> np.ndarray:
    """Load the raw (unsampled) feature matrix for one video.

    Raises if the file is missing, the row width disagrees with ``d_v``,
    or any entry is non-finite.
    """
    path = feature_path(feature_dir, video_id)
    if not path.is_file():
        raise FileNotFoundError(f"no feature file for video {video_id!r}: {path}")
    matrix = read_feature_file(path)
    if matrix.shape[0] < 1:
        raise ValueError(f"{path}: empty feature matrix")
    if matrix.shape[1] != d_v:
        raise ValueError(
            f"{path}: feature width {matrix.shape[1]} does not match configured d_v={d_v}"
        )
    finite_rows = np.isfinite(matrix).all(axis=1)
    if not finite_rows.all():
        bad = int(np.flatnonzero(~finite_rows)[0])
        raise ValueError(f"{path}: non-finite entry in row {bad}")
    return matrix


def sample_clips(raw: np.ndarray, n_v: int, duration: float, video_id: str) -> ClipFeatureSequence:
    """Sample exactly ``n_v`` rows at a constant interval.

    Output row j is raw row floor(j * L / n_v); when the video has fewer
    than ``n_v`` raw clips the same formula repeats rows.
    """
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ValueError("raw feature matrix must have at least one row")
    if n_v < 1:
        raise ValueError(f"n_v must be >= 1, got {n_v}")
    length = raw.shape[0]
    idx = (np.arange(n_v) * length) // n_v
    return ClipFeatureSequence(features=raw[idx], duration=duration, video_id=video_id)
