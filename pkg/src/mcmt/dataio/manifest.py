"""Dataset manifests: line-delimited JSON, one record per line.

Record schema: ``{video_id, duration, query, split, start?, end?}``.
Ground-truth boundaries are carried only by evaluation-split records;
training is weakly supervised and sees video/query pairs only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestRecord:
    video_id: str
    duration: float
    query: str
    split: str  # "train" or "test"
    start: float | None = None
    end: float | None = None

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ValueError(f"record {self.video_id!r}: duration must be positive")
        if (self.start is None) != (self.end is None):
            raise ValueError(f"record {self.video_id!r}: start/end must be given together")
        if self.start is not None and self.end is not None:
            if not (0.0 <= self.start <= self.end <= self.duration):
                raise ValueError(
                    f"record {self.video_id!r}: ground truth ({self.start}, {self.end}) "
                    f"violates 0 <= start <= end <= duration={self.duration}"
                )

    @property
    def has_ground_truth(self) -> bool:
        return self.start is not None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    @property
    def train_records(self) -> list[ManifestRecord]:
        return self.split("train")

    @property
    def eval_records(self) -> list[ManifestRecord]:
        return [r for r in self.records if r.split != "train" and r.has_ground_truth]


def _record_from_json(obj: dict, lineno: int) -> ManifestRecord:
    try:
        return ManifestRecord(
            video_id=str(obj["video_id"]),
            duration=float(obj["duration"]),
            query=str(obj["query"]),
            split=str(obj.get("split", "train")),
            start=None if obj.get("start") is None else float(obj["start"]),
            end=None if obj.get("end") is None else float(obj["end"]),
        )
    except KeyError as exc:
        raise ValueError(f"manifest line {lineno}: missing field {exc}") from None
    except ValueError as exc:
        raise ValueError(f"manifest line {lineno}: {exc}") from None


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a JSONL manifest; errors carry the line number."""
    path = Path(path)
    records: list[ManifestRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"manifest line {lineno}: invalid JSON ({exc.msg})") from None
            records.append(_record_from_json(obj, lineno))
    if not records:
        logger.warning("manifest %s is empty", path)
    return DatasetManifest(records=tuple(records))


def save_manifest(path: str | Path, records: list[ManifestRecord] | tuple[ManifestRecord, ...]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            obj: dict = {
                "video_id": r.video_id,
                "duration": r.duration,
                "query": r.query,
                "split": r.split,
            }
            if r.start is not None:
                obj["start"] = r.start
                obj["end"] = r.end
            f.write(json.dumps(obj) + "\n")
