"""Synthetic planted-moment dataset generation.

Every video hides one moment whose clips carry a signature vector (plus
noise); the paired query is drawn from a token set tied to that signature,
so query identity is informative about where the moment lies.  Everything
is driven by a single seeded RNG, making runs byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import write_feature_file
from .manifest import DatasetManifest, ManifestRecord, save_manifest
from .vocab import write_embedding_table


@dataclass(frozen=True)
class SyntheticConfig:
    n_train: int = 500
    n_test: int = 100
    n_v: int = 32  # raw clip rows per feature file
    d_v: int = 16
    vocab_size: int = 50  # distinct corpus tokens (reserved ids excluded)
    d_w: int = 16
    n_signatures: int = 8
    query_len: tuple[int, int] = (4, 8)
    moment_frac: tuple[float, float] = (0.2, 0.5)  # moment length / duration
    duration: tuple[float, float] = (40.0, 80.0)
    sigma: float = 0.3

    def __post_init__(self) -> None:
        if min(self.n_train, self.n_test) < 0 or self.n_train + self.n_test < 1:
            raise ValueError("need at least one video")
        if self.n_v < 2 or self.d_v < 1 or self.d_w < 1:
            raise ValueError("n_v, d_v, d_w must be positive (n_v >= 2)")
        if self.vocab_size < self.n_signatures:
            raise ValueError("vocab_size must cover at least one token per signature")
        if not (0 < self.moment_frac[0] <= self.moment_frac[1]):
            raise ValueError("moment_frac bounds must be positive and ordered")
        if self.moment_frac[1] > 1.0:
            raise ValueError(
                f"moment fraction {self.moment_frac[1]} exceeds 1: moment longer than video"
            )
        if self.query_len[0] < 1 or self.query_len[0] > self.query_len[1]:
            raise ValueError("query_len bounds must be >= 1 and ordered")
        if self.duration[0] <= 0 or self.duration[0] > self.duration[1]:
            raise ValueError("duration bounds must be positive and ordered")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class PlantedMoment:
    start: float
    end: float
    signature_id: int


@dataclass(frozen=True)
class SyntheticDataset:
    """Paths to the generated artifacts plus in-memory ground truth."""

    root: Path
    manifest_path: Path
    feature_dir: Path
    embedding_path: Path
    manifest: DatasetManifest
    signatures: np.ndarray  # (n_signatures, d_v) float32, unit rows
    planted: dict[str, PlantedMoment] = field(repr=False, default_factory=dict)


def _token_universe(size: int) -> list[str]:
    width = max(2, len(str(size - 1)))
    return [f"w{i:0{width}d}" for i in range(size)]


def generate_synthetic_dataset(out_dir: str | Path, config: SyntheticConfig, seed: int) -> SyntheticDataset:
    """Generate manifest, feature files, and an embedding table under ``out_dir``."""
    rng = np.random.default_rng(seed)
    root = Path(out_dir)
    feature_dir = root / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)

    tokens = _token_universe(config.vocab_size)
    groups = [tokens[s :: config.n_signatures] for s in range(config.n_signatures)]

    signatures = rng.standard_normal((config.n_signatures, config.d_v))
    signatures /= np.linalg.norm(signatures, axis=1, keepdims=True)
    signatures = signatures.astype(np.float32)

    embeddings = 0.5 * rng.standard_normal((config.vocab_size, config.d_w))
    embedding_path = root / "embeddings.txt"
    write_embedding_table(embedding_path, tokens, embeddings)

    records: list[ManifestRecord] = []
    planted: dict[str, PlantedMoment] = {}
    noise_scale = config.sigma / np.sqrt(config.d_v)

    for index in range(config.n_train + config.n_test):
        split = "train" if index < config.n_train else "test"
        video_id = f"synth_{index:05d}"
        duration = float(rng.uniform(*config.duration))
        frac = float(rng.uniform(*config.moment_frac))
        m_len = frac * duration
        m_start = float(rng.uniform(0.0, duration - m_len))
        m_end = m_start + m_len
        sig_id = int(rng.integers(config.n_signatures))

        clip_times = (np.arange(config.n_v) + 0.5) / config.n_v * duration
        inside = (clip_times >= m_start) & (clip_times < m_end)
        feats = noise_scale * rng.standard_normal((config.n_v, config.d_v))
        feats = feats.astype(np.float32)
        feats[inside] += signatures[sig_id]
        write_feature_file(feature_dir / f"{video_id}.mcft", feats)

        q_len = int(rng.integers(config.query_len[0], config.query_len[1] + 1))
        query = " ".join(rng.choice(groups[sig_id], size=q_len, replace=True))

        planted[video_id] = PlantedMoment(start=m_start, end=m_end, signature_id=sig_id)
        records.append(
            ManifestRecord(
                video_id=video_id,
                duration=duration,
                query=query,
                split=split,
                start=m_start if split == "test" else None,
                end=m_end if split == "test" else None,
            )
        )

    manifest_path = root / "manifest.jsonl"
    save_manifest(manifest_path, records)
    return SyntheticDataset(
        root=root,
        manifest_path=manifest_path,
        feature_dir=feature_dir,
        embedding_path=embedding_path,
        manifest=DatasetManifest(records=tuple(records)),
        signatures=signatures,
        planted=planted,
    )
