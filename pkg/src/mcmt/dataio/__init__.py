"""Data plumbing: manifests, clip features, vocabulary, synthetic data."""

from .features import (
    ClipFeatureSequence,
    feature_path,
    load_clip_features,
    read_feature_file,
    sample_clips,
    write_feature_file,
)
from .manifest import DatasetManifest, ManifestRecord, load_manifest, save_manifest
from .synthetic import PlantedMoment, SyntheticConfig, SyntheticDataset, generate_synthetic_dataset
from .vocab import (
    BOS_ID,
    MASK_ID,
    PAD_ID,
    RESERVED,
    STOPLIST,
    UNK_ID,
    TokenizedQuery,
    Vocab,
    build_vocab,
    is_content_word,
    load_embedding_table,
    tokenize,
    word_tokenize,
    write_embedding_table,
)

__all__ = [
    "BOS_ID",
    "ClipFeatureSequence",
    "DatasetManifest",
    "ManifestRecord",
    "MASK_ID",
    "PAD_ID",
    "PlantedMoment",
    "RESERVED",
    "STOPLIST",
    "SyntheticConfig",
    "SyntheticDataset",
    "TokenizedQuery",
    "UNK_ID",
    "Vocab",
    "build_vocab",
    "feature_path",
    "generate_synthetic_dataset",
    "is_content_word",
    "load_clip_features",
    "load_embedding_table",
    "load_manifest",
    "read_feature_file",
    "sample_clips",
    "save_manifest",
    "tokenize",
    "word_tokenize",
    "write_embedding_table",
]
