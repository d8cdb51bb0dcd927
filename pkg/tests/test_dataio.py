import json
import logging

import numpy as np
import pytest

from mcmt.dataio.features import (
    load_clip_features,
    read_feature_file,
    sample_clips,
    write_feature_file,
)
from mcmt.dataio.manifest import ManifestRecord, load_manifest, save_manifest
from mcmt.dataio.synthetic import SyntheticConfig, generate_synthetic_dataset
from mcmt.dataio.vocab import (
    MASK_ID,
    PAD_ID,
    UNK_ID,
    build_vocab,
    load_embedding_table,
    tokenize,
    word_tokenize,
)


class FakeRecord:
    def __init__(self, query):
        self.query = query


class TestFeatureFiles:
    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        matrix = rng.standard_normal((57, 512)).astype(np.float32)
        path = tmp_path / "vid.mcft"
        write_feature_file(path, matrix)
        loaded = load_clip_features(tmp_path, "vid", 512)
        np.testing.assert_array_equal(loaded, matrix)

    def test_width_mismatch(self, tmp_path):
        write_feature_file(tmp_path / "v.mcft", np.zeros((5, 300), dtype=np.float32))
        with pytest.raises(ValueError, match="d_v=512"):
            load_clip_features(tmp_path, "v", 512)

    def test_non_finite_names_row(self, tmp_path):
        matrix = np.zeros((4, 3), dtype=np.float32)
        matrix[2, 1] = np.nan
        write_feature_file(tmp_path / "v.mcft", matrix)
        with pytest.raises(ValueError, match="row 2"):
            load_clip_features(tmp_path, "v", 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope"):
            load_clip_features(tmp_path, "nope", 4)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "v.mcft").write_bytes(b"JUNK" + b"\x00" * 16)
        with pytest.raises(ValueError, match="MCFT"):
            read_feature_file(tmp_path / "v.mcft")

    def test_truncated(self, tmp_path):
        path = tmp_path / "v.mcft"
        write_feature_file(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_feature_file(path)


class TestSampleClips:
    def test_identity_when_lengths_match(self):
        raw = np.arange(24, dtype=np.float32).reshape(6, 4)
        out = sample_clips(raw, 6, duration=10.0, video_id="v")
        np.testing.assert_array_equal(out.features, raw)

    def test_every_second_row(self):
        raw = np.arange(12, dtype=np.float32).reshape(12, 1)
        out = sample_clips(raw, 6, duration=10.0, video_id="v")
        np.testing.assert_array_equal(out.features[:, 0], raw[::2, 0])

    def test_repeat_sampling_short_video(self):
        # floor(j * 3 / 6) for j = 0..5 -> rows [0, 0, 1, 1, 2, 2]
        raw = np.array([[10.0], [20.0], [30.0]], dtype=np.float32)
        out = sample_clips(raw, 6, duration=10.0, video_id="v")
        expected_idx = [(j * 3) // 6 for j in range(6)]
        assert expected_idx == [0, 0, 1, 1, 2, 2]
        np.testing.assert_array_equal(out.features[:, 0], raw[expected_idx, 0])

    def test_idempotent_on_sampled_output(self):
        rng = np.random.default_rng(3)
        raw = rng.standard_normal((13, 4)).astype(np.float32)
        once = sample_clips(raw, 8, duration=5.0, video_id="v")
        twice = sample_clips(once.features, 8, duration=5.0, video_id="v")
        np.testing.assert_array_equal(once.features, twice.features)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            sample_clips(np.zeros((0, 4), dtype=np.float32), 4, 1.0, "v")


class TestManifest:
    def test_mixed_splits(self, tmp_path):
        path = tmp_path / "m.jsonl"
        lines = [
            {"video_id": "a", "duration": 10.0, "query": "x", "split": "train"},
            {"video_id": "b", "duration": 10.0, "query": "y", "split": "test",
             "start": 1.0, "end": 4.0},
            {"video_id": "c", "duration": 10.0, "query": "z", "split": "test",
             "start": 0.0, "end": 10.0},
        ]
        path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
        manifest = load_manifest(path)
        assert len(manifest) == 3
        assert len(manifest.train_records) == 1
        assert len(manifest.eval_records) == 2

    def test_reversed_ground_truth_names_record(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps({"video_id": "bad", "duration": 10.0,
                                    "query": "q", "split": "test",
                                    "start": 8.0, "end": 2.0}) + "\n")
        with pytest.raises(ValueError, match="bad"):
            load_manifest(path)

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        with caplog.at_level(logging.WARNING):
            manifest = load_manifest(path)
        assert len(manifest) == 0
        assert any("empty" in r.message for r in caplog.records)

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            json.dumps({"video_id": "a", "duration": 1.0, "query": "q",
                        "split": "train"}) + "\n{broken\n"
        )
        with pytest.raises(ValueError, match="line 2"):
            load_manifest(path)

    def test_round_trip(self, tmp_path):
        records = [
            ManifestRecord(video_id="a", duration=10.0, query="hello world", split="train"),
            ManifestRecord(video_id="b", duration=20.0, query="bye", split="test",
                           start=2.0, end=18.0),
        ]
        path = tmp_path / "m.jsonl"
        save_manifest(path, records)
        loaded = load_manifest(path)
        assert list(loaded.records) == records


class TestVocab:
    def test_small_corpus_keeps_everything(self):
        records = [FakeRecord("red green blue " * 2), FakeRecord("one two three four five six seven")]
        vocab = build_vocab(records, 50)
        assert vocab.size == 10 + 4  # 10 distinct tokens + reserved

    def test_frequency_tie_breaks_lexicographically(self):
        records = [FakeRecord("zebra apple zebra apple mango")]
        vocab = build_vocab(records, 4 + 2)  # room for two tokens
        kept = vocab.id_to_token[4:]
        assert kept == ("apple", "zebra")

    def test_budget_below_reserved(self):
        with pytest.raises(ValueError, match="reserved"):
            build_vocab([FakeRecord("a b")], 3)

    def test_reserved_ids_distinct_and_dense(self):
        vocab = build_vocab([FakeRecord("cat dog")], 10)
        ids = sorted(vocab.token_to_id.values())
        assert ids == list(range(vocab.size))
        assert len({PAD_ID, UNK_ID, MASK_ID}) == 3


class TestTokenize:
    @pytest.fixture
    def vocab_and_table(self, tmp_path):
        vocab = build_vocab([FakeRecord("a man runs fast")], 20)
        path = tmp_path / "emb.txt"
        rows = np.arange(len(vocab) * 3, dtype=np.float64).reshape(len(vocab), 3)
        with open(path, "w") as f:
            for tok in vocab.id_to_token:
                f.write(tok + " " + " ".join(str(v) for v in rows[vocab.token_to_id[tok]]) + "\n")
        table = load_embedding_table(path, vocab, 3)
        return vocab, table

    def test_short_query_pads(self, vocab_and_table):
        vocab, table = vocab_and_table
        q = tokenize("a man runs", vocab, 5, table)
        assert q.valid_len == 3
        assert list(q.ids[3:]) == [PAD_ID, PAD_ID]
        np.testing.assert_array_equal(q.embeddings[3:], 0.0)

    def test_long_query_truncates(self, vocab_and_table):
        vocab, table = vocab_and_table
        text = " ".join(["man"] * 25)
        q = tokenize(text, vocab, 20, table)
        assert q.valid_len == 20
        assert (q.ids != PAD_ID).all()

    def test_unknown_token_maps_to_unk(self, vocab_and_table):
        vocab, table = vocab_and_table
        q = tokenize("man zzzzz", vocab, 5, table)
        assert q.ids[1] == UNK_ID

    def test_round_trip_known_tokens(self, vocab_and_table):
        vocab, table = vocab_and_table
        q = tokenize("man runs fast", vocab, 5, table)
        tokens = [vocab.id_to_token[i] for i in q.ids[: q.valid_len]]
        assert tokens == ["man", "runs", "fast"]

    def test_punctuation_and_case(self):
        assert word_tokenize("The man, runs! FAST.") == ["the", "man", "runs", "fast"]

    def test_content_flags_exclude_stoplist(self, vocab_and_table):
        vocab, table = vocab_and_table
        q = tokenize("a man runs", vocab, 5, table)
        assert list(q.content_flags[:3]) == [False, True, True]


class TestEmbeddingTable:
    def test_file_row_used_exactly(self, tmp_path):
        vocab = build_vocab([FakeRecord("cat dog")], 10)
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.5 -2.0\ndog 0.25 0.75\n")
        table = load_embedding_table(path, vocab, 2)
        np.testing.assert_array_equal(table[vocab.token_to_id["cat"]], [1.5, -2.0])

    def test_pad_row_is_zero(self, tmp_path):
        vocab = build_vocab([FakeRecord("cat")], 10)
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 1.0\n")
        table = load_embedding_table(path, vocab, 2)
        np.testing.assert_array_equal(table[PAD_ID], 0.0)

    def test_missing_token_seeded_and_scaled(self, tmp_path):
        vocab = build_vocab([FakeRecord("cat dog")], 10)
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 1.0\n")
        t1 = load_embedding_table(path, vocab, 2, seed=5)
        t2 = load_embedding_table(path, vocab, 2, seed=5)
        t3 = load_embedding_table(path, vocab, 2, seed=6)
        dog = vocab.token_to_id["dog"]
        np.testing.assert_array_equal(t1[dog], t2[dog])
        assert not np.array_equal(t1[dog], t3[dog])
        assert np.abs(t1[dog]).max() < 1.0  # 0.1-scaled random rows stay small

    def test_dimension_mismatch(self, tmp_path):
        vocab = build_vocab([FakeRecord("cat")], 10)
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 2.0 3.0\n")
        with pytest.raises(ValueError, match="d_w=2"):
            load_embedding_table(path, vocab, 2)

    def test_malformed_float(self, tmp_path):
        vocab = build_vocab([FakeRecord("cat")], 10)
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 oops\n")
        with pytest.raises(ValueError, match="malformed"):
            load_embedding_table(path, vocab, 2)


class TestSyntheticGenerator:
    def test_deterministic_bytes(self, tmp_path):
        config = SyntheticConfig(n_train=6, n_test=2)
        a = generate_synthetic_dataset(tmp_path / "a", config, seed=3)
        b = generate_synthetic_dataset(tmp_path / "b", config, seed=3)
        assert a.manifest_path.read_bytes() == b.manifest_path.read_bytes()
        assert a.embedding_path.read_bytes() == b.embedding_path.read_bytes()
        for rec in a.manifest:
            fa = (a.feature_dir / f"{rec.video_id}.mcft").read_bytes()
            fb = (b.feature_dir / f"{rec.video_id}.mcft").read_bytes()
            assert fa == fb

    def test_sigma_zero_plants_exact_signature(self, tmp_path):
        config = SyntheticConfig(n_train=4, n_test=0, sigma=0.0)
        ds = generate_synthetic_dataset(tmp_path, config, seed=1)
        for rec in ds.manifest:
            raw = load_clip_features(ds.feature_dir, rec.video_id, config.d_v)
            planted = ds.planted[rec.video_id]
            times = (np.arange(config.n_v) + 0.5) / config.n_v * rec.duration
            inside = (times >= planted.start) & (times < planted.end)
            assert inside.any()
            sig = ds.signatures[planted.signature_id]
            np.testing.assert_array_equal(raw[inside], np.tile(sig, (inside.sum(), 1)))
            # mean over moment clips equals the signature exactly (f64 accumulation)
            np.testing.assert_array_equal(
                raw[inside].astype(np.float64).mean(axis=0), sig.astype(np.float64)
            )

    def test_record_count(self, tmp_path):
        config = SyntheticConfig(n_train=400, n_test=100)
        ds = generate_synthetic_dataset(tmp_path, config, seed=2)
        assert len(ds.manifest) == 500
        assert len(ds.manifest.train_records) == 400
        assert len(ds.manifest.eval_records) == 100

    def test_moment_clips_track_signature_under_noise(self, tmp_path):
        config = SyntheticConfig(n_train=10, n_test=0, sigma=0.3)
        ds = generate_synthetic_dataset(tmp_path, config, seed=4)
        for rec in ds.manifest:
            raw = load_clip_features(ds.feature_dir, rec.video_id, config.d_v)
            planted = ds.planted[rec.video_id]
            times = (np.arange(config.n_v) + 0.5) / config.n_v * rec.duration
            inside = (times >= planted.start) & (times < planted.end)
            sig = ds.signatures[planted.signature_id]

            def cos(v):
                return float(v @ sig / (np.linalg.norm(v) * np.linalg.norm(sig) + 1e-12))

            assert cos(raw[inside].mean(axis=0)) > cos(raw[~inside].mean(axis=0))

    def test_infeasible_moment_fraction(self):
        with pytest.raises(ValueError, match="longer than"):
            SyntheticConfig(moment_frac=(0.5, 1.2))

    def test_ground_truth_only_on_test_split(self, tmp_path):
        ds = generate_synthetic_dataset(tmp_path, SyntheticConfig(n_train=3, n_test=3), seed=0)
        for rec in ds.manifest.train_records:
            assert not rec.has_ground_truth
        for rec in ds.manifest.split("test"):
            assert rec.has_ground_truth
