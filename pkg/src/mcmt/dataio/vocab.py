"""Vocabulary, tokenization, and embedding-table ingestion.

Tokens are lowercased alphanumeric runs.  Content words (the ones masked
preferentially during reconstruction) are identified by exclusion against a
small closed-class stoplist instead of a learned tagger, which keeps the
pipeline dependency-free and deterministic.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD, UNK, BOS, MASK = "<pad>", "<unk>", "<bos>", "<mask>"
RESERVED = (PAD, UNK, BOS, MASK)
PAD_ID, UNK_ID, BOS_ID, MASK_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Closed-class words: determiners, prepositions, pronouns, conjunctions,
# auxiliaries.  Everything else counts as a content word.
STOPLIST = frozenset(
    """
    a an the this that these those some any each every no
    in on at by for with from to of off over under into onto through
    above below between behind before after during against about around
    i you he she it we they me him her us them my your his its our their
    mine yours hers ours theirs himself herself itself themselves myself
    and or but nor so yet if then than as because while although though
    is are was were be been being am do does did done have has had having
    will would shall should can could may might must not
    there here when where who whom whose which what how why
    """.split()
)


def word_tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def is_content_word(token: str) -> bool:
    return token not in STOPLIST


@dataclass(frozen=True)
class Vocab:
    """Dense token -> id map with four reserved leading ids."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    content_flag: tuple[bool, ...]  # per id; reserved ids are non-content

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def fingerprint(self) -> str:
        digest = hashlib.sha256("\n".join(self.id_to_token).encode("utf-8"))
        return digest.hexdigest()[:16]


def build_vocab(manifest, n_q_max: int) -> Vocab:
    """Keep the most frequent tokens up to ``n_q_max`` minus reserved slots.

    Frequency ties break lexicographically.  Deterministic given the
    manifest contents.
    """
    if n_q_max < len(RESERVED):
        raise ValueError(f"vocabulary budget {n_q_max} below reserved count {len(RESERVED)}")
    if len(manifest) == 0:
        raise ValueError("cannot build a vocabulary from an empty manifest")
    counts: Counter[str] = Counter()
    for record in manifest:
        counts.update(word_tokenize(record.query))
    budget = n_q_max - len(RESERVED)
    kept = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
    tokens = list(RESERVED) + [tok for tok, _ in kept]
    token_to_id = {tok: i for i, tok in enumerate(tokens)}
    flags = [False] * len(RESERVED) + [is_content_word(tok) for tok, _ in kept]
    return Vocab(token_to_id=token_to_id, id_to_token=tuple(tokens), content_flag=tuple(flags))


@dataclass(frozen=True)
class TokenizedQuery:
    """Fixed-length token ids with padding, content flags and embeddings."""

    ids: np.ndarray  # (n_q,) int64
    valid_len: int
    content_flags: np.ndarray  # (n_q,) bool
    embeddings: np.ndarray  # (n_q, d_w) float64

    def __post_init__(self) -> None:
        n_q = self.ids.shape[0]
        if not (0 <= self.valid_len <= n_q):
            raise ValueError(f"valid_len {self.valid_len} outside [0, {n_q}]")
        if self.content_flags.shape != (n_q,) or self.embeddings.shape[0] != n_q:
            raise ValueError("tokenized query field shapes disagree")

    @property
    def n_q(self) -> int:
        return self.ids.shape[0]


def tokenize(text: str, vocab: Vocab, n_q: int, table: np.ndarray) -> TokenizedQuery:
    """Lowercase/punctuation tokenization, truncation/padding to ``n_q``.

    Out-of-vocabulary tokens map to UNK.  Padded positions carry the PAD id
    and a zero embedding row.
    """
    tokens = word_tokenize(text)[:n_q]
    ids = np.full(n_q, PAD_ID, dtype=np.int64)
    flags = np.zeros(n_q, dtype=bool)
    for i, tok in enumerate(tokens):
        ids[i] = vocab.lookup(tok)
        flags[i] = is_content_word(tok)
    emb = table[ids].astype(np.float64)
    return TokenizedQuery(ids=ids, valid_len=len(tokens), content_flags=flags, embeddings=emb)


def _fallback_row(token: str, d_w: int, seed: int) -> np.ndarray:
    token_key = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng([seed, token_key])
    return 0.1 * rng.standard_normal(d_w)


def load_embedding_table(path: str | Path, vocab: Vocab, d_w: int, seed: int = 0) -> np.ndarray:
    """Build the (vocab_size, d_w) embedding matrix for a vocabulary.

    Tokens present in the text file get their file row; missing tokens get
    a reproducible seeded random row scaled by 0.1.  PAD is all zeros.
    """
    file_rows: dict[str, np.ndarray] = {}
    wanted = set(vocab.token_to_id)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != d_w:
                raise ValueError(
                    f"{path}: line {lineno} has {len(values)} values, expected d_w={d_w}"
                )
            if token not in wanted:
                continue
            try:
                file_rows[token] = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}: line {lineno} has a malformed float") from None
    table = np.zeros((vocab.size, d_w), dtype=np.float64)
    for token, idx in vocab.token_to_id.items():
        if token == PAD or token == MASK:
            continue  # PAD stays zero; MASK uses the reconstructor's learned row
        row = file_rows.get(token)
        table[idx] = row if row is not None else _fallback_row(token, d_w, seed)
    return table


def write_embedding_table(path: str | Path, tokens: list[str], rows: np.ndarray) -> None:
    """Write a whitespace-separated token-per-line embedding text file."""
    if len(tokens) != rows.shape[0]:
        raise ValueError("token/row count mismatch")
    with open(path, "w", encoding="utf-8") as f:
        for tok, row in zip(tokens, rows):
            f.write(tok + " " + " ".join(f"{v:.6f}" for v in row) + "\n")
