"""Alternating two-phase training.

Each batch runs two optimizer steps in a fixed order: first the
reconstructor descends the reconstruction loss with the mask generator
frozen, then the generator descends the contrastive loss with the
reconstructor frozen.  Gradients reach the generator only through the
Gaussian masks, which is the whole point of the construction.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import CHECKPOINT_SUFFIX, config_fingerprint, load_checkpoint, save_checkpoint
from .dataio.features import load_clip_features, sample_clips
from .dataio.manifest import ManifestRecord
from .dataio.vocab import TokenizedQuery, Vocab, build_vocab, load_embedding_table, tokenize
from .intervals import Moment
from .mask_generator import FUSION_MODES, MaskGenerator, mine_negatives
from .objectives import LossBundle, ivc_forward, ivc_inverse, ivc_total, sequence_ce
from .reconstructor import Direction, Reconstructor, mask_query, reverse_query

logger = logging.getLogger(__name__)

STRATEGIES = ("vote", "attn")


@dataclass
class TrainConfig:
    """Hyperparameters and ablation toggles for one training run."""

    learning_rate: float = 4e-4
    batch_size: int = 32
    n_v: int = 32
    n_q: int = 10
    d_v: int = 16
    d_w: int = 16
    n_vocab: int = 64
    d_h: int = 32
    beta1: float = 0.1
    beta2: float = 0.15
    beta3: float = 0.1
    beta4: float = 0.15
    alpha: float = 5.0
    width_cap: float = 1.0
    k: int = 3
    fusion_mode: str = "attention"
    mt_enabled: bool = True
    mc_enabled: bool = True
    epochs: int = 10
    seed: int = 0
    inference_strategy: str = "vote"
    vote_threshold: float | None = None  # None = continuous IoU-sum voting
    n_layers: int = 3
    n_heads: int = 4
    grad_clip: float = 5.0

    def __post_init__(self) -> None:
        if not self.mc_enabled and self.k != 1:
            logger.info("mc_enabled=False forces k=1 (was %d)", self.k)
            self.k = 1
        positives = {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "n_v": self.n_v, "n_q": self.n_q, "d_v": self.d_v, "d_w": self.d_w,
            "n_vocab": self.n_vocab, "d_h": self.d_h, "alpha": self.alpha,
            "k": self.k, "n_layers": self.n_layers, "n_heads": self.n_heads,
            "grad_clip": self.grad_clip,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"config field {name} must be positive, got {value}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0.0 < self.width_cap <= 1.0):
            raise ValueError(f"width_cap must lie in (0, 1], got {self.width_cap}")
        if not (self.beta1 < self.beta2) or not (self.beta3 < self.beta4):
            raise ValueError("margins must satisfy beta1 < beta2 and beta3 < beta4")
        if min(self.beta1, self.beta3) < 0:
            raise ValueError("margins must be non-negative")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.inference_strategy not in STRATEGIES:
            raise ValueError(f"inference_strategy must be one of {STRATEGIES}")
        if self.d_h % self.n_heads != 0:
            raise ValueError("n_heads must divide d_h")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())


PROFILES: dict[str, dict] = {
    "charades": dict(
        learning_rate=4e-4, batch_size=128, n_v=200, n_q=20, d_v=1024, d_w=300,
        n_vocab=1111, d_h=256, beta1=0.1, beta2=0.15, beta3=0.1, beta4=0.15,
        alpha=5.5, width_cap=0.45, fusion_mode="concat", k=10,
    ),
    "activitynet": dict(
        learning_rate=4e-4, batch_size=64, n_v=200, n_q=20, d_v=512, d_w=300,
        n_vocab=8000, d_h=256, beta1=0.1, beta2=0.15, beta3=0.1, beta4=0.15,
        alpha=5.0, width_cap=1.0, fusion_mode="attention", k=7,
    ),
    "synthetic": dict(
        learning_rate=4e-4, batch_size=32, n_v=32, n_q=10, d_v=16, d_w=16,
        n_vocab=64, d_h=32, beta1=0.1, beta2=0.15, beta3=0.1, beta4=0.15,
        alpha=5.0, width_cap=0.45, fusion_mode="attention", k=3, epochs=30, seed=7,
    ),
}


def profile_config(name: str, **overrides) -> TrainConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; available: {sorted(PROFILES)}")
    return TrainConfig(**{**PROFILES[name], **overrides})


def load_config(path: str | Path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        return TrainConfig.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Example:
    index: int
    video_id: str
    duration: float
    features: np.ndarray  # (n_v, d_v) float32
    query_text: str
    query: TokenizedQuery
    gt: Moment | None


def build_examples(records: Sequence[ManifestRecord], feature_dir: str | Path,
                   vocab: Vocab, table: np.ndarray, config: TrainConfig) -> list[Example]:
    """Load, sample, and tokenize; all dimension problems surface here."""
    examples = []
    for index, record in enumerate(records):
        raw = load_clip_features(feature_dir, record.video_id, config.d_v)
        seq = sample_clips(raw, config.n_v, record.duration, record.video_id)
        query = tokenize(record.query, vocab, config.n_q, table)
        if query.valid_len == 0:
            raise ValueError(f"record {record.video_id!r} has an empty query")
        gt = None
        if record.has_ground_truth:
            gt = Moment(record.start, record.end)
        examples.append(Example(
            index=index, video_id=record.video_id, duration=record.duration,
            features=seq.features, query_text=record.query, query=query, gt=gt,
        ))
    return examples


@dataclass
class PreparedData:
    vocab: Vocab
    table: np.ndarray
    train_examples: list[Example]
    eval_examples: list[Example]


def prepare_data(data_dir: str | Path, config: TrainConfig) -> PreparedData:
    """Load the canonical data-dir layout: manifest.jsonl, features/, embeddings.txt."""
    from .dataio.manifest import load_manifest

    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir / "manifest.jsonl")
    train_records = manifest.train_records
    if not train_records:
        raise ValueError(f"{data_dir}: manifest has no training records")
    vocab = build_vocab(train_records, config.n_vocab)
    table = load_embedding_table(data_dir / "embeddings.txt", vocab, config.d_w,
                                 seed=config.seed)
    feature_dir = data_dir / "features"
    return PreparedData(
        vocab=vocab,
        table=table,
        train_examples=build_examples(train_records, feature_dir, vocab, table, config),
        eval_examples=build_examples(manifest.eval_records, feature_dir, vocab, table, config),
    )


@dataclass
class Batch:
    video: torch.Tensor  # (B, n_v, d_v)
    pad: torch.Tensor  # (B, n_q) bool, True at PAD
    valid: torch.Tensor  # (B, n_q) bool, True at real tokens
    emb_f: torch.Tensor  # (B, n_q, d_w) forward-query rows
    flags_f: torch.Tensor  # (B, n_q) bool, True where masked out
    target_f: torch.Tensor  # (B, n_q) int64
    emb_i: torch.Tensor | None
    flags_i: torch.Tensor | None
    target_i: torch.Tensor | None

    @property
    def size(self) -> int:
        return self.video.shape[0]


def make_batch(examples: Sequence[Example], config: TrainConfig, epoch: int) -> Batch:
    """Collate a batch, sampling fresh masked queries per example.

    Masking RNG streams are keyed by (seed, epoch, example index, stream),
    so runs are reproducible and the two directions mask independently.
    """
    videos, embs_f, flags_f, targets_f = [], [], [], []
    embs_i, flags_i, targets_i = [], [], []
    pads, valids = [], []
    for ex in examples:
        rng_f = np.random.default_rng([config.seed, epoch, ex.index, 0])
        mq_f = mask_query(ex.query, rng_f)
        videos.append(torch.from_numpy(ex.features.astype(np.float64)))
        embs_f.append(torch.from_numpy(mq_f.embeddings))
        flags_f.append(torch.from_numpy(mq_f.mask_flags))
        targets_f.append(torch.from_numpy(mq_f.target_ids))
        arange = np.arange(config.n_q)
        pads.append(torch.from_numpy(arange >= ex.query.valid_len))
        valids.append(torch.from_numpy(arange < ex.query.valid_len))
        if config.mt_enabled:
            rng_i = np.random.default_rng([config.seed, epoch, ex.index, 1])
            mq_i = mask_query(reverse_query(ex.query), rng_i, Direction.INVERSE)
            embs_i.append(torch.from_numpy(mq_i.embeddings))
            flags_i.append(torch.from_numpy(mq_i.mask_flags))
            targets_i.append(torch.from_numpy(mq_i.target_ids))
    mt = config.mt_enabled
    return Batch(
        video=torch.stack(videos),
        pad=torch.stack(pads),
        valid=torch.stack(valids),
        emb_f=torch.stack(embs_f),
        flags_f=torch.stack(flags_f),
        target_f=torch.stack(targets_f),
        emb_i=torch.stack(embs_i) if mt else None,
        flags_i=torch.stack(flags_i) if mt else None,
        target_i=torch.stack(targets_i) if mt else None,
    )


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


def build_models(config: TrainConfig) -> tuple[MaskGenerator, Reconstructor]:
    """Seeded construction of the generator/reconstructor pair (float64)."""
    torch.manual_seed(config.seed)
    generator = MaskGenerator(
        d_v=config.d_v, d_w=config.d_w, d_h=config.d_h, n_v=config.n_v,
        n_q=config.n_q, k=config.k, alpha=config.alpha, mode=config.fusion_mode,
        width_cap=config.width_cap, n_layers=config.n_layers, n_heads=config.n_heads,
    )
    reconstructor = Reconstructor(
        d_v=config.d_v, d_w=config.d_w, d=config.d_h, n_v=config.n_v,
        n_q=config.n_q, n_vocab=config.n_vocab, n_layers=config.n_layers,
        n_heads=config.n_heads,
    )
    return generator, reconstructor


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _ce_terms(reconstructor: Reconstructor, video: torch.Tensor,
              masks: dict[str, torch.Tensor],
              streams: dict[str, tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
              valid: torch.Tensor) -> dict[str, dict[str, torch.Tensor]]:
    """Per-example CE for every (stream, clip-mask) pair in one stacked pass.

    ``streams`` maps a direction name to (embeddings, mask flags, targets).
    Returns {stream: {mask_name: (B,) tensor}}.
    """
    mask_names = list(masks)
    stream_names = list(streams)
    b = video.shape[0]
    segments = len(stream_names) * len(mask_names)
    video_rep = video.repeat(segments, 1, 1)
    clip_w = torch.cat([masks[m] for _ in stream_names for m in mask_names], dim=0)
    emb = torch.cat([streams[s][0].repeat(len(mask_names), 1, 1) for s in stream_names], dim=0)
    flags = torch.cat([streams[s][1].repeat(len(mask_names), 1) for s in stream_names], dim=0)
    targets = torch.cat([streams[s][2].repeat(len(mask_names), 1) for s in stream_names], dim=0)
    valid_rep = valid.repeat(segments, 1)
    memory = reconstructor.masked_encode(video_rep, clip_w)
    hidden = reconstructor.masked_decode(emb, flags, memory, clip_w)
    dist = reconstructor.word_distribution(hidden)
    ce = sequence_ce(dist, targets, valid_rep)  # (segments * B,)
    out: dict[str, dict[str, torch.Tensor]] = {}
    for si, s in enumerate(stream_names):
        out[s] = {}
        for mi, m in enumerate(mask_names):
            lo = (si * len(mask_names) + mi) * b
            out[s][m] = ce[lo : lo + b]
    return out


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise RuntimeError(f"non-finite loss term {name}; aborting the step")
    return value


def reconstructor_phase(generator: MaskGenerator, reconstructor: Reconstructor,
                        opt_r: torch.optim.Optimizer, batch: Batch,
                        config: TrainConfig) -> float:
    """Phase A: fit the reconstructor with the mask generator frozen.

    The retained CE terms (positive and hard, both directions when the
    inverse stream is on) are averaged over the batch and summed.  Returns
    the scalar reconstruction loss that was stepped on.
    """
    mt = config.mt_enabled
    _set_requires_grad(reconstructor, True)
    with torch.no_grad():
        gen_out = generator(batch.video, batch.emb_f, batch.pad,
                            batch.emb_i if mt else None)
    triplet = mine_negatives(gen_out.positive)
    rec_masks = {"pos": triplet.positive, "hard": triplet.hard}
    streams = {"f": (batch.emb_f, batch.flags_f, batch.target_f)}
    if mt:
        streams["i"] = (batch.emb_i, batch.flags_i, batch.target_i)
    ce = _ce_terms(reconstructor, batch.video, rec_masks, streams, batch.valid)
    terms = [_check_finite(f"ce_{s}_{m}", ce[s][m]).mean()
             for s in ce for m in rec_masks]
    loss_rec = sum(terms)
    opt_r.zero_grad()
    loss_rec.backward()
    torch.nn.utils.clip_grad_norm_(reconstructor.parameters(), config.grad_clip)
    opt_r.step()
    return float(loss_rec.detach())


def generator_phase(generator: MaskGenerator, reconstructor: Reconstructor,
                    opt_g: torch.optim.Optimizer, batch: Batch,
                    config: TrainConfig) -> LossBundle:
    """Phase B: shape the masks with the reconstructor frozen.

    Computes all six CE terms, applies the margin hinges per example, and
    steps the generator on the batch-mean contrastive loss.
    """
    mt = config.mt_enabled
    _set_requires_grad(reconstructor, False)
    gen_out = generator(batch.video, batch.emb_f, batch.pad,
                        batch.emb_i if mt else None)
    triplet = mine_negatives(gen_out.positive)
    all_masks = {"pos": triplet.positive, "easy": triplet.easy, "hard": triplet.hard}
    streams = {"f": (batch.emb_f, batch.flags_f, batch.target_f)}
    if mt:
        streams["i"] = (batch.emb_i, batch.flags_i, batch.target_i)
    ce = _ce_terms(reconstructor, batch.video, all_masks, streams, batch.valid)
    for s in ce:
        for m in all_masks:
            _check_finite(f"ce_{s}_{m}", ce[s][m])
    ivc_f_vec = ivc_forward(ce["f"]["pos"], ce["f"]["hard"], ce["f"]["easy"],
                            config.beta1, config.beta2)
    l_ivc_f = ivc_f_vec.mean()
    if mt:
        ivc_i_vec = ivc_inverse(ce["i"]["pos"], ce["i"]["hard"], ce["i"]["easy"],
                                config.beta3, config.beta4)
        l_ivc_i = ivc_i_vec.mean()
    else:
        l_ivc_i = torch.zeros((), dtype=torch.float64)
    l_ivc = ivc_total(l_ivc_f, l_ivc_i)
    opt_g.zero_grad()
    l_ivc.backward()
    torch.nn.utils.clip_grad_norm_(generator.parameters(), config.grad_clip)
    opt_g.step()
    _set_requires_grad(reconstructor, True)

    ce_f_pos = ce["f"]["pos"].detach().mean().item()
    ce_f_hard = ce["f"]["hard"].detach().mean().item()
    ce_f_easy = ce["f"]["easy"].detach().mean().item()
    ce_i_pos = ce["i"]["pos"].detach().mean().item() if mt else 0.0
    ce_i_hard = ce["i"]["hard"].detach().mean().item() if mt else 0.0
    ce_i_easy = ce["i"]["easy"].detach().mean().item() if mt else 0.0
    return LossBundle(
        ce_f_pos=ce_f_pos, ce_i_pos=ce_i_pos, ce_f_hard=ce_f_hard,
        ce_i_hard=ce_i_hard, ce_f_easy=ce_f_easy, ce_i_easy=ce_i_easy,
        l_rec=ce_f_pos + ce_i_pos + ce_f_hard + ce_i_hard,
        l_ivc_f=l_ivc_f.detach().item(), l_ivc_i=l_ivc_i.detach().item(),
        l_ivc=l_ivc.detach().item(),
        beta1=config.beta1, beta2=config.beta2,
        beta3=config.beta3, beta4=config.beta4,
    )


def train_step(generator: MaskGenerator, reconstructor: Reconstructor,
               opt_g: torch.optim.Optimizer, opt_r: torch.optim.Optimizer,
               batch: Batch, config: TrainConfig) -> LossBundle:
    """One alternating step: reconstructor update, then generator update."""
    generator.train()
    reconstructor.train()
    reconstructor_phase(generator, reconstructor, opt_r, batch, config)
    return generator_phase(generator, reconstructor, opt_g, batch, config)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochState:
    epoch: int
    generator: MaskGenerator
    reconstructor: Reconstructor
    config: TrainConfig
    history: list[dict]
    checkpoint_path: Path


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint_paths: list[Path] = field(default_factory=list)
    metrics_path: Path | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoint_paths[-1]


def _save_models(path: Path, config: TrainConfig, generator: MaskGenerator,
                 reconstructor: Reconstructor, epoch: int, vocab: Vocab | None) -> None:
    arrays = {f"generator.{k}": v.detach().cpu().numpy()
              for k, v in generator.state_dict().items()}
    arrays.update({f"reconstructor.{k}": v.detach().cpu().numpy()
                   for k, v in reconstructor.state_dict().items()})
    extra = {"epoch": epoch}
    if vocab is not None:
        extra["vocab_fingerprint"] = vocab.fingerprint()
        extra["vocab_size"] = vocab.size
    save_checkpoint(path, config.to_dict(), arrays, extra)


def load_models(checkpoint_path: str | Path,
                expected_config: TrainConfig | None = None
                ) -> tuple[TrainConfig, MaskGenerator, Reconstructor, dict]:
    """Rebuild the model pair from a checkpoint.

    When ``expected_config`` is given its fingerprint must match the
    checkpoint's; this is the guard against evaluating a checkpoint under
    a different architecture than it was trained with.
    """
    ckpt = load_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(ckpt.config)
    if expected_config is not None and expected_config.fingerprint() != ckpt.fingerprint:
        raise ValueError(
            f"checkpoint/config fingerprint mismatch: checkpoint {ckpt.fingerprint}, "
            f"expected {expected_config.fingerprint()}"
        )
    generator, reconstructor = build_models(config)
    gen_state = {k[len("generator."):]: torch.from_numpy(v)
                 for k, v in ckpt.arrays.items() if k.startswith("generator.")}
    rec_state = {k[len("reconstructor."):]: torch.from_numpy(v)
                 for k, v in ckpt.arrays.items() if k.startswith("reconstructor.")}
    generator.load_state_dict(gen_state)
    reconstructor.load_state_dict(rec_state)
    generator.eval()
    reconstructor.eval()
    return config, generator, reconstructor, ckpt.extra


def train(config: TrainConfig, data: PreparedData, out_dir: str | Path,
          callback: Callable[[EpochState], bool] | None = None) -> TrainResult:
    """Run the full training loop, checkpointing every epoch.

    ``callback`` (if given) runs after each epoch's checkpoint is written;
    returning True stops training early.
    """
    if not data.train_examples:
        raise ValueError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "effective_config.json", "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)

    generator, reconstructor = build_models(config)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate)
    opt_r = torch.optim.Adam(reconstructor.parameters(), lr=config.learning_rate)

    result = TrainResult(out_dir=out_dir)
    init_path = out_dir / f"checkpoint_init{CHECKPOINT_SUFFIX}"
    _save_models(init_path, config, generator, reconstructor, 0, data.vocab)
    result.checkpoint_paths.append(init_path)

    metrics_path = out_dir / "train_log.jsonl"
    result.metrics_path = metrics_path
    shuffle_rng = np.random.default_rng(config.seed)
    n = len(data.train_examples)
    n_batches = math.ceil(n / config.batch_size)

    with open(metrics_path, "w", encoding="utf-8") as log_file:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(n)
            sums: dict[str, float] = {}
            for b in range(n_batches):
                chosen = order[b * config.batch_size : (b + 1) * config.batch_size]
                batch = make_batch([data.train_examples[i] for i in chosen], config, epoch)
                bundle = train_step(generator, reconstructor, opt_g, opt_r, batch, config)
                for key, value in bundle.as_dict().items():
                    sums[key] = sums.get(key, 0.0) + value
            record = {"epoch": epoch}
            record.update({key: value / n_batches for key, value in sums.items()})
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
            result.history.append(record)
            logger.info("epoch %d: l_rec=%.4f l_ivc=%.4f", epoch,
                        record["l_rec"], record["l_ivc"])

            ckpt_path = out_dir / f"checkpoint_epoch{epoch:03d}{CHECKPOINT_SUFFIX}"
            _save_models(ckpt_path, config, generator, reconstructor, epoch, data.vocab)
            result.checkpoint_paths.append(ckpt_path)
            if callback is not None:
                state = EpochState(epoch=epoch, generator=generator,
                                   reconstructor=reconstructor, config=config,
                                   history=result.history, checkpoint_path=ckpt_path)
                if callback(state):
                    logger.info("early stop requested after epoch %d", epoch)
                    break
    return result
