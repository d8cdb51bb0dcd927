import numpy as np
import pytest
import torch

from mcmt.dataio.synthetic import SyntheticConfig, generate_synthetic_dataset
from mcmt.dataio.vocab import PAD_ID, TokenizedQuery
from mcmt.training import TrainConfig

# tensors here are tiny; thread fan-out costs more than it saves
torch.set_num_threads(1)


@pytest.fixture
def tiny_config() -> TrainConfig:
    """A desk-scale config small enough for per-test model construction."""
    return TrainConfig(
        batch_size=4, n_v=8, n_q=5, d_v=6, d_w=4, n_vocab=20, d_h=16,
        k=2, epochs=2, seed=0, n_layers=2, n_heads=4,
    )


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A shared small planted-moment dataset (40 train / 10 test)."""
    root = tmp_path_factory.mktemp("synth40")
    config = SyntheticConfig(n_train=40, n_test=10)
    return generate_synthetic_dataset(root, config, seed=7)


def make_query(ids, valid_len, d_w=4, content=None, seed=0) -> TokenizedQuery:
    """Hand-build a TokenizedQuery with seeded embeddings."""
    n_q = len(ids)
    ids = np.asarray(ids, dtype=np.int64)
    flags = np.zeros(n_q, dtype=bool)
    flags[:valid_len] = True if content is None else False
    if content is not None:
        flags[: len(content)] = content
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n_q, d_w))
    emb[ids == PAD_ID] = 0.0
    return TokenizedQuery(ids=ids, valid_len=valid_len,
                          content_flags=flags, embeddings=emb)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference(fn, params: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar fn over a flat parameter tensor."""
    grads = torch.zeros_like(params)
    flat = params.detach().clone().reshape(-1)
    for i in range(flat.numel()):
        bumped = flat.clone()
        bumped[i] += h
        up = fn(bumped.reshape(params.shape))
        bumped[i] -= 2 * h
        down = fn(bumped.reshape(params.shape))
        grads.reshape(-1)[i] = (up - down) / (2 * h)
    return grads
