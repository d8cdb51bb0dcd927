"""Weakly-supervised video moment retrieval.

Multiple Gaussian temporal proposals are predicted from a cross-modal
transformer, aggregated into one positive clip mask, contrasted against
in-video easy/hard negatives, and trained by dual (forward + inverse)
mask-conditioned query reconstruction.  Inference ranks proposals by
attention score or by pairwise-IoU voting.
"""

from .intervals import MaskTriplet, Moment, Proposal, ProposalSet, iou, proposal_to_moment
from .objectives import LossBundle
from .training import PROFILES, TrainConfig, profile_config

__version__ = "0.1.0"

__all__ = [
    "LossBundle",
    "MaskTriplet",
    "Moment",
    "PROFILES",
    "Proposal",
    "ProposalSet",
    "TrainConfig",
    "iou",
    "profile_config",
    "proposal_to_moment",
    "__version__",
]
