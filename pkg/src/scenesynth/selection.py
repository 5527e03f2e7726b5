"""Multi-sample completion selection.

Each candidate completion gets two scores: a detail score (gradient
energy; higher = more detailed) and an entropy score (the autoregressive
model's mean predictive entropy at generated positions; lower = more
confident).  Candidates are ranked on each score and the best average rank
wins.  Both scorers sit behind plain functions so learned replacements can
be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .armodel import ArModel, forward, softmax
from .codebook import TokenGrid
from .ordering import GenerationOrder


@dataclass(frozen=True)
class ScoredSample:
    index: int
    detail_score: float
    entropy_score: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.detail_score) and np.isfinite(self.entropy_score)):
            raise ValueError("scores must be finite")


def detail_score(image: np.ndarray) -> float:
    """Mean |forward difference| over both axes and all channels.

    Sums |horizontal| and |vertical| differences and normalizes each by the
    full H*W*C pixel count, then averages the two directions.
    """
    image = np.asarray(image, np.float64)
    h, w, c = image.shape
    dh = np.abs(np.diff(image, axis=1)).sum()
    dv = np.abs(np.diff(image, axis=0)).sum()
    return float((dh + dv) / (2.0 * h * w * c))


def entropy_score(model: ArModel, completed: TokenGrid, order: GenerationOrder) -> float:
    """Mean softmax entropy of the model's logits at background ranks."""
    if not completed.known.all():
        raise ValueError("entropy_score requires a fully known grid")
    bg = order.rank >= 0
    if not bg.any():
        return 0.0
    probs = softmax(forward(model, completed, order))
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    ent = -plogp.sum(-1)
    return float(ent[bg].mean())


def competition_ranks(values: list[float], descending: bool) -> list[int]:
    """1-based ranks; ties share the minimum rank of their group."""
    arr = np.asarray(values, np.float64)
    if descending:
        return [1 + int((arr > v).sum()) for v in arr]
    return [1 + int((arr < v).sum()) for v in arr]


def rank_combine(samples: list[ScoredSample]) -> int:
    """Winner = minimum average of (detail rank desc, entropy rank asc).

    Ties on the average go to the lowest index.
    """
    if not samples:
        raise ValueError("rank_combine requires at least one sample")
    detail_ranks = competition_ranks([s.detail_score for s in samples], descending=True)
    entropy_ranks = competition_ranks([s.entropy_score for s in samples], descending=False)
    averages = [(d + e) / 2.0 for d, e in zip(detail_ranks, entropy_ranks)]
    best = min(range(len(samples)), key=lambda i: (averages[i], i))
    return samples[best].index
