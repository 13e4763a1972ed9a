"""Pool-based query strategies.

Model-agnostic: each strategy consumes a matrix of per-sample class
probabilities and emits a ranking of sample ids, most informative first.
Ties break by ascending sample id so rankings (and the manifests built
from them) are byte-stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class PredictionScores:
    """Per-sample class probabilities, one row per pool sample."""

    probabilities: np.ndarray  # n_samples x n_classes
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise ValueError(f"probabilities must be a non-empty 2-D matrix, got {probs.shape}")
        if not np.isfinite(probs).all():
            raise ValueError("probabilities contain NaN or infinity")
        if (probs < 0.0).any() or (probs > 1.0).any():
            raise ValueError("probabilities must lie in [0, 1]")
        sums = probs.sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            # Deliberately not renormalized: a bad row means a learner bug.
            idx = int(np.argmax(bad))
            raise ValueError(
                f"row {idx} sums to {sums[idx]:.9f}, outside 1 +/- {ROW_SUM_TOL}"
            )
        ids = tuple(self.sample_ids)
        if len(ids) != probs.shape[0]:
            raise ValueError(
                f"{len(ids)} sample ids for {probs.shape[0]} probability rows"
            )
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_classes(self) -> int:
        return self.probabilities.shape[1]


@dataclass(frozen=True)
class UncertaintyRanking:
    """Sample ids ordered by (uncertainty score desc, id asc)."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        entries = tuple((str(i), float(s)) for i, s in self.entries)
        for (id_a, s_a), (id_b, s_b) in zip(entries, entries[1:]):
            if s_a < s_b or (s_a == s_b and id_a >= id_b):
                raise ValueError("ranking entries not strictly (score desc, id asc) ordered")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(entry[0] for entry in self.entries)


def _rank(ids, scores: np.ndarray) -> UncertaintyRanking:
    order = sorted(zip(ids, scores.tolist()), key=lambda e: (-e[1], e[0]))
    return UncertaintyRanking(tuple(order))


def entropy_scores(predictions: PredictionScores) -> UncertaintyRanking:
    """Rank by Shannon entropy of each row (natural log, 0*ln 0 := 0)."""
    probs = predictions.probabilities
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    entropy = -terms.sum(axis=1)
    return _rank(predictions.sample_ids, entropy)


def margin_scores(predictions: PredictionScores) -> UncertaintyRanking:
    """Rank by negated top-two margin: smaller margins are more uncertain."""
    probs = predictions.probabilities
    if predictions.n_classes < 2:
        raise ValueError("margin strategy needs at least 2 classes")
    top2 = np.partition(probs, -2, axis=1)[:, -2:]
    margin = top2[:, 1] - top2[:, 0]  # p_(1) - p_(2) >= 0
    return _rank(predictions.sample_ids, -margin)


def random_ranking(ids, seed: int) -> UncertaintyRanking:
    """Uniform random permutation of ids, deterministic per seed.

    Scores are descending rank positions so the ranking satisfies the same
    ordering invariant as the model-based strategies.
    """
    ids = sorted(ids)
    if not ids:
        raise ValueError("cannot rank an empty id collection")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n = len(ids)
    entries = tuple((ids[j], float(n - 1 - pos)) for pos, j in enumerate(order))
    return UncertaintyRanking(entries)


def select_top_q(ranking: UncertaintyRanking, q: int) -> list[str]:
    """First q ids of the ranking; callers clamp q before calling."""
    if not (1 <= q <= len(ranking)):
        raise ValueError(f"q must be in [1, {len(ranking)}], got {q}")
    return list(ranking.ids[:q])
