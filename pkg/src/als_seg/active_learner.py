"""Interleaved query/teach selection loop.

Starts from a seeded initial labeled pool, then alternates between ranking
the unlabeled pool with a query strategy and retraining the classifier on
the accumulated labels, until the target labeled count is reached. The
classifier is pluggable; the default is a torch image classifier built
from the configured architecture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .networks import CLASSIFIER_ARCHITECTURES, build_classifier
from .pool import PoolPartition, SegmentationDataset, target_labeled_count
from .seeding import derive_seed, derived_rng
from .strategies import (
    PredictionScores,
    entropy_scores,
    margin_scores,
    random_ranking,
    select_top_q,
)

STRATEGIES = ("entropy", "margin", "random")


@dataclass
class LearnerSpec:
    """Classifier architecture and per-teach optimization settings.

    Defaults suit the from-scratch desk-scale CNN. The residual backbones
    train best with their full-scale recipe (base_lr=1e-3, momentum=0.9,
    lr step 7 epochs at factor 0.1), selectable through these fields.
    """

    architecture: str = "small_cnn"
    epochs_per_teach: int = 50
    batch_size: int = 4
    base_lr: float = 0.02
    momentum: float = 0.9
    lr_step_epochs: int = 15
    lr_step_factor: float = 0.5
    # Warm-start by default: each teach resumes from the current weights.
    reinit_each_teach: bool = False

    def __post_init__(self):
        if self.architecture not in CLASSIFIER_ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.epochs_per_teach < 1 or self.batch_size < 1:
            raise ValueError("epochs_per_teach and batch_size must be >= 1")
        if self.base_lr <= 0 or self.lr_step_factor <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class SelectionConfig:
    """Everything that determines a selection run."""

    labeled_ratio: float = 0.05
    alpha_init: float = 0.1
    beta_q: float = 0.5
    strategy: str = "entropy"
    seed: int = 0
    learner: LearnerSpec = field(default_factory=LearnerSpec)

    def __post_init__(self):
        if not (0.0 < self.labeled_ratio <= 1.0):
            raise ValueError(f"labeled_ratio must be in (0, 1], got {self.labeled_ratio}")
        if not (0.0 < self.alpha_init <= 1.0):
            raise ValueError(f"alpha_init must be in (0, 1], got {self.alpha_init}")
        if not (0.0 < self.beta_q <= 1.0):
            raise ValueError(f"beta_q must be in (0, 1], got {self.beta_q}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    queried_ids: tuple[str, ...]
    pool_accuracy: float
    pool_size_after: int


@dataclass(frozen=True)
class SelectionResult:
    labeled_ids: tuple[str, ...]
    labels: tuple[int, ...]
    iterations_run: int
    per_iteration_log: tuple[IterationRecord, ...]


class Oracle:
    """Label source: an in-memory id -> image-label lookup."""

    def __init__(self, labels: dict[str, int]):
        self._labels = dict(labels)

    @classmethod
    def from_dataset(cls, dataset: SegmentationDataset, ids=None) -> "Oracle":
        ids = dataset.ids if ids is None else tuple(ids)
        labels = {}
        for sample_id in ids:
            label = dataset.image_label(sample_id)
            if label is None:
                raise ValueError(f"oracle cannot label {sample_id!r}: no image label or mask")
            labels[sample_id] = label
        return cls(labels)

    def label(self, sample_id: str) -> int:
        try:
            return self._labels[sample_id]
        except KeyError:
            raise ValueError(f"oracle has no label for {sample_id!r}") from None

    def __call__(self, ids) -> list[int]:
        return [self.label(i) for i in ids]

    def covers(self, ids) -> bool:
        return all(i in self._labels for i in ids)


def init_sizes(config: SelectionConfig, pool_size: int) -> tuple[int, int, int]:
    """(target labeled count, initial pool size, per-query count).

    target = floor(R*N); init = ceil(alpha * target) clamped to [1, target];
    per-query = floor(beta * init) with a floor of 1 so every iteration
    makes progress.
    """
    target = target_labeled_count(config.labeled_ratio, pool_size)
    init_size = min(max(1, math.ceil(config.alpha_init * target)), target)
    per_query = max(1, math.floor(config.beta_q * init_size))
    return target, init_size, per_query


class TorchImageClassifier:
    """Torch-backed classifier with teach/predict over numpy image stacks."""

    def __init__(self, spec: LearnerSpec, in_channels: int, num_classes: int, seed: int):
        self.spec = spec
        self.in_channels = in_channels
        self.num_classes = num_classes
        self._seed = seed
        self._teach_count = 0
        self.reinitialize()

    def reinitialize(self) -> None:
        torch.manual_seed(derive_seed(self._seed, "classifier-init"))
        self.net = build_classifier(self.spec.architecture, self.in_channels, self.num_classes)

    @staticmethod
    def _to_tensor(images: np.ndarray) -> torch.Tensor:
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"expected a stack of H x W x C images, got shape {arr.shape}")
        return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()

    def fit(self, images: np.ndarray, labels, epochs: int | None = None) -> None:
        labels = list(labels)
        if len(labels) != len(images):
            raise ValueError(f"{len(images)} images but {len(labels)} labels")
        if not labels:
            raise ValueError("cannot teach on an empty labeled pool")
        if self.spec.reinit_each_teach:
            self.reinitialize()
        epochs = self.spec.epochs_per_teach if epochs is None else epochs
        x = self._to_tensor(images)
        y = torch.tensor(labels, dtype=torch.long)
        optimizer = torch.optim.SGD(
            self.net.parameters(), lr=self.spec.base_lr, momentum=self.spec.momentum
        )
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=self.spec.lr_step_epochs, gamma=self.spec.lr_step_factor
        )
        loss_fn = torch.nn.CrossEntropyLoss()
        shuffle = derived_rng(self._seed, "teach-shuffle", self._teach_count)
        self.net.train()
        n = len(labels)
        for _ in range(epochs):
            order = shuffle.permutation(n)
            for start in range(0, n, self.spec.batch_size):
                idx = torch.from_numpy(order[start : start + self.spec.batch_size].copy())
                optimizer.zero_grad()
                loss = loss_fn(self.net(x[idx]), y[idx])
                loss.backward()
                optimizer.step()
            scheduler.step()
        self._teach_count += 1

    def predict_probs(self, images: np.ndarray) -> np.ndarray:
        x = self._to_tensor(images)
        self.net.eval()
        with torch.no_grad():
            logits = self.net(x).double()
        # Stable softmax in float64 keeps row sums inside the strategy tolerance.
        logits = logits - logits.max(dim=1, keepdim=True).values
        probs = torch.softmax(logits, dim=1)
        return probs.numpy()


class DatasetPoolLearner:
    """Binds a classifier to a dataset so the loop can work with bare ids."""

    def __init__(self, classifier, dataset: SegmentationDataset):
        self.classifier = classifier
        self.dataset = dataset
        self._cache: dict[str, np.ndarray] = {}

    def _stack(self, ids) -> np.ndarray:
        arrays = []
        for sample_id in ids:
            if sample_id not in self._cache:
                self._cache[sample_id] = self.dataset.load_image(sample_id)
            arrays.append(self._cache[sample_id])
        return np.stack(arrays)

    def teach(self, ids, labels) -> None:
        self.classifier.fit(self._stack(ids), labels)

    def predict_pool(self, ids) -> PredictionScores:
        probs = self.classifier.predict_probs(self._stack(ids))
        return PredictionScores(probs, tuple(ids))


def init_pool(
    partition: PoolPartition, init_size: int, oracle: Oracle, seed: int
) -> tuple[list[str], list[int]]:
    """Seeded uniform draw of the initial labeled pool, without replacement."""
    candidates = sorted(partition.unlabeled_ids)
    if len(candidates) < init_size:
        raise ValueError(
            f"unlabeled pool has {len(candidates)} ids, cannot draw {init_size}"
        )
    rng = np.random.default_rng(seed)
    chosen = [candidates[i] for i in rng.choice(len(candidates), size=init_size, replace=False)]
    labels = oracle(chosen)
    partition.move_to_labeled(chosen)
    return chosen, labels


def _rank_pool(predictions: PredictionScores, strategy: str, random_seed: int):
    if strategy == "entropy":
        return entropy_scores(predictions)
    if strategy == "margin":
        return margin_scores(predictions)
    if strategy == "random":
        return random_ranking(predictions.sample_ids, random_seed)
    raise ValueError(f"unknown strategy {strategy!r}")


def query_step(
    learner,
    partition: PoolPartition,
    strategy: str,
    n_query: int,
    oracle: Oracle,
    random_seed: int = 0,
) -> tuple[list[str], list[int], float]:
    """Rank the unlabeled pool, pull the top ids, fetch their labels.

    Returns the queried ids, their labels, and the learner's image-label
    accuracy over the pool at inference time (for the per-iteration log).
    """
    pool_ids = sorted(partition.unlabeled_ids)
    if not pool_ids:
        raise ValueError("unlabeled pool is empty; nothing to query")
    predictions = learner.predict_pool(pool_ids)
    truth = np.asarray(oracle(pool_ids))
    predicted = predictions.probabilities.argmax(axis=1)
    pool_accuracy = float((predicted == truth).mean())
    ranking = _rank_pool(predictions, strategy, random_seed)
    take = min(n_query, len(pool_ids))
    chosen = select_top_q(ranking, take)
    labels = oracle(chosen)
    partition.move_to_labeled(chosen)
    return chosen, labels, pool_accuracy


def teach_step(learner, labeled_ids, labels) -> None:
    """Retrain the learner on the full accumulated labeled pool."""
    labeled_ids = list(labeled_ids)
    labels = list(labels)
    if not labeled_ids:
        raise ValueError("labeled pool is empty; nothing to teach")
    if len(labeled_ids) != len(labels):
        raise ValueError(
            f"{len(labeled_ids)} labeled ids but {len(labels)} labels; inputs misaligned"
        )
    learner.teach(labeled_ids, labels)


def run_active_selection(
    config: SelectionConfig,
    dataset: SegmentationDataset,
    oracle: Oracle | None = None,
    pool_ids=None,
    learner=None,
) -> SelectionResult:
    """Full selection loop; a pure function of (config, dataset, oracle)."""
    pool_ids = list(dataset.ids) if pool_ids is None else sorted(pool_ids)
    if not pool_ids:
        raise ValueError("selection pool is empty")
    if oracle is None:
        oracle = Oracle.from_dataset(dataset, pool_ids)
    if not oracle.covers(pool_ids):
        raise ValueError("oracle does not cover the selection pool")

    target, init_size, per_query = init_sizes(config, len(pool_ids))
    partition = PoolPartition.fresh(pool_ids)
    chosen, labels = init_pool(
        partition, init_size, oracle, derive_seed(config.seed, "init-pool")
    )

    if learner is None:
        sample = dataset.load_image(pool_ids[0])
        num_classes = getattr(dataset, "num_classes", None)
        if num_classes is None:
            num_classes = max(oracle(pool_ids)) + 1
        classifier = TorchImageClassifier(
            config.learner,
            in_channels=sample.shape[2],
            num_classes=num_classes,
            seed=derive_seed(config.seed, "learner"),
        )
        learner = DatasetPoolLearner(classifier, dataset)
    teach_step(learner, chosen, labels)

    labeled: list[str] = list(chosen)
    acquired: list[int] = list(labels)
    records: list[IterationRecord] = []
    iteration = 0
    while len(labeled) < target:
        iteration += 1
        remaining = target - len(labeled)
        queried, queried_labels, pool_accuracy = query_step(
            learner,
            partition,
            config.strategy,
            min(per_query, remaining),
            oracle,
            random_seed=derive_seed(config.seed, "query", iteration),
        )
        labeled.extend(queried)
        acquired.extend(queried_labels)
        teach_step(learner, labeled, acquired)
        records.append(
            IterationRecord(iteration, tuple(queried), pool_accuracy, len(partition.unlabeled_ids))
        )

    assert len(labeled) == target
    return SelectionResult(tuple(labeled), tuple(acquired), iteration, tuple(records))


def write_manifest(path, result: SelectionResult, config_hash: str, seed: int) -> None:
    """Write `<sample_id>\\t<image_label>` rows in selection order, atomically."""
    path = Path(path)
    lines = [f"# config_hash={config_hash} seed={seed}"]
    lines.extend(f"{sid}\t{label}" for sid, label in zip(result.labeled_ids, result.labels))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_manifest(path) -> tuple[list[str], list[int]]:
    ids: list[str] = []
    labels: list[int] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        sid, label = line.split("\t")
        ids.append(sid)
        labels.append(int(label))
    if len(set(ids)) != len(ids):
        raise ValueError("manifest contains duplicate sample ids")
    return ids, labels


def write_selection_log(path, records) -> None:
    """Append-only per-iteration records: iteration, queried ids, pool size."""
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            ids = ",".join(rec.queried_ids)
            fh.write(
                f"{rec.iteration}\t{ids}\t{rec.pool_accuracy:.6f}\t{rec.pool_size_after}\n"
            )
