"""
Demographic privacy attacks on egocentric clips.

This module handles every attack capability including:
- Zero-shot prototype classification over raw embeddings (capability 1)
- Trained classifier heads per attribute and view (capability 2)
- The Retrieval-Augmented Attack: retrieve exo clips, then vote (capability 3)
- Identity-level ensembling across a wearer's videos (capability 4)
- Hard and soft voting aggregators
- Sweeps over the support size M with accuracy deltas, written as CSV

Author: EgoLeak Team
Version: 1.0.0
"""

import concurrent.futures
import json
import logging
import math
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import softmax

from config import Config
from utils.checkpoint_io import load_checkpoint, save_checkpoint
from utils.constants import (
    ATTRIBUTE_CLASSES,
    PROBABILITY_SUM_TOLERANCE,
    Aggregator,
    Attribute,
    Capability,
    Pooling,
    Split,
    View,
    WeightScheme,
)
from utils.error_handling import (
    CheckpointError,
    ConfigurationError,
    MissingDataError,
    TrainingError,
    ValidationError,
)
from utils.optim import AdamW
from .dataset_service import Dataset
from .heads import ClassifierHead, accumulate, pool
from .metrics_service import MetricReport, accuracy
from .retrieval_service import RAW_EMBEDDINGS, GalleryIndex, RetrieverHeads, embed_clips, rank_gallery

logger = logging.getLogger(__name__)

ATTACK_COLUMNS = ["attribute", "capability", "view", "M", "aggregator", "weight_scheme", "accuracy", "delta", "n"]

# =============================================================================
# Predictions
# =============================================================================

@dataclass(frozen=True)
class ProbabilityPrediction:
    """A distribution over one attribute's classes for one clip."""
    clip_id: str
    attribute: Attribute
    probs: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "attribute", Attribute(self.attribute))
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != len(self.classes):
            raise ValidationError(f"{self.attribute.value} needs {len(self.classes)} probabilities, got {len(probs)}")
        if any(p < 0.0 or not math.isfinite(p) for p in probs):
            raise ValidationError(f"invalid probabilities for {self.clip_id}: {probs}")
        if abs(math.fsum(probs) - 1.0) > PROBABILITY_SUM_TOLERANCE:
            raise ValidationError(f"probabilities for {self.clip_id} sum to {math.fsum(probs)}")

    @property
    def classes(self) -> Tuple[str, ...]:
        return ATTRIBUTE_CLASSES[self.attribute]

    @property
    def index(self) -> int:
        """Hard prediction; ties go to the lowest class index."""
        return int(np.argmax(self.probs))

    @property
    def label(self) -> str:
        return self.classes[self.index]

    @classmethod
    def one_hot(cls, clip_id: str, attribute: Attribute, label: str) -> "ProbabilityPrediction":
        classes = ATTRIBUTE_CLASSES[Attribute(attribute)]
        if label not in classes:
            raise ValidationError(f"{label!r} is not a {Attribute(attribute).value} class")
        return cls(clip_id, attribute, tuple(1.0 if c == label else 0.0 for c in classes))


def _normalized(clip_id: str, attribute: Attribute, probs: np.ndarray) -> ProbabilityPrediction:
    probs = np.asarray(probs, dtype=np.float64)
    return ProbabilityPrediction(clip_id, attribute, tuple(probs / math.fsum(probs)))


# =============================================================================
# Voting
# =============================================================================

def _shared_attribute(predictions: Sequence[ProbabilityPrediction]) -> Attribute:
    if not predictions:
        raise ValidationError("cannot vote over an empty prediction list")
    attributes = {p.attribute for p in predictions}
    if len(attributes) != 1:
        raise ValidationError("predictions do not share a class set")
    return attributes.pop()


def hard_vote(predictions: Sequence[ProbabilityPrediction], ego_index: Optional[int] = 0) -> str:
    """
    Majority class of the voters' argmax labels.

    Ties go to the ego voter's class when it is among the tied classes,
    otherwise to the lowest class index. Pass ``ego_index=None`` when no
    voter is privileged.
    """
    attribute = _shared_attribute(predictions)
    classes = ATTRIBUTE_CLASSES[attribute]
    counts = np.zeros(len(classes), dtype=int)
    for prediction in predictions:
        counts[prediction.index] += 1
    tied = np.flatnonzero(counts == counts.max())
    if ego_index is not None:
        if not 0 <= ego_index < len(predictions):
            raise ValidationError(f"ego index {ego_index} outside {len(predictions)} voters")
        ego_class = predictions[ego_index].index
        if ego_class in tied:
            return classes[ego_class]
    return classes[int(tied[0])]


def weighted_distribution(predictions: Sequence[ProbabilityPrediction], weights: Sequence[float]) -> np.ndarray:
    """Per-class weighted sum of the voters' probabilities (exactly rounded, order independent)."""
    attribute = _shared_attribute(predictions)
    if len(predictions) != len(weights):
        raise ValidationError(f"{len(predictions)} predictions but {len(weights)} weights")
    weights = [float(w) for w in weights]
    if any(w < 0.0 or not math.isfinite(w) for w in weights):
        raise ValidationError(f"weights must be finite and nonnegative, got {weights}")
    if not any(w > 0.0 for w in weights):
        raise ValidationError("all voting weights are zero")
    n_classes = len(ATTRIBUTE_CLASSES[attribute])
    return np.array([math.fsum(w * p.probs[c] for w, p in zip(weights, predictions)) for c in range(n_classes)])


def soft_vote(predictions: Sequence[ProbabilityPrediction], weights: Sequence[float]) -> str:
    """Argmax of the weighted probability sum; ties go to the lowest class index."""
    total = weighted_distribution(predictions, weights)
    return ATTRIBUTE_CLASSES[predictions[0].attribute][int(np.argmax(total))]


def aggregate(ego: ProbabilityPrediction, exo: Sequence[ProbabilityPrediction], aggregator: Aggregator,
              weights: Sequence[float]) -> Tuple[str, ProbabilityPrediction]:
    """
    Combine the ego prediction with its exo support.

    Returns:
        (voted class, combined distribution); the distribution is the
        normalized weighted sum for soft voting and one-hot for hard voting
    """
    if not exo:
        return ego.label, ego
    voters = [ego] + list(exo)
    if Aggregator(aggregator) == Aggregator.HARD_VOTE:
        label = hard_vote(voters, ego_index=0)
        return label, ProbabilityPrediction.one_hot(ego.clip_id, ego.attribute, label)
    total = weighted_distribution(voters, weights)
    label = ego.classes[int(np.argmax(total))]
    return label, _normalized(ego.clip_id, ego.attribute, total)


# =============================================================================
# Predictors
# =============================================================================

class AttributePredictor:
    """Anything that maps a clip to a ProbabilityPrediction for one attribute."""
    attribute: Attribute
    trained: bool = False

    def predict(self, dataset: Dataset, clip_id: str) -> ProbabilityPrediction:
        raise NotImplementedError


def predict(head: ClassifierHead, dataset: Dataset, clip_id: str,
            frames: Optional[int] = Config.DEFAULT_FRAMES) -> ProbabilityPrediction:
    """
    Softmax prediction of a classifier head on one clip.

    Raises:
        MissingDataError: the clip has no embedding
        ValidationError: the clip's view does not match the head's input dimension
    """
    matrix = dataset.frames(clip_id, frames)
    if matrix.shape[1] != head.input_dim:
        raise ValidationError(f"classifier expects dim {head.input_dim}, clip {clip_id} has {matrix.shape[1]}")
    return _normalized(clip_id, head.attribute, head.probabilities(matrix))


class HeadPredictor(AttributePredictor):
    """A trained ClassifierHead (capability 2)."""

    def __init__(self, head: ClassifierHead, frames: Optional[int] = Config.DEFAULT_FRAMES):
        self.head = head
        self.attribute = head.attribute
        self.frames = frames

    @property
    def trained(self) -> bool:
        return self.head.step > 0

    def predict(self, dataset: Dataset, clip_id: str) -> ProbabilityPrediction:
        return predict(self.head, dataset, clip_id, self.frames)


class ZeroShotPrototypeClassifier(AttributePredictor):
    """
    Training-free classifier over raw embeddings.

    Each class is represented by the mean pooled raw embedding of its
    labelled Train clips in the same view; probabilities are the softmax of
    cosine similarity over a temperature. Classes with no Train clips get
    probability zero.
    """

    def __init__(self, attribute: Attribute, prototypes: Mapping[View, np.ndarray],
                 temperature: float = Config.ZERO_SHOT_TEMPERATURE,
                 frames: Optional[int] = Config.DEFAULT_FRAMES):
        if temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {temperature}")
        self.attribute = Attribute(attribute)
        self.prototypes = dict(prototypes)
        self.temperature = temperature
        self.frames = frames

    @classmethod
    def fit(cls, dataset: Dataset, attribute: Attribute, temperature: float = Config.ZERO_SHOT_TEMPERATURE,
            frames: Optional[int] = Config.DEFAULT_FRAMES) -> "ZeroShotPrototypeClassifier":
        attribute = Attribute(attribute)
        classes = ATTRIBUTE_CLASSES[attribute]
        prototypes: Dict[View, np.ndarray] = {}
        for view in View:
            clips = dataset.clips_in(view, Split.TRAIN)
            labels = dataset.labels(attribute, clips)
            if not labels:
                continue
            table = np.full((len(classes), dataset.table(view).dim), np.nan)
            for index, name in enumerate(classes):
                members = [clip_id for clip_id, label in labels.items() if label == name]
                if members:
                    table[index] = np.mean([pool(dataset.frames(c, frames)) for c in members], axis=0)
            prototypes[view] = table
        if not prototypes:
            raise TrainingError(f"no labelled train clips for {attribute.value} prototypes")
        return cls(attribute, prototypes, temperature, frames)

    def predict(self, dataset: Dataset, clip_id: str) -> ProbabilityPrediction:
        clip = dataset.clip(clip_id)
        table = self.prototypes.get(clip.view)
        if table is None:
            raise MissingDataError(f"no {clip.view.value} prototypes for {self.attribute.value}")
        vector = pool(dataset.frames(clip_id, self.frames))
        norms = np.linalg.norm(table, axis=1) * np.linalg.norm(vector)
        available = np.isfinite(norms) & (norms > 0)
        logits = np.full(table.shape[0], -np.inf)
        logits[available] = (table[available] @ vector) / norms[available] / self.temperature
        if not available.any():
            raise ValidationError(f"no usable prototypes for clip {clip_id}")
        return _normalized(clip_id, self.attribute, softmax(logits))


class ProbabilityTable(AttributePredictor):
    """Precomputed probabilities per clip, e.g. from a foundation model's zero-shot output."""

    def __init__(self, attribute: Attribute, table: Mapping[str, Sequence[float]]):
        self.attribute = Attribute(attribute)
        self.table = {clip_id: _normalized(clip_id, self.attribute, np.asarray(probs, dtype=np.float64))
                      for clip_id, probs in table.items()}

    @classmethod
    def from_json(cls, path: Union[str, Path], attribute: Attribute) -> "ProbabilityTable":
        try:
            with open(path, encoding="utf-8") as handle:
                payload = json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            raise MissingDataError(f"cannot read probabilities from {path}: {e}")
        if not isinstance(payload, dict):
            raise ValidationError(f"{path} must map clip ids to probability lists")
        return cls(attribute, payload)

    def predict(self, dataset: Dataset, clip_id: str) -> ProbabilityPrediction:
        if clip_id not in self.table:
            raise MissingDataError(f"no precomputed probabilities for clip {clip_id}")
        return self.table[clip_id]


# =============================================================================
# Classifier Training
# =============================================================================

@dataclass(frozen=True)
class ClassifierConfig:
    """Classifier training settings; ``seed`` has no default."""
    seed: int
    steps: int = Config.CLASSIFIER_STEPS
    learning_rate: float = Config.CLASSIFIER_LEARNING_RATE
    batch_size: int = Config.CLASSIFIER_BATCH_SIZE
    weight_decay: float = Config.WEIGHT_DECAY
    pooling: Pooling = Pooling.MEAN
    frames: int = Config.DEFAULT_FRAMES
    log_every: int = Config.LOG_EVERY

    def __post_init__(self):
        try:
            object.__setattr__(self, "pooling", Pooling(self.pooling))
        except ValueError:
            raise ConfigurationError(f"invalid pooling: {self.pooling!r}")
        if self.steps < 0 or self.batch_size <= 0 or self.frames <= 0:
            raise ConfigurationError("steps must be nonnegative; batch_size and frames positive")

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ClassifierConfig":
        if values.get("seed") is None:
            raise ConfigurationError("classifier config requires 'seed'")
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown classifier config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["pooling"] = self.pooling.value
        return values


def train_classifier(dataset: Dataset, attribute: Attribute, view: View, config: ClassifierConfig,
                     labels: Optional[Mapping[str, str]] = None) -> ClassifierHead:
    """
    Train a classifier head on the Train split clips of one view.

    Args:
        dataset: the benchmark
        attribute: gender, race or age
        view: which view's clips to train on
        config: training settings
        labels: optional label override (e.g. permuted labels for a
            permutation baseline); defaults to the dataset's labels

    Returns:
        ClassifierHead: trained head, bias initialized at the log train prior

    Raises:
        TrainingError: fewer than two classes among the training labels
    """
    attribute, view = Attribute(attribute), View(view)
    train_clips = dataset.clips_in(view, Split.TRAIN)
    labels = dict(labels) if labels is not None else dataset.labels(attribute, train_clips)
    clips = [clip for clip in train_clips if clip.clip_id in labels]
    if not clips:
        raise TrainingError(f"no labelled {view.value} train clips for {attribute.value}")

    classes = ATTRIBUTE_CLASSES[attribute]
    unknown = sorted({labels[c.clip_id] for c in clips} - set(classes))
    if unknown:
        raise ValidationError(f"{unknown[0]!r} is not a {attribute.value} class")
    targets = np.array([classes.index(labels[c.clip_id]) for c in clips])
    if np.unique(targets).size < 2:
        raise TrainingError(f"{attribute.value} training set for {view.value} has a single class")

    prior = np.bincount(targets, minlength=len(classes)) / targets.size
    head = ClassifierHead.initialize(attribute, dataset.table(view).dim, config.pooling, config.frames, prior)
    frames = [dataset.frames(c.clip_id, config.frames) for c in clips]
    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(head.params, config.learning_rate, config.steps, config.weight_decay)
    batch_size = min(config.batch_size, len(clips))

    for step in range(config.steps):
        grads = head.zero_grads()
        total = 0.0
        for index in rng.choice(len(clips), size=batch_size, replace=False):
            loss, clip_grads, _ = head.cross_entropy(frames[index], int(targets[index]))
            total += loss
            accumulate(grads, clip_grads, 1.0 / batch_size)
        if not np.isfinite(total):
            raise TrainingError(f"non-finite classifier loss at step {step}")
        lr = optimizer.step(grads)
        if config.log_every and (step % config.log_every == 0 or step == config.steps - 1):
            logger.info(f"train-clf {attribute.value}/{view.value} step {step}: "
                        f"loss={total / batch_size:.4f} lr={lr:.2e}")

    head.step = config.steps
    return head


def save_classifier(path: Union[str, Path], head: ClassifierHead, config: Optional[ClassifierConfig] = None,
                    view: Optional[View] = None) -> None:
    header = {
        "kind": "classifier",
        "head": head.describe(),
        "view": View(view).value if view else None,
        "config": config.to_dict() if config else None,
    }
    save_checkpoint(path, header, sorted(head.params.items()))


def load_classifier(path: Union[str, Path]) -> ClassifierHead:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "classifier":
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    return ClassifierHead.from_description(header["head"], arrays)


# =============================================================================
# Retrieval-Augmented Attack
# =============================================================================

@dataclass(frozen=True)
class RaaConfig:
    """
    Retrieval-Augmented Attack settings.

    ``exo_pool`` defaults to the Test split exo clips of the attacked
    dataset. ``ego_weight`` overrides the weight scheme's ego weight; the
    remaining mass is split evenly over the M exo voters.
    """
    m: int = Config.RAA_TOP_M
    aggregator: Aggregator = Aggregator(Config.RAA_AGGREGATOR)
    weight_scheme: WeightScheme = WeightScheme(Config.RAA_WEIGHT_SCHEME)
    retriever: RetrieverHeads = RAW_EMBEDDINGS
    exo_pool: Optional[Dataset] = None
    ego_weight: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "aggregator", Aggregator(self.aggregator))
        object.__setattr__(self, "weight_scheme", WeightScheme(self.weight_scheme))
        if self.m < 0:
            raise ValidationError(f"M must be nonnegative, got {self.m}")
        if self.ego_weight is not None and not 0.0 <= self.ego_weight <= 1.0:
            raise ValidationError(f"ego weight must lie in [0, 1], got {self.ego_weight}")

    def weights(self, m: Optional[int] = None) -> List[float]:
        m = self.m if m is None else m
        if m == 0:
            return [1.0]
        if self.ego_weight is not None:
            ego = self.ego_weight
        elif self.weight_scheme == WeightScheme.FIXED_HALF:
            ego = 0.5
        else:
            ego = 1.0 / (m + 1)
        return [ego] + [(1.0 - ego) / m] * m


@dataclass(frozen=True)
class RaaResult:
    clip_id: str
    label: str
    support: Tuple[str, ...]
    combined: ProbabilityPrediction


class RetrievalAugmentedAttack:
    """
    Retrieve the top-M exo clips for an ego query, then vote.

    The exo gallery is embedded once per attack object, under a lock, and
    reused for every query. Raw embeddings are accepted as a retriever (the zero-shot
    setting); projection heads must have been trained.
    """

    def __init__(self, config: RaaConfig, ego_predictor: AttributePredictor,
                 exo_predictor: AttributePredictor, frames: Optional[int] = Config.DEFAULT_FRAMES):
        retriever = config.retriever
        if not retriever.is_raw:
            for name, head in (("ego", retriever.ego_head), ("exo", retriever.exo_head)):
                if head is None or head.step == 0:
                    raise TrainingError(f"retriever {name} head is untrained")
        self.config = config
        self.ego_predictor = ego_predictor
        self.exo_predictor = exo_predictor
        self.frames = frames
        self._lock = threading.Lock()
        self._pool: Optional[Dataset] = None
        self._gallery: Optional[GalleryIndex] = None
        self._exo_predictions: Dict[str, ProbabilityPrediction] = {}

    def gallery(self, dataset: Dataset) -> Tuple[Dataset, GalleryIndex]:
        with self._lock:
            if self._gallery is None:
                self._build_gallery(dataset)
        return self._pool, self._gallery

    def _build_gallery(self, dataset: Dataset) -> None:
        pool_data = self.config.exo_pool
        if pool_data is None:
            pool_data = dataset.subset([c.clip_id for c in dataset.clips_in(View.EXO, Split.TEST)], "raa-pool")
        clips = pool_data.clips_in(View.EXO)
        if not clips:
            raise ValidationError("empty exo pool")
        ids, vectors = embed_clips(pool_data, clips, self.config.retriever, self.frames)
        self._pool, self._gallery = pool_data, GalleryIndex(ids, vectors)
        logger.info(f"RAA gallery: {len(clips)} exo clips")

    def support(self, dataset: Dataset, clip_id: str, m: Optional[int] = None) -> Tuple[str, ...]:
        """Top-M exo clip ids for an ego query, best first."""
        m = self.config.m if m is None else m
        pool_data, gallery = self.gallery(dataset)
        if m > len(gallery):
            raise ValidationError(f"M={m} exceeds the exo pool size {len(gallery)}")
        if m == 0:
            return ()
        clip = dataset.clip(clip_id)
        if clip.view != View.EGO:
            raise ValidationError(f"RAA query {clip_id} is not an Ego clip")
        query = self.config.retriever.embed(dataset, clip, self.frames)
        return tuple(rank_gallery(query, gallery, top_k=m, query_id=clip_id).candidate_ids)

    def exo_prediction(self, clip_id: str) -> ProbabilityPrediction:
        if clip_id not in self._exo_predictions:
            self._exo_predictions[clip_id] = self.exo_predictor.predict(self._pool, clip_id)
        return self._exo_predictions[clip_id]

    def combine(self, ego: ProbabilityPrediction, support: Sequence[str], aggregator: Aggregator,
                weights: Sequence[float]) -> RaaResult:
        exo = [self.exo_prediction(clip_id) for clip_id in support]
        label, combined = aggregate(ego, exo, aggregator, weights)
        return RaaResult(ego.clip_id, label, tuple(support), combined)

    def attack(self, dataset: Dataset, clip_id: str) -> RaaResult:
        ego = self.ego_predictor.predict(dataset, clip_id)
        support = self.support(dataset, clip_id)
        return self.combine(ego, support, self.config.aggregator, self.config.weights())


def raa_attack(query: str, dataset: Dataset, config: RaaConfig, ego_predictor: AttributePredictor,
               exo_predictor: AttributePredictor,
               frames: Optional[int] = Config.DEFAULT_FRAMES) -> Tuple[str, List[str]]:
    """
    Retrieval-Augmented Attack on one ego query.

    Returns:
        (voted class, support clip ids best first)

    Raises:
        ValidationError: empty pool or M larger than the pool
        TrainingError: untrained retriever heads
    """
    result = RetrievalAugmentedAttack(config, ego_predictor, exo_predictor, frames).attack(dataset, query)
    return result.label, list(result.support)


# =============================================================================
# Identity-Level Ensembling
# =============================================================================

@dataclass
class IdentityEnsemble:
    labels: Dict[str, str]
    accuracy: Optional[MetricReport] = None


def group_by_identity(dataset: Dataset,
                      predictions: Iterable[ProbabilityPrediction]) -> Dict[str, List[ProbabilityPrediction]]:
    groups: Dict[str, List[ProbabilityPrediction]] = {}
    for prediction in predictions:
        groups.setdefault(dataset.clip(prediction.clip_id).identity_id, []).append(prediction)
    return groups


def identity_level_ensemble(predictions: Mapping[str, Sequence[ProbabilityPrediction]],
                            aggregator: Aggregator = Aggregator.HARD_VOTE,
                            truth: Optional[Mapping[str, str]] = None) -> IdentityEnsemble:
    """
    One vote per identity over all of its videos.

    Args:
        predictions: identity_id -> predictions of that wearer's videos
        aggregator: hard vote (no privileged voter) or uniform soft vote
        truth: identity_id -> true class, for identity-level accuracy

    Raises:
        ValidationError: an identity with no predictions
    """
    labels: Dict[str, str] = {}
    for identity_id in sorted(predictions):
        group = list(predictions[identity_id])
        if not group:
            raise ValidationError(f"identity {identity_id} has no predictions")
        if Aggregator(aggregator) == Aggregator.HARD_VOTE:
            labels[identity_id] = hard_vote(group, ego_index=None)
        else:
            labels[identity_id] = soft_vote(group, [1.0] * len(group))
    report = accuracy(labels, truth, name="identity_accuracy") if truth is not None else None
    return IdentityEnsemble(labels, report)


# =============================================================================
# Attack Sweeps
# =============================================================================

@dataclass(frozen=True)
class AttackRow:
    attribute: str
    capability: str
    view: str
    m: int
    aggregator: str
    weight_scheme: str
    accuracy: float
    delta: float
    n: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "attribute": self.attribute,
            "capability": self.capability,
            "view": self.view,
            "M": self.m,
            "aggregator": self.aggregator,
            "weight_scheme": self.weight_scheme,
            "accuracy": round(self.accuracy, Config.METRIC_DECIMALS),
            "delta": round(self.delta, Config.METRIC_DECIMALS),
            "n": self.n,
        }


@dataclass
class CapabilityModels:
    """The predictors and retriever an attacker holds at one capability tier (1 or 2)."""
    capability: Capability
    ego_predictor: AttributePredictor
    exo_predictor: Optional[AttributePredictor] = None
    retriever: RetrieverHeads = RAW_EMBEDDINGS

    def validate(self) -> None:
        capability = Capability(self.capability)
        if capability == Capability.ZERO_SHOT:
            if not self.retriever.is_raw:
                raise ValidationError("capability 1 runs on raw embeddings; drop the retriever heads")
            for predictor in (self.ego_predictor, self.exo_predictor):
                if isinstance(predictor, HeadPredictor):
                    raise ValidationError("capability 1 cannot use trained classifier heads")
        elif capability == Capability.FINE_TUNED:
            for name, predictor in (("ego", self.ego_predictor), ("exo", self.exo_predictor)):
                if predictor is not None and not predictor.trained:
                    raise TrainingError(f"missing prerequisite head: {name} classifier is untrained")
        else:
            raise ValidationError("base capability must be 1 or 2; RAA and identity linking are sweep options")


@dataclass(frozen=True)
class SweepConfig:
    """
    What an attack sweep evaluates on top of the ego-only baseline.

    Empty ``m_values`` means no RAA rows; the baseline is then reported on
    its own.
    """
    m_values: Tuple[int, ...] = ()
    aggregators: Tuple[Aggregator, ...] = (Aggregator(Config.RAA_AGGREGATOR),)
    weight_schemes: Tuple[WeightScheme, ...] = (WeightScheme(Config.RAA_WEIGHT_SCHEME),)
    ego_weight: Optional[float] = None
    per_identity: bool = False
    identity_aggregator: Aggregator = Aggregator.HARD_VOTE
    include_exo_view: bool = False
    exo_pool: Optional[Dataset] = None
    frames: Optional[int] = Config.DEFAULT_FRAMES
    workers: int = Config.WORKERS


def _parallel_map(func: Callable, items: Sequence, workers: int) -> List:
    if workers > 1 and len(items) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]


def _identity_accuracy(dataset: Dataset, predictions: Iterable[ProbabilityPrediction],
                       aggregator: Aggregator, attribute: Attribute) -> MetricReport:
    groups = group_by_identity(dataset, predictions)
    truth = {}
    for identity_id in groups:
        label = dataset.identity_clips(identity_id)[0].label(attribute)
        if label is None:
            raise MissingDataError(f"identity {identity_id} has no {attribute.value} label")
        truth[identity_id] = label
    return identity_level_ensemble(groups, aggregator, truth).accuracy


def attack_sweep(dataset: Dataset, attribute: Attribute, models: Sequence[CapabilityModels],
                 sweep: SweepConfig = SweepConfig()) -> List[AttackRow]:
    """
    Evaluate attacks on the Test split's labelled ego clips.

    Rows per capability tier: the ego-only baseline (or one RAA row per
    (aggregator, weight scheme, M), where M=0 is the baseline), optional
    identity-level rows (capability suffix "+4"), and optional exo-view
    classification rows. RAA sweeps always include the M=0 reference row. Delta is accuracy minus the non-RAA baseline at the
    same level (video or identity).

    Raises:
        TrainingError: a prerequisite head is missing or untrained
        MissingDataError: no labelled test queries
    """
    attribute = Attribute(attribute)
    rows: List[AttackRow] = []
    queries = dataset.clips_in(View.EGO, Split.TEST)
    truth = dataset.labels(attribute, queries)
    query_ids = [clip.clip_id for clip in queries if clip.clip_id in truth]
    if not query_ids:
        raise MissingDataError(f"no labelled test ego clips for {attribute.value}")
    n_unlabelled = len(queries) - len(query_ids)
    if n_unlabelled:
        logger.info(f"Excluded {n_unlabelled} test ego clips without a {attribute.value} label")

    for tier in sorted(models, key=lambda t: Capability(t.capability).value):
        tier.validate()
        capability = Capability(tier.capability).value
        ego_preds = dict(zip(query_ids, _parallel_map(lambda q: tier.ego_predictor.predict(dataset, q),
                                                      query_ids, sweep.workers)))
        baseline = accuracy({q: p.label for q, p in ego_preds.items()}, truth).value
        identity_baseline = None
        if sweep.per_identity:
            identity_baseline = _identity_accuracy(dataset, ego_preds.values(), sweep.identity_aggregator,
                                                   attribute)

        if not sweep.m_values:
            rows.append(AttackRow(attribute.value, capability, View.EGO.value, 0, "none", "none",
                                  baseline, 0.0, len(query_ids)))
            if identity_baseline is not None:
                rows.append(AttackRow(attribute.value, f"{capability}+4", View.EGO.value, 0,
                                      sweep.identity_aggregator.value, "none", identity_baseline.value, 0.0,
                                      identity_baseline.n_evaluated))
        else:
            if tier.exo_predictor is None:
                raise TrainingError("missing prerequisite head: RAA needs an exo classifier")
            if Capability(tier.capability) == Capability.FINE_TUNED and tier.retriever.is_raw:
                raise TrainingError("missing prerequisite head: RAA at capability 2 needs trained retriever heads")
            m_max = max(sweep.m_values)
            attack = RetrievalAugmentedAttack(
                RaaConfig(m_max, retriever=tier.retriever, exo_pool=sweep.exo_pool, ego_weight=sweep.ego_weight),
                tier.ego_predictor, tier.exo_predictor, sweep.frames)
            supports = dict(zip(query_ids, _parallel_map(lambda q: attack.support(dataset, q, m_max),
                                                         query_ids, sweep.workers)))
            for aggregator in sweep.aggregators:
                for scheme in sweep.weight_schemes:
                    config = RaaConfig(m_max, aggregator, scheme, tier.retriever, sweep.exo_pool, sweep.ego_weight)
                    for m in sorted(set(sweep.m_values) | {0}):
                        results = [attack.combine(ego_preds[q], supports[q][:m], aggregator, config.weights(m))
                                   for q in query_ids]
                        value = accuracy({r.clip_id: r.label for r in results}, truth).value
                        rows.append(AttackRow(attribute.value, f"{capability}+3", View.EGO.value, m,
                                              Aggregator(aggregator).value, WeightScheme(scheme).value,
                                              value, value - baseline, len(query_ids)))
                        if identity_baseline is not None:
                            report = _identity_accuracy(dataset, [r.combined for r in results],
                                                        sweep.identity_aggregator, attribute)
                            rows.append(AttackRow(attribute.value, f"{capability}+3+4", View.EGO.value, m,
                                                  Aggregator(aggregator).value, WeightScheme(scheme).value,
                                                  report.value, report.value - identity_baseline.value,
                                                  report.n_evaluated))

        if sweep.include_exo_view:
            if tier.exo_predictor is None:
                raise TrainingError("missing prerequisite head: exo-view rows need an exo classifier")
            exo_truth = dataset.labels(attribute, dataset.clips_in(View.EXO, Split.TEST))
            exo_ids = sorted(exo_truth)
            if exo_ids:
                exo_preds = _parallel_map(lambda c: tier.exo_predictor.predict(dataset, c), exo_ids, sweep.workers)
                value = accuracy({c: p.label for c, p in zip(exo_ids, exo_preds)}, exo_truth).value
                rows.append(AttackRow(attribute.value, capability, View.EXO.value, 0, "none", "none",
                                      value, 0.0, len(exo_ids)))

        logger.info(f"Attack sweep {attribute.value} capability {capability}: baseline accuracy {baseline:.4f}")
    return rows


def attack_rows_frame(rows: Sequence[AttackRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=ATTACK_COLUMNS)


def write_attack_csv(rows: Sequence[AttackRow], path: Union[str, Path]) -> None:
    attack_rows_frame(rows).to_csv(path, index=False)
