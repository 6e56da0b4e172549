"""
Cross-view supervised contrastive training of ego/exo projection heads.

This module handles joint-space training including:
- Training configuration with mandatory seeds
- The supervised contrastive loss with analytic gradients, in the
  standard ({k} + N(i)) or literal (N(i) only) denominator form
- A FIFO negative cache of detached exo features from past steps
- Individual (same wearer) and situational (same take) positive links
- AdamW with cosine decay, loss curves and head checkpoints

The loss is summed over anchors; parameter updates use the per-anchor
mean so the learning rate does not scale with batch size.

Author: EgoLeak Team
Version: 1.0.0
"""

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from config import Config
from utils.checkpoint_io import load_checkpoint, save_checkpoint
from utils.constants import Architecture, DenominatorMode, Pooling, PositiveMode, Split, View
from utils.error_handling import CheckpointError, ConfigurationError, TrainingError, ValidationError
from utils.optim import AdamW
from .dataset_service import ClipRecord, Dataset
from .heads import Params, ProjectionHead, accumulate
from .retrieval_service import RetrieverHeads

logger = logging.getLogger(__name__)

# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """Contrastive training settings; ``seed`` and ``steps`` have no defaults."""
    seed: int
    steps: int
    temperature: float = Config.TEMPERATURE
    batch_size: int = Config.BATCH_SIZE
    learning_rate: float = Config.LEARNING_RATE
    weight_decay: float = Config.WEIGHT_DECAY
    cache_capacity: int = Config.CACHE_CAPACITY
    positive_mode: PositiveMode = PositiveMode.INDIVIDUAL
    denominator_mode: DenominatorMode = DenominatorMode.STANDARD
    architecture: Architecture = Architecture.LINEAR
    output_dim: int = 64
    hidden_dim: int = 0
    pooling: Pooling = Pooling.MEAN
    frames: int = Config.DEFAULT_FRAMES
    exo_per_anchor: int = 2
    log_every: int = Config.LOG_EVERY

    def __post_init__(self):
        for name, enum_cls in (("positive_mode", PositiveMode), ("denominator_mode", DenominatorMode),
                               ("architecture", Architecture), ("pooling", Pooling)):
            try:
                object.__setattr__(self, name, enum_cls(getattr(self, name)))
            except ValueError:
                raise ConfigurationError(f"invalid {name}: {getattr(self, name)!r}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.cache_capacity < 0:
            raise ConfigurationError(f"cache_capacity must be nonnegative, got {self.cache_capacity}")
        if self.steps < 0:
            raise ConfigurationError(f"steps must be nonnegative, got {self.steps}")
        if self.output_dim <= 0 or self.frames <= 0 or self.exo_per_anchor <= 0:
            raise ConfigurationError("output_dim, frames and exo_per_anchor must be positive")
        if self.architecture == Architecture.ONE_HIDDEN_MLP and self.hidden_dim <= 0:
            raise ConfigurationError("OneHiddenMLP needs a positive hidden_dim")

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "TrainConfig":
        for required in ("seed", "steps"):
            if values.get(required) is None:
                raise ConfigurationError(f"training config requires '{required}'")
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        for key, value in values.items():
            if hasattr(value, "value"):
                values[key] = value.value
        return values


# =============================================================================
# Negative Cache
# =============================================================================

class NegativeCache:
    """
    FIFO queue of detached exo features from past steps.

    Stored vectors are read-only copies; no gradient reaches them.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValidationError(f"cache capacity must be nonnegative, got {capacity}")
        self.capacity = capacity
        self._entries: Deque[Tuple[str, np.ndarray]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, clip_ids: Sequence[str], features: np.ndarray) -> None:
        if self.capacity == 0:
            return
        for clip_id, vector in zip(clip_ids, features):
            frozen = np.array(vector, dtype=np.float64, copy=True)
            frozen.setflags(write=False)
            self._entries.append((clip_id, frozen))

    @property
    def clip_ids(self) -> List[str]:
        return [clip_id for clip_id, _ in self._entries]

    def matrix(self, dim: int) -> np.ndarray:
        if not self._entries:
            return np.zeros((0, dim))
        return np.stack([vector for _, vector in self._entries])


# =============================================================================
# Loss
# =============================================================================

def supcon_loss(z_ego: np.ndarray, z_pool: np.ndarray, positives: Mapping[int, Sequence[int]],
                negatives: Mapping[int, Sequence[int]], temperature: float,
                denominator_mode: DenominatorMode = DenominatorMode.STANDARD
                ) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Supervised contrastive loss of ego anchors against an exo pool.

    loss = -sum_i 1/|P(i)| sum_{k in P(i)} log( exp(s_ik/t) / sum_{j in Den(i,k)} exp(s_ij/t) )
    with Den = {k} + N(i) (standard) or N(i) (literal).

    Args:
        z_ego: B x d unit anchor vectors
        z_pool: P x d unit exo vectors (batch entries plus cached entries)
        positives: anchor index -> pool indices of its positives
        negatives: anchor index -> pool indices of its negatives
        temperature: softmax temperature
        denominator_mode: standard or literal

    Returns:
        (loss, dLoss/dz_ego, dLoss/dz_pool)

    Raises:
        ValidationError: temperature <= 0, or an anchor with empty P(i) or N(i)
    """
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    z_ego = np.asarray(z_ego, dtype=np.float64)
    z_pool = np.asarray(z_pool, dtype=np.float64)
    standard = DenominatorMode(denominator_mode) == DenominatorMode.STANDARD
    logits = z_ego @ z_pool.T / temperature
    d_logits = np.zeros_like(logits)
    loss = 0.0

    for i in range(z_ego.shape[0]):
        positive = list(positives.get(i, ()))
        negative = np.asarray(sorted(set(negatives.get(i, ()))), dtype=int)
        if not positive:
            raise ValidationError(f"anchor {i} has an empty positive set")
        if negative.size == 0:
            raise ValidationError(f"anchor {i} has an empty negative set")
        weight = 1.0 / len(positive)
        row = logits[i]
        for k in positive:
            denominator = np.union1d(negative, [k]) if standard else negative
            log_norm = logsumexp(row[denominator])
            loss -= weight * (row[k] - log_norm)
            d_logits[i, denominator] += weight * np.exp(row[denominator] - log_norm)
            d_logits[i, k] -= weight

    d_similarity = d_logits / temperature
    return float(loss), d_similarity @ z_pool, d_similarity.T @ z_ego


# =============================================================================
# Batches and Objective
# =============================================================================

@dataclass
class ContrastiveBatch:
    """
    One training step's inputs.

    Pool index layout: batch exo clips first (gradient-bearing), then cached
    vectors (constants).
    """
    ego_ids: List[str]
    ego_frames: List[np.ndarray]
    exo_ids: List[str]
    exo_frames: List[np.ndarray]
    cached: np.ndarray
    positives: Dict[int, List[int]]
    negatives: Dict[int, List[int]]


@dataclass
class ObjectiveResult:
    loss: float
    ego_grads: Params
    exo_grads: Params
    exo_features: np.ndarray


def contrastive_objective(ego_head: ProjectionHead, exo_head: ProjectionHead, batch: ContrastiveBatch,
                          temperature: float,
                          denominator_mode: DenominatorMode = DenominatorMode.STANDARD) -> ObjectiveResult:
    """Loss and analytic parameter gradients of both heads for one batch."""
    ego_out = [ego_head.forward(frames) for frames in batch.ego_frames]
    exo_out = [exo_head.forward(frames) for frames in batch.exo_frames]
    z_ego = np.stack([z for z, _ in ego_out])
    z_exo = np.stack([z for z, _ in exo_out])
    z_pool = np.vstack([z_exo, batch.cached]) if batch.cached.size else z_exo

    loss, d_ego, d_pool = supcon_loss(z_ego, z_pool, batch.positives, batch.negatives,
                                      temperature, denominator_mode)

    ego_grads = ego_head.zero_grads()
    for i, (_, cache) in enumerate(ego_out):
        accumulate(ego_grads, ego_head.backward(d_ego[i], cache))
    exo_grads = exo_head.zero_grads()
    for j, (_, cache) in enumerate(exo_out):
        accumulate(exo_grads, exo_head.backward(d_pool[j], cache))
    return ObjectiveResult(loss, ego_grads, exo_grads, z_exo)


def linked(anchor: ClipRecord, other: ClipRecord, mode: PositiveMode) -> bool:
    """Whether an exo clip is a positive of an ego anchor under the positive mode."""
    if PositiveMode(mode) == PositiveMode.INDIVIDUAL:
        return anchor.identity_id == other.identity_id
    return anchor.take_id == other.take_id


def contrast_sets(anchors: Sequence[ClipRecord], batch_exo: Sequence[ClipRecord], cached: Sequence[ClipRecord],
                  positive_mode: PositiveMode, denominator_mode: DenominatorMode
                  ) -> Tuple[Dict[int, List[int]], Dict[int, List[int]]]:
    """
    P(i) and N(i) over the pool [batch_exo..., cached...].

    P(i): batch exo clips linked to anchor i (cached entries never serve as positives).
    Standard N(i): every pool entry not linked to anchor i.
    Literal N(i): every pool entry except the anchor's synchronized exo clips.
    """
    pool = list(batch_exo) + list(cached)
    positives: Dict[int, List[int]] = {}
    negatives: Dict[int, List[int]] = {}
    standard = DenominatorMode(denominator_mode) == DenominatorMode.STANDARD
    for i, anchor in enumerate(anchors):
        positives[i] = [j for j, clip in enumerate(batch_exo) if linked(anchor, clip, positive_mode)]
        if standard:
            negatives[i] = [j for j, clip in enumerate(pool) if not linked(anchor, clip, positive_mode)]
        else:
            negatives[i] = [j for j, clip in enumerate(pool) if clip.take_id != anchor.take_id]
    return positives, negatives


class PairSampler:
    """
    Draws anchors from distinct link groups (wearers or takes) plus their linked exo clips.

    Distinct groups guarantee every anchor has negatives in the batch.
    """

    def __init__(self, dataset: Dataset, mode: PositiveMode, split: Optional[Split] = Split.TRAIN):
        self.dataset = dataset
        self.mode = PositiveMode(mode)
        exo = dataset.clips_in(View.EXO, split)
        key = (lambda c: c.identity_id) if self.mode == PositiveMode.INDIVIDUAL else (lambda c: c.take_id)
        exo_by_group: Dict[str, List[ClipRecord]] = {}
        for clip in exo:
            exo_by_group.setdefault(key(clip), []).append(clip)
        anchors_by_group: Dict[str, List[ClipRecord]] = {}
        for clip in dataset.clips_in(View.EGO, split):
            if key(clip) in exo_by_group:
                anchors_by_group.setdefault(key(clip), []).append(clip)
        if not anchors_by_group:
            raise TrainingError(f"no positive links ({self.mode.value} mode) in the train split")
        if len(anchors_by_group) < 2:
            raise TrainingError("contrastive training needs at least two linked groups for negatives")
        self.groups = sorted(anchors_by_group)
        self.anchors_by_group = anchors_by_group
        self.exo_by_group = exo_by_group

    def sample(self, rng: np.random.Generator, batch_size: int, exo_per_anchor: int
               ) -> Tuple[List[ClipRecord], List[ClipRecord]]:
        n_groups = min(batch_size, len(self.groups))
        chosen = rng.choice(len(self.groups), size=n_groups, replace=False)
        anchors: List[ClipRecord] = []
        exo: List[ClipRecord] = []
        for group_index in chosen:
            group = self.groups[int(group_index)]
            candidates = self.anchors_by_group[group]
            anchors.append(candidates[int(rng.integers(len(candidates)))])
            pool = self.exo_by_group[group]
            take = min(exo_per_anchor, len(pool))
            for index in rng.choice(len(pool), size=take, replace=False):
                exo.append(pool[int(index)])
        return anchors, exo


# =============================================================================
# Training
# =============================================================================

@dataclass
class EmbeddingTrainingResult:
    ego_head: ProjectionHead
    exo_head: ProjectionHead
    loss_curve: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["step", "loss", "lr"]))

    @property
    def retriever(self) -> RetrieverHeads:
        return RetrieverHeads(self.ego_head, self.exo_head)


def initialize_heads(ego_dim: int, exo_dim: int, config: TrainConfig,
                     rng: np.random.Generator) -> Tuple[ProjectionHead, ProjectionHead]:
    """Seeded initialization; ego head first, then exo head, from the same stream."""
    ego_head = ProjectionHead.initialize(config.architecture, ego_dim, config.output_dim, rng,
                                         config.hidden_dim, config.pooling, config.frames)
    exo_head = ProjectionHead.initialize(config.architecture, exo_dim, config.output_dim, rng,
                                         config.hidden_dim, config.pooling, config.frames)
    return ego_head, exo_head


def train_embedding(dataset: Dataset, config: TrainConfig) -> EmbeddingTrainingResult:
    """
    Train ego and exo projection heads on the Train split.

    Args:
        dataset: the benchmark
        config: training settings

    Returns:
        EmbeddingTrainingResult: both heads and the per-step loss curve
            (loss is the per-anchor mean)

    Raises:
        TrainingError: no positive links in the train split, or a non-finite loss
    """
    rng = np.random.default_rng(config.seed)
    ego_head, exo_head = initialize_heads(dataset.ego_embeddings.dim, dataset.exo_embeddings.dim, config, rng)
    sampler = PairSampler(dataset, config.positive_mode)
    cache = NegativeCache(config.cache_capacity)
    ego_optimizer = AdamW(ego_head.params, config.learning_rate, config.steps, config.weight_decay)
    exo_optimizer = AdamW(exo_head.params, config.learning_rate, config.steps, config.weight_decay)
    records = []

    for step in range(config.steps):
        anchors, batch_exo = sampler.sample(rng, config.batch_size, config.exo_per_anchor)
        cached_clips = [dataset.clip(clip_id) for clip_id in cache.clip_ids]
        positives, negatives = contrast_sets(anchors, batch_exo, cached_clips,
                                             config.positive_mode, config.denominator_mode)
        batch = ContrastiveBatch(
            ego_ids=[c.clip_id for c in anchors],
            ego_frames=[dataset.frames(c.clip_id, config.frames) for c in anchors],
            exo_ids=[c.clip_id for c in batch_exo],
            exo_frames=[dataset.frames(c.clip_id, config.frames) for c in batch_exo],
            cached=cache.matrix(config.output_dim),
            positives=positives,
            negatives=negatives,
        )
        result = contrastive_objective(ego_head, exo_head, batch, config.temperature, config.denominator_mode)
        if not np.isfinite(result.loss):
            raise TrainingError(f"non-finite contrastive loss at step {step}")

        scale = 1.0 / len(anchors)
        lr = ego_optimizer.step({k: v * scale for k, v in result.ego_grads.items()})
        exo_optimizer.step({k: v * scale for k, v in result.exo_grads.items()})
        cache.push(batch.exo_ids, result.exo_features)

        mean_loss = result.loss * scale
        records.append({"step": step, "loss": mean_loss, "lr": lr})
        if config.log_every and (step % config.log_every == 0 or step == config.steps - 1):
            logger.info(f"train-embed step {step}: loss={mean_loss:.4f} lr={lr:.2e} cache={len(cache)}")

    ego_head.step = exo_head.step = config.steps
    return EmbeddingTrainingResult(ego_head, exo_head, pd.DataFrame(records, columns=["step", "loss", "lr"]))


# =============================================================================
# Checkpoints
# =============================================================================

def save_heads(path: Union[str, Path], ego_head: ProjectionHead, exo_head: ProjectionHead,
               config: Optional[TrainConfig] = None) -> None:
    """Write both projection heads into one checkpoint file."""
    header = {
        "kind": "projection_pair",
        "step": ego_head.step,
        "heads": {"ego": ego_head.describe(), "exo": exo_head.describe()},
        "config": config.to_dict() if config else None,
    }
    arrays = [(f"ego/{name}", value) for name, value in sorted(ego_head.params.items())]
    arrays += [(f"exo/{name}", value) for name, value in sorted(exo_head.params.items())]
    save_checkpoint(path, header, arrays)


def load_heads(path: Union[str, Path]) -> RetrieverHeads:
    """Load a projection-pair checkpoint as retriever heads."""
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "projection_pair":
        raise CheckpointError(f"{path} is not a projection-head checkpoint")
    heads = {}
    for role in ("ego", "exo"):
        prefix = f"{role}/"
        params = {name[len(prefix):]: value for name, value in arrays.items() if name.startswith(prefix)}
        heads[role] = ProjectionHead.from_description(header["heads"][role], params)
    return RetrieverHeads(heads["ego"], heads["exo"])
