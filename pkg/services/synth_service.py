"""
Deterministic synthetic benchmark generator.

Every clip's frame embeddings are a weighted sum of random unit latent
directions (identity, one per demographic class, scene, take and view) plus
per-view Gaussian noise. Because the generating factors are known, the
generator provides ground truth for every retrieval task and attack.

Gaussian draws use numpy's ``default_rng`` (PCG64 bit generator, ziggurat
standard normals) seeded from the config. Output is bit-identical for a
given seed and numpy version.

Author: EgoLeak Team
Version: 1.0.0
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping

import numpy as np

from utils.constants import ATTRIBUTE_CLASSES, PROBABILITY_SUM_TOLERANCE, Attribute, Split, View
from utils.error_handling import ConfigurationError
from .dataset_service import ClipRecord, Dataset
from .embedding_store import EmbeddingTable

logger = logging.getLogger(__name__)

GAUSSIAN_ALGORITHM = "numpy.random.default_rng: PCG64 bit generator, ziggurat standard normal"


def _uniform_priors() -> Dict[str, Dict[str, float]]:
    return {attribute.value: {name: 1.0 / len(classes) for name in classes}
            for attribute, classes in ATTRIBUTE_CLASSES.items()}


def _default_attribute_weights() -> Dict[str, float]:
    return {attribute.value: 1.0 for attribute in Attribute}


@dataclass(frozen=True)
class SynthConfig:
    """
    Synthetic benchmark settings.

    ``priors`` maps attribute -> class -> probability (missing classes are 0).
    ``attribute_w`` maps attribute -> signal weight.
    """
    seed: int
    n_identities: int = 100
    takes_per_identity: int = 4
    exo_per_take: int = 2
    frames_per_clip: int = 8
    n_scenes: int = 0
    dim: int = 32
    priors: Mapping[str, Mapping[str, float]] = field(default_factory=_uniform_priors)
    identity_w: float = 1.0
    attribute_w: Mapping[str, float] = field(default_factory=_default_attribute_weights)
    scene_w: float = 0.0
    take_w: float = 0.0
    view_offset_w: float = 0.0
    sigma_ego: float = 1.0
    sigma_exo: float = 1.0
    ego_attribute_scale: float = 1.0
    exo_view_rotation: bool = False
    test_fraction: float = 0.3

    def __post_init__(self):
        if min(self.n_identities, self.takes_per_identity, self.exo_per_take,
               self.frames_per_clip, self.dim) <= 0:
            raise ConfigurationError("identity, take, exo, frame and dim counts must be positive")
        if self.n_scenes < 0:
            raise ConfigurationError(f"n_scenes must be nonnegative, got {self.n_scenes}")
        weights = [self.identity_w, self.scene_w, self.take_w, self.view_offset_w,
                   self.sigma_ego, self.sigma_exo, self.ego_attribute_scale, *self.attribute_w.values()]
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ConfigurationError("signal weights and noise levels must be finite and nonnegative")
        unknown = set(self.attribute_w) - {a.value for a in Attribute}
        if unknown:
            raise ConfigurationError(f"unknown attributes in attribute_w: {', '.join(sorted(unknown))}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigurationError(f"test_fraction must lie in [0, 1), got {self.test_fraction}")
        for attribute in Attribute:
            self.prior_vector(attribute)

    def prior_vector(self, attribute: Attribute) -> np.ndarray:
        """
        Class probabilities in class-index order.

        Raises:
            ConfigurationError: unknown classes, negative entries, or a sum off 1 by more than 1e-9
        """
        attribute = Attribute(attribute)
        classes = ATTRIBUTE_CLASSES[attribute]
        given = self.priors.get(attribute.value)
        if given is None:
            return np.full(len(classes), 1.0 / len(classes))
        unknown = set(given) - set(classes)
        if unknown:
            raise ConfigurationError(f"unknown {attribute.value} classes in priors: {', '.join(sorted(unknown))}")
        vector = np.array([float(given.get(name, 0.0)) for name in classes])
        if np.any(vector < 0) or abs(math.fsum(vector) - 1.0) > PROBABILITY_SUM_TOLERANCE:
            raise ConfigurationError(f"{attribute.value} priors must be nonnegative and sum to 1, got {vector.tolist()}")
        return vector

    def attribute_weight(self, attribute: Attribute) -> float:
        return float(self.attribute_w.get(Attribute(attribute).value, 0.0))

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "SynthConfig":
        if values.get("seed") is None:
            raise ConfigurationError("synth config requires 'seed'")
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown synth config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["priors"] = {k: dict(v) for k, v in self.priors.items()}
        values["attribute_w"] = dict(self.attribute_w)
        return values


def _unit_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    directions = rng.standard_normal((count, dim))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def _orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate(config: SynthConfig) -> Dataset:
    """
    Sample a complete benchmark.

    Draw order: demographics, identity/attribute/scene/view directions,
    exo rotation, split shuffle, then per take its scene, take direction and
    clip noise (ego first, then exo clips).

    Returns:
        Dataset: manifest plus ego and exo embedding tables; Train/Test split by identity
    """
    rng = np.random.default_rng(config.seed)
    dim = config.dim
    n_ids = config.n_identities

    demographics = {
        attribute: rng.choice(len(ATTRIBUTE_CLASSES[attribute]), size=n_ids, p=config.prior_vector(attribute))
        for attribute in Attribute
    }
    identity_dirs = _unit_directions(rng, n_ids, dim)
    attribute_dirs = {attribute: _unit_directions(rng, len(ATTRIBUTE_CLASSES[attribute]), dim)
                      for attribute in Attribute}
    scene_dirs = _unit_directions(rng, config.n_scenes, dim) if config.n_scenes else np.zeros((0, dim))
    view_dirs = _unit_directions(rng, 2, dim)
    rotation = _orthogonal(rng, dim) if config.exo_view_rotation else np.eye(dim)

    order = rng.permutation(n_ids)
    n_test = int(round(n_ids * config.test_fraction))
    if config.test_fraction > 0 and n_ids >= 2:
        n_test = min(max(n_test, 1), n_ids - 1)
    test_ids = set(order[:n_test].tolist())

    clips: List[ClipRecord] = []
    ego_rows: Dict[str, np.ndarray] = {}
    exo_rows: Dict[str, np.ndarray] = {}
    noise_scale = 1.0 / math.sqrt(dim)

    for index in range(n_ids):
        identity_id = f"id{index:04d}"
        split = Split.TEST if index in test_ids else Split.TRAIN
        labels = {attribute: ATTRIBUTE_CLASSES[attribute][int(demographics[attribute][index])]
                  for attribute in Attribute}
        attribute_signal = sum(config.attribute_weight(attribute) * attribute_dirs[attribute][int(demographics[attribute][index])]
                               for attribute in Attribute)
        for take in range(config.takes_per_identity):
            take_id = f"{identity_id}_t{take}"
            scene = int(rng.integers(config.n_scenes)) if config.n_scenes else None
            take_dir = _unit_directions(rng, 1, dim)[0]
            shared = config.identity_w * identity_dirs[index] + config.take_w * take_dir
            if scene is not None:
                shared = shared + config.scene_w * scene_dirs[scene]

            views = [(View.EGO, f"{take_id}_ego")]
            views += [(View.EXO, f"{take_id}_exo{j}") for j in range(config.exo_per_take)]
            for view, clip_id in views:
                if view == View.EGO:
                    signal = shared + config.ego_attribute_scale * attribute_signal + config.view_offset_w * view_dirs[0]
                    sigma = config.sigma_ego
                else:
                    signal = rotation @ (shared + attribute_signal) + config.view_offset_w * view_dirs[1]
                    sigma = config.sigma_exo
                noise = rng.standard_normal((config.frames_per_clip, dim)) * (sigma * noise_scale)
                frames = (signal[None, :] + noise).astype(np.float32)
                (ego_rows if view == View.EGO else exo_rows)[clip_id] = frames
                clips.append(ClipRecord(
                    clip_id=clip_id, view=view, identity_id=identity_id, take_id=take_id, split=split,
                    frame_count=config.frames_per_clip,
                    scene_id=f"scene{scene:02d}" if scene is not None else None,
                    gender=labels[Attribute.GENDER], race=labels[Attribute.RACE], age=labels[Attribute.AGE],
                ))

    provenance = {"generator": "egoleak-synth", "gaussian": GAUSSIAN_ALGORITHM, "config": config.to_dict()}
    dataset = Dataset(tuple(clips), EmbeddingTable(dim, ego_rows), EmbeddingTable(dim, exo_rows), provenance)
    logger.info(f"Generated {len(clips)} clips for {n_ids} identities ({n_test} in Test)")
    return dataset
