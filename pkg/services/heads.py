"""
Projection and classifier heads with analytic gradients.

This module provides:
- Temporal pooling of frame embeddings (mean, or attention with a
  per-position bias) with forward and backward passes
- ProjectionHead: Linear or one-hidden-layer MLP followed by L2
  normalization, mapping a view into the joint ego/exo space
- ClassifierHead: one affine layer plus softmax over a pooled clip

Every forward pass returns a cache that the matching backward pass
consumes; gradients come back as dicts keyed like ``head.params``.
All math is float64.

Author: EgoLeak Team
Version: 1.0.0
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from utils.constants import ATTRIBUTE_CLASSES, Architecture, Attribute, Pooling
from utils.error_handling import CheckpointError, ValidationError

Params = Dict[str, np.ndarray]

# =============================================================================
# Pooling
# =============================================================================

def _positions(n_frames: int, max_frames: int) -> np.ndarray:
    return np.minimum(np.arange(n_frames), max_frames - 1)


def pool_forward(frames: np.ndarray, pooling: Pooling, params: Params,
                 mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Pool a T x D frame matrix into one D vector.

    Args:
        frames: frame embeddings
        pooling: Mean, or Attention (softmax over ``attn_score . x_t + position_bias[t]``)
        params: head parameters; Attention reads ``attn_score`` and ``position_bias``
        mask: optional per-frame multiplier applied to the frames before pooling

    Returns:
        (pooled vector, cache for ``pool_backward``)
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValidationError(f"frame matrix must be nonempty T x D, got shape {frames.shape}")
    effective = frames if mask is None else frames * mask[:, None]
    cache: Dict[str, Any] = {"pooling": Pooling(pooling), "effective": effective}

    if Pooling(pooling) == Pooling.MEAN:
        return effective.mean(axis=0), cache

    score_vector = params["attn_score"]
    if score_vector.shape[0] != frames.shape[1]:
        raise ValidationError(f"attention expects dim {score_vector.shape[0]}, got {frames.shape[1]}")
    positions = _positions(frames.shape[0], params["position_bias"].shape[0])
    scores = effective @ score_vector + params["position_bias"][positions]
    weights = softmax(scores)
    cache.update(weights=weights, positions=positions, score_vector=score_vector,
                 n_positions=params["position_bias"].shape[0])
    return weights @ effective, cache


def pool_backward(d_pooled: np.ndarray, cache: Dict[str, Any]) -> Tuple[Params, np.ndarray]:
    """
    Backward pass of ``pool_forward``.

    Returns:
        (parameter gradients, gradient w.r.t. the masked frame matrix)
    """
    effective = cache["effective"]
    n_frames = effective.shape[0]
    if cache["pooling"] == Pooling.MEAN:
        return {}, np.tile(d_pooled / n_frames, (n_frames, 1))

    weights = cache["weights"]
    d_weights = effective @ d_pooled
    d_scores = weights * (d_weights - weights @ d_weights)
    d_position = np.zeros(cache["n_positions"])
    np.add.at(d_position, cache["positions"], d_scores)
    d_frames = np.outer(weights, d_pooled) + np.outer(d_scores, cache["score_vector"])
    return {"attn_score": d_scores @ effective, "position_bias": d_position}, d_frames


def pool(frames: np.ndarray, pooling: Pooling = Pooling.MEAN, params: Optional[Params] = None) -> np.ndarray:
    """Pooled clip vector; Mean needs no parameters."""
    return pool_forward(frames, pooling, params or {})[0]


def _init_attention(params: Params, input_dim: int, max_frames: int) -> None:
    params["attn_score"] = np.zeros(input_dim)
    params["position_bias"] = np.zeros(max_frames)


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# =============================================================================
# Projection Head
# =============================================================================

@dataclass(eq=False)
class ProjectionHead:
    """
    Maps a clip's frames into the joint retrieval space.

    Parameters: ``w1``/``b1`` (and ``w2``/``b2`` for the MLP, tanh hidden
    layer), plus attention parameters when pooling is Attention. Outputs
    are L2-normalized.
    """
    architecture: Architecture
    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    pooling: Pooling = Pooling.MEAN
    max_frames: int = 8
    params: Params = field(default_factory=dict)
    step: int = 0

    @classmethod
    def initialize(cls, architecture: Architecture, input_dim: int, output_dim: int,
                   rng: np.random.Generator, hidden_dim: int = 0,
                   pooling: Pooling = Pooling.MEAN, max_frames: int = 8) -> "ProjectionHead":
        """Seeded init: weights and biases uniform in +-1/sqrt(fan_in), attention at zero."""
        architecture = Architecture(architecture)
        params: Params = {}
        if architecture == Architecture.LINEAR:
            params["w1"] = _uniform(rng, (output_dim, input_dim), input_dim)
            params["b1"] = _uniform(rng, (output_dim,), input_dim)
        else:
            if hidden_dim <= 0:
                raise ValidationError("OneHiddenMLP needs a positive hidden_dim")
            params["w1"] = _uniform(rng, (hidden_dim, input_dim), input_dim)
            params["b1"] = _uniform(rng, (hidden_dim,), input_dim)
            params["w2"] = _uniform(rng, (output_dim, hidden_dim), hidden_dim)
            params["b2"] = _uniform(rng, (output_dim,), hidden_dim)
        if Pooling(pooling) == Pooling.ATTENTION:
            _init_attention(params, input_dim, max_frames)
        return cls(architecture, input_dim, output_dim, hidden_dim, Pooling(pooling), max_frames, params)

    def forward(self, frames: np.ndarray) -> Tuple[np.ndarray, Dict[str, Any]]:
        """Unit-norm embedding of one clip plus the backward cache."""
        pooled, pool_cache = pool_forward(frames, self.pooling, self.params)
        cache: Dict[str, Any] = {"pool": pool_cache, "pooled": pooled}
        if self.architecture == Architecture.LINEAR:
            h = self.params["w1"] @ pooled + self.params["b1"]
        else:
            hidden = np.tanh(self.params["w1"] @ pooled + self.params["b1"])
            cache["hidden"] = hidden
            h = self.params["w2"] @ hidden + self.params["b2"]
        norm = np.linalg.norm(h)
        if norm == 0.0 or not np.isfinite(norm):
            raise ValidationError("projection produced a zero or non-finite vector")
        z = h / norm
        cache.update(z=z, norm=norm)
        return z, cache

    def backward(self, d_z: np.ndarray, cache: Dict[str, Any]) -> Params:
        """Gradients of all parameters given dLoss/dz for one clip."""
        z, norm = cache["z"], cache["norm"]
        d_h = (d_z - z * (z @ d_z)) / norm
        grads: Params = {}
        if self.architecture == Architecture.LINEAR:
            grads["w1"] = np.outer(d_h, cache["pooled"])
            grads["b1"] = d_h
            d_pooled = self.params["w1"].T @ d_h
        else:
            hidden = cache["hidden"]
            grads["w2"] = np.outer(d_h, hidden)
            grads["b2"] = d_h
            d_pre = (self.params["w2"].T @ d_h) * (1.0 - hidden ** 2)
            grads["w1"] = np.outer(d_pre, cache["pooled"])
            grads["b1"] = d_pre
            d_pooled = self.params["w1"].T @ d_pre
        pool_grads, _ = pool_backward(d_pooled, cache["pool"])
        grads.update(pool_grads)
        return grads

    def embed(self, frames: np.ndarray) -> np.ndarray:
        return self.forward(frames)[0]

    def embed_many(self, frame_list: Sequence[np.ndarray]) -> np.ndarray:
        return np.stack([self.embed(frames) for frames in frame_list])

    def zero_grads(self) -> Params:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.architecture, self.input_dim, self.output_dim, self.hidden_dim,
                              self.pooling, self.max_frames,
                              {k: v.copy() for k, v in self.params.items()}, self.step)

    def describe(self) -> Dict[str, Any]:
        return {
            "architecture": self.architecture.value,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_dim": self.hidden_dim,
            "pooling": self.pooling.value,
            "max_frames": self.max_frames,
            "step": self.step,
        }

    @classmethod
    def from_description(cls, description: Dict[str, Any], params: Params) -> "ProjectionHead":
        head = cls(Architecture(description["architecture"]), description["input_dim"],
                   description["output_dim"], description["hidden_dim"], Pooling(description["pooling"]),
                   description["max_frames"], dict(params), description.get("step", 0))
        expected = set(cls.initialize(head.architecture, head.input_dim, head.output_dim,
                                      np.random.default_rng(0), head.hidden_dim, head.pooling,
                                      head.max_frames).params)
        if set(params) != expected:
            raise CheckpointError(f"projection head parameters {sorted(params)} do not match {sorted(expected)}")
        for name, value in params.items():
            if not np.all(np.isfinite(value)):
                raise CheckpointError(f"non-finite weights in {name}")
        return head


# =============================================================================
# Classifier Head
# =============================================================================

@dataclass(eq=False)
class ClassifierHead:
    """
    One affine layer plus softmax over a pooled clip embedding.

    Class index i corresponds to ``classes[i]``.
    """
    attribute: Attribute
    classes: Tuple[str, ...]
    input_dim: int
    pooling: Pooling = Pooling.MEAN
    max_frames: int = 8
    params: Params = field(default_factory=dict)
    step: int = 0

    @classmethod
    def initialize(cls, attribute: Attribute, input_dim: int, pooling: Pooling = Pooling.MEAN,
                   max_frames: int = 8, class_prior: Optional[Sequence[float]] = None) -> "ClassifierHead":
        """
        Zero weights with the bias at the log class prior (uniform when no prior is given).

        At step 0 the head therefore predicts the training majority class.
        """
        attribute = Attribute(attribute)
        classes = ATTRIBUTE_CLASSES[attribute]
        params: Params = {"weight": np.zeros((len(classes), input_dim)), "bias": np.zeros(len(classes))}
        if class_prior is not None:
            prior = np.asarray(class_prior, dtype=np.float64)
            params["bias"] = np.log(np.clip(prior, 1e-12, None))
        if Pooling(pooling) == Pooling.ATTENTION:
            _init_attention(params, input_dim, max_frames)
        return cls(attribute, classes, input_dim, Pooling(pooling), max_frames, params)

    def logits(self, frames: np.ndarray, mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Dict[str, Any]]:
        pooled, pool_cache = pool_forward(frames, self.pooling, self.params, mask)
        return self.params["weight"] @ pooled + self.params["bias"], {"pool": pool_cache, "pooled": pooled}

    def probabilities(self, frames: np.ndarray) -> np.ndarray:
        return softmax(self.logits(frames)[0])

    def cross_entropy(self, frames: np.ndarray, label_index: int,
                      mask: Optional[np.ndarray] = None) -> Tuple[float, Params, np.ndarray]:
        """
        Cross-entropy of one clip with gradients.

        Returns:
            (loss, parameter gradients, gradient w.r.t. the masked frame matrix)
        """
        logits, cache = self.logits(frames, mask)
        log_probs = logits - logsumexp(logits)
        probs = np.exp(log_probs)
        d_logits = probs.copy()
        d_logits[label_index] -= 1.0
        grads: Params = {"weight": np.outer(d_logits, cache["pooled"]), "bias": d_logits}
        d_pooled = self.params["weight"].T @ d_logits
        pool_grads, d_frames = pool_backward(d_pooled, cache["pool"])
        grads.update(pool_grads)
        return float(-log_probs[label_index]), grads, d_frames

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ValidationError(f"{label!r} is not a {self.attribute.value} class")

    def zero_grads(self) -> Params:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def describe(self) -> Dict[str, Any]:
        return {
            "attribute": self.attribute.value,
            "classes": list(self.classes),
            "input_dim": self.input_dim,
            "pooling": self.pooling.value,
            "max_frames": self.max_frames,
            "step": self.step,
        }

    @classmethod
    def from_description(cls, description: Dict[str, Any], params: Params) -> "ClassifierHead":
        attribute = Attribute(description["attribute"])
        if tuple(description["classes"]) != ATTRIBUTE_CLASSES[attribute]:
            raise CheckpointError(f"classifier classes {description['classes']} do not match {attribute.value}")
        for name, value in params.items():
            if not np.all(np.isfinite(value)):
                raise CheckpointError(f"non-finite weights in {name}")
        return cls(attribute, ATTRIBUTE_CLASSES[attribute], description["input_dim"],
                   Pooling(description["pooling"]), description["max_frames"], dict(params),
                   description.get("step", 0))


def accumulate(total: Params, grads: Params, scale: float = 1.0) -> None:
    """In-place ``total += scale * grads`` for matching keys."""
    for name, grad in grads.items():
        total[name] += scale * grad
