"""Shared fixtures: hand-built datasets, synthetic benchmarks and bundles."""

import json
from pathlib import Path

import numpy as np
import pytest

from services.dataset_service import ClipRecord, Dataset, save_dataset
from services.embedding_store import EmbeddingTable
from services.embedding_trainer import TrainConfig, train_embedding
from services.synth_service import SynthConfig, generate
from utils.constants import Split, View

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "configs"


def make_clip(clip_id, view, identity_id, take_id, split="Train", frame_count=2, scene_id=None,
              gender="Female", race="Asian", age="Young"):
    return ClipRecord(clip_id, View(view), identity_id, take_id, Split(split), frame_count,
                      scene_id, gender, race, age)


def make_dataset(clips, vectors, dim=None):
    """Build a Dataset from clip records and clip_id -> frame matrix."""
    dim = dim or next(iter(vectors.values())).shape[1]
    ego = {c.clip_id: vectors[c.clip_id] for c in clips if c.view == View.EGO}
    exo = {c.clip_id: vectors[c.clip_id] for c in clips if c.view == View.EXO}
    return Dataset(tuple(clips), EmbeddingTable(dim, ego), EmbeddingTable(dim, exo), {"source": "test"})


@pytest.fixture
def tiny_dataset():
    """
    Two wearers, two takes each, one ego and one exo clip per take.

    id_a is Female/Asian/Young (Train), id_b is Male/White/Senior (Test).
    Frame vectors are hand-picked axis directions so rankings are obvious.
    """
    e = np.eye(4, dtype=np.float32)
    specs = [
        ("a_t0_ego", "Ego", "id_a", "a_t0", "Train", "s0", "Female", "Asian", "Young", e[0] + 0.1 * e[2]),
        ("a_t0_exo", "Exo", "id_a", "a_t0", "Train", "s0", "Female", "Asian", "Young", e[0] + 0.1 * e[3]),
        ("a_t1_ego", "Ego", "id_a", "a_t1", "Train", "s1", "Female", "Asian", "Young", e[0] + 0.2 * e[1]),
        ("a_t1_exo", "Exo", "id_a", "a_t1", "Train", "s1", "Female", "Asian", "Young", e[0] + 0.3 * e[1]),
        ("b_t0_ego", "Ego", "id_b", "b_t0", "Test", "s0", "Male", "White", "Senior", e[1] + 0.1 * e[2]),
        ("b_t0_exo", "Exo", "id_b", "b_t0", "Test", "s0", "Male", "White", "Senior", e[1] + 0.1 * e[3]),
        ("b_t1_ego", "Ego", "id_b", "b_t1", "Test", "s1", "Male", "White", "Senior", e[1] + 0.2 * e[0]),
        ("b_t1_exo", "Exo", "id_b", "b_t1", "Test", "s1", "Male", "White", "Senior", e[1] + 0.3 * e[0]),
    ]
    clips, vectors = [], {}
    for clip_id, view, identity, take, split, scene, gender, race, age, vector in specs:
        clips.append(make_clip(clip_id, view, identity, take, split, 2, scene, gender, race, age))
        vectors[clip_id] = np.stack([vector, vector])
    return make_dataset(clips, vectors, 4)


@pytest.fixture
def small_synth_config():
    return SynthConfig(
        seed=0, n_identities=12, takes_per_identity=2, exo_per_take=2, frames_per_clip=4, n_scenes=3, dim=16,
        identity_w=1.0, attribute_w={"gender": 0.8, "race": 0.8, "age": 0.8}, scene_w=0.3, take_w=0.3,
        sigma_ego=0.5, sigma_exo=0.5, test_fraction=0.5,
    )


@pytest.fixture
def small_synth(small_synth_config):
    return generate(small_synth_config)


@pytest.fixture
def shipped_train_values():
    with open(CONFIG_DIR / "train_default.json", encoding="utf-8") as handle:
        return json.load(handle)


@pytest.fixture(scope="session")
def shipped_benchmark():
    """The shipped synthetic benchmark and the heads trained on it, built once per session."""
    with open(CONFIG_DIR / "synth_default.json", encoding="utf-8") as handle:
        dataset = generate(SynthConfig.from_dict(json.load(handle)))
    with open(CONFIG_DIR / "train_default.json", encoding="utf-8") as handle:
        result = train_embedding(dataset, TrainConfig.from_dict(json.load(handle)))
    return dataset, result.retriever


@pytest.fixture
def bundle(tmp_path, small_synth):
    return save_dataset(small_synth, tmp_path / "bundle")
