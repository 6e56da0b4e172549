import math

import numpy as np
import pandas as pd
import pytest

from conftest import make_clip, make_dataset
from services.embedding_trainer import (
    ContrastiveBatch,
    NegativeCache,
    PairSampler,
    TrainConfig,
    contrast_sets,
    contrastive_objective,
    initialize_heads,
    load_heads,
    save_heads,
    supcon_loss,
    train_embedding,
)
from services.metrics_service import attribute_consistency_at_k, prior_accuracy
from services.retrieval_service import evaluate_retrieval, run_retrieval_task
from utils.constants import Attribute, DenominatorMode, Pooling, PositiveMode, RetrievalTask, Split, View
from utils.error_handling import ConfigurationError, TrainingError, ValidationError
from utils.gradient_check import check_gradients

TOLERANCE = 1e-4


def _unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestSupConLoss:
    def test_equal_similarities_give_log_of_denominator_size(self):
        z_ego = np.zeros((1, 4))
        z_pool = _unit_rows(np.random.default_rng(0), 3, 4)
        standard, _, _ = supcon_loss(z_ego, z_pool, {0: [0]}, {0: [1, 2]}, 0.1)
        literal, _, _ = supcon_loss(z_ego, z_pool, {0: [0]}, {0: [1, 2]}, 0.1, DenominatorMode.LITERAL)
        assert standard == pytest.approx(math.log(3), abs=1e-9)
        assert literal == pytest.approx(math.log(2), abs=1e-9)

    @pytest.mark.parametrize("mode", [DenominatorMode.STANDARD, DenominatorMode.LITERAL])
    def test_matches_a_naive_double_loop(self, mode):
        rng = np.random.default_rng(11)
        z_ego, z_pool = _unit_rows(rng, 8, 6), _unit_rows(rng, 16, 6)
        positives = {i: sorted(rng.choice(16, size=int(rng.integers(1, 4)), replace=False).tolist())
                     for i in range(8)}
        negatives = {i: sorted(rng.choice(16, size=int(rng.integers(2, 10)), replace=False).tolist())
                     for i in range(8)}
        temperature = 0.1
        expected = 0.0
        for i in range(8):
            for k in positives[i]:
                denominator = set(negatives[i]) | ({k} if mode == DenominatorMode.STANDARD else set())
                s = {j: sum(a * b for a, b in zip(z_ego[i], z_pool[j])) / temperature for j in range(16)}
                expected -= (s[k] - math.log(sum(math.exp(s[j]) for j in denominator))) / len(positives[i])
        loss, _, _ = supcon_loss(z_ego, z_pool, positives, negatives, temperature, mode)
        assert loss == pytest.approx(expected, rel=0, abs=1e-10)

    @pytest.mark.parametrize("mode", [DenominatorMode.STANDARD, DenominatorMode.LITERAL])
    def test_gradients_match_finite_differences(self, mode):
        rng = np.random.default_rng(1)
        z = {"ego": _unit_rows(rng, 3, 5), "pool": _unit_rows(rng, 6, 5)}
        positives = {0: [0, 1], 1: [2], 2: [3, 4]}
        negatives = {0: [2, 3, 5], 1: [0, 1, 4, 5], 2: [0, 5]}
        _, d_ego, d_pool = supcon_loss(z["ego"], z["pool"], positives, negatives, 0.5, mode)
        errors = check_gradients(lambda: supcon_loss(z["ego"], z["pool"], positives, negatives, 0.5, mode)[0],
                                 z, {"ego": d_ego, "pool": d_pool})
        assert max(errors.values()) < TOLERANCE, errors

    def test_well_separated_anchor_has_small_loss(self):
        z_ego = np.array([[1.0, 0.0]])
        z_pool = np.array([[1.0, 0.0], [-1.0, 0.0]])
        loss, _, _ = supcon_loss(z_ego, z_pool, {0: [0]}, {0: [1]}, 0.1)
        assert loss < 1e-6

    @pytest.mark.parametrize("positives, negatives, temperature", [
        ({0: []}, {0: [1]}, 0.1),
        ({0: [0]}, {0: []}, 0.1),
        ({0: [0]}, {0: [1]}, 0.0),
    ])
    def test_degenerate_inputs(self, positives, negatives, temperature):
        with pytest.raises(ValidationError):
            supcon_loss(np.ones((1, 2)), np.ones((2, 2)), positives, negatives, temperature)


class TestContrastSets:
    def test_individual_standard(self, tiny_dataset):
        anchors = [tiny_dataset.clip("a_t0_ego"), tiny_dataset.clip("b_t0_ego")]
        batch_exo = [tiny_dataset.clip("a_t0_exo"), tiny_dataset.clip("b_t0_exo")]
        cached = [tiny_dataset.clip("a_t1_exo"), tiny_dataset.clip("b_t1_exo")]
        positives, negatives = contrast_sets(anchors, batch_exo, cached, PositiveMode.INDIVIDUAL,
                                             DenominatorMode.STANDARD)
        # cached clips of the same wearer are neither positives nor negatives
        assert positives == {0: [0], 1: [1]}
        assert negatives == {0: [1, 3], 1: [0, 2]}

    def test_literal_denominator_keeps_other_takes_of_the_wearer(self, tiny_dataset):
        anchors = [tiny_dataset.clip("a_t0_ego")]
        batch_exo = [tiny_dataset.clip("a_t0_exo"), tiny_dataset.clip("a_t1_exo"), tiny_dataset.clip("b_t0_exo")]
        positives, negatives = contrast_sets(anchors, batch_exo, [], PositiveMode.INDIVIDUAL,
                                             DenominatorMode.LITERAL)
        assert positives == {0: [0, 1]}
        assert negatives == {0: [1, 2]}

    def test_situational_links_only_the_same_take(self, tiny_dataset):
        anchors = [tiny_dataset.clip("a_t0_ego")]
        batch_exo = [tiny_dataset.clip("a_t0_exo"), tiny_dataset.clip("a_t1_exo")]
        positives, negatives = contrast_sets(anchors, batch_exo, [], PositiveMode.SITUATIONAL,
                                             DenominatorMode.STANDARD)
        assert positives == {0: [0]}
        assert negatives == {0: [1]}


class TestNegativeCache:
    def test_fifo_eviction_and_read_only_entries(self):
        cache = NegativeCache(2)
        cache.push(["x", "y", "z"], np.eye(3))
        assert cache.clip_ids == ["y", "z"]
        matrix = cache.matrix(3)
        np.testing.assert_array_equal(matrix, np.eye(3)[1:])
        with pytest.raises(ValueError):
            cache._entries[0][1][0] = 5.0

    def test_zero_capacity_disables_the_cache(self):
        cache = NegativeCache(0)
        cache.push(["x"], np.ones((1, 2)))
        assert len(cache) == 0
        assert cache.matrix(2).shape == (0, 2)

    def test_pushed_vectors_are_copies(self):
        cache = NegativeCache(4)
        features = np.ones((1, 2))
        cache.push(["x"], features)
        features[0, 0] = 9.0
        assert cache.matrix(2)[0, 0] == 1.0


class TestObjective:
    @pytest.mark.parametrize("mode", [DenominatorMode.STANDARD, DenominatorMode.LITERAL])
    @pytest.mark.parametrize("pooling", [Pooling.MEAN, Pooling.ATTENTION])
    def test_head_gradients_match_finite_differences(self, tiny_dataset, mode, pooling):
        config = TrainConfig(seed=2, steps=1, output_dim=3, pooling=pooling, frames=2)
        rng = np.random.default_rng(config.seed)
        ego_head, exo_head = initialize_heads(4, 4, config, rng)
        for head in (ego_head, exo_head):
            if "attn_score" in head.params:
                head.params["attn_score"][:] = rng.standard_normal(4)
                head.params["position_bias"][:] = rng.standard_normal(2)
        anchors = [tiny_dataset.clip("a_t0_ego"), tiny_dataset.clip("b_t1_ego")]
        batch_exo = [tiny_dataset.clip(c) for c in ("a_t0_exo", "a_t1_exo", "b_t0_exo", "b_t1_exo")]
        cached_clips = [tiny_dataset.clip("b_t0_exo")]
        positives, negatives = contrast_sets(anchors, batch_exo, cached_clips, PositiveMode.INDIVIDUAL, mode)
        frames = {c.clip_id: rng.standard_normal((2, 4)) for c in anchors + batch_exo}
        batch = ContrastiveBatch(
            ego_ids=[c.clip_id for c in anchors],
            ego_frames=[frames[c.clip_id] for c in anchors],
            exo_ids=[c.clip_id for c in batch_exo],
            exo_frames=[frames[c.clip_id] for c in batch_exo],
            cached=_unit_rows(rng, 1, 3),
            positives=positives,
            negatives=negatives,
        )
        result = contrastive_objective(ego_head, exo_head, batch, 0.5, mode)

        def loss():
            return contrastive_objective(ego_head, exo_head, batch, 0.5, mode).loss

        ego_errors = check_gradients(loss, ego_head.params, result.ego_grads)
        exo_errors = check_gradients(loss, exo_head.params, result.exo_grads)
        assert max(ego_errors.values()) < TOLERANCE, ego_errors
        assert max(exo_errors.values()) < TOLERANCE, exo_errors


class TestConfig:
    def test_seed_and_steps_are_required(self):
        with pytest.raises(ConfigurationError, match="seed"):
            TrainConfig.from_dict({"steps": 10})
        with pytest.raises(ConfigurationError, match="steps"):
            TrainConfig.from_dict({"seed": 0})

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            TrainConfig.from_dict({"seed": 0, "steps": 1, "momentum": 0.9})

    def test_shipped_config_parses(self, shipped_train_values):
        config = TrainConfig.from_dict(shipped_train_values)
        assert TrainConfig.from_dict(config.to_dict()) == config

    @pytest.mark.parametrize("values", [
        {"temperature": 0.0}, {"batch_size": 1}, {"positive_mode": "wearer"}, {"architecture": "OneHiddenMLP"},
    ])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigurationError):
            TrainConfig(seed=0, steps=1, **values)


class TestTraining:
    def test_zero_steps_returns_the_initialization(self, small_synth):
        config = TrainConfig(seed=5, steps=0, output_dim=8)
        result = train_embedding(small_synth, config)
        ego_init, exo_init = initialize_heads(16, 16, config, np.random.default_rng(5))
        for name in ego_init.params:
            np.testing.assert_array_equal(result.ego_head.params[name], ego_init.params[name])
            np.testing.assert_array_equal(result.exo_head.params[name], exo_init.params[name])
        assert result.loss_curve.empty

    def test_same_seed_same_curve(self, small_synth):
        config = TrainConfig(seed=1, steps=5, batch_size=4, learning_rate=0.01, output_dim=8, cache_capacity=8)
        first = train_embedding(small_synth, config)
        second = train_embedding(small_synth, config)
        pd.testing.assert_frame_equal(first.loss_curve, second.loss_curve)
        assert first.ego_head.step == 5

    def test_loss_decreases(self, small_synth):
        config = TrainConfig(seed=0, steps=120, batch_size=4, learning_rate=0.02, weight_decay=0.0,
                             output_dim=8, temperature=0.2, cache_capacity=0)
        curve = train_embedding(small_synth, config).loss_curve
        assert curve["loss"].iloc[-20:].mean() < curve["loss"].iloc[:20].mean()
        assert curve["lr"].iloc[0] == pytest.approx(0.02)

    def test_no_positive_links(self):
        clips = [make_clip("x", "Ego", "p", "t0"), make_clip("y", "Exo", "q", "t1"),
                 make_clip("z", "Ego", "r", "t2")]
        dataset = make_dataset(clips, {c.clip_id: np.ones((2, 3)) for c in clips})
        with pytest.raises(TrainingError, match="no positive links"):
            train_embedding(dataset, TrainConfig(seed=0, steps=1))

    def test_sampler_draws_distinct_groups(self, small_synth):
        sampler = PairSampler(small_synth, PositiveMode.INDIVIDUAL)
        anchors, exo = sampler.sample(np.random.default_rng(0), 4, 2)
        assert len({c.identity_id for c in anchors}) == len(anchors)
        assert all(c.split == Split.TRAIN for c in anchors + exo)
        assert all(c.view == View.EXO for c in exo)

    def test_checkpoint_round_trip(self, tmp_path, small_synth):
        config = TrainConfig(seed=3, steps=2, batch_size=4, output_dim=8)
        result = train_embedding(small_synth, config)
        save_heads(tmp_path / "heads.ckpt", result.ego_head, result.exo_head, config)
        heads = load_heads(tmp_path / "heads.ckpt")
        assert heads.ego_head.step == 2
        for name, value in result.exo_head.params.items():
            np.testing.assert_array_equal(heads.exo_head.params[name], value)


@pytest.mark.slow
class TestTrainingOnShippedBenchmark:
    def test_trained_heads_lift_ego_to_exo_hit_rate_at_5(self, shipped_benchmark):
        dataset, retriever = shipped_benchmark
        task = RetrievalTask.EGO_TO_EXO_IDENTITY
        raw = run_retrieval_task(dataset, task, split=Split.TEST)
        trained = run_retrieval_task(dataset, task, retriever, split=Split.TEST)
        raw_hr = {r.metric_name: r.value for r in evaluate_retrieval(dataset, task, raw, (1, 5), Split.TEST)}
        trained_hr = {r.metric_name: r.value for r in evaluate_retrieval(dataset, task, trained, (1, 5), Split.TEST)}
        assert trained_hr["ego2exo/HR@5"] - raw_hr["ego2exo/HR@5"] >= 0.3
        assert trained_hr["ego2exo/HR@1"] > trained_hr["ego2exo/chance@1"]

    @pytest.mark.parametrize("attribute", [Attribute.GENDER, Attribute.RACE, Attribute.AGE])
    def test_trained_neighbours_share_demographics(self, shipped_benchmark, attribute):
        dataset, retriever = shipped_benchmark
        rankings = run_retrieval_task(dataset, RetrievalTask.EGO_TO_EXO_IDENTITY, retriever, split=Split.TEST)
        labels = dataset.labels(attribute)
        consistency = attribute_consistency_at_k(rankings, labels, 1, attribute.value)
        train = [c.label(attribute) for c in dataset.clips_in(View.EGO, Split.TRAIN) if c.label(attribute)]
        test = [labels[query_id] for query_id in rankings]
        assert consistency.value >= prior_accuracy(train, test).value + 0.2
