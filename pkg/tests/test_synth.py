import numpy as np
import pytest

from services.metrics_service import attribute_consistency_at_k, chance_attribute_consistency
from services.retrieval_service import cosine_similarity, evaluate_retrieval, run_retrieval_task
from services.synth_service import SynthConfig, generate
from utils.constants import RetrievalTask, Split, View
from utils.error_handling import ConfigurationError


class TestDeterminism:
    def test_same_seed_same_bytes(self, small_synth_config):
        first, second = generate(small_synth_config), generate(small_synth_config)
        assert first.manifest() == second.manifest()
        for clip_id, frames in first.ego_embeddings.rows.items():
            assert frames.tobytes() == second.ego_embeddings.rows[clip_id].tobytes()

    def test_different_seed_different_embeddings(self, small_synth_config):
        other = SynthConfig.from_dict({**small_synth_config.to_dict(), "seed": 1})
        first, second = generate(small_synth_config), generate(other)
        clip_id = first.clips[0].clip_id
        assert not np.array_equal(first.frames(clip_id), second.frames(clip_id))


class TestStructure:
    def test_clip_counts_and_ids(self, small_synth):
        ego = small_synth.clips_in(View.EGO)
        exo = small_synth.clips_in(View.EXO)
        assert len(ego) == 12 * 2
        assert len(exo) == 12 * 2 * 2
        assert ego[0].clip_id == "id0000_t0_ego"
        assert exo[0].clip_id == "id0000_t0_exo0"

    def test_splits_are_disjoint_by_identity(self, small_synth):
        train = {c.identity_id for c in small_synth.clips if c.split == Split.TRAIN}
        test = {c.identity_id for c in small_synth.clips if c.split == Split.TEST}
        assert train and test
        assert not train & test
        assert len(test) == 6

    def test_scenes_are_shared_within_a_take(self, small_synth):
        for take_id in {c.take_id for c in small_synth.clips}:
            assert len({c.scene_id for c in small_synth.take_clips(take_id)}) == 1

    def test_attribute_only_signal_without_noise(self):
        config = SynthConfig(seed=0, n_identities=10, takes_per_identity=1, exo_per_take=1, dim=8,
                             identity_w=0.0, attribute_w={"gender": 1.0, "race": 0.0, "age": 0.0},
                             sigma_ego=0.0, sigma_exo=0.0)
        dataset = generate(config)
        by_gender = {}
        for clip in dataset.clips_in(View.EGO):
            by_gender.setdefault(clip.gender, []).append(dataset.frames(clip.clip_id)[0])
        for vectors in by_gender.values():
            for vector in vectors[1:]:
                assert cosine_similarity(vectors[0], vector) == pytest.approx(1.0, abs=1e-6)

    def test_provenance_records_the_config(self, small_synth, small_synth_config):
        assert small_synth.provenance["config"] == small_synth_config.to_dict()


class TestConfigValidation:
    def test_priors_must_sum_to_one(self):
        with pytest.raises(ConfigurationError, match="sum to 1"):
            SynthConfig(seed=0, priors={"gender": {"Female": 0.6, "Male": 0.6}})

    def test_unknown_prior_class(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(seed=0, priors={"gender": {"Other": 1.0}})

    def test_seed_is_required(self):
        with pytest.raises(ConfigurationError, match="seed"):
            SynthConfig.from_dict({"n_identities": 4})

    def test_negative_noise(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(seed=0, sigma_ego=-1.0)

    def test_skewed_priors_are_followed(self):
        dataset = generate(SynthConfig(seed=0, n_identities=400, takes_per_identity=1, exo_per_take=1, dim=4,
                                       priors={"gender": {"Female": 0.9, "Male": 0.1}}))
        female = np.mean([c.gender == "Female" for c in dataset.clips_in(View.EGO)])
        assert abs(female - 0.9) < 3 * np.sqrt(0.09 / 400)


class TestOracles:
    def test_identity_dominant_signal_is_retrievable(self):
        config = SynthConfig(seed=0, n_identities=30, takes_per_identity=2, exo_per_take=2, dim=32,
                             identity_w=3.0, attribute_w={"gender": 0.3, "race": 0.3, "age": 0.3},
                             sigma_ego=0.5, sigma_exo=0.5)
        dataset = generate(config)
        task = RetrievalTask.EGO_TO_EXO_IDENTITY
        rankings = run_retrieval_task(dataset, task, workers=1)
        reports = {r.metric_name: r.value for r in evaluate_retrieval(dataset, task, rankings, (1,))}
        assert reports["ego2exo/HR@1"] >= 0.9

    def test_attribute_clusters_beat_chance_consistency(self):
        config = SynthConfig(seed=0, n_identities=40, takes_per_identity=2, exo_per_take=1, dim=32,
                             identity_w=0.2, attribute_w={"gender": 0.2, "race": 3.0, "age": 0.2},
                             sigma_ego=0.5, sigma_exo=0.5)
        dataset = generate(config)
        rankings = run_retrieval_task(dataset, RetrievalTask.EGO_TO_EXO_IDENTITY, workers=1)
        race = dataset.labels("race")
        report = attribute_consistency_at_k(rankings, race, 1, "race_consistency")
        assert report.value >= chance_attribute_consistency(race) + 0.2

    def test_doubling_every_weight_and_noise_scales_embeddings(self, small_synth_config):
        values = small_synth_config.to_dict()
        doubled = {**values, "identity_w": 2.0, "scene_w": 0.6, "take_w": 0.6,
                   "attribute_w": {k: 2 * v for k, v in values["attribute_w"].items()},
                   "sigma_ego": 1.0, "sigma_exo": 1.0}
        base, scaled = generate(small_synth_config), generate(SynthConfig.from_dict(doubled))
        clip_id = base.clips[0].clip_id
        np.testing.assert_allclose(scaled.frames(clip_id), 2 * base.frames(clip_id), rtol=1e-5, atol=1e-6)
