import numpy as np
import pytest

from services.heads import ClassifierHead, ProjectionHead, pool, pool_backward, pool_forward
from utils.checkpoint_io import load_checkpoint, save_checkpoint
from utils.constants import Architecture, Attribute, Pooling
from utils.error_handling import CheckpointError, ValidationError
from utils.gradient_check import check_gradients, numerical_gradient

TOLERANCE = 1e-4


def _randomize_attention(head, rng):
    if "attn_score" in head.params:
        head.params["attn_score"][:] = rng.standard_normal(head.params["attn_score"].shape)
        head.params["position_bias"][:] = rng.standard_normal(head.params["position_bias"].shape)


class TestPooling:
    def test_mean_pooling(self):
        frames = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(pool(frames), [2.0, 3.0])

    def test_empty_clip(self):
        with pytest.raises(ValidationError):
            pool(np.zeros((0, 3)))

    def test_attention_with_zero_parameters_is_the_mean(self):
        frames = np.random.default_rng(0).standard_normal((5, 3))
        params = {"attn_score": np.zeros(3), "position_bias": np.zeros(8)}
        np.testing.assert_allclose(pool(frames, Pooling.ATTENTION, params), frames.mean(axis=0))

    def test_attention_frame_gradient(self):
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((4, 3))
        params = {"attn_score": rng.standard_normal(3), "position_bias": rng.standard_normal(4)}
        direction = rng.standard_normal(3)
        _, cache = pool_forward(frames, Pooling.ATTENTION, params)
        _, d_frames = pool_backward(direction, cache)
        numeric = numerical_gradient(lambda: float(direction @ pool(frames, Pooling.ATTENTION, params)), frames)
        np.testing.assert_allclose(d_frames, numeric, rtol=1e-5, atol=1e-8)


class TestProjectionHead:
    @pytest.mark.parametrize("architecture", [Architecture.LINEAR, Architecture.ONE_HIDDEN_MLP])
    @pytest.mark.parametrize("pooling", [Pooling.MEAN, Pooling.ATTENTION])
    def test_analytic_gradients_match_finite_differences(self, architecture, pooling):
        rng = np.random.default_rng(7)
        head = ProjectionHead.initialize(architecture, 5, 3, rng, hidden_dim=4, pooling=pooling, max_frames=4)
        _randomize_attention(head, rng)
        frames = rng.standard_normal((4, 5))
        direction = rng.standard_normal(3)
        z, cache = head.forward(frames)
        analytic = head.backward(direction, cache)
        errors = check_gradients(lambda: float(direction @ head.forward(frames)[0]), head.params, analytic)
        assert max(errors.values()) < TOLERANCE, errors

    def test_outputs_are_unit_norm(self):
        head = ProjectionHead.initialize(Architecture.LINEAR, 6, 4, np.random.default_rng(0))
        z = head.embed(np.random.default_rng(1).standard_normal((3, 6)))
        assert np.linalg.norm(z) == pytest.approx(1.0)

    def test_seeded_initialization_is_reproducible(self):
        first = ProjectionHead.initialize(Architecture.LINEAR, 6, 4, np.random.default_rng(3))
        second = ProjectionHead.initialize(Architecture.LINEAR, 6, 4, np.random.default_rng(3))
        for name in first.params:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_mlp_needs_hidden_dim(self):
        with pytest.raises(ValidationError):
            ProjectionHead.initialize(Architecture.ONE_HIDDEN_MLP, 6, 4, np.random.default_rng(0))

    def test_description_round_trip(self):
        head = ProjectionHead.initialize(Architecture.ONE_HIDDEN_MLP, 6, 4, np.random.default_rng(0),
                                         hidden_dim=5, pooling=Pooling.ATTENTION)
        head.step = 12
        clone = ProjectionHead.from_description(head.describe(), head.params)
        assert clone.describe() == head.describe()

    def test_description_with_missing_parameter(self):
        head = ProjectionHead.initialize(Architecture.LINEAR, 6, 4, np.random.default_rng(0))
        params = dict(head.params)
        del params["b1"]
        with pytest.raises(CheckpointError):
            ProjectionHead.from_description(head.describe(), params)


class TestClassifierHead:
    @pytest.mark.parametrize("pooling", [Pooling.MEAN, Pooling.ATTENTION])
    def test_cross_entropy_gradients(self, pooling):
        rng = np.random.default_rng(4)
        head = ClassifierHead.initialize(Attribute.RACE, 4, pooling=pooling, max_frames=3)
        head.params["weight"][:] = rng.standard_normal(head.params["weight"].shape)
        head.params["bias"][:] = rng.standard_normal(3)
        _randomize_attention(head, rng)
        frames = rng.standard_normal((3, 4))
        _, analytic, d_frames = head.cross_entropy(frames, 2)
        errors = check_gradients(lambda: head.cross_entropy(frames, 2)[0], head.params, analytic)
        assert max(errors.values()) < TOLERANCE, errors
        numeric = numerical_gradient(lambda: head.cross_entropy(frames, 2)[0], frames)
        np.testing.assert_allclose(d_frames, numeric, rtol=1e-5, atol=1e-8)

    def test_prior_bias_predicts_the_prior(self):
        head = ClassifierHead.initialize(Attribute.GENDER, 3, class_prior=[0.25, 0.75])
        np.testing.assert_allclose(head.probabilities(np.ones((2, 3))), [0.25, 0.75])

    def test_unknown_class_label(self):
        head = ClassifierHead.initialize(Attribute.AGE, 3)
        assert head.class_index("Senior") == 2
        with pytest.raises(ValidationError):
            head.class_index("Elderly")


class TestCheckpointFiles:
    def test_round_trip(self, tmp_path):
        arrays = [("w", np.arange(6.0).reshape(2, 3)), ("b", np.array([0.5, -1.0]))]
        save_checkpoint(tmp_path / "h.ckpt", {"kind": "test"}, arrays)
        header, loaded = load_checkpoint(tmp_path / "h.ckpt")
        assert header["kind"] == "test"
        assert list(loaded) == ["w", "b"]
        np.testing.assert_array_equal(loaded["w"], arrays[0][1])

    def test_truncated_blob(self, tmp_path):
        save_checkpoint(tmp_path / "h.ckpt", {"kind": "test"}, [("w", np.ones(4))])
        payload = (tmp_path / "h.ckpt").read_bytes()
        (tmp_path / "h.ckpt").write_bytes(payload[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "h.ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.ckpt")
