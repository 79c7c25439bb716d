"""Full model: determinism, checkpoints, feature-reuse blocks, gradient flow."""

import numpy as np
import pytest

from mtlbench.errors import ConfigError, DataFormatError, StateError
from mtlbench.model import ModelConfig, MotionPredictor, load_checkpoint, save_checkpoint
from mtlbench.scene import prepare
from mtlbench.training import training_loss

from helpers import check_gradients, tiny_scenario


@pytest.fixture
def config():
    return ModelConfig(dim=16, heads=2, encoder_layers=1, decoder_layers=1, num_modes=4,
                       future_len=8, history_len=5, ffn_dim=16, head_hidden=16,
                       neighbors=4, map_tokens=3)


@pytest.fixture
def model(config):
    m = MotionPredictor(config, seed=21)
    m.set_intentions(np.array([[6.0, 0.0], [-3.0, 2.0], [0.0, 7.0], [5.0, -5.0]]))
    return m


@pytest.fixture
def inputs(config):
    return prepare(tiny_scenario(seed=13), config.vectorize_config())


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(dim=18)  # not divisible by 4
    with pytest.raises(ConfigError):
        ModelConfig(dim=16, heads=3)


def test_same_seed_same_parameters(config):
    a = MotionPredictor(config, seed=3)
    b = MotionPredictor(config, seed=3)
    for name in a.params.names():
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)


def test_group_partition_exhaustive(model):
    groups = [model.params.group_of(n) for n in model.params.names()]
    assert set(groups) == {"encoder", "decoder"}
    model.add_feature_reuse_blocks()
    new = [n for n in model.params.names() if model.params.group_of(n) == "auxiliary_new"]
    assert new and all(n.startswith("reuse.") for n in new)


def test_predict_returns_valid_set(model, config):
    pred = model.predict(tiny_scenario(seed=14))
    assert pred.num_modes == config.num_modes
    assert pred.horizon == config.future_len
    assert abs(pred.confidences.sum() - 1.0) < 1e-9


class TestCheckpoints:
    def test_round_trip_bit_identical(self, tmp_path, model):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        loaded, opt = load_checkpoint(path)
        assert opt is None
        for name in model.params.names():
            np.testing.assert_array_equal(loaded.params[name].data, model.params[name].data)
        np.testing.assert_array_equal(loaded.intentions, model.intentions)

    def test_round_trip_with_optimizer_state(self, tmp_path, model, inputs):
        from mtlbench.training import AdamW, training_loss

        opt = AdamW(model.params)
        out = model.forward(inputs)
        loss, _ = training_loss(out, inputs, model.intentions)
        model.params.zero_grad()
        loss.backward()
        opt.step(1e-3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, opt.state())
        loaded, state = load_checkpoint(path)
        assert state["step"] == 1
        for name in model.params.names():
            np.testing.assert_array_equal(state["m"][name], opt.m[name])
            np.testing.assert_array_equal(state["v"][name], opt.v[name])

    def test_feature_reuse_flag_restored(self, tmp_path, model):
        model.add_feature_reuse_blocks()
        path = tmp_path / "fr.ckpt"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        assert loaded.feature_reuse
        assert set(loaded.params.names()) == set(model.params.names())

    def test_trainable_flags_persisted(self, tmp_path, model):
        model.params.set_trainable("decoder", False)
        path = tmp_path / "frozen.ckpt"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        for name in loaded.params.names():
            expected = loaded.params.group_of(name) != "decoder"
            assert loaded.params[name].requires_grad == expected

    def test_wrong_architecture_rejected(self, tmp_path, model, config):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        records_ok = load_checkpoint(path)
        assert records_ok
        import json

        from mtlbench.container import CHECKPOINT_VERSION, read_container, write_container

        records = read_container(path, CHECKPOINT_VERSION)
        meta = json.loads(records[0])
        meta["config"]["dim"] = 32
        records[0] = json.dumps(meta, sort_keys=True).encode()
        write_container(path, CHECKPOINT_VERSION, records)
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_dataset_file_rejected_as_checkpoint(self, tmp_path):
        from mtlbench.dataset import save_dataset
        from mtlbench.generate import generate_synthetic

        path = tmp_path / "data.mtlb"
        save_dataset(path, generate_synthetic(1, "target_like", 2), role="target", seed=0)
        with pytest.raises(DataFormatError):
            load_checkpoint(path)


class TestFeatureReuse:
    def test_append_only_preserves_existing_tensors(self, model):
        before = model.params.snapshot()
        model.add_feature_reuse_blocks()
        for name, data in before.items():
            np.testing.assert_array_equal(model.params[name].data, data)

    def test_double_add_is_state_error(self, model):
        model.add_feature_reuse_blocks()
        with pytest.raises(StateError):
            model.add_feature_reuse_blocks()

    def test_forward_shapes_still_valid(self, model, inputs, config):
        model.add_feature_reuse_blocks()
        out = model.forward(inputs)
        assert len(out.layer_outputs) == config.decoder_layers + 1
        pred = model.predict_inputs(inputs)
        assert pred.num_modes == config.num_modes
        assert abs(pred.confidences.sum() - 1.0) < 1e-9


def test_full_model_gradient_check_sampled(model, inputs):
    """Spot-check a representative parameter from every submodule against
    central finite differences (the full sweep runs in the acceptance suite)."""
    picks = {
        "encoder.agents.0.w": None,
        "encoder.layer0.attn.out.b": None,
        "encoder.dense.head.1.w": None,
        "decoder.static_query.0.w": None,
        "decoder.dynamic_query.1.w": None,
        "decoder.layer0.self.q.w": None,
        "decoder.layer0.agents.k.w": None,
        "decoder.layer0.map.v.w": None,
        "decoder.layer0.combine.0.w": None,
        "decoder.layer0.head.traj.1.w": None,
        "decoder.layer0.head.conf.w": None,
    }
    params = [model.params[name] for name in picks]

    def loss():
        out = model.forward(inputs)
        val, _ = training_loss(out, inputs, model.intentions)
        return val

    worst = check_gradients(loss, params, h=1e-5, tol=1e-4)
    assert worst < 1e-4
