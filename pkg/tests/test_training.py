"""Losses, optimizer trace, schedule values, freezing, overfit sanity."""

import math

import numpy as np
import pytest

from mtlbench.errors import ConfigError, InputError, StateError
from mtlbench.model import ModelConfig, MotionPredictor
from mtlbench.nn import ParameterStore
from mtlbench.scene import prepare
from mtlbench.tensor import Tensor
from mtlbench.training import (
    AdamW,
    LrSchedule,
    Trainer,
    apply_freeze_mask,
    build_freeze_mask,
    full_scale_schedule,
    gaussian_nll_steps,
    lr_at,
    mode_cross_entropy,
    nearest_mode,
    scale_lr,
    scaled_schedule,
    training_loss,
)

from helpers import check_gradients, tiny_scenario


@pytest.fixture
def config():
    return ModelConfig(dim=16, heads=2, encoder_layers=1, decoder_layers=2, num_modes=4,
                       future_len=8, history_len=5, ffn_dim=16, head_hidden=16,
                       neighbors=4, map_tokens=3)


@pytest.fixture
def model(config):
    m = MotionPredictor(config, seed=31)
    m.set_intentions(np.array([[6.0, 0.0], [-3.0, 2.0], [0.0, 7.0], [5.0, -5.0]]))
    return m


class TestGaussianNll:
    def test_perfect_unit_mode_is_log_2pi_exactly(self):
        t = 6
        gt = np.random.default_rng(0).normal(size=(t, 2))
        raw = np.zeros((t, 5))
        raw[:, 0:2] = gt  # mu = target, log sigma = 0, pre-tanh rho = 0
        nll = gaussian_nll_steps(Tensor(raw), gt)
        np.testing.assert_array_equal(nll.data, np.full(t, math.log(2 * math.pi)))

    def test_growing_sigma_at_the_data_increases_nll(self):
        gt = np.zeros((4, 2))
        raw = np.zeros((4, 5))
        base = gaussian_nll_steps(Tensor(raw), gt).data.mean()
        raw2 = raw.copy()
        raw2[:, 2:4] = math.log(2.0)
        assert gaussian_nll_steps(Tensor(raw2), gt).data.mean() > base

    def test_matches_direct_density_formula(self):
        rng = np.random.default_rng(1)
        raw = rng.normal(size=(5, 5))
        gt = rng.normal(size=(5, 2))
        nll = gaussian_nll_steps(Tensor(raw), gt).data
        mu, ls, rho = raw[:, 0:2], raw[:, 2:4], np.tanh(raw[:, 4])
        sx, sy = np.exp(ls[:, 0]), np.exp(ls[:, 1])
        dx, dy = (gt[:, 0] - mu[:, 0]) / sx, (gt[:, 1] - mu[:, 1]) / sy
        dens = (
            1.0
            / (2 * np.pi * sx * sy * np.sqrt(1 - rho**2))
            * np.exp(-(dx**2 - 2 * rho * dx * dy + dy**2) / (2 * (1 - rho**2)))
        )
        np.testing.assert_allclose(nll, -np.log(dens), atol=1e-12)


class TestCrossEntropy:
    def test_certain_mode_zero_loss(self):
        logits = Tensor(np.array([1000.0, 0.0, 0.0]))
        assert mode_cross_entropy(logits, 0).data == 0.0

    def test_uniform_logits(self):
        logits = Tensor(np.zeros(4))
        assert mode_cross_entropy(logits, 2).data == pytest.approx(math.log(4.0), abs=1e-12)

    def test_nearest_mode_hard_assignment(self):
        intentions = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        assert nearest_mode(intentions, np.array([9.0, 1.0])) == 1
        assert nearest_mode(intentions, np.array([1.0, 9.0])) == 2


class TestTrainingLoss:
    def test_finite_and_composed(self, model, config):
        inputs = prepare(tiny_scenario(seed=2), config.vectorize_config())
        loss, parts = training_loss(model.forward(inputs), inputs, model.intentions)
        assert np.isfinite(loss.data)
        assert {f"nll_{j}" for j in range(config.decoder_layers)} <= set(parts)
        assert "dense_future" in parts

    def test_gradient_check_on_loss(self, model, config):
        inputs = prepare(tiny_scenario(seed=3), config.vectorize_config())
        picks = [
            model.params["decoder.layer1.head.traj.1.b"],
            model.params["encoder.dense.head.0.w"],
            model.params["decoder.dynamic_query.0.w"],
        ]

        def loss():
            val, _ = training_loss(model.forward(inputs), inputs, model.intentions)
            return val

        check_gradients(loss, picks, h=1e-5, tol=1e-4)


class TestAdamW:
    def make_scalar_store(self, theta):
        store = ParameterStore()
        store.register("theta", np.array(theta), "decoder")
        return store

    def test_decay_only_path(self):
        store = self.make_scalar_store(1.0)
        store["theta"].grad = np.array(0.0)
        opt = AdamW(store, weight_decay=0.01)
        opt.step(0.1)
        assert store["theta"].data == pytest.approx(0.999, abs=1e-15)

    def test_zero_decay_zero_grad_is_identity(self):
        store = self.make_scalar_store(1.0)
        store["theta"].grad = np.array(0.0)
        AdamW(store, weight_decay=0.0).step(0.1)
        assert store["theta"].data == 1.0

    def test_hand_computed_single_step_trace(self):
        # theta0=1, g=0.5, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.01
        store = self.make_scalar_store(1.0)
        store["theta"].grad = np.array(0.5)
        AdamW(store).step(0.1)
        m_hat = (0.1 * 0.5) / (1 - 0.9)
        v_hat = (0.001 * 0.25) / (1 - 0.999)
        expect = 1.0 - 0.1 * (m_hat / (math.sqrt(v_hat) + 1e-8) + 0.01 * 1.0)
        assert store["theta"].data == pytest.approx(expect, abs=1e-15)
        assert store["theta"].data == pytest.approx(0.8990, abs=1e-4)

    def test_matches_plain_adaptive_moments_when_decay_zero(self):
        rng = np.random.default_rng(4)
        store = ParameterStore()
        theta0 = rng.normal(size=(3, 2))
        store.register("w", theta0.copy(), "encoder")
        opt = AdamW(store, weight_decay=0.0)
        m = np.zeros_like(theta0)
        v = np.zeros_like(theta0)
        ref = theta0.copy()
        for t in range(1, 6):
            g = rng.normal(size=(3, 2))
            store["w"].grad = g
            opt.step(0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            assert np.abs(store["w"].data - ref).max() < 1e-15

    def test_frozen_param_untouched_and_moments_zero(self):
        store = ParameterStore()
        store.register("enc.w", np.ones(3), "encoder")
        store.register("dec.w", np.ones(3), "decoder")
        store.set_trainable("decoder", False)
        opt = AdamW(store)
        store["enc.w"].grad = np.full(3, 0.2)
        opt.step(0.1)
        np.testing.assert_array_equal(store["dec.w"].data, np.ones(3))
        np.testing.assert_array_equal(opt.m["dec.w"], np.zeros(3))
        np.testing.assert_array_equal(opt.v["dec.w"], np.zeros(3))

    def test_grad_on_frozen_param_is_contract_violation(self):
        store = self.make_scalar_store(1.0)
        store.set_trainable("decoder", False)
        store["theta"].grad = np.array(0.5)
        with pytest.raises(StateError):
            AdamW(store).step(0.1)


class TestSchedule:
    def test_full_scale_plateau_values(self):
        sched = full_scale_schedule()
        assert lr_at(sched, 10) == 1.18e-5
        assert lr_at(sched, 23) == 5.9e-6
        assert lr_at(sched, 25) == 2.9e-6
        assert lr_at(sched, 27) == 1.4e-6
        assert lr_at(sched, 29) == 7e-7
        assert lr_at(sched, 30) == 7e-7

    def test_piecewise_constant_non_increasing(self):
        sched = full_scale_schedule()
        values = [lr_at(sched, e) for e in range(31)]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert len(set(values)) == 5

    def test_negative_epoch_rejected(self):
        with pytest.raises(InputError):
            lr_at(full_scale_schedule(), -1)

    def test_scaled_schedule_shape(self):
        sched = scaled_schedule(1e-3, 10)
        assert lr_at(sched, 0) == 1e-3
        assert lr_at(sched, 7) == 1e-3  # holds through 22/30 of the run
        assert lr_at(sched, 9) < 1e-3
        vals = [lr_at(sched, e) for e in range(10)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_increasing_staircase_rejected(self):
        with pytest.raises(ConfigError):
            LrSchedule((0.0, 5.0), (1e-4, 2e-4))


class TestScaleLr:
    def test_identity(self):
        assert scale_lr(1e-4, 80, 80) == 1e-4

    def test_batch_one_matches_published_rounding(self):
        lr = scale_lr(1e-4, 80, 1)
        assert 1.11e-5 <= lr <= 1.19e-5

    def test_quadruple_batch_doubles(self):
        assert scale_lr(2e-4, 16, 64) == pytest.approx(4e-4, rel=1e-12)

    def test_zero_batch_rejected(self):
        with pytest.raises(InputError):
            scale_lr(1e-4, 0, 1)


class TestFreezeMasks:
    def test_masks(self):
        assert build_freeze_mask("FT") == {"encoder": True, "decoder": True, "auxiliary_new": True}
        assert build_freeze_mask("FTE") == {"encoder": True, "decoder": False, "auxiliary_new": False}
        assert build_freeze_mask("FTD") == {"encoder": False, "decoder": True, "auxiliary_new": False}
        assert build_freeze_mask("FR") == {"encoder": False, "decoder": False, "auxiliary_new": True}

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            build_freeze_mask("XYZ")

    def test_fte_freezes_every_decoder_tensor(self, model):
        apply_freeze_mask(model.params, "FTE")
        for name in model.params.group_names("decoder"):
            assert not model.params[name].requires_grad
        for name in model.params.group_names("encoder"):
            assert model.params[name].requires_grad

    def test_fr_trains_exactly_the_new_tensors(self, model):
        model.add_feature_reuse_blocks()
        apply_freeze_mask(model.params, "FR")
        trainable = set(model.params.trainable_names())
        assert trainable == set(model.params.group_names("auxiliary_new"))


class TestTrainer:
    def test_overfit_small_set_halves_loss(self, config):
        model = MotionPredictor(config, seed=41)
        scenarios = [tiny_scenario(seed=s) for s in range(8)]
        cfg = config.vectorize_config()
        model.fit_intentions_from(scenarios)
        inputs = [prepare(s, cfg) for s in scenarios]
        trainer = Trainer(model, scaled_schedule(1e-2, 16), seed=1)
        log = trainer.run_on(inputs, epochs=16)
        assert log.epoch_losses[-1] < 0.5 * log.epoch_losses[0]

    def test_frozen_tensors_bit_identical_after_training(self, config):
        model = MotionPredictor(config, seed=42)
        scenarios = [tiny_scenario(seed=s) for s in range(4)]
        model.fit_intentions_from(scenarios)
        apply_freeze_mask(model.params, "FTE")
        frozen_before = {n: model.params[n].data.copy() for n in model.params.group_names("decoder")}
        inputs = [prepare(s, config.vectorize_config()) for s in scenarios]
        trainer = Trainer(model, scaled_schedule(1e-3, 2), seed=2)
        trainer.run_on(inputs, epochs=2)
        for name, before in frozen_before.items():
            np.testing.assert_array_equal(model.params[name].data, before)
            np.testing.assert_array_equal(trainer.optimizer.m[name], np.zeros_like(before))

    def test_deterministic_per_seed(self, config):
        def run():
            model = MotionPredictor(config, seed=43)
            scenarios = [tiny_scenario(seed=s) for s in range(4)]
            model.fit_intentions_from(scenarios)
            inputs = [prepare(s, config.vectorize_config()) for s in scenarios]
            Trainer(model, scaled_schedule(1e-3, 3), seed=3).run_on(inputs, epochs=3)
            return model.params.snapshot()

        a, b = run(), run()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
