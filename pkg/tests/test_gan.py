import numpy as np
import pytest

from foregan import gan
from foregan.dataio import SynthConfig, synth_generate
from foregan.errors import ContractError, DimensionError
from foregan.optim import AdamState


def test_sample_latent_shape_and_range():
    z = gan.sample_latent(np.random.default_rng(0), 100)
    assert z.shape == (100,)
    assert z.min() >= -1 and z.max() <= 1


def test_sample_latent_seeded_repeat():
    a = gan.sample_latent(np.random.default_rng(5), 100)
    b = gan.sample_latent(np.random.default_rng(5), 100)
    np.testing.assert_array_equal(a, b)


def test_sample_latent_mean_near_zero():
    # std of the mean of 1e4 uniform(-1, 1) draws is 0.0058; 0.02 is > 3 sigma
    z = gan.sample_latent(np.random.default_rng(1), 1, 10_000)
    assert abs(z.mean()) < 0.02


def test_sample_latent_rejects_zero_dim():
    with pytest.raises(ContractError):
        gan.sample_latent(np.random.default_rng(0), 0)


def test_generate_shape_and_range_at_64():
    model = gan.init_model(latent_dim=100, image_size=64, channels=1, seed=0)
    z = gan.sample_latent(np.random.default_rng(0), 100)
    img = gan.generate(model, z)
    assert img.shape == (1, 1, 64, 64)
    assert np.all(np.abs(img) <= 1)


def test_generate_multichannel_and_other_sizes():
    for size, ch in ((8, 3), (32, 2)):
        model = gan.init_model(latent_dim=5, image_size=size, channels=ch, width=4, seed=1)
        img = gan.generate(model, np.zeros(5))
        assert img.shape == (1, ch, size, size)


def test_generate_is_deterministic_and_per_sample(small_model):
    z = gan.sample_latent(np.random.default_rng(2), 8, 4)
    batch = gan.generate(small_model, z)
    np.testing.assert_array_equal(batch, gan.generate(small_model, z))
    # frozen statistics: a sample does not depend on its batch mates
    np.testing.assert_allclose(batch[2:3], gan.generate(small_model, z[2]), atol=1e-6)


def test_generate_wrong_latent_length(small_model):
    with pytest.raises(DimensionError):
        gan.generate(small_model, np.zeros(9))


def test_image_size_must_be_power_of_two_multiple_of_four():
    for bad in (4, 12, 48, 100):
        with pytest.raises(ContractError):
            gan.init_model(image_size=bad)


def test_discriminate_single_value_near_half_when_untrained(small_model):
    x = np.random.default_rng(3).uniform(-1, 1, (1, 16, 16))
    p = gan.discriminate(small_model, x)
    assert isinstance(p, float)
    assert 0 < p < 1
    assert abs(p - 0.5) < 0.05


def test_outputs_stay_in_range_on_random_inputs(small_model):
    rng = np.random.default_rng(4)
    img = gan.generate(small_model, rng.normal(0, 10, (32, 8)))
    assert np.all(np.abs(img) <= 1)
    p = gan.discriminate(small_model, rng.uniform(-1, 1, (32, 1, 16, 16)))
    assert np.all((p > 0) & (p < 1))


def test_discriminate_shape_mismatch(small_model):
    with pytest.raises(DimensionError):
        gan.discriminate(small_model, np.zeros((1, 32, 32)))
    with pytest.raises(DimensionError):
        gan.discriminate(small_model, np.zeros((3, 16, 16)))


def _step_setup(model, seed=0):
    cfg = gan.TrainConfig(latent_dim=model.latent_dim, batch_size=4)
    dstate, gstate = gan.make_optimizers(model, cfg)
    batch = np.random.default_rng(seed).uniform(-1, 1, (4, 1, 16, 16)).astype(np.float32)
    return batch, dstate, gstate


def test_train_step_losses_finite_positive(small_model):
    batch, dstate, gstate = _step_setup(small_model)
    d, g = gan.train_step(small_model, batch, dstate, gstate, np.random.default_rng(0))
    assert np.isfinite(d) and np.isfinite(g)
    assert d > 0 and g > 0


def test_train_step_untrained_losses_match_chance(small_model):
    # D outputs ~0.5 everywhere, so bce terms sit near log 2
    batch, dstate, gstate = _step_setup(small_model)
    d, g = gan.train_step(small_model, batch, dstate, gstate, np.random.default_rng(0))
    assert d == pytest.approx(2 * np.log(2), abs=0.05)
    assert g == pytest.approx(np.log(2), abs=0.05)


def test_train_step_empty_batch(small_model):
    _, dstate, gstate = _step_setup(small_model)
    with pytest.raises(ContractError):
        gan.train_step(small_model, np.zeros((0, 1, 16, 16)), dstate, gstate, np.random.default_rng(0))


class _Recorder(AdamState):
    """Snapshots the other network's parameters at each update."""

    def __init__(self, params, watch, log, **kw):
        super().__init__(params, **kw)
        self.watch, self.log = watch, log

    def step(self, params, grads):
        self.log.append({k: v.copy() for k, v in self.watch.items()})
        super().step(params, grads)
        self.log.append({k: v.copy() for k, v in self.watch.items()})


def test_train_step_parameter_isolation(small_model):
    batch, _, _ = _step_setup(small_model)
    m = small_model
    dlog, glog = [], []
    dstate = _Recorder(m.disc_params, m.gen_params, dlog, lr=1e-2, beta1=0.5)
    gstate = _Recorder(m.gen_params, m.disc_params, glog, lr=1e-2, beta1=0.5)
    before = m.snapshot()
    gan.train_step(m, batch, dstate, gstate, np.random.default_rng(0))
    # generator untouched by the D update, discriminator untouched by the G update
    for k in m.gen_params:
        np.testing.assert_array_equal(dlog[0][k], dlog[1][k])
        np.testing.assert_array_equal(dlog[0][k], before["gen"][k])
    for k in m.disc_params:
        np.testing.assert_array_equal(glog[0][k], glog[1][k])
    # both networks did move overall
    assert any(not np.array_equal(before["gen"][k], m.gen_params[k]) for k in m.gen_params)
    assert any(not np.array_equal(before["disc"][k], m.disc_params[k]) for k in m.disc_params)


def test_train_zero_steps_returns_init():
    train, _ = synth_generate(SynthConfig(n_background=4, n_test=0, size=16, object_size_px=4))
    model, history = gan.train(train, gan.TrainConfig(latent_dim=8, steps=0, width=4))
    assert history.shape == (0, 2)
    assert model.image_shape == (1, 16, 16)


def test_train_empty_dataset():
    with pytest.raises(ContractError):
        gan.train([], gan.TrainConfig(steps=1))


def test_train_config_contract():
    with pytest.raises(ContractError):
        gan.TrainConfig(lr=0)
    with pytest.raises(ContractError):
        gan.TrainConfig(batch_size=0)
    with pytest.raises(ContractError):
        gan.TrainConfig(steps=-1)


def test_train_seeded_bit_identical():
    train, _ = synth_generate(SynthConfig(n_background=6, n_test=0, size=16, object_size_px=4))
    cfg = gan.TrainConfig(latent_dim=8, batch_size=4, steps=5, width=4, seed=11)
    m1, h1 = gan.train(train, cfg)
    m2, h2 = gan.train(train, cfg)
    np.testing.assert_array_equal(h1, h2)
    for a, b in zip(m1.snapshot().values(), m2.snapshot().values()):
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


def test_train_losses_stay_finite():
    train, _ = synth_generate(SynthConfig(n_background=8, n_test=0, size=16, object_size_px=4))
    _, history = gan.train(train, gan.TrainConfig(latent_dim=8, batch_size=4, steps=30, width=4,
                                                  lr=1e-2))
    assert np.all(np.isfinite(history))


def test_one_image_smoke_training():
    train, _ = synth_generate(SynthConfig(n_background=1, n_test=0))
    model, _ = gan.train(train, gan.TrainConfig(steps=200))
    z = gan.sample_latent(np.random.default_rng(7), model.latent_dim, 16)
    err = np.abs(gan.generate(model, z) - train.frames[0]).mean()
    assert err < 0.1


# -- trained desk-scale model (shared session fixture) ---------------------------

def test_trained_distinct_latents_give_distinct_images(desk):
    z = gan.sample_latent(np.random.default_rng(8), desk.model.latent_dim, 2)
    img = gan.generate(desk.model, z)
    assert np.abs(img[0] - img[1]).sum() > 0


def test_trained_discriminator_prefers_real(desk):
    held, _ = synth_generate(SynthConfig(seed=99, n_test=0))
    real = gan.discriminate(desk.model, held.batch()[:200])
    fake = gan.discriminate(desk.model, gan.generate(
        desk.model, gan.sample_latent(np.random.default_rng(9), desk.model.latent_dim, 200)))
    assert real.mean() > fake.mean()
    acc = ((real > 0.5).mean() + (fake < 0.5).mean()) / 2
    assert 0.5 <= acc <= 0.95
