"""Smoke tests for the tascforge python bindings."""

import math

import pytest

import tascforge as tf

SPACE_TEXT = """
space.conv_slots = 1
space.conv.filter_size = 1,3
space.conv.num_filters = 32,64
space.conv.activation = relu,tanh
space.pool = off
space.fc_slots = 1
space.fc.neurons = 64,128
space.fc.activation = relu
space.fc.dropout = 0.1,0.3,0.5
"""

RUN_CONFIG = """
seed = 9
data.kind = synthetic
data.classes = 3
data.samples_per_class = 20
data.height = 8
data.width = 8
data.channels = 1
data.val_fraction = 0.25
backbone.layers = conv:3:8:relu, pool:2:2
pretrain.epochs = 4
space.conv_slots = 0
space.pool = off
space.fc_slots = 1
space.fc.neurons = 16,32
space.fc.activation = relu
space.fc.dropout = 0.1,0.2
bo.k0 = 2
bo.budget = 3
bo.candidates_per_step = 32
bo.proxy_epochs = 3
prune.rate = 0.25
prune.min_diff = 1.0
prune.epochs_each = 2
prune.eligibility_threshold = 5
"""


def test_expected_improvement_value():
    assert abs(tf.expected_improvement(0.5, 1.0, 0.5) - 1.0 / math.sqrt(2 * math.pi)) < 1e-9
    assert tf.expected_improvement(0.2, 0.0, 0.5) == 0.0
    assert tf.expected_improvement(0.8, 0.0, 0.5) == pytest.approx(0.3)


def test_gp_interpolates_noise_free_targets():
    x = [[0.1, 0.2], [0.8, 0.3], [0.4, 0.9], [0.6, 0.6], [0.2, 0.7]]
    y = [0.5, 0.7, 0.4, 0.9, 0.6]
    gp = tf.GaussianProcess(x, y)
    for xi, yi in zip(x, y):
        mean, var = gp.posterior(xi)
        assert abs(mean - yi) < 1e-3  # tiny grid noise remains
        assert var < 1e-3
    assert gp.prior_mean == pytest.approx(sum(y) / len(y))


def test_searchspace_roundtrip_and_enumeration():
    space = tf.space_from_config_text(SPACE_TEXT)
    assert space.config_count(10000) == 8 * 6
    configs = tf.enumerate_space(space, 100)
    assert len(configs) == 48
    for seed in range(20):
        config = tf.sample_uniform(space, seed)
        vec = tf.encode(space, config)
        assert all(0.0 <= v <= 1.0 for v in vec)
        assert tf.decode(space, vec) == config


def test_cosine_similarity():
    assert tf.cosine_similarity([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
    assert tf.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    with pytest.raises(tf.TascError):
        tf.cosine_similarity([0.0, 0.0], [1.0, 1.0])


def test_synthetic_dataset_shape_and_determinism():
    images, labels = tf.generate_synthetic(3, 5, 8, 8, 1, seed=4)
    assert images.shape == (15, 8, 8, 1)
    assert images.min() >= 0.0 and images.max() <= 1.0
    assert sorted(set(labels)) == [0, 1, 2]
    images2, labels2 = tf.generate_synthetic(3, 5, 8, 8, 1, seed=4)
    assert (images == images2).all()
    assert labels == labels2


def test_full_pipeline_through_bindings(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text(RUN_CONFIG)
    out = tmp_path / "out"
    assert tf.run_command("run", str(config), out_dir=str(out)) == 0

    pruned = out / "pruned.tasc"
    tuned = out / "tuned.tasc"
    assert pruned.exists() and tuned.exists()

    total_before, _ = tf.checkpoint_params(str(tuned))
    total_after, trainable_after = tf.checkpoint_params(str(pruned))
    assert total_after < total_before
    assert 0 < trainable_after <= total_after
    assert tf.checkpoint_flops(str(pruned)) < tf.checkpoint_flops(str(tuned))
