import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from charnorm.corpus import Vocabulary, make_batch
from charnorm.errors import ConfigError, NumericError
from charnorm.model import ModelConfig, Seq2Seq
from charnorm.numerics import Tensor
from charnorm.trainer import AdamState, TrainConfig, Trainer, adam_step, clip_global_norm, global_norm


def test_clip_examples():
    clipped, norm = clip_global_norm([np.array([30.0, 40.0])], 10)
    assert norm == 50
    np.testing.assert_allclose(clipped[0], [6.0, 8.0])
    g = [np.array([3.0]), np.array([[4.0]])]
    same, norm = clip_global_norm(g, 10)
    assert norm == 5 and same[0] is g[0] and same[1] is g[1]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e6, 1e6)), min_size=1, max_size=4),
    st.floats(1e-3, 1e3),
)
def test_clipped_norm_never_exceeds_max(grads, max_norm):
    clipped, _ = clip_global_norm(grads, max_norm)
    assert global_norm(clipped) <= max_norm + 1e-6


def _scalar(value=0.0):
    return Tensor(np.array([value]), requires_grad=True)


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([[1.5, -2.0]]), requires_grad=True)
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros((1, 2))], state, TrainConfig())
    np.testing.assert_array_equal(p.data, [[1.5, -2.0]])
    assert state.t == 1


def test_adam_first_step():
    p = _scalar()
    adam_step([p], [np.array([1.0])], AdamState.for_params([p]), TrainConfig())
    assert p.data[0] == pytest.approx(-0.0005 / (1 + 1e-8), rel=1e-12)


@pytest.mark.parametrize("theta, g", [(0.3, 2.0), (-1.0, -0.25), (5.0, 1e-3)])
def test_adam_without_momentum_is_normalized_sgd(theta, g):
    cfg = TrainConfig(beta1=0.0, beta2=0.0)
    p = _scalar(theta)
    adam_step([p], [np.array([g])], AdamState.for_params([p]), cfg)
    assert p.data[0] == pytest.approx(theta - cfg.lr * g / (abs(g) + cfg.eps), rel=1e-12)


def test_adam_descends_a_parabola():
    p = _scalar(1.0)
    state, cfg = AdamState.for_params([p]), TrainConfig(lr=0.01)
    for _ in range(100):
        adam_step([p], [2 * p.data], state, cfg)
    assert abs(p.data[0]) < 1.0
    assert state.t == 100


def test_adam_shape_mismatch():
    p = _scalar()
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(2)], AdamState.for_params([p]), TrainConfig())


@pytest.mark.parametrize("bad", [dict(lr=0), dict(beta1=1.0), dict(beta2=-0.1), dict(clip_norm=0), dict(epochs=-1)])
def test_train_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def _setup(seed=0, **cfg):
    vocab = Vocabulary("abcdefgh")
    pairs = [("abc", "abc"), ("dcba", "dcba"), ("hge", "hhge"), ("fab", "fb"), ("gg", "g")]
    batches = [make_batch(pairs[:3], vocab), make_batch(pairs[3:], vocab)]
    model = Seq2Seq(ModelConfig(d_voc=len(vocab), d_ce=8, d=16), seed=seed)
    return model, batches, TrainConfig(**{"lr": 0.01, "epochs": 3, "seed": seed, **cfg})


def test_zero_epochs_changes_nothing():
    model, batches, cfg = _setup()
    before = {k: v.data.copy() for k, v in model.params.items()}
    log = Trainer(model, cfg).train(batches, epochs=0)
    assert log.rows == [] and log.format() == ""
    for k, v in model.params.items():
        np.testing.assert_array_equal(v.data, before[k])


def test_same_seed_same_log():
    logs = []
    for _ in range(2):
        model, batches, cfg = _setup(seed=4)
        logs.append(Trainer(model, cfg).train(batches, dev_batches=batches[:1]).format())
    assert logs[0] == logs[1]
    lines = logs[0].splitlines()
    assert len(lines) == 3 and all(len(line.split("\t")) == 3 for line in lines)


def test_first_epoch_lowers_loss():
    model, batches, cfg = _setup(seed=1)
    trainer = Trainer(model, cfg)
    before = trainer.evaluate(batches)
    trainer.train(batches, epochs=1)
    assert trainer.evaluate(batches) < before


def test_repeated_batch_loss_mostly_nonincreasing():
    # measured teacher-forced without dropout, so only the optimizer moves it
    model, batches, cfg = _setup(seed=2, lr=TrainConfig().lr)
    trainer = Trainer(model, cfg)
    losses = [trainer.evaluate(batches[:1])]
    for _ in range(50):
        trainer.step(batches[0])
        losses.append(trainer.evaluate(batches[:1]))
    rises = [b / a for a, b in zip(losses, losses[1:]) if b > a]
    assert len(rises) <= math.ceil(0.05 * 50)
    assert all(r <= 1.05 for r in rises)
    assert losses[-1] < losses[0]


def test_nan_loss_aborts_with_location():
    model, batches, cfg = _setup()
    model.params["output.W"].data[0, 0] = np.nan
    with pytest.raises(NumericError, match=r"epoch 1, batch \d"):
        Trainer(model, cfg).train(batches)
