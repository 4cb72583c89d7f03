import numpy as np
import pytest

from dwlab import tensor as T
from dwlab.nn import (NETWORKS, Optimizer, OptimizerError, init_model, load_checkpoint,
                      save_checkpoint)
from dwlab.tensor import Tensor


def test_same_seed_same_parameters():
    a = init_model(2, seed=7).state_dict()
    b = init_model(2, seed=7).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_classifiers_start_different():
    m = init_model(2, seed=0)
    assert not np.array_equal(m.classifier_aux1.hidden.weight.values,
                              m.classifier_aux2.hidden.weight.values)
    assert not np.array_equal(m.classifier.out.weight.values,
                              m.classifier_aux1.out.weight.values)


def test_forward_on_zero_vector():
    m = init_model(2, num_classes=2, seed=0)
    f = m.features(np.zeros((1, 2)))
    for net in (m.classifier, m.classifier_aux1, m.classifier_aux2):
        assert abs(net(f).values.sum() - 1.0) < 1e-9
    d = m.discriminator(f).values
    assert d.shape == (1,) and 0 < d[0] < 1


def test_init_weight_bounds():
    m = init_model(9, feature_dim=4, hidden_dim=25, seed=1)
    assert np.abs(m.generator.hidden.weight.values).max() <= 1 / 3
    assert np.abs(m.generator.out.weight.values).max() <= 1 / 5


@pytest.mark.parametrize("dim", ["input_dim", "feature_dim", "hidden_dim", "num_classes"])
def test_non_positive_dims_rejected(dim):
    kwargs = {"input_dim": 2, dim: 0}
    with pytest.raises(ValueError):
        init_model(**kwargs)


def _single(value, grad, **kw):
    p = Tensor([value])
    p.grad = np.array([grad])
    return p, Optimizer([p], **kw)


def test_sgd_minimize_and_maximize():
    p, opt = _single(1.0, 0.5, kind="sgd", lr=0.1, momentum=0.0)
    opt.step("minimize")
    assert p.values[0] == pytest.approx(0.95, abs=1e-15)
    p, opt = _single(1.0, 0.5, kind="sgd", lr=0.1, momentum=0.0)
    opt.step("maximize")
    assert p.values[0] == pytest.approx(1.05, abs=1e-15)


def test_adam_first_step_moves_by_lr():
    # one step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    p, opt = _single(0.0, 1.0, kind="adam", lr=0.001)
    opt.step()
    assert p.values[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)


def test_maximize_then_minimize_round_trips():
    rng = np.random.default_rng(0)
    start = rng.normal(size=(3, 2))
    grad = rng.normal(size=(3, 2))
    p = Tensor(start)
    opt = Optimizer([p], kind="sgd", lr=0.05, momentum=0.0)
    p.grad = grad.copy()
    opt.step("maximize")
    p.grad = grad.copy()
    opt.step("minimize")
    np.testing.assert_allclose(p.values, start, atol=1e-12, rtol=0)


def test_zero_weight_decay_depends_only_on_gradient():
    for start in (np.zeros(3), np.full(3, 5.0)):
        p = Tensor(start)
        p.grad = np.ones(3)
        Optimizer([p], kind="sgd", lr=0.1, momentum=0.0).step()
        np.testing.assert_allclose(p.values - start, -0.1, atol=1e-15)


def test_weight_decay_pulls_toward_zero_either_direction():
    for direction in ("minimize", "maximize"):
        p = Tensor([2.0])
        p.grad = np.zeros(1)
        Optimizer([p], kind="sgd", lr=0.1, momentum=0.0, weight_decay=0.5).step(direction)
        assert p.values[0] == pytest.approx(1.9)


def test_state_buffers_mirror_parameters():
    m = init_model(3, seed=0)
    opt = Optimizer(m.parameters(), kind="adam")
    for p, st in zip(m.parameters(), opt.state):
        assert st["m"].shape == p.shape == st["v"].shape


def test_optimizer_errors():
    p = Tensor([1.0])
    with pytest.raises(OptimizerError):
        Optimizer([p]).step()
    p.grad = np.array([np.nan])
    with pytest.raises(OptimizerError):
        Optimizer([p]).step()
    with pytest.raises(ValueError):
        Optimizer([p], kind="rmsprop")


def test_checkpoint_round_trip(tmp_path):
    m = init_model(5, feature_dim=3, hidden_dim=7, num_classes=4, seed=11, generator_head="tanh")
    path = save_checkpoint(tmp_path / "m.npz", m, extra={"w_source": 1.5})
    loaded, meta = load_checkpoint(path)
    assert meta["extra"] == {"w_source": 1.5}
    assert loaded.generator_head == "tanh"
    a, b = m.state_dict(), loaded.state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(m.predict(x), loaded.predict(x))


def test_checkpoint_without_header_rejected(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(ValueError, match="header"):
        load_checkpoint(path)


def test_discriminator_dropout_only_with_rng():
    m = init_model(2, seed=0, dropout=0.5)
    f = m.features(np.ones((6, 2)))
    plain = m.discriminator(f).values
    assert np.array_equal(plain, m.discriminator(f).values)
    noisy = m.discriminator(f, np.random.default_rng(1)).values
    assert not np.array_equal(plain, noisy)


def test_l2_generator_rows_have_unit_length():
    m = init_model(4, seed=2)
    f = m.features(np.random.default_rng(0).normal(size=(10, 4))).values
    np.testing.assert_allclose(np.linalg.norm(f, axis=1), 1.0, atol=1e-9)
    assert set(NETWORKS) == set(m.networks())
