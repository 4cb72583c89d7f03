import math

import numpy as np
import pytest

from dwlab import tensor as T
from dwlab.data import DomainDataset, WeightedBatch, make_two_moons_shift
from dwlab.dwl import (LossBundle, OptimizerSpec, TrainConfig, Trainer, TrainingDivergence,
                       alignment_loss, cross_entropy, discrepancy_loss, dwl_objective, evaluate,
                       loss_cd, loss_ce, loss_da, loss_weights)
from dwlab.nn import PROB_EPS, init_model
from dwlab.tensor import Tape, Tensor


def probs(rows):
    return Tensor(np.array(rows, dtype=float))


def test_cross_entropy_examples():
    assert cross_entropy(probs([[0.5, 0.5]] * 3), np.array([0, 1, 0])).item() == pytest.approx(math.log(2))
    assert cross_entropy(probs([[0.25] * 4] * 2), np.array([3, 1])).item() == pytest.approx(math.log(4))
    certain = cross_entropy(probs([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1])).item()
    assert certain == pytest.approx(-math.log(1 - PROB_EPS), rel=1e-6)


def test_alignment_loss_examples():
    half = Tensor(np.full(4, 0.5))
    assert alignment_loss(half, half).item() == pytest.approx(-2 * math.log(2))
    best = alignment_loss(Tensor(np.full(3, 1 - PROB_EPS)), Tensor(np.full(5, PROB_EPS))).item()
    assert abs(best) < 1e-6
    # clamping keeps exact 0/1 outputs finite
    assert math.isfinite(alignment_loss(Tensor([1.0]), Tensor([1.0])).item())


def test_discrepancy_loss_examples():
    same = probs([[0.3, 0.7], [0.9, 0.1]])
    assert discrepancy_loss(same, same, same).item() == 0.0
    out = discrepancy_loss(probs([[0.5, 0.5]]), probs([[1.0, 0.0]]), probs([[0.0, 1.0]]))
    assert out.item() == pytest.approx(4.0)


def test_discrepancy_loss_bounded_and_non_negative():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = [rng.dirichlet(np.ones(3), size=5) for _ in range(3)]
        v = discrepancy_loss(*map(Tensor, p)).item()
        assert 0.0 <= v <= 6.0
        assert (v == 0.0) == all(np.array_equal(p[0], q) for q in p)


def test_empty_inputs_raise():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((0, 2))), np.zeros(0, int))
    with pytest.raises(ValueError):
        alignment_loss(Tensor(np.zeros(0)), Tensor([0.5]))
    with pytest.raises(ValueError):
        discrepancy_loss(*(Tensor(np.zeros((0, 2))),) * 3)


def test_loss_bundle_total_and_weights():
    b = LossBundle(ce=0.7, da=-1.3, cd=0.4, tau=0.3, w_da=0.3, w_cd=0.7)
    assert b.total == pytest.approx(0.7 + 0.3 * -1.3 + 0.7 * 0.4, abs=1e-12)
    assert loss_weights("dynamic", 0.3) == (0.3, 0.7)
    assert loss_weights("none-cd", 0.3) == (0.3, 0.0)
    assert loss_weights("none-da", 0.3) == (0.0, 0.7)
    with pytest.raises(ValueError):
        loss_weights("mystery", 0.5)


# -- gradient oracle on a tiny model ---------------------------------------------------

def tiny_batch(rng):
    return WeightedBatch(source_x=rng.uniform(-2, 2, size=(4, 2)), source_y=rng.integers(0, 2, 4),
                         target_x=rng.uniform(-2, 2, size=(4, 2)), w_source=1.0, w_target=1.0)


def fd_check(model, fn, h=1e-6):
    params = model.parameters()
    tape = Tape()
    tape.watch(*params)
    tape.backward(fn())
    worst = 0.0
    for p in params:
        auto = p.grad
        for idx in np.ndindex(p.shape):
            orig = p.values[idx]
            p.values[idx] = orig + h
            up = fn().item()
            p.values[idx] = orig - h
            down = fn().item()
            p.values[idx] = orig
            num = (up - down) / (2 * h)
            worst = max(worst, abs(auto[idx] - num) / max(1.0, abs(auto[idx]) + abs(num)))
    return worst


SUBSTEP_LOSSES = {
    "ce": lambda m, b, tau: loss_ce(m, b),
    "da": lambda m, b, tau: T.scale(loss_da(m, b), tau),
    "cd": lambda m, b, tau: T.scale(loss_cd(m, b), 1 - tau),
    "objective": lambda m, b, tau: dwl_objective(m, b, tau),
}


@pytest.mark.parametrize("name", sorted(SUBSTEP_LOSSES))
@pytest.mark.parametrize("seed", range(3))
def test_loss_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    model = init_model(2, feature_dim=3, hidden_dim=4, num_classes=2, seed=seed)
    batch = tiny_batch(rng)
    tau = float(rng.uniform(0.1, 0.9))
    assert fd_check(model, lambda: SUBSTEP_LOSSES[name](model, batch, tau)) < 1e-4


def test_objective_reassembles_from_parts():
    rng = np.random.default_rng(9)
    model = init_model(2, seed=9)
    batch = tiny_batch(rng)
    ce, da, cd = (f(model, batch).item() for f in (loss_ce, loss_da, loss_cd))
    total = dwl_objective(model, batch, 0.37).item()
    assert total == pytest.approx(ce + 0.37 * da + 0.63 * cd, abs=1e-12)


def test_zero_weight_cd_term_has_zero_gradient():
    model = init_model(2, seed=1)
    batch = tiny_batch(np.random.default_rng(1))
    params = model.parameters("classifier_aux1", "classifier_aux2")
    tape = Tape()
    tape.watch(*params)
    tape.backward(T.scale(loss_cd(model, batch), 1.0 - 1.0))
    assert all(np.all(p.grad == 0) for p in params)


# -- training ------------------------------------------------------------------------

def small_config(**kw):
    base = dict(epochs=4, warmup_epochs=1, batch_size=32,
                optimizer=OptimizerSpec(lr=1e-3, weight_decay=5e-4))
    base.update(kw)
    return TrainConfig(**base)


def make_trainer(seed=0, **kw):
    ds = make_two_moons_shift(64, 64, seed=seed)
    model = init_model(2, seed=seed)
    return Trainer(model, ds.training_view(), small_config(**kw), seed=seed, target_labels=ds.target_y)


@pytest.mark.parametrize("schedule", ["joint", "sequential"])
def test_tau_zero_leaves_discriminator_untouched(schedule):
    tr = make_trainer(weighting_mode="static", tau_fixed=0.0, schedule=schedule)
    tr.train_epoch()  # warm-up
    before = {k: v.copy() for k, v in tr.model.state_dict().items()}
    tr.train_epoch()
    tr.train_epoch()
    after = tr.model.state_dict()
    for k in before:
        if k.startswith("discriminator."):
            assert np.array_equal(before[k], after[k]), k
        elif k.startswith("generator."):
            assert not np.array_equal(before[k], after[k]), k


def test_tau_one_runs_without_discrepancy_steps():
    tr = make_trainer(weighting_mode="static", tau_fixed=1.0, schedule="sequential")
    tr.train_epoch()
    rows = [tr.train_epoch() for _ in range(2)]
    assert all(r.tau == 1.0 for r in rows)


def test_warmup_rows_report_half_and_skip_balance():
    tr = make_trainer(warmup_epochs=3, epochs=5)
    rows = tr.fit()
    assert [r.tau for r in rows[:3]] == [0.5] * 3
    assert all(r.mmd_normalized is None for r in rows[:3])
    assert tr.balance.count == 2
    assert all(0.0 <= r.tau <= 1.0 for r in rows)


def test_static_mode_keeps_tau():
    tr = make_trainer(weighting_mode="static", tau_fixed=0.2, epochs=4)
    assert [r.tau for r in tr.fit()] == [0.5, 0.2, 0.2, 0.2]


@pytest.mark.parametrize("schedule", ["joint", "sequential"])
def test_training_is_deterministic(schedule):
    a = [r.__dict__ for r in make_trainer(seed=3, schedule=schedule).fit()]
    b = [r.__dict__ for r in make_trainer(seed=3, schedule=schedule).fit()]
    for ra, rb in zip(a, b):
        ra.pop("wall_time_seconds"), rb.pop("wall_time_seconds")
    assert a == b


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_substep():
    tr = make_trainer(optimizer=OptimizerSpec(lr=1e-3))
    tr.train_epoch()
    for p in tr.model.generator.parameters():
        p.values = p.values * 1e200
    tr.model.generator.head = "linear"
    with pytest.raises(TrainingDivergence) as info:
        tr.train_epoch()
    assert info.value.substep in {"A", "max", "min", "measure"}
    assert "sub-step" in str(info.value)


def test_config_validation():
    for bad in (dict(warmup_epochs=0), dict(batch_size=1), dict(a=0.0), dict(tau_fixed=1.5),
                dict(weighting_mode="x"), dict(schedule="x"), dict(j_population="target")):
        with pytest.raises(ValueError):
            small_config(**bad).validate()


def test_warmup_reaches_high_source_accuracy():
    accs = []
    for seed in range(5):
        ds = make_two_moons_shift(200, 200, noise=0.05, seed=seed)
        cfg = TrainConfig(epochs=20, warmup_epochs=20, batch_size=64,
                          optimizer=OptimizerSpec(lr=1e-3))
        tr = Trainer(init_model(2, seed=seed), ds.training_view(), cfg, seed=seed)
        accs.append(tr.fit()[-1].source_accuracy)
    assert np.mean(accs) > 0.95


def test_evaluate_examples():
    x = np.random.default_rng(0).normal(size=(50, 2))
    model = init_model(2, seed=0)
    pred = model.predict(x)
    assert evaluate(model, x, pred) == 1.0
    assert evaluate(model, x, 1 - pred) == 0.0
    with pytest.raises(ValueError):
        evaluate(model, x, pred[:3])


def test_untrained_model_is_near_chance():
    ds = make_two_moons_shift(500, 500, seed=0)
    accs = [evaluate(init_model(2, seed=s), ds.target_x, ds.target_y) for s in range(10)]
    assert abs(np.mean(accs) - 0.5) < 0.1


def test_target_labels_never_reach_trainer_data():
    ds = make_two_moons_shift(20, 20, seed=0)
    tr = Trainer(init_model(2), ds.training_view(), small_config())
    assert not hasattr(tr.data, "target_y")
    assert math.isnan(tr.train_epoch().target_accuracy)
