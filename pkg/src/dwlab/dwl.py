"""DWL losses and the alternating minimax training schedule.

Two schedules are available after warm-up.

``joint`` (default) runs two sub-steps per mini-batch:

* max: D, C1, C2 minimize ``CE(C1) + CE(C2) - w_da * L_da - w_cd * L_cd``
* min: G, C minimize ``CE(C) + w_da * L_da + w_cd * L_cd``

``sequential`` runs five single-purpose sub-steps:

A. minimize source cross-entropy of C, C1, C2 w.r.t. G, C, C1, C2
B. maximize ``w_da * L_da`` w.r.t. D (G frozen)
C. minimize ``w_da * L_da`` w.r.t. G (D frozen)
D. maximize ``w_cd * L_cd`` w.r.t. C1, C2 (G, C frozen), with source CE on C1, C2
E. minimize ``w_cd * L_cd`` w.r.t. G, C (C1, C2 frozen)

With the dynamic scheme ``w_da = tau`` and ``w_cd = 1 - tau``.  Networks that
only serve a term whose weight is exactly zero are left untouched.  During
warm-up only A runs, whatever the schedule.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .data import TrainingView, WeightedBatch, iter_batches, weight_samples
from .metrics import (BalanceState, SingularScatterError, lda_criterion, mmd, scatter,
                      update_and_balance)
from .nn import PROB_EPS, DwlModel, Optimizer
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
WEIGHTING_MODES = ("dynamic", "static", "none-cd", "none-da")
SCHEDULES = ("joint", "sequential")
J_POPULATIONS = ("source", "pooled")


class TrainingDivergence(RuntimeError):
    def __init__(self, substep: str, epoch: int, detail: str):
        self.substep = substep
        self.epoch = epoch
        super().__init__(f"training diverged in sub-step {substep} (epoch {epoch}): {detail}")


# -- losses ---------------------------------------------------------------------

def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood with probabilities clamped to [eps, 1 - eps]."""
    if probs.shape[0] == 0:
        raise ValueError("cross_entropy on an empty batch")
    logp = T.log(T.clip(probs, PROB_EPS, 1.0 - PROB_EPS))
    picked = T.tsum(T.mul(logp, Tensor(_one_hot(labels, probs.shape[1]))), axis=1)
    return T.neg(T.mean(picked))


def alignment_loss(d_source: Tensor, d_target: Tensor) -> Tensor:
    """``mean log D(src) + mean log(1 - D(tgt))`` on discriminator probabilities."""
    if d_source.size == 0 or d_target.size == 0:
        raise ValueError("alignment_loss needs both domains")
    ds = T.clip(d_source, PROB_EPS, 1.0 - PROB_EPS)
    dt = T.clip(d_target, PROB_EPS, 1.0 - PROB_EPS)
    one = Tensor(np.ones(dt.shape))
    return T.add(T.mean(T.log(ds)), T.mean(T.log(T.sub(one, dt))))


def discrepancy_loss(p: Tensor, p1: Tensor, p2: Tensor) -> Tensor:
    """Mean over rows of ``|p1-p2|_1 + |p-p1|_1 + |p-p2|_1``."""
    if p.shape[0] == 0:
        raise ValueError("discrepancy_loss on an empty batch")
    per_row = T.add(T.add(T.l1_norm(T.sub(p1, p2), axis=1), T.l1_norm(T.sub(p, p1), axis=1)),
                    T.l1_norm(T.sub(p, p2), axis=1))
    return T.mean(per_row)


def loss_ce(model: DwlModel, batch: WeightedBatch) -> Tensor:
    return cross_entropy(model.classifier(model.features(batch.source_x)), batch.source_y)


def loss_da(model: DwlModel, batch: WeightedBatch) -> Tensor:
    fs = model.features(batch.source_x)
    ft = model.features(batch.target_x)
    return alignment_loss(model.discriminator(fs), model.discriminator(ft))


def loss_cd(model: DwlModel, batch: WeightedBatch) -> Tensor:
    ft = model.features(batch.target_x)
    return discrepancy_loss(model.classifier(ft), model.classifier_aux1(ft),
                            model.classifier_aux2(ft))


def dwl_objective(model: DwlModel, batch: WeightedBatch, tau: float) -> Tensor:
    """``L_ce + tau * L_da + (1 - tau) * L_cd`` as one differentiable scalar."""
    return T.add(T.add(loss_ce(model, batch), T.scale(loss_da(model, batch), tau)),
                 T.scale(loss_cd(model, batch), 1.0 - tau))


@dataclass(frozen=True)
class LossBundle:
    ce: float
    da: float
    cd: float
    tau: float
    w_da: float
    w_cd: float

    @property
    def total(self) -> float:
        return self.ce + self.w_da * self.da + self.w_cd * self.cd


def loss_weights(mode: str, tau: float) -> tuple[float, float]:
    """(alignment weight, discrimination weight) for a weighting mode."""
    if mode in ("dynamic", "static"):
        return tau, 1.0 - tau
    if mode == "none-cd":
        return tau, 0.0
    if mode == "none-da":
        return 0.0, 1.0 - tau
    raise ValueError(f"unknown weighting mode {mode!r}")


def evaluate(model: DwlModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of ``argmax C(G(x))``."""
    labels = np.asarray(labels)
    if len(features) == 0 or len(features) != len(labels):
        raise ValueError(f"evaluate: {len(features)} rows vs {len(labels)} labels")
    return float(np.mean(model.predict(features) == labels))


# -- training -------------------------------------------------------------------

@dataclass
class OptimizerSpec:
    kind: str = "adam"
    lr: float = 2e-4
    weight_decay: float = 5e-4
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)

    def build(self, params) -> Optimizer:
        return Optimizer(list(params), kind=self.kind, lr=self.lr, momentum=self.momentum,
                         betas=tuple(self.betas), weight_decay=self.weight_decay)


@dataclass
class TrainConfig:
    epochs: int = 100
    warmup_epochs: int = 5
    batch_size: int = 128
    a: float = 0.5
    sample_weighting: bool = True
    weighting_mode: str = "dynamic"
    tau_fixed: float = 0.5
    eval_subsample: int = 512
    schedule: str = "joint"
    j_population: str = "source"
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.warmup_epochs < 1:
            raise ValueError(f"warmup_epochs must be >= 1, got {self.warmup_epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 < self.a <= 1.0:
            raise ValueError(f"a must lie in (0, 1], got {self.a}")
        if self.weighting_mode not in WEIGHTING_MODES:
            raise ValueError(f"weighting_mode must be one of {WEIGHTING_MODES}")
        if not 0.0 <= self.tau_fixed <= 1.0:
            raise ValueError(f"tau_fixed must lie in [0, 1], got {self.tau_fixed}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.j_population not in J_POPULATIONS:
            raise ValueError(f"j_population must be one of {J_POPULATIONS}")
        if self.eval_subsample < 2:
            raise ValueError(f"eval_subsample must be >= 2, got {self.eval_subsample}")


@dataclass
class EpochMetrics:
    epoch: int
    loss_ce: float
    loss_da: float
    loss_cd: float
    tau: float
    mmd_raw: float
    mmd_normalized: float | None
    j_raw: float
    j_normalized: float | None
    source_accuracy: float
    target_accuracy: float
    wall_time_seconds: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Trainer:
    """Owns the model's optimizers, the balance state and the data streams."""

    def __init__(self, model: DwlModel, data: TrainingView, config: TrainConfig,
                 seed: int = 0, target_labels: np.ndarray | None = None):
        config.validate()
        self.model = model
        self.data = data
        self.config = config
        self.target_labels = target_labels
        if config.sample_weighting:
            self.weights = weight_samples(data.n_source, data.n_target, config.a)
        else:
            self.weights = (1.0, 1.0)
        shuffle_seq, eval_seq, dropout_seq = np.random.SeedSequence(seed).spawn(3)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.dropout_rng = np.random.default_rng(dropout_seq)
        eval_rng = np.random.default_rng(eval_seq)
        self.eval_source = self._subsample(data.n_source, eval_rng)
        self.eval_target = self._subsample(data.n_target, eval_rng)
        self.optimizers = {name: config.optimizer.build(net.parameters())
                           for name, net in model.networks().items()}
        self.balance = BalanceState()
        self.tau = config.tau_fixed if config.weighting_mode == "static" else 0.5
        self.epoch = 0

    def _subsample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = self.config.eval_subsample
        return np.arange(n) if n <= k else np.sort(rng.choice(n, size=k, replace=False))

    @property
    def in_warmup(self) -> bool:
        return self.epoch < self.config.warmup_epochs

    # each sub-step returns the value of its own loss term
    def _run(self, substep: str, watch: tuple[str, ...], build, updates: dict[str, str]) -> float:
        tape = Tape()
        tape.watch(*self.model.parameters(*watch))
        try:
            loss, value = build()
        except T.NumericError as exc:
            tape.discard()
            raise TrainingDivergence(substep, self.epoch, str(exc)) from exc
        lv = loss.item()
        if not math.isfinite(lv) or abs(lv) > DIVERGENCE_LIMIT:
            tape.discard()
            raise TrainingDivergence(substep, self.epoch, f"loss {lv}")
        tape.backward(loss)
        for name, direction in updates.items():
            self.optimizers[name].step(direction)
        return value

    def _step_a(self, b: WeightedBatch) -> float:
        m = self.model

        def build():
            f = m.features(b.source_x)
            ce = cross_entropy(m.classifier(f), b.source_y)
            total = T.add(T.add(ce, cross_entropy(m.classifier_aux1(f), b.source_y)),
                          cross_entropy(m.classifier_aux2(f), b.source_y))
            return total, ce.item()

        nets = ("generator", "classifier", "classifier_aux1", "classifier_aux2")
        return self._run("A", nets, build, {n: "minimize" for n in nets})

    def _da(self, b: WeightedBatch) -> Tensor:
        m = self.model
        fs, ft = m.features(b.source_x), m.features(b.target_x)
        return alignment_loss(m.discriminator(fs, self.dropout_rng),
                              m.discriminator(ft, self.dropout_rng))

    def _step_b(self, b: WeightedBatch, w: float) -> float:
        def build():
            da = self._da(b)
            return T.scale(da, w), da.item()

        return self._run("B", ("discriminator",), build, {"discriminator": "maximize"})

    def _step_c(self, b: WeightedBatch, w: float) -> float:
        def build():
            da = self._da(b)
            return T.scale(da, w), da.item()

        return self._run("C", ("generator",), build, {"generator": "minimize"})

    def _step_d(self, b: WeightedBatch, w: float) -> float:
        m = self.model

        def build():
            fs, ft = m.features(b.source_x), m.features(b.target_x)
            cd = discrepancy_loss(m.classifier(ft), m.classifier_aux1(ft), m.classifier_aux2(ft))
            ce = T.add(cross_entropy(m.classifier_aux1(fs), b.source_y),
                       cross_entropy(m.classifier_aux2(fs), b.source_y))
            # ascent on w*cd expressed as descent on ce - w*cd
            return T.sub(ce, T.scale(cd, w)), cd.item()

        nets = ("classifier_aux1", "classifier_aux2")
        return self._run("D", nets, build, {n: "minimize" for n in nets})

    def _step_e(self, b: WeightedBatch, w: float) -> float:
        def build():
            cd = loss_cd(self.model, b)
            return T.scale(cd, w), cd.item()

        nets = ("generator", "classifier")
        return self._run("E", nets, build, {n: "minimize" for n in nets})

    def _joint_terms(self, b: WeightedBatch, w_da: float, w_cd: float):
        """Weighted adversarial terms plus their raw values, skipping zero weights."""
        m = self.model
        fs, ft = m.features(b.source_x), m.features(b.target_x)
        terms, da_v, cd_v = [], None, None
        if w_da != 0.0:
            da = alignment_loss(m.discriminator(fs, self.dropout_rng),
                                m.discriminator(ft, self.dropout_rng))
            terms.append(T.scale(da, w_da))
            da_v = da.item()
        if w_cd != 0.0:
            cd = discrepancy_loss(m.classifier(ft), m.classifier_aux1(ft), m.classifier_aux2(ft))
            terms.append(T.scale(cd, w_cd))
            cd_v = cd.item()
        if not terms:
            adv = Tensor(0.0)
        else:
            adv = terms[0] if len(terms) == 1 else T.add(*terms)
        return fs, adv, da_v, cd_v

    def _step_max(self, b: WeightedBatch, w_da: float, w_cd: float) -> tuple[float | None, float | None]:
        m = self.model
        out = {}

        def build():
            fs, adv, out["da"], out["cd"] = self._joint_terms(b, w_da, w_cd)
            ce = T.add(cross_entropy(m.classifier_aux1(fs), b.source_y),
                       cross_entropy(m.classifier_aux2(fs), b.source_y))
            return T.sub(ce, adv), None

        nets = ("classifier_aux1", "classifier_aux2")
        if w_da != 0.0:
            nets = ("discriminator",) + nets
        self._run("max", nets, build, {n: "minimize" for n in nets})
        return out["da"], out["cd"]

    def _step_min(self, b: WeightedBatch, w_da: float, w_cd: float) -> float:
        m = self.model

        def build():
            fs, adv, _, _ = self._joint_terms(b, w_da, w_cd)
            ce = cross_entropy(m.classifier(fs), b.source_y)
            return T.add(ce, adv), ce.item()

        nets = ("generator", "classifier")
        return self._run("min", nets, build, {n: "minimize" for n in nets})

    def train_epoch(self) -> EpochMetrics:
        start = time.perf_counter()
        cfg = self.config
        warm = self.in_warmup
        tau = 0.5 if warm else self.tau
        w_da, w_cd = loss_weights(cfg.weighting_mode, tau)
        ce_sum = da_sum = cd_sum = 0.0
        nb = 0
        for b in iter_batches(self.data, cfg.batch_size, self.shuffle_rng, self.weights):
            nb += 1
            if not warm and cfg.schedule == "joint":
                da, cd = self._step_max(b, w_da, w_cd)
                ce_sum += self._step_min(b, w_da, w_cd)
                da_sum += loss_da(self.model, b).item() if da is None else da
                cd_sum += loss_cd(self.model, b).item() if cd is None else cd
                continue
            ce_sum += self._step_a(b)
            if warm or w_da == 0.0:
                da_sum += loss_da(self.model, b).item()
            else:
                da_sum += self._step_b(b, w_da)
                self._step_c(b, w_da)
            if warm or w_cd == 0.0:
                cd_sum += loss_cd(self.model, b).item()
            else:
                cd_sum += self._step_d(b, w_cd)
                self._step_e(b, w_cd)

        try:
            mmd_raw, j_raw = self.measure()
        except (T.NumericError, SingularScatterError) as exc:
            raise TrainingDivergence("measure", self.epoch, str(exc)) from exc
        m_norm = j_norm = None
        if not warm:
            self.balance = update_and_balance(self.balance, mmd_raw, j_raw)
            m_norm, j_norm = self.balance.mmd_norm, self.balance.j_norm
            if cfg.weighting_mode != "static":
                self.tau = self.balance.tau

        ws, wt = self.weights
        src_acc = evaluate(self.model, self.data.source_x * ws, self.data.source_y)
        tgt_acc = math.nan
        if self.target_labels is not None:
            tgt_acc = evaluate(self.model, self.data.target_x * wt, self.target_labels)
        row = EpochMetrics(
            epoch=self.epoch, loss_ce=ce_sum / nb, loss_da=da_sum / nb, loss_cd=cd_sum / nb,
            tau=tau, mmd_raw=mmd_raw, mmd_normalized=m_norm, j_raw=j_raw, j_normalized=j_norm,
            source_accuracy=src_acc, target_accuracy=tgt_acc,
            wall_time_seconds=time.perf_counter() - start,
        )
        log.debug("epoch %d: %s", self.epoch, row)
        self.epoch += 1
        return row

    def measure(self) -> tuple[float, float]:
        """MMD and J(W) on the fixed evaluation subsample.

        With ``j_population="source"`` J(W) uses source rows and their true
        labels.  ``"pooled"`` adds target rows pseudo-labelled by the main
        classifier.
        """
        ws, wt = self.weights
        fs = self.model.features(self.data.source_x[self.eval_source] * ws).values
        ft = self.model.features(self.data.target_x[self.eval_target] * wt).values
        feats, labels = fs, self.data.source_y[self.eval_source]
        if self.config.j_population == "pooled":
            pseudo = self.model.classifier(Tensor(ft)).values.argmax(axis=1)
            feats = np.vstack([fs, ft])
            labels = np.concatenate([labels, pseudo])
        j = lda_criterion(scatter(feats, labels, self.data.num_classes))
        return mmd(fs, ft), j

    def fit(self, epochs: int | None = None) -> list[EpochMetrics]:
        n = self.config.epochs if epochs is None else epochs
        return [self.train_epoch() for _ in range(n)]
