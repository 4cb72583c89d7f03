"""Layers, the five DWL networks, optimizers and checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1

NETWORKS = ("generator", "discriminator", "classifier", "classifier_aux1", "classifier_aux2")


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = np.sqrt(1.0 / in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Tensor(rng.uniform(-bound, bound, size=(out_dim,)))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] != self.in_dim:
            raise T.ShapeError("linear", x.shape, self.weight.shape)
        return T.add(T.matmul(x, self.weight), T.repeat_rows(self.bias, x.shape[0]))


class MLP:
    """Two linear layers with a ReLU in between and a configurable output head.

    ``head`` is ``"linear"``, ``"relu"``, ``"tanh"``, ``"l2"`` (unit-length rows),
    ``"sigmoid"`` (single probability column, returned as a 1-D tensor) or
    ``"softmax"`` (row-stochastic matrix).
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, head: str,
                 rng: np.random.Generator, dropout: float = 0.0):
        if head not in ("linear", "sigmoid", "softmax", "relu", "tanh", "l2"):
            raise ValueError(f"unknown head {head!r}")
        if head == "sigmoid" and out_dim != 1:
            raise ValueError("sigmoid head needs out_dim == 1")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.hidden = Linear(in_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, out_dim, rng)
        self.head = head
        self.dropout = dropout

    def parameters(self) -> list[Tensor]:
        return self.hidden.parameters() + self.out.parameters()

    def __call__(self, x: Tensor, dropout_rng: np.random.Generator | None = None) -> Tensor:
        h = T.relu(self.hidden(x))
        if self.dropout > 0 and dropout_rng is not None:
            keep = 1.0 - self.dropout
            mask = (dropout_rng.random(h.shape) < keep) / keep
            h = T.mul(h, Tensor(mask))
        z = self.out(h)
        if self.head == "sigmoid":
            return T.columns(T.sigmoid(z), 0)
        if self.head == "softmax":
            return T.softmax(z)
        if self.head == "relu":
            return T.relu(z)
        if self.head == "tanh":
            return T.tanh(z)
        if self.head == "l2":
            return T.normalize_rows(z)
        return z


@dataclass
class DwlModel:
    generator: MLP
    discriminator: MLP
    classifier: MLP
    classifier_aux1: MLP
    classifier_aux2: MLP
    input_dim: int
    feature_dim: int
    hidden_dim: int
    num_classes: int
    dropout: float = 0.0

    @property
    def generator_head(self) -> str:
        return self.generator.head

    def networks(self) -> dict[str, MLP]:
        return {name: getattr(self, name) for name in NETWORKS}

    def parameters(self, *names: str) -> list[Tensor]:
        names = names or NETWORKS
        return [p for n in names for p in getattr(self, n).parameters()]

    def features(self, x) -> Tensor:
        return self.generator(T.as_tensor(x))

    def predict(self, x) -> np.ndarray:
        """Argmax of the main classifier on ``x``."""
        probs = self.classifier(self.features(x))
        return probs.values.argmax(axis=1)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name, net in self.networks().items():
            for layer in ("hidden", "out"):
                lin = getattr(net, layer)
                state[f"{name}.{layer}.weight"] = lin.weight.values.copy()
                state[f"{name}.{layer}.bias"] = lin.bias.values.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, net in self.networks().items():
            for layer in ("hidden", "out"):
                lin = getattr(net, layer)
                for attr in ("weight", "bias"):
                    key = f"{name}.{layer}.{attr}"
                    arr = np.asarray(state[key], dtype=np.float64)
                    target = getattr(lin, attr)
                    if arr.shape != target.shape:
                        raise T.ShapeError(f"load {key}", arr.shape, target.shape)
                    target.values = arr.copy()


def init_model(input_dim: int, feature_dim: int = 16, hidden_dim: int = 64,
               num_classes: int = 2, seed: int = 0, dropout: float = 0.0,
               generator_head: str = "l2") -> DwlModel:
    """Build G, D, C, C1, C2 with uniform(+-sqrt(1/fan_in)) weights.

    ``generator_head="l2"`` puts features on the unit sphere, which keeps the
    feature scale (and hence the MMD) from drifting during adversarial play.

    Each network draws from its own child of ``SeedSequence(seed)``, so the three
    classifiers share an architecture but not their initial parameters.
    """
    for label, v in (("input_dim", input_dim), ("feature_dim", feature_dim),
                     ("hidden_dim", hidden_dim), ("num_classes", num_classes)):
        if int(v) < 1:
            raise ValueError(f"{label} must be >= 1, got {v}")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(NETWORKS))]
    return DwlModel(
        generator=MLP(input_dim, hidden_dim, feature_dim, generator_head, rngs[0]),
        discriminator=MLP(feature_dim, hidden_dim, 1, "sigmoid", rngs[1], dropout=dropout),
        classifier=MLP(feature_dim, hidden_dim, num_classes, "softmax", rngs[2]),
        classifier_aux1=MLP(feature_dim, hidden_dim, num_classes, "softmax", rngs[3]),
        classifier_aux2=MLP(feature_dim, hidden_dim, num_classes, "softmax", rngs[4]),
        input_dim=input_dim, feature_dim=feature_dim, hidden_dim=hidden_dim,
        num_classes=num_classes, dropout=dropout,
    )


# -- optimizers ----------------------------------------------------------------

class OptimizerError(RuntimeError):
    pass


@dataclass
class Optimizer:
    """Adam or SGD with momentum over a fixed list of parameters.

    Weight decay is the L2 form (``wd * p`` added to the gradient) and always
    pulls toward zero, whichever direction the step goes.
    """

    params: list[Tensor]
    kind: str = "adam"
    lr: float = 2e-4
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    state: list[dict] = field(default_factory=list)
    steps: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        self.betas = tuple(self.betas)
        self.state = [
            {"m": np.zeros_like(p.values), "v": np.zeros_like(p.values)} for p in self.params
        ]

    def step(self, direction: str = "minimize") -> None:
        if direction not in ("minimize", "maximize"):
            raise ValueError(f"direction must be minimize or maximize, got {direction!r}")
        grads = []
        for p in self.params:
            if p.grad is None:
                raise OptimizerError(f"missing gradient for {p!r}")
            if not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient for {p!r}")
            grads.append(p.grad)
        sign = 1.0 if direction == "minimize" else -1.0
        self.steps += 1
        for p, g, st in zip(self.params, grads, self.state):
            g = sign * g
            if self.weight_decay:
                g = g + self.weight_decay * p.values
            if self.kind == "sgd":
                if self.momentum:
                    st["m"] = self.momentum * st["m"] + g
                    g = st["m"]
                p.values = p.values - self.lr * g
            else:
                b1, b2 = self.betas
                st["m"] = b1 * st["m"] + (1 - b1) * g
                st["v"] = b2 * st["v"] + (1 - b2) * g * g
                m_hat = st["m"] / (1 - b1 ** self.steps)
                v_hat = st["v"] / (1 - b2 ** self.steps)
                p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, model: DwlModel, extra: dict | None = None) -> Path:
    """Write an ``.npz`` archive: one array per parameter plus a JSON header.

    The header (key ``__meta__``) records the format version, the model
    dimensions, and ``extra`` (e.g. the sample-weighting coefficients).
    """
    path = Path(path)
    meta = {
        "format": "dwlab-checkpoint",
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "num_classes": model.num_classes,
        "dropout": model.dropout,
        "generator_head": model.generator_head,
        "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    arrays = model.state_dict()
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[DwlModel, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__meta__" not in data.files:
            raise ValueError(f"{path}: not a dwlab checkpoint (no header)")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != "dwlab-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')} "
                             f"v{meta.get('version')}")
        state = {k: data[k] for k in data.files if k != "__meta__"}
    model = init_model(meta["input_dim"], meta["feature_dim"], meta["hidden_dim"],
                       meta["num_classes"], seed=0, dropout=meta.get("dropout", 0.0),
                       generator_head=meta.get("generator_head", "l2"))
    model.load_state_dict(state)
    return model, meta
