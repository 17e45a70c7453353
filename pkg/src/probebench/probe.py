"""Downstream classifiers over frozen embeddings: linear and two-layer probes.

Training is full-batch (train sets are k x C rows, at most a few thousand) with
an adaptive-moment optimizer, run to a loss plateau. The linear probe starts
from zero weights, which makes BCE training a convex logistic regression and
keeps jointly trained class columns identical to independently trained
one-vs-rest probes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from ._rng import fnv1a64, uniform_array
from .dataset import SplitSpec
from .embedding import EmbeddingTable

PROBE_KINDS = ("linear", "two_layer")
LOSSES = ("bce", "cce")

BN_EPS = 1e-5

_MASK64 = (1 << 64) - 1

# Parameters the optimizer updates; batch-norm statistics stay frozen buffers.
_TRAINABLE = {
    "linear": ("weight", "bias"),
    "two_layer": ("bn_scale", "bn_shift", "w1", "b1", "w2", "b2"),
}
_PENALIZED = ("weight", "w1", "w2")


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = "linear"
    loss: str = "bce"
    hidden_multiplier: float = 2.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 512
    convergence_delta: float = 1e-6
    convergence_patience: int = 20
    weight_decay: float = 0.0
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"kind must be one of {PROBE_KINDS}, got {self.kind!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.hidden_multiplier <= 0:
            raise ValueError("hidden_multiplier must be positive")

    def hidden_units(self, embedding_dim: int) -> int:
        return max(1, round(self.hidden_multiplier * embedding_dim))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "loss": self.loss,
            "hidden_multiplier": self.hidden_multiplier,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "max_epochs": self.max_epochs,
            "convergence_delta": self.convergence_delta,
            "convergence_patience": self.convergence_patience,
            "weight_decay": self.weight_decay,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ProbeConfig":
        known = {f: payload[f] for f in cls.__dataclass_fields__ if f in payload}
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown probe config fields: {sorted(unknown)}")
        return cls(**known)


@dataclass
class ProbeModel:
    kind: str
    loss: str
    input_dim: int
    class_names: tuple[str, ...]
    params: dict[str, np.ndarray]

    def n_classes(self) -> int:
        return len(self.class_names)

    def to_json(self) -> str:
        payload = {
            "kind": self.kind,
            "loss": self.loss,
            "input_dim": self.input_dim,
            "class_names": list(self.class_names),
            "params": {
                name: {
                    "shape": list(array.shape),
                    "data": [float(v) for v in array.astype(np.float32).ravel()],
                }
                for name, array in sorted(self.params.items())
            },
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ProbeModel":
        payload = json.loads(text)
        params = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["params"].items()
        }
        return cls(
            kind=payload["kind"],
            loss=payload["loss"],
            input_dim=payload["input_dim"],
            class_names=tuple(payload["class_names"]),
            params=params,
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    expz = np.exp(z[~positive])
    out[~positive] = expz / (1.0 + expz)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=1, keepdims=True)


def bce_loss(logits, targets) -> float:
    """Mean over classes and batch of binary cross entropy, stable form."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if z.shape != t.shape:
        raise ValueError(f"logits shape {z.shape} != targets shape {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("targets must be 0 or 1")
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


def cce_loss(logits, targets) -> float:
    """Mean over batch of -log softmax at the single target class, stable form."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if z.shape != t.shape:
        raise ValueError(f"logits shape {z.shape} != targets shape {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all() or not np.all(t.sum(axis=1) == 1.0):
        raise ValueError("each target row must be one-hot (exactly one class)")
    zmax = z.max(axis=1, keepdims=True)
    lse = (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))).ravel()
    picked = (z * t).sum(axis=1)
    return float((lse - picked).mean())


def _loss_value(loss: str, logits: np.ndarray, targets: np.ndarray) -> float:
    return bce_loss(logits, targets) if loss == "bce" else cce_loss(logits, targets)


def _objective(config: ProbeConfig, params: dict, logits: np.ndarray, targets: np.ndarray) -> float:
    value = _loss_value(config.loss, logits, targets)
    if config.weight_decay:
        for name in _PENALIZED:
            if name in params:
                value += 0.5 * config.weight_decay * float(np.sum(params[name] ** 2))
    return value


def _forward_batch(kind: str, params: dict, X: np.ndarray) -> tuple[np.ndarray, dict]:
    if kind == "linear":
        logits = X @ params["weight"] + params["bias"]
        return logits, {"X": X}
    xhat = (X - params["bn_mean"]) / np.sqrt(params["bn_var"] + BN_EPS)
    activated = xhat * params["bn_scale"] + params["bn_shift"]
    pre_hidden = activated @ params["w1"] + params["b1"]
    hidden = np.maximum(pre_hidden, 0.0)
    logits = hidden @ params["w2"] + params["b2"]
    return logits, {
        "xhat": xhat,
        "activated": activated,
        "pre_hidden": pre_hidden,
        "hidden": hidden,
    }


def forward(model: ProbeModel, x) -> np.ndarray:
    """Logits for one embedding vector (or a batch of them as rows)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != model dim {model.input_dim}")
    logits, _ = _forward_batch(model.kind, model.params, X)
    return logits[0] if single else logits


def _loss_gradient(loss: str, logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if loss == "bce":
        return (_sigmoid(logits) - targets) / logits.size
    return (_softmax(logits) - targets) / logits.shape[0]


def gradient(model: ProbeModel, X, targets, config: ProbeConfig) -> dict[str, np.ndarray]:
    """Analytic gradients of the training objective for every trainable parameter."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    params = model.params
    logits, cache = _forward_batch(model.kind, params, X)
    d_logits = _loss_gradient(config.loss, logits, T)
    if model.kind == "linear":
        grads = {
            "weight": X.T @ d_logits,
            "bias": d_logits.sum(axis=0),
        }
    else:
        hidden = cache["hidden"]
        grads = {
            "w2": hidden.T @ d_logits,
            "b2": d_logits.sum(axis=0),
        }
        d_hidden = (d_logits @ params["w2"].T) * (cache["pre_hidden"] > 0.0)
        grads["w1"] = cache["activated"].T @ d_hidden
        grads["b1"] = d_hidden.sum(axis=0)
        d_activated = d_hidden @ params["w1"].T
        grads["bn_scale"] = (d_activated * cache["xhat"]).sum(axis=0)
        grads["bn_shift"] = d_activated.sum(axis=0)
    if config.weight_decay:
        for name in _PENALIZED:
            if name in grads:
                grads[name] = grads[name] + config.weight_decay * params[name]
    return grads


def _glorot(seed: int, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    count = int(np.prod(shape))
    return (uniform_array(seed, count) * 2.0 * bound - bound).reshape(shape)


def _init_params(
    config: ProbeConfig, X: np.ndarray, class_names: tuple[str, ...]
) -> dict[str, np.ndarray]:
    dim = X.shape[1]
    n_classes = len(class_names)
    if config.kind == "linear":
        return {
            "weight": np.zeros((dim, n_classes)),
            "bias": np.zeros(n_classes),
        }
    hidden = config.hidden_units(dim)
    w1 = _glorot(
        (config.init_seed ^ fnv1a64("hidden")) & _MASK64, dim, hidden, (dim, hidden)
    )
    # The output layer is drawn one column per class, each from a stream keyed
    # by the class name, so permuting class order permutes columns exactly.
    w2 = np.empty((hidden, n_classes))
    for column, name in enumerate(class_names):
        seed = (config.init_seed ^ fnv1a64(f"output:{name}")) & _MASK64
        w2[:, column] = _glorot(seed, hidden, n_classes, (hidden,))
    return {
        "bn_mean": X.mean(axis=0),
        "bn_var": X.var(axis=0),
        "bn_scale": np.ones(dim),
        "bn_shift": np.zeros(dim),
        "w1": w1,
        "b1": np.zeros(hidden),
        "w2": w2,
        "b2": np.zeros(n_classes),
    }


def train_probe_matrix(
    X,
    targets,
    class_names,
    config: ProbeConfig,
) -> tuple[ProbeModel, np.ndarray]:
    """Fit a probe to explicit (X, targets); returns (model, per-epoch loss history).

    The loss is evaluated at the start of each epoch; training stops once the
    best value has not improved by more than convergence_delta for
    convergence_patience consecutive epochs, or at max_epochs.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    T = np.ascontiguousarray(targets, dtype=np.float64)
    if X.ndim != 2 or T.ndim != 2 or X.shape[0] != T.shape[0]:
        raise ValueError("X and targets must be 2-d with matching row counts")
    if X.shape[0] == 0:
        raise ValueError("training batch must be non-empty")
    class_names = tuple(class_names)
    if len(class_names) != T.shape[1]:
        raise ValueError("one target column per class required")
    params = _init_params(config, X, class_names)
    model = ProbeModel(
        kind=config.kind,
        loss=config.loss,
        input_dim=X.shape[1],
        class_names=class_names,
        params=params,
    )
    trainable = _TRAINABLE[config.kind]
    moment1 = {name: np.zeros_like(params[name]) for name in trainable}
    moment2 = {name: np.zeros_like(params[name]) for name in trainable}
    best = np.inf
    stalls = 0
    step = 0
    history = []
    for _ in range(config.max_epochs):
        logits, _ = _forward_batch(config.kind, params, X)
        value = _objective(config, params, logits, T)
        history.append(value)
        if best - value > config.convergence_delta:
            best = value
            stalls = 0
        else:
            stalls += 1
            if stalls >= config.convergence_patience:
                break
        grads = gradient(model, X, T, config)
        step += 1
        for name in trainable:
            g = grads[name]
            moment1[name] = config.beta1 * moment1[name] + (1.0 - config.beta1) * g
            moment2[name] = config.beta2 * moment2[name] + (1.0 - config.beta2) * g * g
            m_hat = moment1[name] / (1.0 - config.beta1**step)
            v_hat = moment2[name] / (1.0 - config.beta2**step)
            params[name] = params[name] - config.learning_rate * m_hat / (
                np.sqrt(v_hat) + config.epsilon
            )
    return model, np.asarray(history)


def _one_hot(labels: list[str], class_names: tuple[str, ...]) -> np.ndarray:
    index = {name: i for i, name in enumerate(class_names)}
    out = np.zeros((len(labels), len(class_names)))
    for row, label in enumerate(labels):
        out[row, index[label]] = 1.0
    return out


def train_probe(
    table: EmbeddingTable, split: SplitSpec, config: ProbeConfig
) -> ProbeModel:
    """Train on the split's k-shot train set; deterministic for fixed inputs."""
    class_names = split.classes()
    if len(class_names) < 2:
        raise ValueError(f"need at least 2 classes, split has {len(class_names)}")
    ids = split.all_train_ids()
    labels: list[str] = []
    for cls in class_names:
        labels.extend([cls] * len(split.train_ids[cls]))
    X = table.matrix(ids).astype(np.float64)
    model, _ = train_probe_matrix(X, _one_hot(labels, class_names), class_names, config)
    return model


def predict_scores(model: ProbeModel, table: EmbeddingTable, ids) -> np.ndarray:
    """Score matrix for `ids` (rows) x classes (columns); sigmoid for BCE, softmax for CCE."""
    ids = list(ids)
    X = table.matrix(ids).astype(np.float64)
    logits, _ = _forward_batch(model.kind, model.params, X)
    return _sigmoid(logits) if model.loss == "bce" else _softmax(logits)
