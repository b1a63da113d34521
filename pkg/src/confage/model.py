"""Feed-forward mean/spread regression head trained against the age loss.

The network maps a feature vector to two raw outputs. The first is the
predicted age ``mu`` as is; the second goes through a positive map
(softplus or exp) plus a floor to give ``sigma``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .loss import LossConfig, PredictionBatch, loss_backward, loss_forward

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")
SIGMA_MAPS = ("softplus", "exp")
OPTIMIZERS = ("sgd", "adam")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, what="loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple = (64, 32)
    activation: str = "relu"
    sigma_map: str = "softplus"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.sigma_map not in SIGMA_MAPS:
            raise ValueError(f"sigma_map must be one of {SIGMA_MAPS}, got {self.sigma_map!r}")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_dims, 2)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 3e-3
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sigma_floor: float = 0.05
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.sigma_floor > 0:
            raise ValueError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if not 0 <= self.seed <= rng.MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class ModelParams:
    """Weights ``(fan_in, fan_out)`` and biases per layer, plus the sigma floor."""

    weights: list
    biases: list
    sigma_floor: float = 0.05

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.sigma_floor)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def zeros(spec: ModelSpec, sigma_floor=0.05) -> ModelParams:
    sizes = spec.layer_sizes
    return ModelParams(
        [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
        [np.zeros(b) for b in sizes[1:]],
        sigma_floor,
    )


def init_params(spec: ModelSpec, seed: int, sigma_floor=0.05, mu_bias=0.0) -> ModelParams:
    """Glorot-uniform weights, zero biases, raw-sigma bias at +1.

    ``mu_bias`` starts the mean output at a given age.
    """
    g = rng.stream(seed, rng.INIT)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(g.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    biases[-1][0] = mu_bias
    biases[-1][1] = 1.0
    return ModelParams(weights, biases, sigma_floor)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a**2


def _sigma(raw, kind):
    if kind == "softplus":
        return np.logaddexp(0.0, raw)
    return np.exp(raw)


def _sigma_grad(raw, kind):
    if kind == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * raw))
    return np.exp(raw)


def _check_features(x, spec):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected features of shape (N, {spec.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    return x


def _forward_cache(params, spec, x):
    pre, post = [], [x]
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else _act(z, spec.activation)
        post.append(a)
    return pre, post


def forward(params: ModelParams, spec: ModelSpec, features):
    """Predict ``(mu, sigma)`` for each row of ``features``."""
    x = _check_features(features, spec)
    _, post = _forward_cache(params, spec, x)
    out = post[-1]
    return out[:, 0].copy(), _sigma(out[:, 1], spec.sigma_map) + params.sigma_floor


def backward(params, spec, features, grad_mu, grad_sigma):
    """Backpropagate output gradients; returns (weight grads, bias grads)."""
    x = _check_features(features, spec)
    pre, post = _forward_cache(params, spec, x)
    raw = pre[-1]
    delta = np.column_stack([grad_mu, grad_sigma * _sigma_grad(raw[:, 1], spec.sigma_map)])
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * _act_grad(pre[i - 1], post[i], spec.activation)
    return gw, gb


def loss_and_grads(params, spec, features, ages, loss_cfg, where=None):
    """Loss breakdown and parameter gradients on one batch.

    ``where`` is an ``(epoch, batch)`` pair; when given, non-finite model
    outputs raise :class:`TrainingDivergedError` instead of ``ValueError``.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        mu, sigma = forward(params, spec, features)
    if where is not None and not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise TrainingDivergedError(*where, "model output")
    batch = PredictionBatch(mu, sigma, ages)
    parts = loss_forward(batch, loss_cfg)
    gmu, gsig = loss_backward(batch, loss_cfg)
    gw, gb = backward(params, spec, features, gmu, gsig)
    return parts, gw, gb


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.weights + params.biases]
        self.v = [np.zeros_like(a) for a in params.weights + params.biases]

    def step(self, params, gw, gb):
        c = self.cfg
        self.t += 1
        tensors = params.weights + params.biases
        for k, (p, g) in enumerate(zip(tensors, gw + gb)):
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            m_hat = self.m[k] / (1 - c.beta1**self.t)
            v_hat = self.v[k] / (1 - c.beta2**self.t)
            p -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


class _SGD:
    def __init__(self, params, cfg):
        self.lr = cfg.learning_rate

    def step(self, params, gw, gb):
        for p, g in zip(params.weights + params.biases, gw + gb):
            p -= self.lr * g


def split_indices(n: int, val_fraction: float, seed: int):
    """Seeded shuffle, then the first ``1 - val_fraction`` share trains."""
    perm = rng.stream(seed, rng.SPLIT).permutation(n)
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        raise ValueError("training split is empty")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _mean_parts(params, spec, features, ages, loss_cfg):
    mu, sigma = forward(params, spec, features)
    parts = loss_forward(PredictionBatch(mu, sigma, ages), loss_cfg)
    return parts, float(np.mean(np.abs(mu - ages)))


def train(dataset, spec: ModelSpec, loss_cfg: LossConfig = LossConfig(), train_cfg: TrainConfig = TrainConfig()):
    """Fit a model with mini-batch gradient descent.

    Parameters
    ----------
    dataset : Dataset
        Training pool; ``train_cfg.val_fraction`` of it is held out.

    Returns
    -------
    params : ModelParams
    history : list of dict
        One row per epoch with train/validation loss terms and MAE.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    ages = dataset.ages
    if np.any((ages < 0) | (ages >= loss_cfg.max_age_m)):
        raise ValueError(f"ages must lie in [0, {loss_cfg.max_age_m})")
    if dataset.input_dim != spec.input_dim:
        raise ValueError(f"dataset has {dataset.input_dim} features, model expects {spec.input_dim}")
    tr, va = split_indices(n, train_cfg.val_fraction, train_cfg.seed)
    x_tr, y_tr = dataset.features[tr], ages[tr]
    x_va, y_va = dataset.features[va], ages[va]

    params = init_params(spec, train_cfg.seed, train_cfg.sigma_floor, mu_bias=float(np.mean(y_tr)))
    opt = _Adam(params, train_cfg) if train_cfg.optimizer == "adam" else _SGD(params, train_cfg)
    shuffler = rng.stream(train_cfg.seed, rng.SHUFFLE)
    bs = train_cfg.batch_size
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffler.permutation(tr.size)
        sums = np.zeros(4)
        for b, start in enumerate(range(0, tr.size, bs)):
            idx = order[start:start + bs]
            parts, gw, gb = loss_and_grads(params, spec, x_tr[idx], y_tr[idx], loss_cfg, (epoch, b))
            if not np.isfinite(parts.l_total):
                raise TrainingDivergedError(epoch, b)
            sums += idx.size * np.array([parts.l_total, parts.l_reg, parts.l_std, parts.l_dist])
            opt.step(params, gw, gb)
            if not all(np.all(np.isfinite(p)) for p in params.weights + params.biases):
                raise TrainingDivergedError(epoch, b, "parameters")
        row = {"epoch": epoch}
        row.update(zip(("train_l_total", "train_l_reg", "train_l_std", "train_l_dist"), (sums / tr.size).tolist()))
        row["train_mae"] = _mean_parts(params, spec, x_tr, y_tr, loss_cfg)[1]
        if va.size:
            parts, mae = _mean_parts(params, spec, x_va, y_va, loss_cfg)
            row.update(val_l_total=parts.l_total, val_l_reg=parts.l_reg, val_l_std=parts.l_std,
                       val_l_dist=parts.l_dist, val_mae=mae)
        history.append(row)
        log.info("epoch %d: train loss %.5f, val mae %s", epoch, row["train_l_total"], row.get("val_mae"))
    return params, history


LOG_COLUMNS = (
    "epoch", "train_l_total", "train_l_reg", "train_l_std", "train_l_dist", "train_mae",
    "val_l_total", "val_l_reg", "val_l_std", "val_l_dist", "val_mae",
)


def write_history(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(repr(row[c]) if c in row else "" for c in LOG_COLUMNS) + "\n")


# -- checkpoint -------------------------------------------------------------

def save_model(path, params: ModelParams, spec: ModelSpec, loss_cfg: LossConfig = None, extra=None) -> None:
    """Write a JSON checkpoint. ``extra`` is stored verbatim (config, seed, log)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "model",
        "model_spec": {**asdict(spec), "hidden_dims": list(spec.hidden_dims)},
        "sigma_floor": params.sigma_floor,
        "layers": [
            {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
        "loss_config": asdict(loss_cfg) if loss_cfg is not None else None,
    }
    if extra:
        doc.update(extra)
    text = json.dumps(doc, indent=1, sort_keys=False, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _need(doc, key, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise CheckpointError(f"missing field {key!r}")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise CheckpointError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def _floats(values, name, size):
    if not isinstance(values, list) or len(values) != size:
        raise CheckpointError(f"field {name!r} must be a list of {size} numbers")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise CheckpointError(f"field {name!r} holds a non-number")
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"field {name!r} holds a non-finite number")
    return arr


def load_model(path):
    """Read a checkpoint written by :func:`save_model`.

    Returns
    -------
    params, spec, loss_cfg, doc
        ``doc`` is the raw parsed document (carries config echo and history).
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    version = _need(doc, "format_version", int)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {version} (expected {FORMAT_VERSION})")
    if doc.get("kind", "model") != "model":
        raise CheckpointError(f"field 'kind' is {doc.get('kind')!r}, expected 'model'")
    raw_spec = _need(doc, "model_spec", dict)
    try:
        spec = ModelSpec(
            input_dim=_need(raw_spec, "input_dim", int),
            hidden_dims=tuple(_need(raw_spec, "hidden_dims", list)),
            activation=_need(raw_spec, "activation", str),
            sigma_map=_need(raw_spec, "sigma_map", str),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"field 'model_spec': {exc}") from None
    floor = _need(doc, "sigma_floor", (int, float))
    if not floor > 0:
        raise CheckpointError("field 'sigma_floor' must be positive")
    layers = _need(doc, "layers", list)
    sizes = spec.layer_sizes
    if len(layers) != len(sizes) - 1:
        raise CheckpointError(f"field 'layers' has {len(layers)} entries, expected {len(sizes) - 1}")
    weights, biases = [], []
    for i, (layer, fan_in, fan_out) in enumerate(zip(layers, sizes[:-1], sizes[1:])):
        shape = _need(layer, "shape", list)
        if shape != [fan_in, fan_out]:
            raise CheckpointError(f"field 'layers[{i}].shape' is {shape}, expected {[fan_in, fan_out]}")
        weights.append(_floats(_need(layer, "weights"), f"layers[{i}].weights", fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(_floats(_need(layer, "bias"), f"layers[{i}].bias", fan_out))
    loss_cfg = None
    if doc.get("loss_config") is not None:
        try:
            loss_cfg = LossConfig(**_need(doc, "loss_config", dict))
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"field 'loss_config': {exc}") from None
    return ModelParams(weights, biases, float(floor)), spec, loss_cfg, doc
